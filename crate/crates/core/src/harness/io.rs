//! Trace CSV, sweep CSV and stats JSON files.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::sweep::{PointStats, SweepRow};
use crate::energetics::{cot_statistics, Trace, TraceMeta, TraceSample};
use crate::error::{Error, Result};
use crate::gait::GaitParams;
use crate::model::{Leg, NJ, NQ};

/// First line of every trace file.
pub const TRACE_SCHEMA: &str = "# schema=boundlab-trace-v1";

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |e| Error::Io { path: path.display().to_string(), source: e }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Csv(e.to_string())
}

/// Column names of the trace CSV.
pub fn trace_header() -> Vec<String> {
    let mut h = vec!["t".to_string()];
    h.extend((0..NQ).map(|i| format!("q{i}")));
    h.extend((0..NQ).map(|i| format!("qd{i}")));
    h.extend((0..NJ).map(|i| format!("tau{i}")));
    h.extend(Leg::ALL.iter().map(|l| format!("contact_{l}")));
    for l in Leg::ALL {
        for axis in ["x", "y", "z"] {
            h.push(format!("grf_{l}_{axis}"));
        }
    }
    h
}

/// Writes a trace: schema line, a metadata comment, header, one row per sample.
pub fn write_trace_to<W: Write>(mut out: W, trace: &Trace) -> Result<()> {
    let p = &trace.meta.params;
    let werr = |e: std::io::Error| Error::Csv(e.to_string());
    writeln!(out, "{TRACE_SCHEMA}").map_err(werr)?;
    writeln!(
        out,
        "# gamma={} phi={} stride={} speed={} seed={} dt={}",
        p.duty_factor, p.phase_shift, p.stride_duration, trace.meta.speed, trace.meta.seed, trace.sample_period
    )
    .map_err(werr)?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(trace_header()).map_err(csv_err)?;
    let mut row: Vec<String> = Vec::with_capacity(1 + 2 * NQ + NJ + 16);
    for s in &trace.samples {
        row.clear();
        row.push(s.t.to_string());
        row.extend(s.q.iter().map(f64::to_string));
        row.extend(s.qd.iter().map(f64::to_string));
        row.extend(s.tau.iter().map(f64::to_string));
        row.extend(s.contact.iter().map(|c| u8::from(*c).to_string()));
        row.extend(s.grf.iter().flatten().map(f64::to_string));
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush().map_err(werr)?;
    Ok(())
}

pub fn write_trace(path: impl AsRef<Path>, trace: &Trace) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(io_err(path))?;
    write_trace_to(BufWriter::new(file), trace)
}

fn parse_meta(line: &str) -> Result<(TraceMeta, f64)> {
    let get = |key: &str| -> Result<f64> {
        line.split_whitespace()
            .find_map(|kv| kv.strip_prefix(key).and_then(|v| v.strip_prefix('=')))
            .ok_or_else(|| Error::Parse(format!("trace metadata lacks '{key}'")))?
            .parse::<f64>()
            .map_err(|_| Error::Parse(format!("trace metadata '{key}' is not a number")))
    };
    let params = GaitParams::new(get("gamma")?, get("phi")?, get("stride")?);
    let speed = get("speed")?;
    let seed = get("seed")? as u64;
    let dt = get("dt")?;
    Ok((TraceMeta { params, speed, seed }, dt))
}

pub fn read_trace(path: impl AsRef<Path>) -> Result<Trace> {
    let path = path.as_ref();
    let file = File::open(path).map_err(io_err(path))?;
    let mut reader = BufReader::new(file);
    let mut first = String::new();
    reader.read_line(&mut first).map_err(io_err(path))?;
    if first.trim_end() != TRACE_SCHEMA {
        return Err(Error::Parse(format!("{}: missing '{TRACE_SCHEMA}' line", path.display())));
    }
    let mut second = String::new();
    reader.read_line(&mut second).map_err(io_err(path))?;
    let (meta, dt) = parse_meta(second.trim_start_matches('#'))?;
    let mut r = csv::Reader::from_reader(reader);
    let expected = trace_header();
    let header = r.headers().map_err(csv_err)?;
    if header.iter().ne(expected.iter().map(String::as_str)) {
        return Err(Error::Parse(format!("{}: unexpected trace columns", path.display())));
    }
    let mut trace = Trace::new(dt, meta);
    for (n, rec) in r.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let vals: Vec<f64> = rec
            .iter()
            .map(|v| v.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::Parse(format!("{}: bad number on data row {}", path.display(), n + 1)))?;
        let mut s = TraceSample { t: vals[0], q: [0.0; NQ], qd: [0.0; NQ], tau: [0.0; NJ], contact: [false; 4], grf: [[0.0; 3]; 4] };
        s.q.copy_from_slice(&vals[1..1 + NQ]);
        s.qd.copy_from_slice(&vals[1 + NQ..1 + 2 * NQ]);
        s.tau.copy_from_slice(&vals[1 + 2 * NQ..1 + 2 * NQ + NJ]);
        let c0 = 1 + 2 * NQ + NJ;
        for i in 0..4 {
            s.contact[i] = vals[c0 + i] != 0.0;
            s.grf[i].copy_from_slice(&vals[c0 + 4 + 3 * i..c0 + 7 + 3 * i]);
        }
        trace.samples.push(s);
    }
    Ok(trace)
}

/// One line of `sweep.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub param_value: f64,
    pub seed: u64,
    pub status: String,
    pub reason: String,
    pub cot_median: Option<f64>,
    pub cot_q1: Option<f64>,
    pub cot_q3: Option<f64>,
    pub mean_speed: Option<f64>,
    pub flight_phases: Option<usize>,
    pub trace_path: String,
}

impl From<&SweepRow> for SweepRecord {
    fn from(r: &SweepRow) -> Self {
        let steady = r.is_steady();
        Self {
            param_value: r.param_value,
            seed: r.seed,
            status: if steady { "steady" } else { "failed" }.into(),
            reason: r.reason.map(|x| x.to_string()).unwrap_or_default(),
            cot_median: r.stats.as_ref().map(|s| s.median),
            cot_q1: r.stats.as_ref().map(|s| s.q1),
            cot_q3: r.stats.as_ref().map(|s| s.q3),
            mean_speed: steady.then_some(r.mean_speed),
            flight_phases: r.flight_phases,
            trace_path: r.trace_path.clone().unwrap_or_default(),
        }
    }
}

impl SweepRecord {
    /// Rebuilds a row. Only the per-trial quartiles survive the CSV, so the
    /// row's stride list holds the single per-trial median.
    pub fn into_row(self) -> Result<SweepRow> {
        let reason = match self.status.as_str() {
            "steady" => None,
            "failed" => Some(self.reason.parse()?),
            other => return Err(Error::Parse(format!("unknown status '{other}'"))),
        };
        let stats = match (reason, self.cot_median) {
            (None, Some(m)) => cot_statistics(&[m]).map(|mut s| {
                s.q1 = self.cot_q1.unwrap_or(m);
                s.q3 = self.cot_q3.unwrap_or(m);
                s
            }),
            (None, None) => return Err(Error::Parse("steady row without cot_median".into())),
            _ => None,
        };
        Ok(SweepRow {
            param_value: self.param_value,
            seed: self.seed,
            reason,
            cot: stats.iter().map(|s| s.median).collect(),
            stats,
            mean_speed: self.mean_speed.unwrap_or(0.0),
            flight_phases: self.flight_phases,
            trace_path: (!self.trace_path.is_empty()).then_some(self.trace_path),
        })
    }
}

pub fn write_sweep_csv_to<W: Write>(out: W, rows: &[SweepRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(SweepRecord::from(r)).map_err(csv_err)?;
    }
    if rows.is_empty() {
        w.write_record([
            "param_value",
            "seed",
            "status",
            "reason",
            "cot_median",
            "cot_q1",
            "cot_q3",
            "mean_speed",
            "flight_phases",
            "trace_path",
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::Csv(e.to_string()))
}

pub fn write_sweep_csv(path: impl AsRef<Path>, rows: &[SweepRow]) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(io_err(path))?;
    write_sweep_csv_to(BufWriter::new(file), rows)
}

pub fn read_sweep_csv(path: impl AsRef<Path>) -> Result<Vec<SweepRow>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(io_err(path))?;
    let mut r = csv::Reader::from_reader(BufReader::new(file));
    r.deserialize::<SweepRecord>().map(|rec| rec.map_err(csv_err).and_then(SweepRecord::into_row)).collect()
}

/// Contents of `stats.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsFile {
    pub schema: String,
    pub points: Vec<PointStats>,
}

pub const STATS_SCHEMA: &str = "boundlab-stats-v1";

pub fn write_stats_json(path: impl AsRef<Path>, points: &[PointStats]) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(io_err(path))?;
    let doc = StatsFile { schema: STATS_SCHEMA.into(), points: points.to_vec() };
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, &doc).map_err(|e| Error::Parse(e.to_string()))?;
    w.write_all(b"\n").map_err(io_err(path))?;
    Ok(())
}
