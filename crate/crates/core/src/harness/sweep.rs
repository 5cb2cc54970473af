use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::io::write_trace;
use super::trial::{run_trial, FailureReason, TrialResult, TrialSpec};
use crate::control::ControllerConfig;
use crate::energetics::{cot_statistics, BoxStats};
use crate::error::{Error, Result};
use crate::gait::{flight_phases, GaitParams};
use crate::model::RobotModel;

/// Gait parameter varied by a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepParam {
    Gamma,
    Phi,
    Stride,
}

impl SweepParam {
    pub fn as_str(self) -> &'static str {
        match self {
            SweepParam::Gamma => "gamma",
            SweepParam::Phi => "phi",
            SweepParam::Stride => "stride",
        }
    }

    /// `base` with this parameter replaced by `value`.
    pub fn apply(self, base: &GaitParams<f64>, value: f64) -> GaitParams<f64> {
        let mut p = *base;
        match self {
            SweepParam::Gamma => p.duty_factor = value,
            SweepParam::Phi => p.phase_shift = value,
            SweepParam::Stride => p.stride_duration = value,
        }
        p
    }
}

impl fmt::Display for SweepParam {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SweepParam {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gamma" => Ok(SweepParam::Gamma),
            "phi" => Ok(SweepParam::Phi),
            "stride" => Ok(SweepParam::Stride),
            _ => Err(Error::Parse(format!("unknown sweep parameter '{s}' (expected gamma, phi or stride)"))),
        }
    }
}

/// Inclusive `min:max:step` grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridRange {
    pub min: f64,
    pub max: f64,
    pub step: f64,
}

impl GridRange {
    pub fn new(min: f64, max: f64, step: f64) -> Self {
        Self { min, max, step }
    }

    /// Grid values, rounded to 12 decimals so `0.16 + 7·0.02` prints as `0.3`.
    pub fn values(&self) -> Result<Vec<f64>> {
        if !(self.step > 0.0) || !self.min.is_finite() || !self.max.is_finite() {
            return Err(Error::Validation("grid step must be positive and bounds finite".into()));
        }
        if self.max < self.min {
            return Err(Error::Validation("grid is empty".into()));
        }
        let n = ((self.max - self.min) / self.step + 1e-9).floor() as usize;
        Ok((0..=n).map(|i| ((self.min + i as f64 * self.step) * 1e12).round() / 1e12).collect())
    }
}

impl FromStr for GridRange {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').collect();
        let [a, b, c] = parts.as_slice() else {
            return Err(Error::Parse(format!("range '{s}' must be MIN:MAX:STEP")));
        };
        let num = |x: &str| x.trim().parse::<f64>().map_err(|_| Error::Parse(format!("range '{s}': '{x}' is not a number")));
        Ok(GridRange::new(num(a)?, num(b)?, num(c)?))
    }
}

/// A one-parameter sweep around a base gait.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub param: SweepParam,
    pub range: GridRange,
    /// Values of the other two parameters.
    pub base: GaitParams<f64>,
    pub speed: f64,
    pub seeds: usize,
    pub strides: usize,
    /// Directory for per-trial traces; none are written when absent.
    pub trace_dir: Option<PathBuf>,
}

impl SweepSpec {
    pub fn new(param: SweepParam, range: GridRange, speed: f64, seeds: usize) -> Self {
        Self { param, range, base: GaitParams::baseline(), speed, seeds, strides: 30, trace_dir: None }
    }
}

/// One `(grid value, seed)` outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub param_value: f64,
    pub seed: u64,
    pub reason: Option<FailureReason>,
    /// Per-stride COT; empty for failed trials.
    pub cot: Vec<f64>,
    pub stats: Option<BoxStats>,
    pub mean_speed: f64,
    pub flight_phases: Option<usize>,
    pub trace_path: Option<String>,
}

impl SweepRow {
    pub fn is_steady(&self) -> bool {
        self.reason.is_none()
    }

    fn from_trial(param_value: f64, seed: u64, r: TrialResult, trace_path: Option<String>) -> Self {
        Self {
            param_value,
            seed,
            reason: r.status.reason(),
            stats: r.cot_stats,
            cot: r.cot,
            mean_speed: r.mean_speed,
            flight_phases: r.flight_phases,
            trace_path,
        }
    }
}

fn trace_name(param: SweepParam, value: f64, seed: u64) -> String {
    format!("{param}_{value}_seed{seed}.csv")
}

/// Runs every `(grid value, seed)` trial on `jobs` worker threads. Rows are
/// returned sorted by grid value then seed, so the output does not depend on
/// the worker count.
pub fn sweep(spec: &SweepSpec, model: &RobotModel<f64>, config: &ControllerConfig<f64>, jobs: usize) -> Result<Vec<SweepRow>> {
    let values = spec.range.values()?;
    if spec.seeds == 0 {
        return Err(Error::Validation("at least one seed is required".into()));
    }
    let mut tasks = Vec::with_capacity(values.len() * spec.seeds);
    for &v in &values {
        let params = spec.param.apply(&spec.base, v);
        for seed in 0..spec.seeds as u64 {
            let mut trial = TrialSpec::new(params, spec.speed, seed);
            trial.strides = spec.strides;
            trial.keep_trace = spec.trace_dir.is_some();
            trial.validate()?;
            tasks.push((v, seed, trial));
        }
    }
    if let Some(dir) = &spec.trace_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::Io { path: dir.display().to_string(), source: e })?;
    }
    let pool = rayon::ThreadPoolBuilder::new().num_threads(jobs.max(1)).build().map_err(|e| Error::Simulation(e.to_string()))?;
    let run = |(v, seed, trial): &(f64, u64, TrialSpec)| -> Result<SweepRow> {
        let mut result = run_trial(trial, model, config)?;
        let mut path = None;
        if let (Some(dir), Some(trace)) = (&spec.trace_dir, result.trace.take()) {
            let p = dir.join(trace_name(spec.param, *v, *seed));
            write_trace(&p, &trace)?;
            path = Some(p.display().to_string());
        }
        log::debug!("{}={} seed {}: {:?}", spec.param, v, seed, result.status);
        Ok(SweepRow::from_trial(*v, *seed, result, path))
    };
    let mut rows = pool.install(|| tasks.par_iter().map(run).collect::<Result<Vec<_>>>())?;
    rows.sort_by(|a, b| a.param_value.total_cmp(&b.param_value).then(a.seed.cmp(&b.seed)));
    Ok(rows)
}

/// Aggregate of one grid value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointStats {
    pub param_value: f64,
    pub trials: usize,
    pub steady: usize,
    /// Failure counts by reason.
    pub failures: BTreeMap<String, usize>,
    /// Box statistics over every steady stride at this point; `None` if no
    /// trial was steady.
    pub cot: Option<BoxStats>,
    /// Spread of per-trial COT medians across seeds.
    pub seed_medians: Option<BoxStats>,
    pub mean_speed: Option<f64>,
    /// Median measured flight-phase count over steady trials.
    pub flight_phases: Option<usize>,
    /// Flight-phase count implied by the schedule, when the swept parameter
    /// and base gait are known.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub scheduled_flight_phases: Option<usize>,
}

/// Per-point box statistics and flight-phase annotation. Failed trials are
/// counted but never enter the statistics. Logs a warning if no point has
/// a steady trial.
pub fn aggregate(rows: &[SweepRow], schedule: Option<(SweepParam, GaitParams<f64>)>) -> Vec<PointStats> {
    let mut groups: Vec<(f64, Vec<&SweepRow>)> = Vec::new();
    for row in rows {
        match groups.iter_mut().find(|(v, _)| *v == row.param_value) {
            Some((_, g)) => g.push(row),
            None => groups.push((row.param_value, vec![row])),
        }
    }
    groups.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut out = Vec::with_capacity(groups.len());
    for (value, group) in groups {
        let steady: Vec<&&SweepRow> = group.iter().filter(|r| r.is_steady()).collect();
        let mut failures = BTreeMap::new();
        for r in &group {
            if let Some(reason) = r.reason {
                *failures.entry(reason.to_string()).or_insert(0) += 1;
            }
        }
        let pooled: Vec<f64> = steady.iter().flat_map(|r| r.cot.iter().copied()).collect();
        let medians: Vec<f64> = steady.iter().filter_map(|r| r.stats.as_ref().map(|s| s.median)).collect();
        let mut flights: Vec<usize> = steady.iter().filter_map(|r| r.flight_phases).collect();
        flights.sort_unstable();
        out.push(PointStats {
            param_value: value,
            trials: group.len(),
            steady: steady.len(),
            failures,
            cot: cot_statistics(&pooled),
            seed_medians: cot_statistics(&medians),
            mean_speed: (!steady.is_empty()).then(|| steady.iter().map(|r| r.mean_speed).sum::<f64>() / steady.len() as f64),
            flight_phases: flights.get(flights.len() / 2).copied(),
            scheduled_flight_phases: schedule.map(|(p, base)| flight_phases(&p.apply(&base, value)).count()),
        });
    }
    if out.iter().all(|p| p.steady == 0) {
        log::warn!("no steady points in sweep");
    }
    out
}
