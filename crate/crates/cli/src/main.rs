use std::path::PathBuf;
use std::process::ExitCode;

use boundlab::control::ControllerConfig;
use boundlab::gait::GaitParams;
use boundlab::harness::io::{read_sweep_csv, write_stats_json, write_sweep_csv, write_trace};
use boundlab::harness::{aggregate, run_trial, sweep, GridRange, SweepParam, SweepSpec, TrialSpec};
use boundlab::model::{load_model, RobotModel};
use clap::{Parser, Subcommand};
use log::{info, warn};

#[derive(Parser, Debug)]
#[command(name = "boundlab", version, about = "Quadruped bounding simulator and cost-of-transport sweeps")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run one trial and write its trace.
    Simulate {
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        control: Option<PathBuf>,
        #[arg(long, default_value_t = 0.22)]
        gamma: f64,
        #[arg(long, default_value_t = 0.5)]
        phi: f64,
        #[arg(long, default_value_t = 0.22)]
        stride: f64,
        #[arg(long, default_value_t = 0.5)]
        speed: f64,
        #[arg(long, default_value_t = 30)]
        strides: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Sweep one gait parameter over a grid of values and seeds.
    Sweep {
        #[arg(long)]
        param: SweepParam,
        #[arg(long)]
        range: GridRange,
        #[arg(long, default_value_t = 0.5)]
        speed: f64,
        #[arg(long, default_value_t = 3)]
        seeds: usize,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        control: Option<PathBuf>,
        #[arg(long, default_value_t = 30)]
        strides: usize,
        /// Write one trace per trial into this directory.
        #[arg(long)]
        trace_dir: Option<PathBuf>,
    },
    /// Aggregate a sweep CSV into per-point box statistics.
    Analyze {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

enum Outcome {
    Ok,
    AllFailed,
}

fn load_configs(model: Option<&PathBuf>, control: Option<&PathBuf>) -> boundlab::Result<(RobotModel<f64>, ControllerConfig<f64>)> {
    let model = match model {
        Some(p) => load_model(p)?,
        None => RobotModel::a1(),
    };
    let control = match control {
        Some(p) => ControllerConfig::load(p)?,
        None => ControllerConfig::bundled(),
    };
    Ok((model, control))
}

fn run(cmd: Command) -> boundlab::Result<Outcome> {
    match cmd {
        Command::Simulate { model, control, gamma, phi, stride, speed, strides, seed, out } => {
            let (model, control) = load_configs(model.as_ref(), control.as_ref())?;
            let params = GaitParams::new(gamma, phi, stride);
            for w in params.validate().warnings {
                warn!("{w}");
            }
            let mut spec = TrialSpec::new(params, speed, seed);
            spec.strides = strides;
            spec.keep_trace = true;
            let result = run_trial(&spec, &model, &control)?;
            if let Some(trace) = &result.trace {
                write_trace(&out, trace)?;
            }
            match result.status.reason() {
                None => {
                    let median = result.cot_stats.as_ref().map_or(f64::NAN, |s| s.median);
                    info!("steady: {} strides, median COT {median:.4}, speed {:.3} m/s", result.cot.len(), result.mean_speed);
                    println!("steady cot_median={median:.6} mean_speed={:.6}", result.mean_speed);
                    Ok(Outcome::Ok)
                }
                Some(reason) => {
                    warn!("trial failed: {reason}");
                    println!("failed reason={reason}");
                    Ok(Outcome::AllFailed)
                }
            }
        }
        Command::Sweep { param, range, speed, seeds, jobs, out, model, control, strides, trace_dir } => {
            let (model, control) = load_configs(model.as_ref(), control.as_ref())?;
            let mut spec = SweepSpec::new(param, range, speed, seeds);
            spec.strides = strides;
            spec.trace_dir = trace_dir;
            let rows = sweep(&spec, &model, &control, jobs)?;
            write_sweep_csv(&out, &rows)?;
            let steady = rows.iter().filter(|r| r.is_steady()).count();
            info!("{steady}/{} trials steady", rows.len());
            Ok(if steady == 0 { Outcome::AllFailed } else { Outcome::Ok })
        }
        Command::Analyze { input, out } => {
            let rows = read_sweep_csv(&input)?;
            let points = aggregate(&rows, None);
            write_stats_json(&out, &points)?;
            Ok(if points.iter().all(|p| p.steady == 0) { Outcome::AllFailed } else { Outcome::Ok })
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(1);
        }
    };
    match run(cli.command) {
        Ok(Outcome::Ok) => ExitCode::SUCCESS,
        Ok(Outcome::AllFailed) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
