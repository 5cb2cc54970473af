//! Trials, parameter sweeps and their file formats.

pub mod io;
pub mod sweep;
pub mod trial;

pub use sweep::{aggregate, sweep, GridRange, PointStats, SweepParam, SweepRow, SweepSpec};
pub use trial::{detect_steady_state, run_trial, FailureReason, TrialResult, TrialSpec, TrialStatus};
