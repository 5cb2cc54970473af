use std::fmt;
use std::str::FromStr;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::control::{Controller, ControllerConfig};
use crate::dynamics::{step_report, ActuationCommand, FullState, GroundModel};
use crate::energetics::{cot, cot_statistics, stride_segmentation, BoxStats, StrideWindow, Trace, TraceMeta, TraceSample};
use crate::error::{Error, Result};
use crate::gait::GaitParams;
use crate::model::{Configuration, Leg, RobotModel, PITCH};

/// One simulation run to execute.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialSpec {
    pub params: GaitParams<f64>,
    /// Target forward speed (m/s).
    pub speed: f64,
    /// Length of the linear speed ramp from rest (s).
    pub spin_up: f64,
    /// Gait used while ramping the speed.
    pub spin_up_params: GaitParams<f64>,
    /// Time over which the gait moves from `spin_up_params` to `params`
    /// after the speed ramp (s); changes apply at stride boundaries.
    pub gait_ramp: f64,
    /// Strides recorded after the gait becomes steady.
    pub strides: usize,
    /// Extra strides allowed for settling after the ramp.
    pub settle_strides: usize,
    pub seed: u64,
    /// Physics step (s).
    pub dt: f64,
    pub ground: GroundModel<f64>,
    /// Keep the recorded trace in the result.
    pub keep_trace: bool,
}

impl TrialSpec {
    pub fn new(params: GaitParams<f64>, speed: f64, seed: u64) -> Self {
        Self {
            params,
            speed,
            spin_up: 3.0,
            spin_up_params: GaitParams::baseline(),
            gait_ramp: 2.0,
            strides: 30,
            settle_strides: 15,
            seed,
            dt: 1e-3,
            ground: GroundModel::default(),
            keep_trace: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.params.validate();
        if !v.is_ok() {
            return Err(Error::Validation(v.violations.join("; ")));
        }
        if self.strides < 5 {
            return Err(Error::Validation("at least 5 recording strides are required".into()));
        }
        if !(self.speed >= 0.0 && self.speed.is_finite()) {
            return Err(Error::Validation("speed must be nonnegative".into()));
        }
        if !(self.spin_up >= 0.0 && self.gait_ramp >= 0.0) {
            return Err(Error::Validation("spin-up and gait ramp durations must be nonnegative".into()));
        }
        self.ground.validate()
    }
}

/// Why a trial was discarded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FailureReason {
    Fall,
    PitchLimit,
    QpFault,
    SlipDivergence,
    NoSteadyState,
    IkUnreachable,
}

impl FailureReason {
    pub const ALL: [FailureReason; 6] = [
        FailureReason::Fall,
        FailureReason::PitchLimit,
        FailureReason::QpFault,
        FailureReason::SlipDivergence,
        FailureReason::NoSteadyState,
        FailureReason::IkUnreachable,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FailureReason::Fall => "fall",
            FailureReason::PitchLimit => "pitch-limit",
            FailureReason::QpFault => "qp-fault",
            FailureReason::SlipDivergence => "slip-divergence",
            FailureReason::NoSteadyState => "no-steady-state",
            FailureReason::IkUnreachable => "ik-unreachable",
        }
    }
}

impl fmt::Display for FailureReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FailureReason {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        FailureReason::ALL.into_iter().find(|r| r.as_str() == s).ok_or_else(|| Error::Parse(format!("unknown failure reason '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrialStatus {
    Steady,
    Failed(FailureReason),
}

impl TrialStatus {
    pub fn is_steady(&self) -> bool {
        matches!(self, TrialStatus::Steady)
    }

    pub fn reason(&self) -> Option<FailureReason> {
        match self {
            TrialStatus::Steady => None,
            TrialStatus::Failed(r) => Some(*r),
        }
    }
}

/// Outcome of [`run_trial`].
#[derive(Debug, Clone, PartialEq)]
pub struct TrialResult {
    pub status: TrialStatus,
    /// Per-stride cost of transport over the recorded steady strides.
    pub cot: Vec<f64>,
    pub cot_stats: Option<BoxStats>,
    /// Mean forward speed over the recorded strides (m/s).
    pub mean_speed: f64,
    /// Index of the first steady stride after the ramp.
    pub steady_index: Option<usize>,
    /// Median count of aerial intervals per recorded stride.
    pub flight_phases: Option<usize>,
    /// Recorded strides as windows into `trace`.
    pub windows: Vec<StrideWindow>,
    /// Time of failure, if any (s).
    pub failure_time: Option<f64>,
    pub torque_clips: u64,
    pub swing_clamps: u64,
    pub trace: Option<Trace>,
}

impl TrialResult {
    fn failed(reason: FailureReason, t: f64) -> Self {
        Self {
            status: TrialStatus::Failed(reason),
            cot: Vec::new(),
            cot_stats: None,
            mean_speed: 0.0,
            steady_index: None,
            flight_phases: None,
            windows: Vec::new(),
            failure_time: Some(t),
            torque_clips: 0,
            swing_clamps: 0,
            trace: None,
        }
    }
}

/// Torso height below which the robot has fallen (m).
pub const FALL_HEIGHT: f64 = 0.12;
/// Largest admissible torso pitch (rad).
pub const PITCH_LIMIT: f64 = std::f64::consts::FRAC_PI_3;
/// Relative speed error that counts as diverging.
pub const DIVERGENCE_SPEED_ERROR: f64 = 0.5;
/// Consecutive diverging strides before the trial is abandoned.
pub const DIVERGENCE_STRIDES: usize = 5;
/// Consecutive strides examined by [`detect_steady_state`].
pub const STEADY_WINDOW: usize = 5;
/// Apex height spread allowed over the steady window (m).
pub const STEADY_HEIGHT_SPREAD: f64 = 0.005;
/// Speed spread allowed over the steady window, relative to the command.
pub const STEADY_SPEED_SPREAD: f64 = 0.05;
/// Largest initial joint perturbation (rad).
pub const SEED_PERTURBATION: f64 = 0.5 * std::f64::consts::PI / 180.0;
/// Shortest all-feet-off interval counted as a flight phase (s).
pub const MIN_FLIGHT: f64 = 0.001;

/// Standing configuration with feet under the hips and the hips at
/// `hip_height`, joints perturbed by at most [`SEED_PERTURBATION`].
pub fn standing_configuration(model: &RobotModel<f64>, hip_height: f64, seed: u64) -> Result<Configuration<f64>> {
    let mut q = Configuration::zeros();
    let sag = model.total_mass * model.gravity / 4.0 / GroundModel::<f64>::default().stiffness;
    q[2] = hip_height - sag;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for leg in Leg::ALL {
        let target = Vector3::new(0.0, leg.side_sign::<f64>() * model.hip_offset, -(hip_height - model.foot_radius));
        let joints = model.leg_inverse_kinematics(leg, &target)?;
        for (k, j) in joints.iter().enumerate() {
            q[leg.q_offset() + k] = j + rng.gen_range(-SEED_PERTURBATION..=SEED_PERTURBATION);
        }
    }
    Ok(q)
}

/// Per-stride apex torso height and mean forward speed.
pub fn stride_summary(trace: &Trace, window: &StrideWindow) -> (f64, f64) {
    let rows = &trace.samples[window.start..=window.end];
    let apex = rows.iter().map(|s| s.q[2]).fold(f64::NEG_INFINITY, f64::max);
    let speed = (rows[rows.len() - 1].q[0] - rows[0].q[0]) / window.duration(trace);
    (apex, speed)
}

fn spread(values: impl Iterator<Item = f64>) -> f64 {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    hi - lo
}

/// First stride index from which [`STEADY_WINDOW`] consecutive strides keep
/// apex torso height within 5 mm and per-stride mean speed within a
/// spread of 5% of `command`.
pub fn detect_steady_state(trace: &Trace, command: f64) -> Option<usize> {
    let windows = stride_segmentation(trace).ok()?;
    let summary: Vec<(f64, f64)> = windows.iter().map(|w| stride_summary(trace, w)).collect();
    let speed_tol = STEADY_SPEED_SPREAD * command.abs().max(1e-3);
    summary
        .windows(STEADY_WINDOW)
        .position(|group| spread(group.iter().map(|s| s.0)) <= STEADY_HEIGHT_SPREAD && spread(group.iter().map(|s| s.1)) <= speed_tol)
}

/// Number of aerial intervals (all four feet off the ground for at least
/// [`MIN_FLIGHT`]) inside a window.
pub fn measured_flight_phases(trace: &Trace, window: &StrideWindow) -> usize {
    let min_len = (MIN_FLIGHT / trace.sample_period).round().max(1.0) as usize;
    let mut count = 0;
    let mut run = 0;
    for s in &trace.samples[window.start..=window.end] {
        if s.contact.iter().any(|c| *c) {
            if run >= min_len {
                count += 1;
            }
            run = 0;
        } else {
            run += 1;
        }
    }
    if run >= min_len {
        count += 1;
    }
    count
}

fn median_usize(values: &mut [usize]) -> Option<usize> {
    if values.is_empty() {
        return None;
    }
    values.sort_unstable();
    Some(values[values.len() / 2])
}

fn classify(err: &Error) -> FailureReason {
    match err {
        Error::QpIterationLimit { .. } | Error::Validation(_) | Error::RankDeficient(_) => FailureReason::QpFault,
        Error::Unreachable { .. } => FailureReason::IkUnreachable,
        _ => FailureReason::Fall,
    }
}

/// Runs one trial: ramp the commanded speed from rest, let the gait settle,
/// record `spec.strides` steady strides and compute their cost of transport.
///
/// Only configuration problems are errors; dynamical failures come back as
/// [`TrialStatus::Failed`].
pub fn run_trial(spec: &TrialSpec, model: &RobotModel<f64>, config: &ControllerConfig<f64>) -> Result<TrialResult> {
    spec.validate()?;
    let mut controller = Controller::new(model.clone(), *config, spec.spin_up_params)?;
    controller.set_speed(0.0);
    let q0 = standing_configuration(model, config.slip.a3, spec.seed)?;
    let mut state = FullState::new(q0);
    let dt = spec.dt;
    let divisor = config.control.rate_divisor;
    let period = spec.params.stride_duration;
    // Speed ramp, then gait ramp, then one more stride of the trial gait so
    // the last change has landed before recording.
    let spin_time = spec.spin_up + spec.gait_ramp + period.max(spec.spin_up_params.stride_duration);
    let spin_steps = (spin_time / dt).round() as usize;
    let (from, to) = (spec.spin_up_params, spec.params);
    let record_strides = spec.strides + spec.settle_strides;
    let record_steps = ((record_strides as f64 + 0.5) * period / dt).ceil() as usize;
    let meta = TraceMeta { params: spec.params, speed: spec.speed, seed: spec.seed };
    let mut trace = Trace::new(dt, meta);
    trace.samples.reserve(record_steps + 1);
    let mut tau = ActuationCommand::zero();
    let mut clips = 0u64;
    let mut diverging = 0usize;
    let mut stride_start_x = None::<(f64, f64)>;

    let abandon = |reason, t, trace: Trace, clips| {
        let mut r = TrialResult::failed(reason, t);
        r.torque_clips = clips;
        if spec.keep_trace {
            r.trace = Some(trace);
        }
        r
    };
    for k in 0..spin_steps + record_steps {
        let t = state.t;
        if k % divisor == 0 {
            let ramp = if spec.spin_up > 0.0 { (t / spec.spin_up).min(1.0) } else { 1.0 };
            controller.set_speed(spec.speed * ramp);
            if t >= spec.spin_up {
                let s = if spec.gait_ramp > 0.0 { ((t - spec.spin_up) / spec.gait_ramp).min(1.0) } else { 1.0 };
                controller.set_gait(GaitParams::new(
                    from.duty_factor + s * (to.duty_factor - from.duty_factor),
                    from.phase_shift + s * (to.phase_shift - from.phase_shift),
                    from.stride_duration + s * (to.stride_duration - from.stride_duration),
                ));
            }
            match controller.step(&state) {
                Ok(out) => tau.tau = out.tau,
                Err(e) => return Ok(abandon(classify(&e), t, trace, clips)),
            }
        }
        let report = match step_report(model, &state, &tau, &spec.ground, dt) {
            Ok(r) => r,
            Err(_) => return Ok(abandon(FailureReason::Fall, t, trace, clips)),
        };
        clips += report.clipped as u64;
        if k >= spin_steps {
            trace.samples.push(TraceSample {
                t,
                q: state.q.into(),
                qd: state.qdot.into(),
                tau: report.applied.into(),
                contact: report.contacts.map(|c| c.in_contact),
                grf: report.contacts.map(|c| c.force.into()),
            });
            // Stride-rate speed check against the gait clock.
            let phase_index = ((t - spin_time) / period + 1e-9).floor();
            match stride_start_x {
                Some((idx, x)) if phase_index > idx => {
                    let v = (state.q[0] - x) / period;
                    if spec.speed > 0.0 && (v - spec.speed).abs() > DIVERGENCE_SPEED_ERROR * spec.speed {
                        diverging += 1;
                        if diverging >= DIVERGENCE_STRIDES {
                            return Ok(abandon(FailureReason::SlipDivergence, t, trace, clips));
                        }
                    } else {
                        diverging = 0;
                    }
                    stride_start_x = Some((phase_index, state.q[0]));
                }
                None => stride_start_x = Some((phase_index, state.q[0])),
                _ => {}
            }
        }
        state = report.state;
        if state.q[2] < FALL_HEIGHT {
            return Ok(abandon(FailureReason::Fall, state.t, trace, clips));
        }
        if state.q[PITCH].abs() > PITCH_LIMIT {
            return Ok(abandon(FailureReason::PitchLimit, state.t, trace, clips));
        }
    }

    let stats = controller.stats();
    let finish = |mut r: TrialResult, trace: Trace| {
        r.torque_clips = clips;
        r.swing_clamps = stats.swing_target_clamps;
        if spec.keep_trace {
            r.trace = Some(trace);
        }
        r
    };
    let end_t = state.t;
    let Some(steady) = detect_steady_state(&trace, spec.speed) else {
        return Ok(finish(TrialResult::failed(FailureReason::NoSteadyState, end_t), trace));
    };
    let windows = stride_segmentation(&trace)?;
    if steady + spec.strides > windows.len() {
        return Ok(finish(TrialResult::failed(FailureReason::NoSteadyState, end_t), trace));
    }
    let recorded = windows[steady..steady + spec.strides].to_vec();
    let mut values = Vec::with_capacity(recorded.len());
    for w in &recorded {
        match cot(&trace, w, model) {
            Ok(c) => values.push(c),
            Err(_) => return Ok(finish(TrialResult::failed(FailureReason::SlipDivergence, end_t), trace)),
        }
    }
    let first = recorded[0];
    let last = recorded[recorded.len() - 1];
    let distance = trace.samples[last.end].q[0] - trace.samples[first.start].q[0];
    let elapsed = trace.samples[last.end].t - trace.samples[first.start].t;
    let mut flights: Vec<usize> = recorded.iter().map(|w| measured_flight_phases(&trace, w)).collect();
    let result = TrialResult {
        status: TrialStatus::Steady,
        cot_stats: cot_statistics(&values),
        cot: values,
        mean_speed: distance / elapsed,
        steady_index: Some(steady),
        flight_phases: median_usize(&mut flights),
        windows: recorded,
        failure_time: None,
        torque_clips: 0,
        swing_clamps: 0,
        trace: None,
    };
    Ok(finish(result, trace))
}
