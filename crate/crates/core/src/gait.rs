//! Periodic stance/swing schedule of the two-pair bounding gait.
//!
//! Both legs of a pair move together. The rear pair touches down at stride
//! phase 0 and the front pair at stride phase `phase_shift`; each stays in
//! stance for `duty_factor` of the stride.

use serde::{Deserialize, Serialize};

use crate::model::Leg;
use crate::scalar::{lit, Real};

/// Bounding gait timing `(γ, φ, T)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaitParams<T> {
    /// Fraction of the stride each leg spends in stance, in `(0, 1]`.
    pub duty_factor: T,
    /// Stride fraction from rear touchdown to front touchdown, in `[0, 1)`.
    pub phase_shift: T,
    /// Stride period (s).
    pub stride_duration: T,
}

/// Duty factor above which swing time is known to be too short at low speed.
pub const SWING_TIME_RISK_DUTY: f64 = 0.68;

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct GaitValidation {
    pub violations: Vec<String>,
    pub warnings: Vec<String>,
}

impl GaitValidation {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

impl<T: Real> GaitParams<T> {
    pub fn new(duty_factor: T, phase_shift: T, stride_duration: T) -> Self {
        Self { duty_factor, phase_shift, stride_duration }
    }

    /// The baseline bounding gait (0.22, 0.50, 0.22 s).
    pub fn baseline() -> Self {
        Self::new(lit(0.22), lit(0.5), lit(0.22))
    }

    pub fn validate(&self) -> GaitValidation {
        let mut out = GaitValidation::default();
        let (g, p, t) = (self.duty_factor, self.phase_shift, self.stride_duration);
        if !(g > T::zero()) {
            out.violations.push("duty factor must be positive".into());
        } else if g > T::one() {
            out.violations.push("duty factor must not exceed 1".into());
        }
        if !(p >= T::zero() && p < T::one()) {
            out.violations.push("phase shift must lie in [0, 1)".into());
        }
        if !(t > T::zero()) {
            out.violations.push("stride duration must be positive".into());
        }
        if out.is_ok() && g > lit(SWING_TIME_RISK_DUTY) && g < T::one() {
            out.warnings.push(format!("swing-time risk: duty factor {g} leaves {} s of swing", (T::one() - g) * t));
        }
        out
    }

    /// Stance duration `γ T`.
    pub fn stance_duration(&self) -> T {
        self.duty_factor * self.stride_duration
    }

    pub fn swing_duration(&self) -> T {
        (T::one() - self.duty_factor) * self.stride_duration
    }

    /// Stride phase at which the pair owning `leg` touches down.
    pub fn touchdown_phase(&self, leg: Leg) -> T {
        if leg.is_front() {
            self.phase_shift
        } else {
            T::zero()
        }
    }

    /// Stance window of `leg` as stride-phase intervals within `[0, 1)`.
    pub fn stance_intervals(&self, leg: Leg) -> Vec<(T, T)> {
        let start = self.touchdown_phase(leg);
        let end = start + self.duty_factor;
        if end <= T::one() {
            vec![(start, end)]
        } else {
            vec![(T::zero(), end - T::one()), (start, T::one())]
        }
    }
}

/// Fractional part in `[0, 1)`.
fn frac<T: Real>(x: T) -> T {
    let f = x - x.floor();
    if f >= T::one() {
        T::zero()
    } else {
        f
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LegMode<T> {
    /// `elapsed` is the time since this stance began, in `[0, γT)`.
    Stance { elapsed: T },
    /// `progress` runs from 0 at lift-off to 1 at the next touchdown.
    Swing { progress: T },
}

/// Where one leg is within the stride.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LegPhase<T> {
    pub mode: LegMode<T>,
    /// Stride phase in `[0, 1)`.
    pub stride_phase: T,
}

impl<T: Real> LegPhase<T> {
    pub fn in_stance(&self) -> bool {
        matches!(self.mode, LegMode::Stance { .. })
    }

    pub fn stance_time(&self) -> Option<T> {
        match self.mode {
            LegMode::Stance { elapsed } => Some(elapsed),
            LegMode::Swing { .. } => None,
        }
    }

    pub fn swing_progress(&self) -> Option<T> {
        match self.mode {
            LegMode::Swing { progress } => Some(progress),
            LegMode::Stance { .. } => None,
        }
    }
}

/// Phase of `leg` at stride phase `s ∈ [0, 1)`.
pub fn leg_phase_at<T: Real>(params: &GaitParams<T>, stride_phase: T, leg: Leg) -> LegPhase<T> {
    let local = frac(stride_phase - params.touchdown_phase(leg));
    let mode = if params.duty_factor >= T::one() || local < params.duty_factor {
        LegMode::Stance { elapsed: local * params.stride_duration }
    } else {
        LegMode::Swing { progress: (local - params.duty_factor) / (T::one() - params.duty_factor) }
    };
    LegPhase { mode, stride_phase }
}

/// Phase of `leg` at time `t` for a schedule that started at `t = 0`.
pub fn leg_phase<T: Real>(params: &GaitParams<T>, t: T, leg: Leg) -> LegPhase<T> {
    leg_phase_at(params, frac(t / params.stride_duration), leg)
}

/// Aerial intervals of one stride, derived from the schedule alone.
#[derive(Debug, Clone, PartialEq)]
pub struct FlightPhases<T> {
    /// `(start, duration)` in seconds from rear touchdown.
    pub intervals: Vec<(T, T)>,
}

impl<T: Real> FlightPhases<T> {
    pub fn count(&self) -> usize {
        self.intervals.len()
    }

    pub fn durations(&self) -> Vec<T> {
        self.intervals.iter().map(|&(_, d)| d).collect()
    }
}

/// Intervals of the stride where no leg is scheduled in stance.
pub fn flight_phases<T: Real>(params: &GaitParams<T>) -> FlightPhases<T> {
    let mut covered: Vec<(T, T)> = params.stance_intervals(Leg::RR);
    covered.extend(params.stance_intervals(Leg::FR));
    covered.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(std::cmp::Ordering::Equal));
    // Gaps on [0, 1) between merged coverage.
    let mut gaps: Vec<(T, T)> = Vec::new();
    let mut cursor = T::zero();
    for (s, e) in covered {
        if s > cursor {
            gaps.push((cursor, s));
        }
        if e > cursor {
            cursor = e;
        }
    }
    if cursor < T::one() {
        gaps.push((cursor, T::one()));
    }
    // A gap touching 1 continues into a gap starting at 0.
    if gaps.len() >= 2 {
        let first = gaps[0];
        let last = gaps[gaps.len() - 1];
        if first.0 == T::zero() && last.1 == T::one() {
            gaps.pop();
            gaps[0] = (last.0, first.1 + T::one());
        }
    }
    let t = params.stride_duration;
    let mut intervals: Vec<(T, T)> =
        gaps.into_iter().filter(|&(s, e)| e - s > lit(1e-12)).map(|(s, e)| (frac(s) * t, (e - s) * t)).collect();
    intervals.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(std::cmp::Ordering::Equal));
    FlightPhases { intervals }
}

/// Stateful schedule whose parameter changes take effect at the next stride
/// boundary (rear-pair touchdown).
#[derive(Debug, Clone)]
pub struct GaitScheduler<T> {
    params: GaitParams<T>,
    pending: Option<GaitParams<T>>,
    stride_start: T,
    stride_index: u64,
}

impl<T: Real> GaitScheduler<T> {
    pub fn new(params: GaitParams<T>, start: T) -> Self {
        Self { params, pending: None, stride_start: start, stride_index: 0 }
    }

    pub fn params(&self) -> &GaitParams<T> {
        &self.params
    }

    /// Queues new parameters for the next stride boundary.
    pub fn set_params(&mut self, params: GaitParams<T>) {
        self.pending = Some(params);
    }

    pub fn stride_index(&self) -> u64 {
        self.stride_index
    }

    pub fn stride_start(&self) -> T {
        self.stride_start
    }

    /// Advances the schedule to time `t` (nondecreasing) and returns the
    /// stride phase there.
    pub fn advance(&mut self, t: T) -> T {
        while t >= self.stride_start + self.params.stride_duration {
            self.stride_start += self.params.stride_duration;
            self.stride_index += 1;
            if let Some(p) = self.pending.take() {
                self.params = p;
            }
        }
        let s = (t - self.stride_start) / self.params.stride_duration;
        s.max(T::zero()).min(T::one() - T::default_epsilon())
    }

    pub fn leg_phase(&mut self, t: T, leg: Leg) -> LegPhase<T> {
        let s = self.advance(t);
        leg_phase_at(&self.params, s, leg)
    }
}
