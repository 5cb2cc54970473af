//! Joint power, stride segmentation and cost of transport.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gait::GaitParams;
use crate::model::{Leg, RobotModel, NJ, NQ};

/// One trace row.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceSample {
    pub t: f64,
    pub q: [f64; NQ],
    pub qd: [f64; NQ],
    pub tau: [f64; NJ],
    /// Foot contact flags in `[FR, FL, RR, RL]` order.
    pub contact: [bool; 4],
    /// Ground reaction on each foot.
    pub grf: [[f64; 3]; 4],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceMeta {
    pub params: GaitParams<f64>,
    pub speed: f64,
    pub seed: u64,
}

/// Uniformly sampled run record.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub sample_period: f64,
    pub meta: TraceMeta,
    pub samples: Vec<TraceSample>,
}

impl Trace {
    pub fn new(sample_period: f64, meta: TraceMeta) -> Self {
        Self { sample_period, meta, samples: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Rear pair in contact (either rear foot).
    pub fn rear_contact(&self, i: usize) -> bool {
        let c = &self.samples[i].contact;
        c[Leg::RR.index()] || c[Leg::RL.index()]
    }

    /// Trace restricted to samples `start..end`.
    pub fn slice(&self, start: usize, end: usize) -> Trace {
        Trace { sample_period: self.sample_period, meta: self.meta, samples: self.samples[start..end].to_vec() }
    }
}

/// Inclusive sample bounds of one stride.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StrideWindow {
    pub start: usize,
    pub end: usize,
}

impl StrideWindow {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    pub fn duration(&self, trace: &Trace) -> f64 {
        trace.samples[self.end].t - trace.samples[self.start].t
    }
}

/// Samples the rear pair must stay airborne before a new touchdown counts.
const DEBOUNCE_SECONDS: f64 = 0.005;

/// Splits the trace at rising edges of rear-pair contact. Leading and
/// trailing partial strides are dropped; consecutive windows share their
/// boundary sample.
pub fn stride_segmentation(trace: &Trace) -> Result<Vec<StrideWindow>> {
    let debounce = ((DEBOUNCE_SECONDS / trace.sample_period).round() as usize).max(1);
    let mut edges = Vec::new();
    let mut off_run = 0usize;
    for i in 0..trace.len() {
        if trace.rear_contact(i) {
            if i > 0 && off_run >= debounce {
                edges.push(i);
            }
            off_run = 0;
        } else {
            off_run += 1;
        }
    }
    if edges.len() < 2 {
        return Err(Error::NoStrides(format!("{} rear touchdowns in {} samples", edges.len(), trace.len())));
    }
    Ok(edges.windows(2).map(|w| StrideWindow { start: w[0], end: w[1] }).collect())
}

/// Per-joint `|τ q̇|` for one sample and their sum.
pub fn sample_power(tau: &[f64; NJ], qd: &[f64; NQ]) -> ([f64; NJ], f64) {
    let mut p = [0.0; NJ];
    for (j, pj) in p.iter_mut().enumerate() {
        *pj = (tau[j] * qd[6 + j]).abs();
    }
    (p, p.iter().sum())
}

/// Absolute joint power series.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerTrace {
    pub per_joint: Vec<[f64; NJ]>,
    pub total: Vec<f64>,
}

pub fn joint_power(trace: &Trace) -> PowerTrace {
    let (per_joint, total) = trace.samples.iter().map(|s| sample_power(&s.tau, &s.qd)).unzip();
    PowerTrace { per_joint, total }
}

/// Trapezoidal integral of `values` sampled at `times`.
pub fn trapezoid(times: &[f64], values: &[f64]) -> f64 {
    times.windows(2).zip(values.windows(2)).map(|(t, v)| 0.5 * (t[1] - t[0]) * (v[0] + v[1])).sum()
}

/// Absolute mechanical work over a window (J).
pub fn window_energy(trace: &Trace, window: &StrideWindow) -> f64 {
    let rows = &trace.samples[window.start..=window.end];
    let times: Vec<f64> = rows.iter().map(|s| s.t).collect();
    let power: Vec<f64> = rows.iter().map(|s| sample_power(&s.tau, &s.qd).1).collect();
    trapezoid(&times, &power)
}

/// Forward torso displacement over a window (m).
pub fn window_displacement(trace: &Trace, window: &StrideWindow) -> f64 {
    trace.samples[window.end].q[0] - trace.samples[window.start].q[0]
}

/// `E / (m g Δx)` with an error for nonpositive displacement.
pub fn cot_from_energy(energy: f64, mass: f64, gravity: f64, displacement: f64) -> Result<f64> {
    if !(displacement > 0.0) {
        return Err(Error::NonpositiveDisplacement(displacement));
    }
    Ok(energy / (mass * gravity * displacement))
}

/// Cost of transport over one window.
pub fn cot(trace: &Trace, window: &StrideWindow, model: &RobotModel<f64>) -> Result<f64> {
    cot_from_energy(window_energy(trace, window), model.total_mass, model.gravity, window_displacement(trace, window))
}

/// Box-plot statistics with 1.5·IQR whiskers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxStats {
    pub n: usize,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    /// Most extreme data inside the lower fence.
    pub whisker_low: f64,
    /// Most extreme data inside the upper fence.
    pub whisker_high: f64,
    pub outliers: Vec<f64>,
}

/// Linearly interpolated quantile of sorted data (type 7).
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Median, quartiles, whiskers and outliers of per-stride COT values.
/// Returns `None` for an empty list.
pub fn cot_statistics(values: &[f64]) -> Option<BoxStats> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let q1 = quantile_sorted(&sorted, 0.25);
    let q3 = quantile_sorted(&sorted, 0.75);
    let iqr = q3 - q1;
    let (lo_fence, hi_fence) = (q1 - 1.5 * iqr, q3 + 1.5 * iqr);
    let inside = || sorted.iter().copied().filter(|v| *v >= lo_fence && *v <= hi_fence);
    Some(BoxStats {
        n: sorted.len(),
        median: quantile_sorted(&sorted, 0.5),
        q1,
        q3,
        whisker_low: inside().fold(f64::INFINITY, f64::min),
        whisker_high: inside().fold(f64::NEG_INFINITY, f64::max),
        outliers: sorted.iter().copied().filter(|v| *v < lo_fence || *v > hi_fence).collect(),
    })
}

/// Number of strict local maxima of a series (plateaus count once).
pub fn local_maxima(series: &[f64]) -> usize {
    let mut count = 0;
    let mut i = 1;
    while i + 1 < series.len() {
        if series[i] > series[i - 1] {
            let mut j = i;
            while j + 1 < series.len() && series[j + 1] == series[i] {
                j += 1;
            }
            if j + 1 < series.len() && series[j + 1] < series[i] {
                count += 1;
            }
            i = j + 1;
        } else {
            i += 1;
        }
    }
    count
}

#[cfg(test)]
mod tests {
    use super::*;

    fn meta() -> TraceMeta {
        TraceMeta { params: GaitParams::baseline(), speed: 0.5, seed: 0 }
    }

    fn blank(t: f64) -> TraceSample {
        TraceSample { t, q: [0.0; NQ], qd: [0.0; NQ], tau: [0.0; NJ], contact: [false; 4], grf: [[0.0; 3]; 4] }
    }

    fn flags_trace(edges: &[f64], stance: f64, end: f64) -> Trace {
        let dt = 1e-3;
        let mut trace = Trace::new(dt, meta());
        let n = (end / dt).round() as usize;
        for i in 0..=n {
            let t = i as f64 * dt;
            let mut s = blank(t);
            let on = edges.iter().any(|e| t >= e - 1e-9 && t < e + stance - 1e-9);
            s.contact[Leg::RR.index()] = on;
            s.contact[Leg::RL.index()] = on;
            trace.samples.push(s);
        }
        trace
    }

    #[test]
    fn segmentation_at_rising_edges() {
        let trace = flags_trace(&[0.1, 0.32, 0.54], 0.05, 0.6);
        let w = stride_segmentation(&trace).unwrap();
        assert_eq!(w.len(), 2);
        assert!((trace.samples[w[0].start].t - 0.1).abs() < 1e-9);
        assert!((trace.samples[w[0].end].t - 0.32).abs() < 1e-9);
        assert!((trace.samples[w[1].start].t - 0.32).abs() < 1e-9);
        assert!((trace.samples[w[1].end].t - 0.54).abs() < 1e-9);
    }

    #[test]
    fn constant_contact_has_no_strides() {
        let mut trace = flags_trace(&[], 0.0, 0.5);
        for s in &mut trace.samples {
            s.contact = [true; 4];
        }
        assert!(matches!(stride_segmentation(&trace), Err(Error::NoStrides(_))));
    }

    #[test]
    fn power_examples() {
        let mut tau = [0.0; NJ];
        let mut qd = [0.0; NQ];
        tau[0] = 2.0;
        qd[6] = 3.0;
        assert_eq!(sample_power(&tau, &qd).1, 6.0);
        tau[0] = 1.0;
        qd[6] = -1.0;
        assert_eq!(sample_power(&tau, &qd).1, 1.0);
        qd[6] = 0.0;
        assert_eq!(sample_power(&tau, &qd).1, 0.0);
    }

    #[test]
    fn box_stats_small_set() {
        let s = cot_statistics(&[1.0, 2.0, 3.0, 4.0, 100.0]).unwrap();
        assert_eq!((s.median, s.q1, s.q3), (3.0, 2.0, 4.0));
        assert_eq!(s.outliers, vec![100.0]);
        assert_eq!((s.whisker_low, s.whisker_high), (1.0, 4.0));
        let one = cot_statistics(&[1.7]).unwrap();
        assert_eq!((one.median, one.q1, one.q3, one.whisker_low, one.whisker_high), (1.7, 1.7, 1.7, 1.7, 1.7));
        assert!(one.outliers.is_empty());
        assert!(cot_statistics(&[]).is_none());
    }

    #[test]
    fn nonpositive_displacement_rejected() {
        assert!(matches!(cot_from_energy(1.0, 12.0, 9.81, 0.0), Err(Error::NonpositiveDisplacement(_))));
        assert!(cot_from_energy(1.0, 12.0, 9.81, -0.1).is_err());
    }

    #[test]
    fn local_maxima_counts() {
        assert_eq!(local_maxima(&[0.0, 1.0, 0.0, 2.0, 2.0, 1.0, 3.0]), 2);
        assert_eq!(local_maxima(&[1.0, 1.0, 1.0]), 0);
        assert_eq!(local_maxima(&[0.0, 1.0, 1.0, 2.0]), 0);
    }

    fn constant_power_trace(power: f64, duration: f64, distance: f64) -> Trace {
        let dt = 1e-3;
        let n = (duration / dt).round() as usize;
        let mut trace = Trace::new(dt, meta());
        for i in 0..=n {
            let t = i as f64 * dt;
            let mut s = blank(t);
            s.tau[4] = 2.0;
            s.qd[10] = power / 2.0;
            s.q[0] = distance * t / duration;
            trace.samples.push(s);
        }
        trace
    }

    #[test]
    fn constant_six_watts() {
        let model = RobotModel::a1();
        let mut model = model;
        model.total_mass = 12.0;
        model.gravity = 9.81;
        let trace = constant_power_trace(6.0, 1.0, 0.5);
        let w = StrideWindow { start: 0, end: trace.len() - 1 };
        let c = cot(&trace, &w, &model).unwrap();
        assert!((c - 6.0 / (12.0 * 9.81 * 0.5)).abs() < 1e-12);
        assert!((c - 0.10194).abs() < 1e-5);
    }

    #[test]
    fn zero_torque_costs_nothing() {
        let mut trace = constant_power_trace(0.0, 0.5, 0.2);
        for s in &mut trace.samples {
            s.tau = [0.0; NJ];
            s.qd[6..].iter_mut().for_each(|v| *v = 3.0);
        }
        let w = StrideWindow { start: 0, end: trace.len() - 1 };
        assert_eq!(cot(&trace, &w, &RobotModel::a1()).unwrap(), 0.0);
    }

    /// Smooth per-joint torque and rate signals.
    fn smooth_signal(j: usize, t: f64) -> (f64, f64) {
        let f = 1.0 + j as f64 * 0.7;
        let tau = 5.0 * (2.0 * std::f64::consts::PI * f * t + j as f64).sin() + 1.0;
        let qd = 3.0 * (2.0 * std::f64::consts::PI * (f + 1.3) * t).cos() - 0.5;
        (tau, qd)
    }

    #[test]
    fn quadrature_matches_fine_oracle() {
        let duration = 0.22;
        let dt = 1e-3;
        let mut trace = Trace::new(dt, meta());
        let n = (duration / dt).round() as usize;
        for i in 0..=n {
            let t = i as f64 * dt;
            let mut s = blank(t);
            for j in 0..NJ {
                let (tau, qd) = smooth_signal(j, t);
                s.tau[j] = tau;
                s.qd[6 + j] = qd;
            }
            trace.samples.push(s);
        }
        let coarse = window_energy(&trace, &StrideWindow { start: 0, end: n });
        let fine_n = (duration * 1e5).round() as usize;
        let fine_dt = duration / fine_n as f64;
        let power = |t: f64| {
            (0..NJ)
                .map(|j| {
                    let (a, b) = smooth_signal(j, t);
                    (a * b).abs()
                })
                .sum::<f64>()
        };
        let fine: f64 = (0..fine_n).map(|i| 0.5 * fine_dt * (power(i as f64 * fine_dt) + power((i + 1) as f64 * fine_dt))).sum();
        assert!(((coarse - fine) / fine).abs() <= 1e-3, "{coarse} vs {fine}");
    }

    #[test]
    fn quartiles_match_sort_oracle() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let values: Vec<f64> = (0..1000).map(|_| rng.gen_range(0.0..1.0f64).powi(2) * 4.0 + 1.0).collect();
        let stats = cot_statistics(&values).unwrap();
        let mut sorted = values.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        // Type 7 on 1000 points: position p·999.
        let oracle = |p: f64| {
            let pos = p * 999.0;
            let k = pos as usize;
            sorted[k] + (pos - k as f64) * (sorted[k + 1] - sorted[k])
        };
        assert_eq!(stats.q1, oracle(0.25));
        assert_eq!(stats.median, oracle(0.5));
        assert_eq!(stats.q3, oracle(0.75));
        let iqr = stats.q3 - stats.q1;
        let outliers: Vec<f64> = sorted.iter().copied().filter(|v| *v < stats.q1 - 1.5 * iqr || *v > stats.q3 + 1.5 * iqr).collect();
        assert_eq!(stats.outliers, outliers);
    }

    proptest::proptest! {
        #[test]
        fn cot_is_energy_weighted_over_concatenation(e1 in 0.0..50.0f64, e2 in 0.0..50.0f64, d1 in 0.01..1.0f64, d2 in 0.01..1.0f64) {
            let (m, g) = (12.0, 9.81);
            let joint = cot_from_energy(e1 + e2, m, g, d1 + d2).unwrap();
            let c1 = cot_from_energy(e1, m, g, d1).unwrap();
            let c2 = cot_from_energy(e2, m, g, d2).unwrap();
            proptest::prop_assert!((joint - (c1 * d1 + c2 * d2) / (d1 + d2)).abs() <= 1e-12 * (1.0 + joint));
        }

        #[test]
        fn cot_falls_with_distance(e in 0.1..50.0f64, d in 0.01..1.0f64, extra in 0.001..1.0f64) {
            proptest::prop_assert!(cot_from_energy(e, 12.0, 9.81, d + extra).unwrap() < cot_from_energy(e, 12.0, 9.81, d).unwrap());
        }

        #[test]
        fn power_ignores_sign(tau in proptest::collection::vec(-30.0..30.0f64, NJ), qd in proptest::collection::vec(-20.0..20.0f64, NJ)) {
            let mut t = [0.0; NJ];
            let mut v = [0.0; NQ];
            t.copy_from_slice(&tau);
            v[6..].copy_from_slice(&qd);
            let p = sample_power(&t, &v).1;
            let neg = t.map(|x| -x);
            proptest::prop_assert_eq!(p, sample_power(&neg, &v).1);
            proptest::prop_assert!(p >= 0.0);
        }
    }
}
