//! Independent reference computations used to check the simulator.
//!
//! Everything here is deliberately naive: dense linear algebra, fixed
//! iteration counts and brute-force sampling, so that it shares no code path
//! with the implementation it checks.

use boundlab::harness::PointStats;
use boundlab::model::{Configuration, RobotModel, NQ};
use boundlab::Leg;
use nalgebra::{DMatrix, DVector, SMatrix};

/// Minimizer of `½xᵀHx + fᵀx` subject to `Cx ≥ 0` by accelerated projected
/// gradient ascent on the dual `max_{ν≥0} −½(Cᵀν−f)ᵀH⁻¹(Cᵀν−f)`.
///
/// Only valid for homogeneous constraints (zero right-hand side).
pub fn projected_gradient_qp(h: &DMatrix<f64>, f: &DVector<f64>, c: &DMatrix<f64>) -> DVector<f64> {
    let hinv = h.clone().cholesky().expect("Hessian must be positive definite").inverse();
    // Dual as a minimization: ½νᵀQν − bᵀν over ν ≥ 0.
    let q = c * &hinv * c.transpose();
    let b = c * &hinv * f;
    let step = 1.0 / q.symmetric_eigenvalues().max();
    let mut nu = DVector::zeros(c.nrows());
    let mut y = nu.clone();
    let mut t = 1.0f64;
    for _ in 0..2_000_000 {
        let grad = &q * &y - &b;
        let next = (&y - grad * step).map(|v| v.max(0.0));
        let moved = (&next - &nu).amax();
        // Gradient-based restart keeps the momentum from oscillating.
        if (&y - &next).dot(&(&next - &nu)) > 0.0 {
            t = 1.0;
            y = next.clone();
        } else {
            let t_next = (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0;
            y = &next + (&next - &nu) * ((t - 1.0) / t_next);
            t = t_next;
        }
        nu = next;
        if moved < 1e-14 * (1.0 + nu.amax()) {
            break;
        }
    }
    &hinv * (c.transpose() * nu - f)
}

/// Central-difference Jacobian of the foot contact point.
pub fn central_difference_jacobian(model: &RobotModel<f64>, q: &Configuration<f64>, leg: Leg, h: f64) -> SMatrix<f64, 3, NQ> {
    let mut j = SMatrix::<f64, 3, NQ>::zeros();
    for k in 0..NQ {
        let (mut plus, mut minus) = (*q, *q);
        plus[k] += h;
        minus[k] -= h;
        let d = (model.forward_kinematics(&plus).leg(leg).foot - model.forward_kinematics(&minus).leg(leg).foot) / (2.0 * h);
        j.set_column(k, &d);
    }
    j
}

/// Composite trapezoid rule with `n` uniform panels.
pub fn trapezoid_oracle(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let h = (b - a) / n as f64;
    let inner: f64 = (1..n).map(|i| f(a + i as f64 * h)).sum();
    h * (0.5 * (f(a) + f(b)) + inner)
}

/// Smallest grid value from which every trial at every larger value failed.
/// `None` when the last point still has a steady trial.
pub fn failure_edge(points: &[PointStats]) -> Option<f64> {
    let mut edge = None;
    for p in points.iter().rev() {
        if p.steady > 0 {
            break;
        }
        edge = Some(p.param_value);
    }
    edge
}

/// Median COT at `value`, or `None` if that point had no steady trial.
pub fn median_at(points: &[PointStats], value: f64) -> Option<f64> {
    points.iter().find(|p| (p.param_value - value).abs() < 1e-9).and_then(|p| p.cot.as_ref()).map(|c| c.median)
}

/// Median of a non-empty list by full sort.
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}
