//! Stance-phase hip height reference from the fitted SLIP law, its transfer
//! to desired center-of-mass motion, and the desired COM wrench.
//!
//! During stance the hip of the supporting pair follows
//!
//! ```text
//! z_hip(t_s) = -(a1 + a2 v) sin(π t_s / (T γ)) + (a3 - a4 v)
//! ```
//!
//! where `v` is the forward COM speed and `t_s` the time since touchdown.

use nalgebra::{DMatrix, DVector, Matrix3, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gait::GaitParams;
use crate::scalar::{lit, Real};

/// Coefficients of the hip-height law. `a2` and `a4` are in seconds so that
/// multiplying by a speed yields meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlipCoeffs<T> {
    pub a1: T,
    pub a2: T,
    pub a3: T,
    pub a4: T,
}

impl<T: Real> SlipCoeffs<T> {
    pub fn new(a1: T, a2: T, a3: T, a4: T) -> Self {
        Self { a1, a2, a3, a4 }
    }

    /// Oscillation amplitude `a1 + a2 v`.
    pub fn amplitude(&self, speed: T) -> T {
        self.a1 + self.a2 * speed
    }

    /// Touchdown/lift-off height `a3 - a4 v`.
    pub fn offset(&self, speed: T) -> T {
        self.a3 - self.a4 * speed
    }

    /// Checks sign constraints and that the offset stays above
    /// `min_height` for every speed up to `max_speed`.
    pub fn validate(&self, min_height: T, max_speed: T) -> Result<()> {
        if !(self.a1 > T::zero() && self.a3 > T::zero()) {
            return Err(Error::Validation("slip coefficients a1 and a3 must be positive".into()));
        }
        if !(self.a2 >= T::zero() && self.a4 >= T::zero()) {
            return Err(Error::Validation("slip coefficients a2 and a4 must be nonnegative".into()));
        }
        if self.offset(max_speed) <= min_height {
            return Err(Error::Validation(format!(
                "slip offset a3 - a4 v falls to {} at v = {max_speed}, below the minimum hip height {min_height}",
                self.offset(max_speed)
            )));
        }
        Ok(())
    }
}

/// Hip height and its first two time derivatives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HipReference<T> {
    pub height: T,
    pub velocity: T,
    pub acceleration: T,
}

/// Evaluates the hip-height law and its analytic derivatives at `t_s`.
pub fn hip_height_reference<T: Real>(coeffs: &SlipCoeffs<T>, speed: T, params: &GaitParams<T>, stance_time: T) -> HipReference<T> {
    let w = T::pi() / params.stance_duration();
    let amp = coeffs.amplitude(speed);
    let (s, c) = (w * stance_time).sin_cos();
    HipReference { height: -amp * s + coeffs.offset(speed), velocity: -amp * w * c, acceleration: amp * w * w * s }
}

/// One stance-phase hip height record at a fixed forward speed.
#[derive(Debug, Clone, PartialEq)]
pub struct SlipSample<T> {
    pub speed: T,
    /// Stance duration the record spans (s).
    pub stance_duration: T,
    /// `(t_s, height)` pairs over the stance.
    pub points: Vec<(T, T)>,
}

/// Result of fitting the hip-height law to recorded stance arcs.
#[derive(Debug, Clone, PartialEq)]
pub struct SlipFit<T> {
    pub coeffs: SlipCoeffs<T>,
    /// Per-sample `(speed, amplitude, offset)` from the first stage.
    pub per_speed: Vec<(T, T, T)>,
    /// RMS of the final law against every recorded point (m).
    pub residual_rms: T,
    /// Largest absolute residual (m).
    pub residual_max: T,
}

fn least_squares<T: Real>(a: DMatrix<T>, b: DVector<T>) -> Option<DVector<T>> {
    let ata = a.transpose() * &a;
    let atb = a.transpose() * b;
    let scale = ata.iter().fold(T::zero(), |m, v| m.max(v.abs()));
    let chol = nalgebra::Cholesky::new(ata.clone())?;
    let diag_min = chol.l().diagonal().iter().fold(T::max_value().unwrap(), |m, v| m.min(*v));
    if diag_min * diag_min <= scale * lit(1e-12) {
        return None;
    }
    Some(chol.solve(&atb))
}

/// Two-stage least-squares fit: amplitude and offset per record, then a
/// linear regression of both against speed.
pub fn fit_slip_coefficients<T: Real>(samples: &[SlipSample<T>]) -> Result<SlipFit<T>> {
    if samples.is_empty() {
        return Err(Error::RankDeficient("no samples".into()));
    }
    let mut per_speed = Vec::with_capacity(samples.len());
    for (k, sample) in samples.iter().enumerate() {
        if sample.points.len() < 2 || !(sample.stance_duration > T::zero()) {
            return Err(Error::RankDeficient(format!("sample {k} needs at least two points and a positive stance duration")));
        }
        let w = T::pi() / sample.stance_duration;
        let n = sample.points.len();
        let a = DMatrix::from_fn(n, 2, |i, j| if j == 0 { -(w * sample.points[i].0).sin() } else { T::one() });
        let b = DVector::from_fn(n, |i, _| sample.points[i].1);
        let x = least_squares(a, b).ok_or_else(|| Error::RankDeficient(format!("sample {k} does not span the stance")))?;
        per_speed.push((sample.speed, x[0], x[1]));
    }
    let first = per_speed[0].0;
    let spread = per_speed.iter().fold(T::zero(), |m, s| m.max((s.0 - first).abs()));
    if spread <= lit(1e-9) {
        return Err(Error::RankDeficient("all samples share one speed".into()));
    }
    let n = per_speed.len();
    let design = DMatrix::from_fn(n, 2, |i, j| if j == 0 { T::one() } else { per_speed[i].0 });
    let amp = DVector::from_fn(n, |i, _| per_speed[i].1);
    let off = DVector::from_fn(n, |i, _| per_speed[i].2);
    let ka = least_squares(design.clone(), amp).ok_or_else(|| Error::RankDeficient("speed regression".into()))?;
    let ko = least_squares(design, off).ok_or_else(|| Error::RankDeficient("speed regression".into()))?;
    let coeffs = SlipCoeffs::new(ka[0], ka[1], ko[0], -ko[1]);
    let mut sq = T::zero();
    let mut max = T::zero();
    let mut count = 0usize;
    for sample in samples {
        let w = T::pi() / sample.stance_duration;
        for &(t, h) in &sample.points {
            let pred = -coeffs.amplitude(sample.speed) * (w * t).sin() + coeffs.offset(sample.speed);
            let r = (pred - h).abs();
            sq += r * r;
            max = max.max(r);
            count += 1;
        }
    }
    Ok(SlipFit { coeffs, per_speed, residual_rms: (sq / lit(count as f64)).sqrt(), residual_max: max })
}

/// Gains of the COM tracking law and of roll/yaw stabilization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrackingGains<T> {
    /// COM position gain (1/s²).
    pub kp_com: T,
    /// COM velocity gain (1/s).
    pub kd_com: T,
    /// Roll/yaw stiffness of the desired moment (N·m/rad).
    pub kp_orientation: T,
    /// Roll/yaw damping (N·m·s/rad).
    pub kd_orientation: T,
    /// Pitch stiffness (N·m/rad); zero leaves pitch free.
    pub kp_pitch: T,
    pub kd_pitch: T,
}

impl<T: Real> Default for TrackingGains<T> {
    fn default() -> Self {
        Self {
            kp_com: lit(100.0),
            kd_com: lit(20.0),
            kp_orientation: lit(60.0),
            kd_orientation: lit(4.0),
            kp_pitch: T::zero(),
            kd_pitch: T::zero(),
        }
    }
}

/// Measured torso quantities needed to form the COM reference.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TorsoMeasurement<T: Real> {
    pub com: Vector3<T>,
    pub com_velocity: Vector3<T>,
    /// Position of the supporting pair's hip (midpoint of the pair).
    pub hip: Vector3<T>,
    /// World-frame angular velocity of the torso.
    pub omega: Vector3<T>,
    pub roll: T,
    pub pitch: T,
    pub yaw: T,
    /// Single-rigid-body inertia in world axes, `R I Rᵀ`.
    pub inertia: Matrix3<T>,
}

/// Desired COM motion and torso angular motion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ComReference<T: Real> {
    pub position: Vector3<T>,
    pub velocity: Vector3<T>,
    pub acceleration: Vector3<T>,
    pub angular_velocity: Vector3<T>,
    pub angular_acceleration: Vector3<T>,
}

/// Commanded planar motion fed to [`com_reference`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MotionCommand<T> {
    pub forward_speed: T,
    pub lateral_position: T,
    pub heading: T,
}

/// Transfers the hip reference to the COM with
/// `r_com = r_hip + r_hip/com` and `v_com = v_hip + ω × r_hip/com`,
/// then adds PD feedback on top of the vertical feed-forward.
pub fn com_reference<T: Real>(
    hip_ref: &HipReference<T>,
    torso: &TorsoMeasurement<T>,
    command: &MotionCommand<T>,
    gains: &TrackingGains<T>,
) -> ComReference<T> {
    let hip_to_com = torso.com - torso.hip;
    let desired_hip = Vector3::new(torso.hip.x, torso.hip.y + command.lateral_position - torso.com.y, hip_ref.height);
    let desired_hip_velocity = Vector3::new(command.forward_speed, T::zero(), hip_ref.velocity);
    let position = desired_hip + hip_to_com;
    let velocity = desired_hip_velocity + torso.omega.cross(&hip_to_com);
    let feed_forward = Vector3::new(T::zero(), T::zero(), hip_ref.acceleration);
    let acceleration = feed_forward + (position - torso.com) * gains.kp_com + (velocity - torso.com_velocity) * gains.kd_com;
    // Orientation PD acts as a torque.
    let torque = Vector3::new(
        -gains.kp_orientation * torso.roll - gains.kd_orientation * torso.omega.x,
        -gains.kp_pitch * torso.pitch - gains.kd_pitch * torso.omega.y,
        gains.kp_orientation * wrap(command.heading - torso.yaw) - gains.kd_orientation * torso.omega.z,
    );
    let angular_acceleration = torso.inertia.try_inverse().map(|inv| inv * torque).unwrap_or_else(Vector3::zeros);
    ComReference { position, velocity, acceleration, angular_velocity: Vector3::zeros(), angular_acceleration }
}

fn wrap<T: Real>(a: T) -> T {
    let mut a = a;
    while a > T::pi() {
        a -= T::two_pi();
    }
    while a < -T::pi() {
        a += T::two_pi();
    }
    a
}

/// Desired wrench on the COM, `[m (a_d − g); R I Rᵀ ω̇_d]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DesiredWrench<T: Real>(pub Vector6<T>);

impl<T: Real> DesiredWrench<T> {
    pub fn force(&self) -> Vector3<T> {
        self.0.fixed_rows::<3>(0).into_owned()
    }

    pub fn moment(&self) -> Vector3<T> {
        self.0.fixed_rows::<3>(3).into_owned()
    }
}

/// Builds the desired wrench for a body of `mass` and body-frame `inertia`
/// under gravity `gravity` (a vector, typically `(0, 0, -g)`).
pub fn desired_wrench<T: Real>(
    reference: &ComReference<T>,
    mass: T,
    inertia: &Matrix3<T>,
    gravity: &Vector3<T>,
    rotation: &Matrix3<T>,
) -> DesiredWrench<T> {
    let f = (reference.acceleration - gravity) * mass;
    let n = rotation * inertia * rotation.transpose() * reference.angular_acceleration;
    DesiredWrench(Vector6::new(f.x, f.y, f.z, n.x, n.y, n.z))
}
