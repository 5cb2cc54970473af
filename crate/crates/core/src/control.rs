//! Per-tick bounding controller.
//!
//! Stance legs receive `τ = Jᵀ f` from the force-allocation program, swing
//! legs track a Raibert-placed foot spline through inverse kinematics and a
//! joint PD law. The gait schedule alone decides which leg is which.

use nalgebra::{DVector, Matrix3, SMatrix, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::dynamics::FullState;
use crate::error::{Error, Result};
use crate::gait::{GaitParams, GaitScheduler, LegMode, LegPhase};
use crate::model::{ContactJacobian, JointTorques, Kinematics, Leg, RobotModel, NQ, PITCH, ROLL, YAW};
use crate::qp::{build_wrench_map, ActiveSetSolver, GrfSolution, QpProblem, QpWeights, SolverSettings};
use crate::scalar::{lit, Real};
use crate::slip::{
    com_reference, desired_wrench, hip_height_reference, ComReference, DesiredWrench, MotionCommand, SlipCoeffs, TorsoMeasurement,
    TrackingGains,
};

/// `[slip]` section.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SlipConfig<T> {
    pub a1: T,
    pub a2: T,
    pub a3: T,
    pub a4: T,
    pub kp_com: T,
    pub kd_com: T,
    pub kp_orientation: T,
    pub kd_orientation: T,
    /// Pitch PD (N·m/rad, N·m·s/rad); zero leaves pitch free.
    pub kp_pitch: T,
    pub kd_pitch: T,
    /// Lowest hip height the offset `a3 - a4 v` may reach.
    pub min_hip_height: T,
}

impl<T: Real> SlipConfig<T> {
    pub fn coeffs(&self) -> SlipCoeffs<T> {
        SlipCoeffs::new(self.a1, self.a2, self.a3, self.a4)
    }

    pub fn gains(&self) -> TrackingGains<T> {
        TrackingGains {
            kp_com: self.kp_com,
            kd_com: self.kd_com,
            kp_orientation: self.kp_orientation,
            kd_orientation: self.kd_orientation,
            kp_pitch: self.kp_pitch,
            kd_pitch: self.kd_pitch,
        }
    }
}

/// `[qp]` section.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QpConfig<T> {
    pub weights: QpWeights<T>,
    pub friction: T,
    /// Drop the pitch-moment row from the wrench objective so the torso
    /// pitches freely about the stance hips.
    pub free_pitch: bool,
    pub max_normal_force: Option<T>,
    /// Bound each stance leg's joint torques inside the program instead of
    /// scaling them afterwards.
    #[serde(default)]
    pub torque_limits: bool,
    pub solver: SolverSettings,
}

/// `[swing]` section.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SwingConfig<T> {
    /// Joint stiffness (N·m/rad).
    pub kp: T,
    /// Joint damping (N·m·s/rad).
    pub kd: T,
    /// Raibert speed-error gain (s).
    pub raibert_gain: T,
    /// Foot clearance above the higher end point at mid-swing (m).
    pub apex_height: T,
    /// Damping applied to a swing leg that touches down early (N·m·s/rad).
    pub early_contact_damping: T,
}

/// `[control]` section.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoopConfig<T> {
    /// Commanded forward speed (m/s).
    pub speed: T,
    /// Controller runs every `rate_divisor` physics steps.
    pub rate_divisor: usize,
    /// Height of the ground plane the controller assumes (m).
    pub ground_height: T,
}

/// Complete controller configuration, loadable from a TOML file with
/// `[slip]`, `[qp]`, `[swing]` and `[control]` sections.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerConfig<T> {
    pub slip: SlipConfig<T>,
    pub qp: QpConfig<T>,
    pub swing: SwingConfig<T>,
    pub control: LoopConfig<T>,
}

/// Text of the bundled controller configuration.
pub const DEFAULT_CONTROL: &str = include_str!("../data/default.control");

impl ControllerConfig<f64> {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io { path: path.display().to_string(), source: e })?;
        Self::from_toml_str(&text)
    }

    pub fn bundled() -> Self {
        Self::from_toml_str(DEFAULT_CONTROL).expect("bundled controller config parses")
    }

    pub fn cast<U: Real>(&self) -> ControllerConfig<U> {
        let s = &self.slip;
        let q = &self.qp;
        let w = &self.swing;
        let c = &self.control;
        ControllerConfig {
            slip: SlipConfig {
                a1: lit(s.a1),
                a2: lit(s.a2),
                a3: lit(s.a3),
                a4: lit(s.a4),
                kp_com: lit(s.kp_com),
                kd_com: lit(s.kd_com),
                kp_orientation: lit(s.kp_orientation),
                kd_orientation: lit(s.kd_orientation),
                kp_pitch: lit(s.kp_pitch),
                kd_pitch: lit(s.kd_pitch),
                min_hip_height: lit(s.min_hip_height),
            },
            qp: QpConfig {
                weights: QpWeights {
                    wrench: q.weights.wrench.map(lit),
                    alpha: lit(q.weights.alpha),
                    beta: lit(q.weights.beta),
                    force: q.weights.force.map(lit),
                    smoothing: q.weights.smoothing.map(lit),
                },
                friction: lit(q.friction),
                free_pitch: q.free_pitch,
                max_normal_force: q.max_normal_force.map(lit),
                torque_limits: q.torque_limits,
                solver: q.solver,
            },
            swing: SwingConfig {
                kp: lit(w.kp),
                kd: lit(w.kd),
                raibert_gain: lit(w.raibert_gain),
                apex_height: lit(w.apex_height),
                early_contact_damping: lit(w.early_contact_damping),
            },
            control: LoopConfig { speed: lit(c.speed), rate_divisor: c.rate_divisor, ground_height: lit(c.ground_height) },
        }
    }
}

impl<T: Real> ControllerConfig<T> {
    /// Checks gains and the SLIP law against the model's geometry.
    pub fn validate(&self, model: &RobotModel<T>) -> Result<()> {
        let fail = |m: &str| Err(Error::Validation(m.to_string()));
        let s = &self.swing;
        if !(s.kp > T::zero() && s.kd > T::zero()) {
            return fail("swing gains must be positive");
        }
        if !(s.raibert_gain >= T::zero()) {
            return fail("raibert_gain must be nonnegative");
        }
        let g = &self.slip;
        if !(g.kp_com > T::zero() && g.kd_com > T::zero() && g.kp_orientation > T::zero() && g.kd_orientation > T::zero()) {
            return fail("slip tracking gains must be positive");
        }
        if !(g.kp_pitch >= T::zero() && g.kd_pitch >= T::zero()) {
            return fail("pitch gains must be nonnegative");
        }
        let max_speed = self.control.speed.max(lit(3.0));
        self.slip.coeffs().validate(g.min_hip_height, max_speed)?;
        let standing = self.slip.a3;
        if !(s.apex_height > T::zero() && s.apex_height < standing) {
            return fail("apex height must be positive and below the standing hip height");
        }
        let reach = model.thigh_length + model.calf_length + model.foot_radius;
        if standing >= reach {
            return fail("slip offset a3 exceeds the leg reach");
        }
        if !(self.qp.friction > T::zero()) {
            return fail("qp friction must be positive");
        }
        if !(self.qp.weights.alpha > T::zero() || self.qp.weights.beta > T::zero()) {
            return fail("qp alpha or beta must be positive");
        }
        if self.control.rate_divisor == 0 {
            return fail("rate_divisor must be at least 1");
        }
        if !(self.control.speed >= T::zero()) {
            return fail("commanded speed must be nonnegative");
        }
        Ok(())
    }
}

/// Joint torques of one stance leg: the joint rows of `Jᵀ f`, where `f`
/// is the force the foot exerts on the ground (the negated reaction).
pub fn stance_torques<T: Real>(jacobian: &ContactJacobian<T>, foot_force: &Vector3<T>) -> Vector3<T> {
    let full: SMatrix<T, NQ, 1> = jacobian.matrix.transpose() * foot_force;
    full.fixed_rows::<3>(jacobian.leg.q_offset()).into_owned()
}

/// Raibert touchdown point relative to the hip, along the direction of travel:
/// `v γT / 2 + k_v (v − v_d)`.
pub fn raibert_offset<T: Real>(speed: T, desired: T, stance_duration: T, gain: T) -> T {
    speed * stance_duration * lit(0.5) + gain * (speed - desired)
}

/// Swing foot touchdown target in the hip frame (yaw-aligned, origin at the
/// hip joint): forward Raibert offset, lateral hip offset, vertical drop to
/// the touchdown height.
pub fn swing_target<T: Real>(speed: T, desired: T, params: &GaitParams<T>, gain: T, lateral: T, drop: T) -> Vector3<T> {
    Vector3::new(raibert_offset(speed, desired, params.stance_duration(), gain), lateral, -drop)
}

/// Foot position and velocity along the swing spline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SwingSample<T: Real> {
    pub position: Vector3<T>,
    pub velocity: Vector3<T>,
}

fn smoothstep<T: Real>(u: T) -> (T, T) {
    let two = lit::<T>(2.0);
    let three = lit::<T>(3.0);
    let six = lit::<T>(6.0);
    (u * u * (three - two * u), six * u * (T::one() - u))
}

/// Cubic horizontal blend and two-segment cubic vertical profile through
/// the apex `max(start.z, target.z) + clearance`, with zero velocity at both
/// ends and at the apex.
pub fn swing_trajectory<T: Real>(start: &Vector3<T>, target: &Vector3<T>, progress: T, clearance: T, duration: T) -> SwingSample<T> {
    let s = progress.clamp(T::zero(), T::one());
    let two = lit::<T>(2.0);
    let (h, dh) = smoothstep(s);
    let mut position = start + (target - start) * h;
    let mut velocity = (target - start) * (dh / duration);
    let apex = start.z.max(target.z) + clearance;
    let half = lit::<T>(0.5);
    let (z, dz) = if s <= half {
        let (v, dv) = smoothstep(two * s);
        (start.z + (apex - start.z) * v, (apex - start.z) * dv * two / duration)
    } else {
        let (v, dv) = smoothstep(two * s - T::one());
        (apex + (target.z - apex) * v, (target.z - apex) * dv * two / duration)
    };
    position.z = z;
    velocity.z = dz;
    SwingSample { position, velocity }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LegControlMode {
    Stance,
    Swing,
    /// Swing leg already on the ground before its scheduled touchdown.
    EarlyContact,
}

/// Snapshot of the references used on this tick.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceSnapshot<T: Real> {
    pub com: Option<ComReference<T>>,
    pub wrench: Option<DesiredWrench<T>>,
    /// World-frame swing targets (foot-sphere centers) per leg.
    pub swing_targets: [Option<Vector3<T>>; 4],
}

/// Force-allocation diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct QpDiagnostics<T: Real> {
    pub legs: Vec<Leg>,
    pub solution: GrfSolution<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControlOutput<T: Real> {
    pub tau: JointTorques<T>,
    pub modes: [LegControlMode; 4],
    pub phases: [LegPhase<T>; 4],
    /// Ground reaction commanded for each stance foot (zero otherwise).
    pub commanded_grf: [Vector3<T>; 4],
    pub qp: Option<QpDiagnostics<T>>,
    pub reference: ReferenceSnapshot<T>,
}

/// Counters accumulated over a run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ControlStats {
    pub qp_solves: u64,
    pub swing_target_clamps: u64,
    pub early_contacts: u64,
}

/// Stateful controller: gait clock, warm-started QP, swing bookkeeping.
#[derive(Debug, Clone)]
pub struct Controller<T: Real> {
    config: ControllerConfig<T>,
    model: RobotModel<T>,
    scheduler: GaitScheduler<T>,
    solver: ActiveSetSolver<T>,
    command: MotionCommand<T>,
    previous_grf: [Vector3<T>; 4],
    liftoff: [Option<Vector3<T>>; 4],
    was_stance: [bool; 4],
    srb_inertia: Matrix3<T>,
    stats: ControlStats,
}

impl<T: Real> Controller<T> {
    pub fn new(model: RobotModel<T>, config: ControllerConfig<T>, params: GaitParams<T>) -> Result<Self> {
        config.validate(&model)?;
        let v = params.validate();
        if !v.is_ok() {
            return Err(Error::Validation(v.violations.join("; ")));
        }
        let srb_inertia = srb_inertia(&model);
        Ok(Self {
            scheduler: GaitScheduler::new(params, T::zero()),
            solver: ActiveSetSolver::new(config.qp.solver),
            command: MotionCommand { forward_speed: config.control.speed, lateral_position: T::zero(), heading: T::zero() },
            config,
            model,
            previous_grf: [Vector3::zeros(); 4],
            liftoff: [None; 4],
            was_stance: [false; 4],
            srb_inertia,
            stats: ControlStats::default(),
        })
    }

    pub fn config(&self) -> &ControllerConfig<T> {
        &self.config
    }

    pub fn model(&self) -> &RobotModel<T> {
        &self.model
    }

    pub fn stats(&self) -> ControlStats {
        self.stats
    }

    pub fn scheduler(&self) -> &GaitScheduler<T> {
        &self.scheduler
    }

    pub fn command(&self) -> &MotionCommand<T> {
        &self.command
    }

    pub fn set_speed(&mut self, speed: T) {
        self.command.forward_speed = speed;
    }

    pub fn set_lateral_target(&mut self, y: T, heading: T) {
        self.command.lateral_position = y;
        self.command.heading = heading;
    }

    /// New gait parameters take effect at the next stride boundary.
    pub fn set_gait(&mut self, params: GaitParams<T>) {
        self.scheduler.set_params(params);
    }

    /// Computes joint torques for state `state` at time `t`.
    pub fn step(&mut self, state: &FullState<T>) -> Result<ControlOutput<T>> {
        let t = state.t;
        let model = &self.model;
        let q = &state.q;
        let kin = model.forward_kinematics(q);
        let com = model.com_state(q, &state.qdot);
        let omega = model.torso_angular_velocity(q, &state.qdot);
        let rotation = *kin.torso_rotation();
        let base = q.fixed_rows::<3>(0).into_owned();
        let base_velocity = state.qdot.fixed_rows::<3>(0).into_owned();
        let stride_phase = self.scheduler.advance(t);
        let params_now = *self.scheduler.params();
        let phases = Leg::ALL.map(|leg| crate::gait::leg_phase_at(&params_now, stride_phase, leg));
        let ground = self.config.control.ground_height;

        let mut tau = JointTorques::zeros();
        let mut modes = [LegControlMode::Swing; 4];
        let mut commanded_grf = [Vector3::zeros(); 4];
        let mut reference = ReferenceSnapshot { com: None, wrench: None, swing_targets: [None; 4] };

        let stance: Vec<Leg> = Leg::ALL.into_iter().filter(|l| phases[l.index()].in_stance()).collect();
        let mut qp_diag = None;
        if !stance.is_empty() {
            let coeffs = self.config.slip.coeffs();
            let gains = self.config.slip.gains();
            let mut refs: Vec<ComReference<T>> = Vec::new();
            for front in [false, true] {
                let pair: Vec<Leg> = stance.iter().copied().filter(|l| l.is_front() == front).collect();
                if pair.is_empty() {
                    continue;
                }
                let elapsed = phases[pair[0].index()].stance_time().unwrap_or_else(T::zero);
                let mut hip = Vector3::zeros();
                for l in &pair {
                    hip += kin.leg(*l).hip;
                }
                hip /= lit::<T>(pair.len() as f64);
                let mut hip_ref = hip_height_reference(&coeffs, com.velocity.x, &params_now, elapsed);
                hip_ref.height += ground;
                let measurement = TorsoMeasurement {
                    com: com.position,
                    com_velocity: com.velocity,
                    hip,
                    omega,
                    roll: q[ROLL],
                    pitch: q[PITCH],
                    yaw: q[YAW],
                    inertia: rotation * self.srb_inertia * rotation.transpose(),
                };
                refs.push(com_reference(&hip_ref, &measurement, &self.command, &gains));
            }
            let com_ref = average_reference(&refs);
            let wrench = desired_wrench(&com_ref, model.total_mass, &self.srb_inertia, &model.gravity_vector(), &rotation);
            let feet: Vec<Vector3<T>> = stance.iter().map(|l| kin.leg(*l).foot).collect();
            let map = build_wrench_map(&com.position, &feet);
            let mut weights = self.config.qp.weights;
            if self.config.qp.free_pitch {
                weights.wrench[4] = T::zero();
            }
            let mut prev = DVector::zeros(3 * stance.len());
            for (i, l) in stance.iter().enumerate() {
                let p = if self.was_stance[l.index()] { self.previous_grf[l.index()] } else { Vector3::zeros() };
                prev.fixed_rows_mut::<3>(3 * i).copy_from(&p);
            }
            let mut problem = QpProblem::grf(&map, &wrench.0, &weights, &prev, self.config.qp.friction, self.config.qp.max_normal_force)?;
            if self.config.qp.torque_limits {
                let jacobians: Vec<Matrix3<T>> = stance
                    .iter()
                    .map(|l| model.foot_jacobian_with(&kin, *l).matrix.fixed_view::<3, 3>(0, l.q_offset()).into_owned())
                    .collect();
                problem = problem.with_torque_limits(&jacobians, &Vector3::from(model.torque_limits))?;
            }
            let solution = self.solver.solve(&problem)?;
            self.stats.qp_solves += 1;
            for (i, l) in stance.iter().enumerate() {
                let f = solution.foot(i);
                let jac = model.foot_jacobian_with(&kin, *l);
                let mut tl = stance_torques(&jac, &(-f));
                // Scale the whole leg so saturation keeps the force direction.
                let over = (0..3).map(|j| tl[j].abs() / model.torque_limits[j]).fold(T::one(), |a, b| a.max(b));
                if over > T::one() {
                    tl /= over;
                }
                tau.fixed_rows_mut::<3>(l.tau_offset()).copy_from(&tl);
                commanded_grf[l.index()] = f;
                modes[l.index()] = LegControlMode::Stance;
            }
            reference.com = Some(com_ref);
            reference.wrench = Some(wrench);
            qp_diag = Some(QpDiagnostics { legs: stance.clone(), solution });
        } else {
            self.solver.reset();
        }

        for leg in Leg::ALL {
            let i = leg.index();
            let phase = phases[i];
            let progress = match phase.mode {
                LegMode::Stance { .. } => continue,
                LegMode::Swing { progress } => progress,
            };
            let points = kin.leg(leg);
            if self.was_stance[i] || self.liftoff[i].is_none() {
                self.liftoff[i] = Some(points.foot_center);
            }
            let o = leg.q_offset();
            let joints = [q[o], q[o + 1], q[o + 2]];
            let joint_rates = Vector3::new(state.qdot[o], state.qdot[o + 1], state.qdot[o + 2]);
            let in_contact = points.foot.z <= ground;
            if in_contact && progress > lit(0.5) {
                if self.was_stance[i] || modes[i] != LegControlMode::EarlyContact {
                    self.stats.early_contacts += 1;
                }
                let damp = -joint_rates * self.config.swing.early_contact_damping;
                tau.fixed_rows_mut::<3>(leg.tau_offset()).copy_from(&damp);
                modes[i] = LegControlMode::EarlyContact;
                continue;
            }
            let swing = self.swing_command(leg, &kin, &base, &base_velocity, &omega, &rotation, &com.velocity, progress, &params_now);
            let (target_world, sample) = swing;
            reference.swing_targets[i] = Some(target_world);
            let hip = points.hip;
            let hip_velocity = base_velocity + omega.cross(&(hip - base));
            let rel = rotation.transpose() * (sample.position - hip);
            let (desired, clamped) = self.reachable_ik(leg, &rel)?;
            if clamped {
                self.stats.swing_target_clamps += 1;
            }
            let jl = model.leg_jacobian(leg, &desired);
            let rel_velocity = rotation.transpose() * (sample.velocity - hip_velocity);
            let desired_rates = jl.lu().solve(&rel_velocity).unwrap_or_else(Vector3::zeros);
            // Task-space stiffness pulled back through the current leg Jacobian.
            let jc = model.leg_jacobian(leg, &joints);
            let jtj = jc.transpose() * jc;
            let tl = jtj
                * ((Vector3::from(desired) - Vector3::from(joints)) * self.config.swing.kp
                    + (desired_rates - joint_rates) * self.config.swing.kd);
            tau.fixed_rows_mut::<3>(leg.tau_offset()).copy_from(&tl);
            modes[i] = LegControlMode::Swing;
        }

        for leg in Leg::ALL {
            let i = leg.index();
            self.was_stance[i] = modes[i] == LegControlMode::Stance;
            self.previous_grf[i] = commanded_grf[i];
        }
        Ok(ControlOutput { tau, modes, phases, commanded_grf, qp: qp_diag, reference })
    }

    #[allow(clippy::too_many_arguments)]
    fn swing_command(
        &self,
        leg: Leg,
        kin: &Kinematics<T>,
        base: &Vector3<T>,
        base_velocity: &Vector3<T>,
        omega: &Vector3<T>,
        rotation: &Matrix3<T>,
        com_velocity: &Vector3<T>,
        progress: T,
        params: &GaitParams<T>,
    ) -> (Vector3<T>, SwingSample<T>) {
        let model = &self.model;
        let i = leg.index();
        let hip = kin.leg(leg).hip;
        let hip_velocity = base_velocity + omega.cross(&(hip - base));
        let remaining = (T::one() - progress) * params.swing_duration();
        // Heading frame: torso yaw only.
        let yaw = rotation[(1, 0)].atan2(rotation[(0, 0)]);
        let heading = crate::model::Axis::Z.rotation(yaw);
        let lateral = leg.side_sign::<T>() * model.hip_offset;
        let forward_speed = (heading.transpose() * com_velocity).x;
        let ground = self.config.control.ground_height;
        let local = swing_target(forward_speed, self.command.forward_speed, params, self.config.swing.raibert_gain, lateral, T::zero());
        let mut predicted_hip = hip + Vector3::new(hip_velocity.x, hip_velocity.y, T::zero()) * remaining;
        predicted_hip.z = T::zero();
        let mut target = predicted_hip + heading * local;
        target.z = ground + model.foot_radius;
        let start = self.liftoff[i].unwrap_or(kin.leg(leg).foot_center);
        let sample = swing_trajectory(&start, &target, progress, self.config.swing.apex_height, params.swing_duration());
        (target, sample)
    }

    /// IK on the knee-backward branch, pulling unreachable targets back
    /// toward the hip until they fit.
    fn reachable_ik(&self, leg: Leg, rel: &Vector3<T>) -> Result<([T; 3], bool)> {
        let model = &self.model;
        if let Ok(j) = model.leg_inverse_kinematics(leg, rel) {
            return Ok((j, false));
        }
        let lateral = leg.side_sign::<T>() * model.hip_offset;
        let anchor = Vector3::new(T::zero(), lateral, T::zero());
        let max = (model.thigh_length + model.calf_length) * lit(0.98);
        let dir = rel - anchor;
        let mut candidate = anchor + dir * (max / dir.norm().max(lit(1e-9)));
        candidate.y = lateral;
        model.leg_inverse_kinematics(leg, &candidate).map(|j| (j, true))
    }
}

fn average_reference<T: Real>(refs: &[ComReference<T>]) -> ComReference<T> {
    let n = lit::<T>(refs.len() as f64);
    let mut out = ComReference {
        position: Vector3::zeros(),
        velocity: Vector3::zeros(),
        acceleration: Vector3::zeros(),
        angular_velocity: Vector3::zeros(),
        angular_acceleration: Vector3::zeros(),
    };
    for r in refs {
        out.position += r.position / n;
        out.velocity += r.velocity / n;
        out.acceleration += r.acceleration / n;
        out.angular_velocity += r.angular_velocity / n;
        out.angular_acceleration += r.angular_acceleration / n;
    }
    out
}

/// Single-rigid-body inertia: torso plus each leg lumped at a nominal point
/// below its hip.
pub fn srb_inertia<T: Real>(model: &RobotModel<T>) -> Matrix3<T> {
    let mut inertia = model.torso.inertia;
    let m = model.leg_mass();
    for leg in Leg::ALL {
        let r = model.hip_mounts[leg.index()]
            + Vector3::new(T::zero(), leg.side_sign::<T>() * model.hip_offset, -model.thigh_length * lit(0.5));
        inertia += (Matrix3::identity() * r.norm_squared() - r * r.transpose()) * m;
    }
    inertia
}

/// Helper for diagnostics: the wrench produced by a set of commanded forces.
pub fn realized_wrench<T: Real>(com: &Vector3<T>, feet: &[Vector3<T>], forces: &[Vector3<T>]) -> Vector6<T> {
    let map = build_wrench_map(com, feet);
    let lambda = DVector::from_iterator(3 * forces.len(), forces.iter().flat_map(|f| [f.x, f.y, f.z]));
    map.apply(&lambda)
}
