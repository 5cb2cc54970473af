//! Forward dynamics of the floating-base quadruped with penalty ground contact.
//!
//! Equation of motion:
//!
//! ```text
//! M(q) q̈ + C(q, q̇) + G(q) = S τ + Σ J_iᵀ λ_i
//! ```
//!
//! `M` comes from the composite-rigid-body algorithm and `C + G` from
//! recursive Newton-Euler, both over the 18-body tree built by
//! [`RobotModel`]. Spatial vectors are ordered `[angular; linear]`.

use nalgebra::{Cholesky, Matrix3, Matrix6, SMatrix, Vector3, Vector6};

use crate::error::{Error, Result};
use crate::model::{Configuration, ContactJacobian, JointKind, JointTorques, Kinematics, Leg, LinkInertia, RobotModel, Velocity, NJ, NQ};
use crate::scalar::{lit, to_f64, Real};

pub type MassMatrix<T> = SMatrix<T, NQ, NQ>;

fn skew<T: Real>(v: &Vector3<T>) -> Matrix3<T> {
    let o = T::zero();
    Matrix3::new(o, -v.z, v.y, v.z, o, -v.x, -v.y, v.x, o)
}

/// Plücker transform from parent to child coordinates for rotation `e`
/// (parent-to-child) and child origin `r` expressed in the parent frame.
fn plucker<T: Real>(e: &Matrix3<T>, r: &Vector3<T>) -> Matrix6<T> {
    let mut x = Matrix6::zeros();
    x.fixed_view_mut::<3, 3>(0, 0).copy_from(e);
    x.fixed_view_mut::<3, 3>(3, 3).copy_from(e);
    x.fixed_view_mut::<3, 3>(3, 0).copy_from(&(-e * skew(r)));
    x
}

fn spatial_inertia<T: Real>(link: &LinkInertia<T>) -> Matrix6<T> {
    let m = link.mass;
    let cx = skew(&link.com);
    let mut i = Matrix6::zeros();
    i.fixed_view_mut::<3, 3>(0, 0).copy_from(&(link.inertia + cx * cx.transpose() * m));
    i.fixed_view_mut::<3, 3>(0, 3).copy_from(&(cx * m));
    i.fixed_view_mut::<3, 3>(3, 0).copy_from(&(cx.transpose() * m));
    i.fixed_view_mut::<3, 3>(3, 3).copy_from(&(Matrix3::identity() * m));
    i
}

fn cross_motion<T: Real>(v: &Vector6<T>, m: &Vector6<T>) -> Vector6<T> {
    let w = v.fixed_rows::<3>(0).into_owned();
    let u = v.fixed_rows::<3>(3).into_owned();
    let mw = m.fixed_rows::<3>(0).into_owned();
    let mu = m.fixed_rows::<3>(3).into_owned();
    let top = w.cross(&mw);
    let bot = w.cross(&mu) + u.cross(&mw);
    Vector6::new(top.x, top.y, top.z, bot.x, bot.y, bot.z)
}

fn cross_force<T: Real>(v: &Vector6<T>, f: &Vector6<T>) -> Vector6<T> {
    let w = v.fixed_rows::<3>(0).into_owned();
    let u = v.fixed_rows::<3>(3).into_owned();
    let n = f.fixed_rows::<3>(0).into_owned();
    let l = f.fixed_rows::<3>(3).into_owned();
    let top = w.cross(&n) + u.cross(&l);
    let bot = w.cross(&l);
    Vector6::new(top.x, top.y, top.z, bot.x, bot.y, bot.z)
}

fn motion_subspace<T: Real>(joint: JointKind) -> Vector6<T> {
    let mut s = Vector6::zeros();
    match joint {
        JointKind::Revolute(a) => s.fixed_rows_mut::<3>(0).copy_from(&a.unit::<T>()),
        JointKind::Prismatic(a) => s.fixed_rows_mut::<3>(3).copy_from(&a.unit::<T>()),
    }
    s
}

/// Per-call tree data: parent-to-child transforms, motion subspaces, inertias.
struct TreeCache<T: Real> {
    xforms: Vec<Matrix6<T>>,
    subspaces: Vec<Vector6<T>>,
    inertias: Vec<Matrix6<T>>,
}

impl<T: Real> TreeCache<T> {
    fn new(model: &RobotModel<T>, q: &Configuration<T>) -> Self {
        let bodies = model.bodies();
        let mut xforms = Vec::with_capacity(bodies.len());
        let mut subspaces = Vec::with_capacity(bodies.len());
        let mut inertias = Vec::with_capacity(bodies.len());
        for body in bodies {
            let qi = q[body.q_index];
            let x = match body.joint {
                JointKind::Revolute(a) => plucker(&a.rotation(qi).transpose(), &body.offset),
                JointKind::Prismatic(a) => plucker(&Matrix3::identity(), &(body.offset + a.unit::<T>() * qi)),
            };
            xforms.push(x);
            subspaces.push(motion_subspace(body.joint));
            inertias.push(spatial_inertia(&body.inertia));
        }
        Self { xforms, subspaces, inertias }
    }
}

/// Recursive Newton-Euler inverse dynamics: joint forces required to
/// realize `qddot` at `(q, qdot)`, with or without gravity.
pub fn inverse_dynamics<T: Real>(
    model: &RobotModel<T>,
    q: &Configuration<T>,
    qdot: &Velocity<T>,
    qddot: &Velocity<T>,
    with_gravity: bool,
) -> Velocity<T> {
    let cache = TreeCache::new(model, q);
    rnea_with(model, &cache, qdot, qddot, with_gravity)
}

fn rnea_with<T: Real>(
    model: &RobotModel<T>,
    cache: &TreeCache<T>,
    qdot: &Velocity<T>,
    qddot: &Velocity<T>,
    with_gravity: bool,
) -> Velocity<T> {
    let bodies = model.bodies();
    let n = bodies.len();
    let mut vel: Vec<Vector6<T>> = Vec::with_capacity(n);
    let mut acc: Vec<Vector6<T>> = Vec::with_capacity(n);
    let mut a0 = Vector6::zeros();
    if with_gravity {
        a0[5] = model.gravity;
    }
    for (i, body) in bodies.iter().enumerate() {
        let x = &cache.xforms[i];
        let s = &cache.subspaces[i];
        let (vp, ap) = match body.parent {
            Some(p) => (vel[p], acc[p]),
            None => (Vector6::zeros(), a0),
        };
        let vj = s * qdot[body.q_index];
        let v = x * vp + vj;
        let a = x * ap + s * qddot[body.q_index] + cross_motion(&v, &vj);
        vel.push(v);
        acc.push(a);
    }
    let mut forces: Vec<Vector6<T>> = (0..n)
        .map(|i| {
            let ii = &cache.inertias[i];
            ii * acc[i] + cross_force(&vel[i], &(ii * vel[i]))
        })
        .collect();
    let mut tau = Velocity::zeros();
    for i in (0..n).rev() {
        let body = &bodies[i];
        tau[body.q_index] = cache.subspaces[i].dot(&forces[i]);
        if let Some(p) = body.parent {
            let fp = cache.xforms[i].transpose() * forces[i];
            forces[p] += fp;
        }
    }
    tau
}

fn crba_with<T: Real>(model: &RobotModel<T>, cache: &TreeCache<T>) -> MassMatrix<T> {
    let bodies = model.bodies();
    let mut composite = cache.inertias.clone();
    for i in (0..bodies.len()).rev() {
        if let Some(p) = bodies[i].parent {
            let x = &cache.xforms[i];
            let contrib = x.transpose() * composite[i] * x;
            composite[p] += contrib;
        }
    }
    let mut m = MassMatrix::zeros();
    for i in 0..bodies.len() {
        let qi = bodies[i].q_index;
        let mut f = composite[i] * cache.subspaces[i];
        m[(qi, qi)] = cache.subspaces[i].dot(&f);
        let mut j = i;
        while let Some(p) = bodies[j].parent {
            f = cache.xforms[j].transpose() * f;
            j = p;
            let qj = bodies[j].q_index;
            let h = f.dot(&cache.subspaces[j]);
            m[(qi, qj)] = h;
            m[(qj, qi)] = h;
        }
    }
    m
}

/// Joint-space mass matrix via the composite-rigid-body algorithm.
pub fn mass_matrix<T: Real>(model: &RobotModel<T>, q: &Configuration<T>) -> MassMatrix<T> {
    crba_with(model, &TreeCache::new(model, q))
}

/// Coriolis, centrifugal and gravity terms `C(q, q̇) + G(q)`.
pub fn bias_forces<T: Real>(model: &RobotModel<T>, q: &Configuration<T>, qdot: &Velocity<T>) -> Velocity<T> {
    inverse_dynamics(model, q, qdot, &Velocity::zeros(), true)
}

/// Gravity vector `G(q)`. Its vertical base row equals `+m g`.
pub fn gravity_forces<T: Real>(model: &RobotModel<T>, q: &Configuration<T>) -> Velocity<T> {
    bias_forces(model, q, &Velocity::zeros())
}

/// Kinetic energy `½ q̇ᵀ M q̇`.
pub fn kinetic_energy<T: Real>(model: &RobotModel<T>, q: &Configuration<T>, qdot: &Velocity<T>) -> T {
    (qdot.transpose() * mass_matrix(model, q) * qdot)[0] * lit(0.5)
}

/// Gravitational potential energy relative to `z = 0`.
pub fn potential_energy<T: Real>(model: &RobotModel<T>, q: &Configuration<T>) -> T {
    let kin = model.forward_kinematics(q);
    model
        .bodies()
        .iter()
        .enumerate()
        .map(|(i, b)| b.inertia.mass * model.gravity * (kin.origins[i] + kin.rotations[i] * b.inertia.com).z)
        .fold(T::zero(), |a, b| a + b)
}

/// Total mechanical energy of the rigid-body system (contact springs excluded).
pub fn mechanical_energy<T: Real>(model: &RobotModel<T>, q: &Configuration<T>, qdot: &Velocity<T>) -> T {
    kinetic_energy(model, q, qdot) + potential_energy(model, q)
}

/// Penalty-based flat-ground contact law.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundModel<T: Real> {
    /// Normal stiffness (N/m).
    pub stiffness: T,
    /// Normal damping (N·s/m).
    pub damping: T,
    pub friction: T,
    /// Slip speed at which friction reaches ~76% of its Coulomb bound (m/s).
    pub slip_velocity: T,
    pub height: T,
}

impl<T: Real> Default for GroundModel<T> {
    fn default() -> Self {
        Self { stiffness: lit(1e5), damping: lit(1e3), friction: lit(0.6), slip_velocity: lit(0.01), height: T::zero() }
    }
}

impl<T: Real> GroundModel<T> {
    pub fn validate(&self) -> Result<()> {
        let ok = self.stiffness > T::zero() && self.damping >= T::zero() && self.friction > T::zero() && self.slip_velocity > T::zero();
        if ok {
            Ok(())
        } else {
            Err(Error::Validation("ground model requires stiffness > 0, damping >= 0, friction > 0, slip_velocity > 0".into()))
        }
    }
}

/// Ground reaction at one foot.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FootContact<T: Real> {
    pub force: Vector3<T>,
    pub in_contact: bool,
    /// Penetration depth (positive when below ground).
    pub penetration: T,
    /// `-∂λ/∂v` at the current state.
    damping: Matrix3<T>,
    /// `-∂λ/∂p` at the current state.
    stiffness: Matrix3<T>,
}

impl<T: Real> FootContact<T> {
    fn free() -> Self {
        Self { force: Vector3::zeros(), in_contact: false, penetration: T::zero(), damping: Matrix3::zeros(), stiffness: Matrix3::zeros() }
    }
}

/// Evaluates the penalty law for one foot at contact point `p` moving at `v`.
pub fn foot_contact<T: Real>(ground: &GroundModel<T>, p: &Vector3<T>, v: &Vector3<T>) -> FootContact<T> {
    let depth = ground.height - p.z;
    if depth <= T::zero() {
        return FootContact::free();
    }
    let raw = ground.stiffness * depth - ground.damping * v.z;
    let mut c = FootContact::free();
    c.in_contact = true;
    c.penetration = depth;
    if raw <= T::zero() {
        return c;
    }
    let fz = raw;
    c.stiffness[(2, 2)] = ground.stiffness;
    c.damping[(2, 2)] = ground.damping;
    let slip = nalgebra::Vector2::new(v.x, v.y);
    let speed = slip.norm();
    let limit = ground.friction * fz;
    let vr = ground.slip_velocity;
    // Secant slope F/v for the implicit step; the tangent of tanh vanishes
    // once sliding and lets the saturated force flip sign every step.
    let (fx, fy, viscous) = if speed > T::default_epsilon() {
        let g = (speed / vr).tanh();
        let dir = slip / speed;
        (-limit * g * dir.x, -limit * g * dir.y, limit * g / speed)
    } else {
        (T::zero(), T::zero(), limit / vr)
    };
    let dt = nalgebra::Matrix2::identity() * viscous;
    c.force = Vector3::new(fx, fy, fz);
    c.damping.fixed_view_mut::<2, 2>(0, 0).copy_from(&dt);
    c
}

/// Contact forces and flags for all four feet.
pub fn contact_forces<T: Real>(model: &RobotModel<T>, state: &FullState<T>, ground: &GroundModel<T>) -> [FootContact<T>; 4] {
    let kin = model.forward_kinematics(&state.q);
    contact_forces_with(model, &kin, &state.qdot, ground).0
}

fn contact_forces_with<T: Real>(
    model: &RobotModel<T>,
    kin: &Kinematics<T>,
    qdot: &Velocity<T>,
    ground: &GroundModel<T>,
) -> ([FootContact<T>; 4], [ContactJacobian<T>; 4]) {
    let jac = Leg::ALL.map(|leg| model.foot_jacobian_with(kin, leg));
    let contacts = Leg::ALL.map(|leg| {
        let p = kin.leg(leg).foot;
        if p.z > ground.height {
            return FootContact::free();
        }
        let v = jac[leg.index()].matrix * qdot;
        foot_contact(ground, &p, &v)
    });
    (contacts, jac)
}

/// Generalized positions, velocities and simulation time.
#[derive(Debug, Clone, PartialEq)]
pub struct FullState<T: Real> {
    pub q: Configuration<T>,
    pub qdot: Velocity<T>,
    pub t: T,
}

impl<T: Real> FullState<T> {
    pub fn new(q: Configuration<T>) -> Self {
        Self { q, qdot: Velocity::zeros(), t: T::zero() }
    }

    pub fn is_finite(&self) -> bool {
        self.q.iter().chain(self.qdot.iter()).all(|v| to_f64(*v).is_finite()) && to_f64(self.t).is_finite()
    }
}

/// Joint torque command ordered `[FR, FL, RR, RL] x [hip, thigh, calf]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ActuationCommand<T: Real> {
    pub tau: JointTorques<T>,
}

impl<T: Real> ActuationCommand<T> {
    pub fn zero() -> Self {
        Self { tau: JointTorques::zeros() }
    }

    /// Clamps to the model's torque limits, returning how many entries were clipped.
    pub fn clamp_to(&mut self, model: &RobotModel<T>) -> usize {
        let limits = model.torque_limit_vector();
        let mut clipped = 0;
        for i in 0..NJ {
            let l = limits[i];
            if self.tau[i] > l {
                self.tau[i] = l;
                clipped += 1;
            } else if self.tau[i] < -l {
                self.tau[i] = -l;
                clipped += 1;
            }
        }
        clipped
    }
}

/// Selection matrix product `S τ` (zeros on the six base rows).
pub fn select<T: Real>(tau: &JointTorques<T>) -> Velocity<T> {
    let mut out = Velocity::zeros();
    out.fixed_rows_mut::<NJ>(6).copy_from(tau);
    out
}

/// Result of one integration step.
#[derive(Debug, Clone)]
pub struct StepReport<T: Real> {
    pub state: FullState<T>,
    /// Contact set of the start of the step, with the forces the implicit
    /// update applied.
    pub contacts: [FootContact<T>; 4],
    /// Torques actually applied (after clamping).
    pub applied: JointTorques<T>,
    pub clipped: usize,
    /// Generalized acceleration used for the velocity update.
    pub qddot: Velocity<T>,
}

/// Solves the unconstrained forward dynamics `M q̈ = S τ + f_ext − C − G`.
pub fn forward_dynamics<T: Real>(
    model: &RobotModel<T>,
    q: &Configuration<T>,
    qdot: &Velocity<T>,
    tau: &JointTorques<T>,
    external: &Velocity<T>,
) -> Result<Velocity<T>> {
    let cache = TreeCache::new(model, q);
    let m = crba_with(model, &cache);
    let rhs = select(tau) + external - rnea_with(model, &cache, qdot, &Velocity::zeros(), true);
    let chol = Cholesky::new(m).ok_or_else(|| Error::Simulation("mass matrix is not positive definite".into()))?;
    Ok(chol.solve(&rhs))
}

/// Maximum accepted physics step (s).
pub const MAX_DT: f64 = 2e-3;

const MAX_FRICTION_PASSES: usize = 20;

/// Advances the plant by `dt` with a semi-implicit Euler step.
///
/// Velocity is updated first, then position from the new velocity. Contact
/// forces enter linearly-implicitly: their stiffness and damping Jacobians
/// are folded into the system matrix so stiff penalty and regularized
/// friction terms stay stable at millisecond steps.
pub fn step_report<T: Real>(
    model: &RobotModel<T>,
    state: &FullState<T>,
    cmd: &ActuationCommand<T>,
    ground: &GroundModel<T>,
    dt: T,
) -> Result<StepReport<T>> {
    if !(dt > T::zero() && dt <= lit(MAX_DT + 1e-15)) {
        return Err(Error::Validation(format!("dt must lie in (0, {MAX_DT}] s, got {dt}")));
    }
    let mut cmd = cmd.clone();
    let clipped = cmd.clamp_to(model);
    let kin = model.forward_kinematics(&state.q);
    let (contacts, jac) = contact_forces_with(model, &kin, &state.qdot, ground);
    let cache = TreeCache::new(model, &state.q);
    let mass = crba_with(model, &cache);
    let free_force = select(&cmd.tau) - rnea_with(model, &cache, &state.qdot, &Velocity::zeros(), true);
    let velocities = jac.clone().map(|j| j.matrix * state.qdot);
    // Feet whose friction is pinned to the cone boundary, with the pinned
    // tangential force. A secant slope taken at the start-of-step slip speed
    // overshoots the cone when slip accelerates within the step.
    let mut pinned: [Option<nalgebra::Vector2<T>>; 4] = [None; 4];
    // Feet whose implicit normal force would pull; they carry no load this step.
    let mut released = [false; 4];
    let mut qddot = Velocity::zeros();
    let mut applied = contacts.map(|c| c.force);
    for _ in 0..MAX_FRICTION_PASSES {
        let mut system = mass;
        let mut force = free_force;
        let mut parts = [(Vector3::zeros(), Matrix3::zeros()); 4];
        for (i, (c, j)) in contacts.iter().zip(&jac).enumerate() {
            if !c.in_contact || released[i] {
                continue;
            }
            let jt = j.matrix.transpose();
            let mut f0 = c.force;
            let mut damping = c.damping;
            if let Some(ft) = pinned[i] {
                f0.x = ft.x;
                f0.y = ft.y;
                damping.fixed_view_mut::<2, 2>(0, 0).fill(T::zero());
            }
            parts[i] = (f0, damping);
            force += jt * f0;
            if c.force.z > T::zero() {
                let k = c.stiffness * dt;
                system += jt * (damping + k) * j.matrix * dt;
                force -= jt * (k * velocities[i]);
            }
        }
        let chol = Cholesky::new(system).ok_or_else(|| Error::Simulation("singular mass matrix".into()))?;
        qddot = chol.solve(&force);
        let mut changed = false;
        for (i, (c, j)) in contacts.iter().zip(&jac).enumerate() {
            if !(c.in_contact && c.force.z > T::zero()) || released[i] {
                continue;
            }
            let (f0, damping) = parts[i];
            let a = j.matrix * qddot;
            let eff = f0 - (c.stiffness * (velocities[i] + a * dt) + damping * a) * dt;
            applied[i] = eff;
            if eff.z < T::zero() {
                released[i] = true;
                applied[i] = Vector3::zeros();
                changed = true;
                continue;
            }
            let limit = ground.friction * eff.z.max(T::zero());
            let tangential = eff.xy();
            let norm = tangential.norm();
            match pinned[i] {
                None if norm > limit * (T::one() + lit(1e-9)) && norm > T::zero() => {
                    pinned[i] = Some(tangential * (limit / norm));
                    changed = true;
                }
                Some(ft) => {
                    let target = match ft.norm() > T::zero() {
                        true => ft * (limit / ft.norm()),
                        false => ft,
                    };
                    if (target - ft).norm() > lit::<T>(1e-9) * (limit + T::one()) {
                        pinned[i] = Some(target);
                        changed = true;
                    }
                }
                None => {}
            }
        }
        if !changed {
            break;
        }
    }
    // Report the contact forces the implicit step actually applied.
    let mut contacts = contacts;
    for (c, f) in contacts.iter_mut().zip(applied) {
        if c.in_contact && c.force.z > T::zero() {
            c.force = f;
        }
    }
    let qdot = state.qdot + qddot * dt;
    let q = state.q + qdot * dt;
    let next = FullState { q, qdot, t: state.t + dt };
    if !next.is_finite() {
        return Err(Error::Simulation(format!("non-finite state at t = {}", next.t)));
    }
    Ok(StepReport { state: next, contacts, applied: cmd.tau, clipped, qddot })
}

/// Advances the plant by one step and returns the new state.
pub fn step<T: Real>(
    model: &RobotModel<T>,
    state: &FullState<T>,
    cmd: &ActuationCommand<T>,
    ground: &GroundModel<T>,
    dt: T,
) -> Result<FullState<T>> {
    step_report(model, state, cmd, ground, dt).map(|r| r.state)
}

/// Sum of `J_iᵀ λ_i` over the feet.
pub fn contact_generalized_force<T: Real>(jac: &[ContactJacobian<T>], forces: &[Vector3<T>]) -> Velocity<T> {
    jac.iter().zip(forces).fold(Velocity::zeros(), |acc, (j, f)| acc + j.matrix.transpose() * f)
}

/// Rows of a leg's joints within an 18-vector.
pub fn leg_rows<T: Real>(v: &Velocity<T>, leg: Leg) -> Vector3<T> {
    v.fixed_rows::<3>(leg.q_offset()).into_owned()
}

/// Smallest eigenvalue of the mass matrix.
pub fn min_mass_eigenvalue<T: Real>(model: &RobotModel<T>, q: &Configuration<T>) -> T {
    mass_matrix(model, q).symmetric_eigenvalues().min()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{PITCH, ROLL, YAW};
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn model() -> RobotModel<f64> {
        RobotModel::a1()
    }

    fn random_state(rng: &mut ChaCha8Rng, height: f64) -> (Configuration<f64>, Velocity<f64>) {
        let m = model();
        let mut q = Configuration::zeros();
        q[2] = height;
        q[ROLL] = rng.gen_range(-0.3..0.3);
        q[PITCH] = rng.gen_range(-0.4..0.4);
        q[YAW] = rng.gen_range(-1.0..1.0);
        for i in 6..NQ {
            let j = (i - 6) % 3;
            q[i] = rng.gen_range(m.joint_limits.lower[j]..m.joint_limits.upper[j]);
        }
        let qd = Velocity::from_fn(|i, _| if i < 6 { rng.gen_range(-1.0..1.0) } else { rng.gen_range(-5.0..5.0) });
        (q, qd)
    }

    #[test]
    fn mass_matrix_translational_block_is_total_mass() {
        let m = model();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let (q, _) = random_state(&mut rng, 0.3);
            let mm = mass_matrix(&m, &q);
            assert_relative_eq!(mm.fixed_view::<3, 3>(0, 0).into_owned(), Matrix3::identity() * m.total_mass, epsilon = 1e-12);
        }
    }

    #[test]
    fn mass_matrix_symmetric_and_matches_rnea_columns() {
        let m = model();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let (q, _) = random_state(&mut rng, 0.3);
            let mm = mass_matrix(&m, &q);
            assert!((mm - mm.transpose()).amax() <= 1e-12);
            for i in 0..NQ {
                let mut e = Velocity::zeros();
                e[i] = 1.0;
                let col = inverse_dynamics(&m, &q, &Velocity::zeros(), &e, false);
                assert!((col - mm.column(i)).amax() <= 1e-10);
            }
            assert!(min_mass_eigenvalue(&m, &q) > 0.0);
        }
    }

    #[test]
    fn gravity_vector_supports_weight() {
        let m = model();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (q, _) = random_state(&mut rng, 0.3);
        let g = gravity_forces(&m, &q);
        assert_relative_eq!(g[2], m.total_mass * m.gravity, epsilon = 1e-10);
        assert!(g[0].abs() < 1e-10 && g[1].abs() < 1e-10);
        assert_eq!(bias_forces(&m, &q, &Velocity::zeros()), g);
    }

    #[test]
    fn coriolis_is_quadratic_in_velocity() {
        let m = model();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (q, qd) = random_state(&mut rng, 0.3);
        let g = gravity_forces(&m, &q);
        let c1 = bias_forces(&m, &q, &qd) - g;
        let c2 = bias_forces(&m, &q, &(qd * 2.0)) - g;
        assert!((c2 - c1 * 4.0).amax() <= 1e-9 * c1.amax().max(1.0));
    }

    #[test]
    fn power_balance_closes() {
        // dE/dt along the unconstrained flow equals the actuator power q̇ᵀSτ.
        let m = model();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let (q, qd) = random_state(&mut rng, 0.5);
            let tau = JointTorques::from_fn(|_, _| rng.gen_range(-10.0..10.0));
            let ext = Velocity::zeros();
            let qdd = forward_dynamics(&m, &q, &qd, &tau, &ext).unwrap();
            let h = 1e-5;
            let energy_at = |s: f64| {
                let qs = q + qd * s + qdd * (0.5 * s * s);
                let vs = qd + qdd * s;
                mechanical_energy(&m, &qs, &vs)
            };
            let rate = (energy_at(h) - energy_at(-h)) / (2.0 * h);
            let power = qd.dot(&select(&tau));
            assert!((rate - power).abs() <= 1e-5 * power.abs().max(1.0), "{rate} vs {power}");
        }
    }

    #[test]
    fn contact_law_examples() {
        let g = GroundModel::<f64>::default();
        let above = foot_contact(&g, &Vector3::new(0.0, 0.0, 0.001), &Vector3::new(0.3, 0.0, -1.0));
        assert!(!above.in_contact);
        assert_eq!(above.force, Vector3::zeros());
        let pressed = foot_contact(&g, &Vector3::new(0.0, 0.0, -0.001), &Vector3::zeros());
        assert!(pressed.in_contact);
        assert_relative_eq!(pressed.force.z, 100.0, epsilon = 1e-9);
        assert_eq!(pressed.force.xy(), nalgebra::Vector2::zeros());
        let sliding = foot_contact(&g, &Vector3::new(0.0, 0.0, -0.001), &Vector3::new(-1.0, 0.0, 0.0));
        assert_relative_eq!(sliding.force.z, 100.0, epsilon = 1e-9);
        assert_relative_eq!(sliding.force.x, 60.0, epsilon = 1e-9);
        // Lifting off faster than the spring pushes: no pull.
        let leaving = foot_contact(&g, &Vector3::new(0.0, 0.0, -0.001), &Vector3::new(0.0, 0.0, 1.0));
        assert_eq!(leaving.force, Vector3::zeros());
    }

    #[test]
    fn feet_in_the_air_feel_nothing() {
        let m = model();
        let mut q = Configuration::zeros();
        q[2] = 1.0;
        let contacts = contact_forces(&m, &FullState::new(q), &GroundModel::default());
        assert!(contacts.iter().all(|c| !c.in_contact && c.force == Vector3::zeros()));
    }

    #[test]
    fn free_fall_accelerates_com_at_g() {
        let m = model();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..20 {
            let (q, _) = random_state(&mut rng, 2.0);
            let qdd = forward_dynamics(&m, &q, &Velocity::zeros(), &JointTorques::zeros(), &Velocity::zeros()).unwrap();
            // With q̇ = 0 the COM acceleration is the COM Jacobian applied to q̈.
            let a = m.com_state(&q, &qdd).velocity;
            assert!((a - Vector3::new(0.0, 0.0, -m.gravity)).amax() <= 1e-10, "{a:?}");
        }
    }

    fn flight(dt: f64, duration: f64, q: Configuration<f64>, qd: Velocity<f64>) -> FullState<f64> {
        let m = model();
        let g = GroundModel::default();
        let mut s = FullState { q, qdot: qd, t: 0.0 };
        let n = (duration / dt).round() as usize;
        for _ in 0..n {
            s = step(&m, &s, &ActuationCommand::zero(), &g, dt).unwrap();
        }
        s
    }

    fn bounding_flight_state() -> (Configuration<f64>, Velocity<f64>) {
        let mut q = Configuration::zeros();
        q[2] = 0.6;
        q[PITCH] = 0.1;
        for leg in Leg::ALL {
            let o = leg.q_offset();
            q[o + 1] = 0.8;
            q[o + 2] = -1.6;
        }
        let mut qd = Velocity::zeros();
        qd[0] = 0.5;
        qd[2] = 0.8;
        qd[PITCH] = 1.5;
        for (i, leg) in Leg::ALL.into_iter().enumerate() {
            let o = leg.q_offset();
            qd[o + 1] = [4.0, -4.0, 3.0, -3.0][i];
            qd[o + 2] = [-5.0, 5.0, -2.0, 2.0][i];
        }
        (q, qd)
    }

    #[test]
    fn flight_energy_drift() {
        let m = model();
        let (q, qd) = bounding_flight_state();
        let e0 = mechanical_energy(&m, &q, &qd);
        for (dt, bound) in [(1e-3, 5e-3), (1e-4, 5e-4)] {
            let s = flight(dt, 0.1, q, qd);
            let drift = ((mechanical_energy(&m, &s.q, &s.qdot) - e0) / e0).abs();
            assert!(drift <= bound, "dt {dt}: drift {drift}");
        }
    }

    #[test]
    fn integrator_is_first_order() {
        let (q, qd) = bounding_flight_state();
        let reference = flight(1e-6, 0.1, q, qd);
        let err = |dt: f64| (flight(dt, 0.1, q, qd).q - reference.q).norm();
        let ratio = err(1e-3) / err(5e-4);
        assert!((1.5..=3.0).contains(&ratio), "{ratio}");
    }

    #[test]
    fn stepping_is_deterministic() {
        let m = model();
        let g = GroundModel::default();
        let mut q = Configuration::zeros();
        q[2] = 0.32;
        for leg in Leg::ALL {
            let o = leg.q_offset();
            q[o + 1] = 0.7;
            q[o + 2] = -1.4;
        }
        let run = || {
            let mut s = FullState::new(q);
            let mut tau = ActuationCommand::zero();
            tau.tau[1] = 5.0;
            tau.tau[5] = -3.0;
            let mut out = Vec::new();
            for _ in 0..300 {
                s = step(&m, &s, &tau, &g, 1e-3).unwrap();
                out.extend(s.q.iter().map(|x| x.to_bits()));
            }
            out
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn oversize_step_is_rejected() {
        let m = model();
        let s = FullState::new(Configuration::zeros());
        assert!(step(&m, &s, &ActuationCommand::zero(), &GroundModel::default(), 3e-3).is_err());
    }

    #[test]
    fn mass_matrix_stays_positive_on_a_landing() {
        let m = model();
        let g = GroundModel::default();
        let (mut q, mut qd) = bounding_flight_state();
        q[2] = 0.45;
        qd[2] = -1.0;
        let mut s = FullState { q, qdot: qd, t: 0.0 };
        for i in 0..400 {
            s = step(&m, &s, &ActuationCommand::zero(), &g, 1e-3).unwrap();
            if i % 20 == 0 {
                assert!(min_mass_eigenvalue(&m, &s.q) > 0.0);
            }
        }
    }

    proptest! {
        #[test]
        fn contact_forces_stay_in_cone(depth in -0.01..0.01f64, vx in -2.0..2.0f64, vy in -2.0..2.0f64, vz in -2.0..2.0f64) {
            let g = GroundModel::<f64>::default();
            let c = foot_contact(&g, &Vector3::new(0.0, 0.0, -depth), &Vector3::new(vx, vy, vz));
            prop_assert!(c.force.z >= 0.0);
            prop_assert!(c.force.xy().norm() <= g.friction * c.force.z + 1e-9);
            if depth <= 0.0 {
                prop_assert_eq!(c.force, Vector3::zeros());
            }
        }

        #[test]
        fn reported_contact_forces_stay_in_cone(seed in 0u64..200) {
            let m = model();
            let g = GroundModel::default();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut q = Configuration::zeros();
            q[2] = rng.gen_range(0.30..0.34);
            for leg in Leg::ALL {
                let o = leg.q_offset();
                q[o + 1] = 0.7;
                q[o + 2] = -1.4;
            }
            let mut s = FullState::new(q);
            s.qdot[0] = rng.gen_range(-1.0..1.0);
            s.qdot[2] = rng.gen_range(-1.0..0.0);
            for _ in 0..30 {
                let r = step_report(&m, &s, &ActuationCommand::zero(), &g, 1e-3).unwrap();
                for c in &r.contacts {
                    prop_assert!(c.force.z >= -1e-9);
                    let excess = c.force.xy().norm() - g.friction * c.force.z.max(0.0);
                    prop_assert!(excess <= 1e-6, "excess {} fz {} t {}", excess, c.force.z, s.t);
                }
                s = r.state;
            }
        }
    }
}
