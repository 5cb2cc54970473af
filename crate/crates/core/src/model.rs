//! Kinematic and inertial description of the quadruped.
//!
//! The generalized coordinate vector has 18 slots:
//!
//! ```text
//! [x, y, z, roll, pitch, yaw, FR(hip, thigh, calf), FL(..), RR(..), RL(..)]
//! ```
//!
//! The torso orientation is `R = Rz(yaw) * Ry(pitch) * Rx(roll)`. Internally
//! the floating base is modelled as a chain of six single-DOF joints
//! (three sliders, then yaw, pitch and roll hinges) so the same tree
//! algorithms serve the base and the legs.

use std::path::Path;

use nalgebra::{Matrix3, SMatrix, SVector, Vector3};
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::scalar::{lit, Real};

/// Number of generalized coordinates.
pub const NQ: usize = 18;
/// Number of actuated joints.
pub const NJ: usize = 12;

pub type Configuration<T> = SVector<T, NQ>;
pub type Velocity<T> = SVector<T, NQ>;
pub type JointTorques<T> = SVector<T, NJ>;

/// Slot of the torso roll angle in the configuration vector.
pub const ROLL: usize = 3;
pub const PITCH: usize = 4;
pub const YAW: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Leg {
    FR,
    FL,
    RR,
    RL,
}

impl Leg {
    pub const ALL: [Leg; 4] = [Leg::FR, Leg::FL, Leg::RR, Leg::RL];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Leg::FR => "FR",
            Leg::FL => "FL",
            Leg::RR => "RR",
            Leg::RL => "RL",
        }
    }

    pub fn is_front(self) -> bool {
        matches!(self, Leg::FR | Leg::FL)
    }

    pub fn is_left(self) -> bool {
        matches!(self, Leg::FL | Leg::RL)
    }

    /// +1 for left legs, -1 for right legs.
    pub fn side_sign<T: Real>(self) -> T {
        if self.is_left() {
            T::one()
        } else {
            -T::one()
        }
    }

    /// The other leg of the same front/rear pair.
    pub fn mirror(self) -> Leg {
        match self {
            Leg::FR => Leg::FL,
            Leg::FL => Leg::FR,
            Leg::RR => Leg::RL,
            Leg::RL => Leg::RR,
        }
    }

    /// First configuration slot of this leg's joint triple.
    pub fn q_offset(self) -> usize {
        6 + 3 * self.index()
    }

    /// First slot of this leg's triple in the 12-vector of joint torques.
    pub fn tau_offset(self) -> usize {
        3 * self.index()
    }
}

impl std::fmt::Display for Leg {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Leg {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "FR" => Ok(Leg::FR),
            "FL" => Ok(Leg::FL),
            "RR" => Ok(Leg::RR),
            "RL" => Ok(Leg::RL),
            other => Err(Error::Validation(format!("unknown leg label `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub fn unit<T: Real>(self) -> Vector3<T> {
        match self {
            Axis::X => Vector3::x(),
            Axis::Y => Vector3::y(),
            Axis::Z => Vector3::z(),
        }
    }

    /// Rotation matrix of angle `q` about this axis.
    pub fn rotation<T: Real>(self, q: T) -> Matrix3<T> {
        let (s, c) = q.sin_cos();
        let o = T::zero();
        let l = T::one();
        match self {
            Axis::X => Matrix3::new(l, o, o, o, c, -s, o, s, c),
            Axis::Y => Matrix3::new(c, o, s, o, l, o, -s, o, c),
            Axis::Z => Matrix3::new(c, -s, o, s, c, o, o, o, l),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JointKind {
    Prismatic(Axis),
    Revolute(Axis),
}

/// Mass properties of one rigid link, expressed in the link frame.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkInertia<T: Real> {
    pub mass: T,
    pub com: Vector3<T>,
    /// Rotational inertia about the center of mass.
    pub inertia: Matrix3<T>,
}

impl<T: Real> LinkInertia<T> {
    pub fn zero() -> Self {
        Self { mass: T::zero(), com: Vector3::zeros(), inertia: Matrix3::zeros() }
    }

    /// Reflection through the sagittal (x-z) plane.
    pub fn mirrored(&self) -> Self {
        let flip = Matrix3::from_diagonal(&Vector3::new(T::one(), -T::one(), T::one()));
        Self { mass: self.mass, com: Vector3::new(self.com.x, -self.com.y, self.com.z), inertia: flip * self.inertia * flip }
    }

    pub fn cast<U: Real>(&self) -> LinkInertia<U> {
        LinkInertia {
            mass: lit(crate::scalar::to_f64(self.mass)),
            com: self.com.map(|v| lit(crate::scalar::to_f64(v))),
            inertia: self.inertia.map(|v| lit(crate::scalar::to_f64(v))),
        }
    }
}

/// One node of the kinematic tree.
#[derive(Debug, Clone)]
pub struct Body<T: Real> {
    pub parent: Option<usize>,
    pub joint: JointKind,
    /// Joint origin in the parent frame (all frames are parallel at zero pose).
    pub offset: Vector3<T>,
    pub inertia: LinkInertia<T>,
    /// Slot in the configuration vector driven by this body's joint.
    pub q_index: usize,
}

/// Per-leg limits, ordered `[hip, thigh, calf]`.
#[derive(Debug, Clone, PartialEq)]
pub struct JointLimits<T: Real> {
    pub lower: [T; 3],
    pub upper: [T; 3],
}

/// Kinematic and inertial description of a 12-joint, 18-DOF quadruped.
#[derive(Debug, Clone)]
pub struct RobotModel<T: Real> {
    pub name: String,
    pub total_mass: T,
    /// Gravity magnitude (positive), acting along world -z.
    pub gravity: T,
    pub torso: LinkInertia<T>,
    pub hip_mounts: [Vector3<T>; 4],
    /// Lateral distance from the hip joint to the thigh joint plane.
    pub hip_offset: T,
    pub thigh_length: T,
    pub calf_length: T,
    /// Link properties of the right-side legs; left legs are mirrored.
    pub hip_link: LinkInertia<T>,
    pub thigh_link: LinkInertia<T>,
    pub calf_link: LinkInertia<T>,
    pub joint_limits: JointLimits<T>,
    pub torque_limits: [T; 3],
    pub foot_radius: T,
    bodies: Vec<Body<T>>,
}

/// Body index of the torso in the kinematic tree.
pub const TORSO_BODY: usize = 5;

/// Body index of a leg's `[hip, thigh, calf]` links.
pub fn leg_bodies(leg: Leg) -> [usize; 3] {
    let o = leg.q_offset();
    [o, o + 1, o + 2]
}

/// World-frame pose of every body plus per-leg points of interest.
#[derive(Debug, Clone)]
pub struct Kinematics<T: Real> {
    /// Body-to-world rotation of each body.
    pub rotations: Vec<Matrix3<T>>,
    /// World position of each body's joint origin.
    pub origins: Vec<Vector3<T>>,
    pub legs: [LegPoints<T>; 4],
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LegPoints<T: Real> {
    /// Hip joint location.
    pub hip: Vector3<T>,
    /// Center of the foot sphere.
    pub foot_center: Vector3<T>,
    /// Contact point: sphere center lowered by the foot radius along world z.
    pub foot: Vector3<T>,
}

impl<T: Real> Kinematics<T> {
    pub fn torso_rotation(&self) -> &Matrix3<T> {
        &self.rotations[TORSO_BODY]
    }

    pub fn leg(&self, leg: Leg) -> &LegPoints<T> {
        &self.legs[leg.index()]
    }
}

/// 3x18 map from generalized velocity to a foot's contact-point velocity.
#[derive(Debug, Clone, PartialEq)]
pub struct ContactJacobian<T: Real> {
    pub leg: Leg,
    pub matrix: SMatrix<T, 3, NQ>,
}

impl<T: Real> ContactJacobian<T> {
    /// The 3x3 block acting on this leg's own joints.
    pub fn leg_block(&self) -> Matrix3<T> {
        self.matrix.fixed_view::<3, 3>(0, self.leg.q_offset()).into_owned()
    }
}

/// Center-of-mass position and velocity in the inertial frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ComState<T: Real> {
    pub position: Vector3<T>,
    pub velocity: Vector3<T>,
}

/// Torso rotation `Rz(yaw) Ry(pitch) Rx(roll)`.
pub fn euler_zyx<T: Real>(roll: T, pitch: T, yaw: T) -> Matrix3<T> {
    Axis::Z.rotation(yaw) * Axis::Y.rotation(pitch) * Axis::X.rotation(roll)
}

impl<T: Real> RobotModel<T> {
    pub fn bodies(&self) -> &[Body<T>] {
        &self.bodies
    }

    pub fn gravity_vector(&self) -> Vector3<T> {
        Vector3::new(T::zero(), T::zero(), -self.gravity)
    }

    /// Mass of the torso link (total mass minus leg links).
    pub fn torso_mass(&self) -> T {
        self.torso.mass
    }

    pub fn leg_mass(&self) -> T {
        self.hip_link.mass + self.thigh_link.mass + self.calf_link.mass
    }

    /// Torque limit per actuated joint, ordered like [`JointTorques`].
    pub fn torque_limit_vector(&self) -> JointTorques<T> {
        JointTorques::from_fn(|i, _| self.torque_limits[i % 3])
    }

    /// Joint slots (`6..18`) whose angles lie outside the configured limits.
    pub fn limit_violations(&self, q: &Configuration<T>) -> Vec<usize> {
        (6..NQ)
            .filter(|&i| {
                let j = (i - 6) % 3;
                q[i] < self.joint_limits.lower[j] || q[i] > self.joint_limits.upper[j]
            })
            .collect()
    }

    /// Pose of every link plus hip and foot points in the inertial frame.
    pub fn forward_kinematics(&self, q: &Configuration<T>) -> Kinematics<T> {
        let n = self.bodies.len();
        let mut rotations = Vec::with_capacity(n);
        let mut origins = Vec::with_capacity(n);
        for body in &self.bodies {
            let (r_parent, p_parent) = match body.parent {
                Some(p) => (rotations[p], origins[p]),
                None => (Matrix3::identity(), Vector3::zeros()),
            };
            let qi = q[body.q_index];
            let (rot, pos) = match body.joint {
                JointKind::Prismatic(a) => (r_parent, p_parent + r_parent * (body.offset + a.unit::<T>() * qi)),
                JointKind::Revolute(a) => (r_parent * a.rotation(qi), p_parent + r_parent * body.offset),
            };
            rotations.push(rot);
            origins.push(pos);
        }
        let foot_local = Vector3::new(T::zero(), T::zero(), -self.calf_length);
        let legs = Leg::ALL.map(|leg| {
            let [hip, _, calf] = leg_bodies(leg);
            let center = origins[calf] + rotations[calf] * foot_local;
            LegPoints { hip: origins[hip], foot_center: center, foot: center - Vector3::z() * self.foot_radius }
        });
        Kinematics { rotations, origins, legs }
    }

    /// Contact Jacobian `dp_i/dq` of one foot, using precomputed kinematics.
    ///
    /// The contact point sits a fixed world-z offset below the sphere
    /// center, so both share the same derivative.
    pub fn foot_jacobian_with(&self, kin: &Kinematics<T>, leg: Leg) -> ContactJacobian<T> {
        let p = kin.legs[leg.index()].foot_center;
        let mut matrix = SMatrix::<T, 3, NQ>::zeros();
        let mut b = Some(leg_bodies(leg)[2]);
        while let Some(i) = b {
            let body = &self.bodies[i];
            let col = match body.joint {
                JointKind::Prismatic(a) => kin.rotations[i] * a.unit::<T>(),
                JointKind::Revolute(a) => (kin.rotations[i] * a.unit::<T>()).cross(&(p - kin.origins[i])),
            };
            matrix.set_column(body.q_index, &col);
            b = body.parent;
        }
        ContactJacobian { leg, matrix }
    }

    pub fn foot_jacobian(&self, q: &Configuration<T>, leg: Leg) -> ContactJacobian<T> {
        self.foot_jacobian_with(&self.forward_kinematics(q), leg)
    }

    /// Foot-sphere center in the hip frame (torso-aligned axes, origin at the
    /// hip joint) for a joint triple `[hip, thigh, calf]`.
    pub fn leg_forward(&self, leg: Leg, joints: &[T; 3]) -> Vector3<T> {
        let [q1, q2, q3] = *joints;
        let (l1, l2) = (self.thigh_length, self.calf_length);
        let x = -l1 * q2.sin() - l2 * (q2 + q3).sin();
        let z = -l1 * q2.cos() - l2 * (q2 + q3).cos();
        let d = leg.side_sign::<T>() * self.hip_offset;
        Axis::X.rotation(q1) * Vector3::new(x, d, z)
    }

    /// 3x3 Jacobian of [`Self::leg_forward`] with respect to the joint triple.
    pub fn leg_jacobian(&self, leg: Leg, joints: &[T; 3]) -> Matrix3<T> {
        let [q1, q2, q3] = *joints;
        let (l1, l2) = (self.thigh_length, self.calf_length);
        let d = leg.side_sign::<T>() * self.hip_offset;
        let x = -l1 * q2.sin() - l2 * (q2 + q3).sin();
        let z = -l1 * q2.cos() - l2 * (q2 + q3).cos();
        let dx2 = -l1 * q2.cos() - l2 * (q2 + q3).cos();
        let dz2 = l1 * q2.sin() + l2 * (q2 + q3).sin();
        let dx3 = -l2 * (q2 + q3).cos();
        let dz3 = l2 * (q2 + q3).sin();
        let rx = Axis::X.rotation(q1);
        let planar = Vector3::new(x, d, z);
        let c1 = Vector3::x().cross(&(rx * planar));
        let c2 = rx * Vector3::new(dx2, T::zero(), dz2);
        let c3 = rx * Vector3::new(dx3, T::zero(), dz3);
        Matrix3::from_columns(&[c1, c2, c3])
    }

    /// Closed-form leg inverse kinematics on the knee-backward branch.
    ///
    /// `target` is the foot-sphere center in the hip frame.
    pub fn leg_inverse_kinematics(&self, leg: Leg, target: &Vector3<T>) -> Result<[T; 3]> {
        let (l1, l2) = (self.thigh_length, self.calf_length);
        let d = leg.side_sign::<T>() * self.hip_offset;
        let yz2 = target.y * target.y + target.z * target.z;
        let planar_sq = yz2 - d * d;
        let unreachable = || Error::Unreachable {
            leg,
            target: [crate::scalar::to_f64(target.x), crate::scalar::to_f64(target.y), crate::scalar::to_f64(target.z)],
        };
        if planar_sq < T::zero() {
            return Err(unreachable());
        }
        let zp = -planar_sq.sqrt();
        let xp = target.x;
        let reach_sq = xp * xp + zp * zp;
        let reach = reach_sq.sqrt();
        let slack = lit::<T>(1e-12) * (l1 + l2);
        if reach > l1 + l2 + slack || reach < (l1 - l2).abs() - slack {
            return Err(unreachable());
        }
        let q1 = target.z.atan2(target.y) - zp.atan2(d);
        let two = lit::<T>(2.0);
        let cos_knee = ((reach_sq - l1 * l1 - l2 * l2) / (two * l1 * l2)).clamp(-T::one(), T::one());
        let q3 = -cos_knee.acos();
        let q2 = (-xp).atan2(-zp) - (l2 * q3.sin()).atan2(l1 + l2 * q3.cos());
        Ok([wrap_angle(q1), q2, q3])
    }

    /// Center-of-mass position and velocity, summed over every link.
    pub fn com_state(&self, q: &Configuration<T>, qdot: &Velocity<T>) -> ComState<T> {
        let kin = self.forward_kinematics(q);
        let n = self.bodies.len();
        let mut omega: Vec<Vector3<T>> = Vec::with_capacity(n);
        let mut vel: Vec<Vector3<T>> = Vec::with_capacity(n);
        let mut mc = Vector3::zeros();
        let mut mv = Vector3::zeros();
        let mut mass = T::zero();
        for (i, body) in self.bodies.iter().enumerate() {
            let (w_parent, v_parent, o_parent) = match body.parent {
                Some(p) => (omega[p], vel[p], kin.origins[p]),
                None => (Vector3::zeros(), Vector3::zeros(), Vector3::zeros()),
            };
            let qd = qdot[body.q_index];
            let mut w = w_parent;
            let mut v = v_parent + w_parent.cross(&(kin.origins[i] - o_parent));
            match body.joint {
                JointKind::Prismatic(a) => v += kin.rotations[i] * a.unit::<T>() * qd,
                JointKind::Revolute(a) => w += kin.rotations[i] * a.unit::<T>() * qd,
            }
            omega.push(w);
            vel.push(v);
            let m = body.inertia.mass;
            if m > T::zero() {
                let rc = kin.rotations[i] * body.inertia.com;
                mc += (kin.origins[i] + rc) * m;
                mv += (v + w.cross(&rc)) * m;
                mass += m;
            }
        }
        ComState { position: mc / mass, velocity: mv / mass }
    }

    /// Torso angular velocity in the world frame from Euler-angle rates.
    pub fn torso_angular_velocity(&self, q: &Configuration<T>, qdot: &Velocity<T>) -> Vector3<T> {
        let rz = Axis::Z.rotation(q[YAW]);
        let ry = Axis::Y.rotation(q[PITCH]);
        Vector3::z() * qdot[YAW] + rz * Vector3::y() * qdot[PITCH] + rz * ry * Vector3::x() * qdot[ROLL]
    }

    /// Converts the model to another scalar type.
    pub fn cast<U: Real>(&self) -> RobotModel<U> {
        let c = |v: T| lit::<U>(crate::scalar::to_f64(v));
        let v3 = |v: &Vector3<T>| v.map(c);
        let mut out = RobotModel {
            name: self.name.clone(),
            total_mass: c(self.total_mass),
            gravity: c(self.gravity),
            torso: self.torso.cast(),
            hip_mounts: [0, 1, 2, 3].map(|i| v3(&self.hip_mounts[i])),
            hip_offset: c(self.hip_offset),
            thigh_length: c(self.thigh_length),
            calf_length: c(self.calf_length),
            hip_link: self.hip_link.cast(),
            thigh_link: self.thigh_link.cast(),
            calf_link: self.calf_link.cast(),
            joint_limits: JointLimits { lower: self.joint_limits.lower.map(c), upper: self.joint_limits.upper.map(c) },
            torque_limits: self.torque_limits.map(c),
            foot_radius: c(self.foot_radius),
            bodies: Vec::new(),
        };
        out.bodies = out.build_tree();
        out
    }

    fn build_tree(&self) -> Vec<Body<T>> {
        use Axis::*;
        use JointKind::*;
        let virt =
            |parent: Option<usize>, joint, q_index| Body { parent, joint, offset: Vector3::zeros(), inertia: LinkInertia::zero(), q_index };
        let mut bodies = vec![
            virt(None, Prismatic(X), 0),
            virt(Some(0), Prismatic(Y), 1),
            virt(Some(1), Prismatic(Z), 2),
            virt(Some(2), Revolute(Z), YAW),
            virt(Some(3), Revolute(Y), PITCH),
            Body { parent: Some(4), joint: Revolute(X), offset: Vector3::zeros(), inertia: self.torso.clone(), q_index: ROLL },
        ];
        for leg in Leg::ALL {
            let o = leg.q_offset();
            let side = |link: &LinkInertia<T>| if leg.is_left() { link.mirrored() } else { link.clone() };
            bodies.push(Body {
                parent: Some(TORSO_BODY),
                joint: Revolute(X),
                offset: self.hip_mounts[leg.index()],
                inertia: side(&self.hip_link),
                q_index: o,
            });
            bodies.push(Body {
                parent: Some(o),
                joint: Revolute(Y),
                offset: Vector3::new(T::zero(), leg.side_sign::<T>() * self.hip_offset, T::zero()),
                inertia: side(&self.thigh_link),
                q_index: o + 1,
            });
            bodies.push(Body {
                parent: Some(o + 1),
                joint: Revolute(Y),
                offset: Vector3::new(T::zero(), T::zero(), -self.thigh_length),
                inertia: side(&self.calf_link),
                q_index: o + 2,
            });
        }
        bodies
    }

    /// Builds a validated model from the on-disk description.
    pub fn from_file_spec(spec: &ModelFile) -> Result<Self> {
        spec.validate()?;
        let v3 = |a: [f64; 3]| Vector3::new(lit::<T>(a[0]), lit(a[1]), lit(a[2]));
        let legs = &spec.legs;
        let hip_link: LinkInertia<T> = legs.hip_link.to_inertia();
        let thigh_link: LinkInertia<T> = legs.thigh_link.to_inertia();
        let calf_link: LinkInertia<T> = legs.calf_link.to_inertia();
        let leg_mass = legs.hip_link.mass + legs.thigh_link.mass + legs.calf_link.mass;
        let torso: LinkInertia<T> = spec.torso.to_inertia_with_mass(spec.total_mass - 4.0 * leg_mass);
        let mut model = RobotModel {
            name: spec.name.clone(),
            total_mass: lit(spec.total_mass),
            gravity: lit(spec.gravity),
            torso,
            hip_mounts: [v3(legs.hip_mount.fr), v3(legs.hip_mount.fl), v3(legs.hip_mount.rr), v3(legs.hip_mount.rl)],
            hip_offset: lit(legs.hip_offset),
            thigh_length: lit(legs.thigh_length),
            calf_length: lit(legs.calf_length),
            hip_link,
            thigh_link,
            calf_link,
            joint_limits: JointLimits {
                lower: [legs.limits.hip[0], legs.limits.thigh[0], legs.limits.calf[0]].map(lit),
                upper: [legs.limits.hip[1], legs.limits.thigh[1], legs.limits.calf[1]].map(lit),
            },
            torque_limits: [legs.torque_limits.hip, legs.torque_limits.thigh, legs.torque_limits.calf].map(lit),
            foot_radius: lit(spec.foot_radius),
            bodies: Vec::new(),
        };
        model.bodies = model.build_tree();
        Ok(model)
    }

    /// Parses and validates a model description from text.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let spec: ModelFile = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        Self::from_file_spec(&spec)
    }

    /// The model bundled with the crate (public Unitree A1 parameters).
    pub fn a1() -> Self {
        Self::from_toml_str(A1_MODEL).expect("bundled a1.model is valid")
    }

    /// A copy with all leg link masses moved into the torso (single rigid body plant).
    pub fn lumped(&self) -> Self {
        let mut m = self.clone();
        m.hip_link = LinkInertia::zero();
        m.thigh_link = LinkInertia::zero();
        m.calf_link = LinkInertia::zero();
        m.torso.mass = self.total_mass;
        m.bodies = m.build_tree();
        m
    }
}

fn wrap_angle<T: Real>(a: T) -> T {
    let pi = T::pi();
    let two_pi = T::two_pi();
    let mut a = a;
    while a > pi {
        a -= two_pi;
    }
    while a <= -pi {
        a += two_pi;
    }
    a
}

/// Text of the bundled A1 model file.
pub const A1_MODEL: &str = include_str!("../data/a1.model");

/// Reads, parses and validates a model file.
pub fn load_model<T: Real>(path: impl AsRef<Path>) -> Result<RobotModel<T>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io { path: path.display().to_string(), source: e })?;
    RobotModel::from_toml_str(&text)
}

/// Current model file schema version.
pub const MODEL_SCHEMA_VERSION: u32 = 1;

/// On-disk model description (TOML, SI units, radians).
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub schema_version: u32,
    #[serde(default = "default_name")]
    pub name: String,
    pub total_mass: f64,
    pub gravity: f64,
    #[serde(default = "default_foot_radius")]
    pub foot_radius: f64,
    pub torso: TorsoSpec,
    pub legs: LegSpec,
}

fn default_name() -> String {
    "quadruped".into()
}

fn default_foot_radius() -> f64 {
    0.02
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TorsoSpec {
    pub com: [f64; 3],
    /// `[ixx, iyy, izz, ixy, ixz, iyz]` about the COM.
    pub inertia: [f64; 6],
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkSpec {
    pub mass: f64,
    pub com: [f64; 3],
    /// `[ixx, iyy, izz, ixy, ixz, iyz]` about the COM.
    pub inertia: [f64; 6],
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HipMounts {
    #[serde(rename = "FR")]
    pub fr: [f64; 3],
    #[serde(rename = "FL")]
    pub fl: [f64; 3],
    #[serde(rename = "RR")]
    pub rr: [f64; 3],
    #[serde(rename = "RL")]
    pub rl: [f64; 3],
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LimitSpec {
    pub hip: [f64; 2],
    pub thigh: [f64; 2],
    pub calf: [f64; 2],
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TorqueSpec {
    pub hip: f64,
    pub thigh: f64,
    pub calf: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LegSpec {
    pub hip_mount: HipMounts,
    pub hip_offset: f64,
    pub thigh_length: f64,
    pub calf_length: f64,
    pub hip_link: LinkSpec,
    pub thigh_link: LinkSpec,
    pub calf_link: LinkSpec,
    pub limits: LimitSpec,
    pub torque_limits: TorqueSpec,
}

fn inertia_matrix<T: Real>(i: &[f64; 6]) -> Matrix3<T> {
    let [xx, yy, zz, xy, xz, yz] = i.map(lit::<T>);
    Matrix3::new(xx, xy, xz, xy, yy, yz, xz, yz, zz)
}

fn is_spd(i: &[f64; 6]) -> bool {
    nalgebra::Cholesky::new(inertia_matrix::<f64>(i)).is_some()
}

impl TorsoSpec {
    fn to_inertia_with_mass<T: Real>(&self, mass: f64) -> LinkInertia<T> {
        LinkInertia {
            mass: lit(mass),
            com: Vector3::new(lit(self.com[0]), lit(self.com[1]), lit(self.com[2])),
            inertia: inertia_matrix(&self.inertia),
        }
    }
}

impl LinkSpec {
    fn to_inertia<T: Real>(&self) -> LinkInertia<T> {
        LinkInertia {
            mass: lit(self.mass),
            com: Vector3::new(lit(self.com[0]), lit(self.com[1]), lit(self.com[2])),
            inertia: inertia_matrix(&self.inertia),
        }
    }
}

impl ModelFile {
    /// Checks every model invariant, naming the first one violated.
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Validation(msg));
        if self.schema_version != MODEL_SCHEMA_VERSION {
            return fail(format!("unsupported schema_version {} (expected {MODEL_SCHEMA_VERSION})", self.schema_version));
        }
        if !(self.total_mass > 0.0) {
            return fail("total_mass must be positive".into());
        }
        if !(self.gravity > 0.0) {
            return fail("gravity must be positive".into());
        }
        if !(self.foot_radius >= 0.0) {
            return fail("foot_radius must be nonnegative".into());
        }
        let legs = &self.legs;
        for (name, link) in [("hip_link", &legs.hip_link), ("thigh_link", &legs.thigh_link), ("calf_link", &legs.calf_link)] {
            if !(link.mass >= 0.0) {
                return fail(format!("{name}.mass must be nonnegative"));
            }
            if link.mass > 0.0 && !is_spd(&link.inertia) {
                return fail(format!("{name}.inertia must be symmetric positive definite"));
            }
        }
        let leg_mass = legs.hip_link.mass + legs.thigh_link.mass + legs.calf_link.mass;
        if !(self.total_mass - 4.0 * leg_mass > 0.0) {
            return fail("total_mass must exceed the summed leg link masses".into());
        }
        if !is_spd(&self.torso.inertia) {
            return fail("torso.inertia must be symmetric positive definite".into());
        }
        for (name, v) in [("hip_offset", legs.hip_offset), ("thigh_length", legs.thigh_length), ("calf_length", legs.calf_length)] {
            if !(v > 0.0) {
                return fail(format!("{name} must be positive"));
            }
        }
        let m = &legs.hip_mount;
        let mirrored = |r: [f64; 3], l: [f64; 3]| r[0] == l[0] && r[1] == -l[1] && r[2] == l[2] && l[1] > 0.0;
        if !mirrored(m.fr, m.fl) || !mirrored(m.rr, m.rl) {
            return fail("hip mounts must be mirror-symmetric about the sagittal plane (left legs at +y)".into());
        }
        if !(m.fr[0] > m.rr[0]) {
            return fail("front hip mounts must lie ahead of rear hip mounts".into());
        }
        for (name, lim) in [("hip", legs.limits.hip), ("thigh", legs.limits.thigh), ("calf", legs.limits.calf)] {
            if !(lim[0] < lim[1]) {
                return fail(format!("limits.{name} lower bound must be below upper bound"));
            }
        }
        let t = &legs.torque_limits;
        if !(t.hip > 0.0 && t.thigh > 0.0 && t.calf > 0.0) {
            return fail("torque limits must be positive".into());
        }
        Ok(())
    }
}
