//! Simulation and control of a bounding quadruped.
//!
//! Math modules are generic over the scalar type; the aliases below fix it
//! to `f64` (and `f32` where single precision is useful).

// `!(x > 0)` also rejects NaN, which is the point in validation code.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod control;
pub mod dynamics;
pub mod energetics;
pub mod error;
pub mod gait;
pub mod harness;
pub mod model;
pub mod qp;
pub mod scalar;
pub mod slip;

pub use error::{Error, Result};
pub use model::Leg;
pub use scalar::Real;

pub type RobotModel = model::RobotModel<f64>;
pub type RobotModelF32 = model::RobotModel<f32>;
pub type FullState = dynamics::FullState<f64>;
pub type GroundModel = dynamics::GroundModel<f64>;
pub type GaitParams = gait::GaitParams<f64>;
pub type GaitParamsF32 = gait::GaitParams<f32>;
pub type SlipCoeffs = slip::SlipCoeffs<f64>;
pub type QpProblem = qp::QpProblem<f64>;
pub type ControllerConfig = control::ControllerConfig<f64>;
pub type Controller = control::Controller<f64>;
