use thiserror::Error;

use crate::model::Leg;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error: {0}")]
    Parse(String),
    #[error("validation error: {0}")]
    Validation(String),
    #[error("target {target:?} is outside the workspace of leg {leg}")]
    Unreachable { leg: Leg, target: [f64; 3] },
    #[error("simulation fault: {0}")]
    Simulation(String),
    #[error("qp solver hit the iteration limit ({iterations} iterations, residual {residual:e})")]
    QpIterationLimit { iterations: usize, residual: f64 },
    #[error("slip fit is rank deficient: {0}")]
    RankDeficient(String),
    #[error("no strides found: {0}")]
    NoStrides(String),
    #[error("nonpositive displacement {0} m over the stride window")]
    NonpositiveDisplacement(f64),
    #[error("csv error: {0}")]
    Csv(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
