use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid Lévy measure: {0}")]
    InvalidSpec(String),

    #[error("argument {z} outside the analyticity domain Re z > {bound}")]
    AnalyticityDomain { z: String, bound: f64 },

    #[error("grid cannot resolve the request: {0}")]
    Resolution(String),

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("solution became non-finite after t = {last_good_time}")]
    Divergence { last_good_time: f64 },

    #[error("trajectory does not cover t = {requested} (covers [{start}, {end}])")]
    TimeRange { requested: f64, start: f64, end: f64 },

    #[error("trajectories are not aligned: {0}")]
    Alignment(String),

    #[error("dense operator of dimension {dim} exceeds the assembly limit {limit}")]
    SizeGuard { dim: usize, limit: usize },

    #[error("boundary leakage {leakage:.3e} exceeds the guard {limit:.1e} (epsilon = {epsilon})")]
    Leakage { leakage: f64, limit: f64, epsilon: f64 },

    #[error("{0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
