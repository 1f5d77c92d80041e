use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("non-finite state at step {step} (t = {time})")]
    IntegrationFailure { step: usize, time: f64 },

    #[error("Riccati solution escaped (max |entry| > {bound:e}) at t = {time}")]
    FiniteEscape { time: f64, bound: f64 },

    #[error("near-conjugate point: condition number {condition:e} exceeds {limit:e}")]
    NearConjugatePoint { condition: f64, limit: f64 },

    #[error("controllability lost on [{t0}, {t}]: smallest Gramian eigenvalue {min_eigenvalue:e}")]
    ControllabilityLoss { t0: f64, t: f64, min_eigenvalue: f64 },

    #[error("degenerate horizon [{t0}, {t}]: {reason}")]
    DegenerateHorizon { t0: f64, t: f64, reason: String },

    #[error("delta-limit extrapolation did not converge: successive differences {differences:?}")]
    LimitNonconvergence { differences: Vec<f64> },

    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("truncation: mass outside the grid box is {ratio:e} of the inside mass (limit {limit:e})")]
    Truncation { ratio: f64, limit: f64 },

    #[error("underflow in {0}")]
    Underflow(String),

    #[error("simulation blow-up (seed {seed}, path {path}, step {step})")]
    SimulationBlowup { seed: u64, path: u64, step: usize },

    #[error("optimal control problem is infeasible: {0}")]
    Infeasible(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
