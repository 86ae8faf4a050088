use thiserror::Error;

/// Errors produced anywhere in the forecasting pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("integration diverged at step {step} (t = {time})")]
    Divergence { step: usize, time: f64 },

    #[error("ensemble member {member} diverged at step {step}")]
    MemberDivergence { member: usize, step: usize },

    #[error("forecast diverged: member {member} at step {step}")]
    ForecastDiverged { member: usize, step: usize, partial: Box<crate::forecast::ForecastRecord> },

    #[error("stalk diverged: member {member} at step {step}")]
    StalkDiverged { member: usize, step: usize, partial: Box<crate::stalk::StalkRecord> },

    #[error("degenerate ellipsoid: {members} members cannot span {dims} dimensions")]
    DegenerateEllipsoid { members: usize, dims: usize },

    #[error("covariance not positive definite (smallest eigenvalue {min_eigenvalue:e})")]
    NotPositiveDefinite { min_eigenvalue: f64 },

    #[error("only {found} attractor neighbours found, {required} required")]
    NeighborDeficit { found: usize, required: usize },

    #[error("anomaly correlation undefined for a zero anomaly vector")]
    UndefinedCorrelation,

    #[error("too many analogs diverged ({diverged} of {total})")]
    AnalogDivergence { diverged: usize, total: usize },

    #[error("climatology cache: {0}")]
    Cache(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Toml(#[from] toml::de::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
