use thiserror::Error;

use crate::dynamics::CompactState;
use crate::integrate::Trajectory;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("potential is singular at theta = {theta} (|cos theta| = {cos_theta:e})")]
    Singularity { theta: f64, cos_theta: f64 },

    #[error("classical time rate is infinite at s = 1")]
    InfiniteRate,

    #[error("step size underflow at tau = {tau} (h = {step:e})")]
    StepUnderflow { tau: f64, step: f64, state: CompactState, partial: Box<Trajectory> },

    #[error("step limit of {limit} reached at tau = {tau}")]
    StepLimit { tau: f64, limit: usize, state: CompactState, partial: Box<Trajectory> },

    #[error("event root finder failed to bracket '{kind}' near tau = {tau}")]
    Bracketing { kind: String, tau: f64 },

    #[error("tau = {tau} outside trajectory span [{lo}, {hi}]")]
    Range { tau: f64, lo: f64, hi: f64 },

    #[error("energy projection has no real solution (residual {residual:e})")]
    Projection { residual: f64 },

    #[error("bisection bracket does not straddle a change: {0}")]
    Bracket(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
