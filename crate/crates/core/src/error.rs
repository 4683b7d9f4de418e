use alloc::string::String;
use alloc::vec::Vec;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("non-finite entry in {0}")]
    NonFinite(&'static str),
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("power flow did not converge after {iterations} iterations (mismatch {mismatch:e})")]
    PowerFlowDiverged { iterations: usize, mismatch: f64 },
    #[error("Newton iteration failed at t = {time} s after {iterations} iterations (residual {residual:e})")]
    StepFailed {
        time: f64,
        iterations: usize,
        residual: f64,
    },
    #[error("event boundary at t = {time} s is not a multiple of the step {dt} s")]
    EventMisaligned { time: f64, dt: f64 },
    #[error("observation time {0} s is not on the integration grid")]
    OffGrid(f64),
    #[error("singular linear system in the adjoint sweep at step {0}")]
    SingularAdjoint(usize),
    #[error("forward solve failed at m = {m:?}: {reason}")]
    ForwardFailed { m: Vec<f64>, reason: String },
    #[error("Hessian is not positive definite (eigenvalues {0:?})")]
    NotPositiveDefinite(Vec<f64>),
    #[error("collocation matrix is singular (condition number {0:e})")]
    SingularCollocation(f64),
    #[error("unsupported sparse-grid level {0}")]
    UnsupportedLevel(usize),
    #[error("line search failed: {0}")]
    LineSearch(&'static str),
}
