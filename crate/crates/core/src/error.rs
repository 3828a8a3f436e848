use thiserror::Error;

/// Errors raised anywhere in the simulator.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid matrix: {0}")]
    InvalidMatrix(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("closed loop is not stable{}", match .index { Some(i) => format!(" (system {i})"), None => String::new() })]
    UnstableSystem { index: Option<usize> },
    #[error("solver failure: {0}")]
    SolverFailure(String),
    #[error("step size too large: gradient step destabilizes after {halvings} halvings")]
    StepTooLarge { halvings: usize },
    #[error("trajectory diverged at step {step} (partial cost {partial_cost:e})")]
    TrajectoryDiverged { step: usize, partial_cost: f64 },
    #[error("gradient estimate failed: all {0} rollouts diverged")]
    EstimateFailed(usize),
    #[error("local gain destabilized agent {agent} at local step {step}")]
    LocalInstability { agent: usize, step: usize },
    #[error("precondition failed: {0}")]
    PreconditionFailed(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
