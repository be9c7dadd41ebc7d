use thiserror::Error;

use crate::solver::SolverStats;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, Error)]
pub enum Error {
    /// A scenario field violates an invariant.
    #[error("invalid `{field}`: {message}")]
    Validation { field: String, message: String },

    /// The scenario is well-formed but asks for something unsupported.
    #[error("configuration error: {0}")]
    Configuration(String),

    #[error("could not parse scenario: {0}")]
    Parse(String),

    /// Newton iteration cap reached. Convex problems should never get here.
    #[error("convex solver stalled after {} iterations ({} factorizations)", .stats.iterations, .stats.factorizations)]
    SolverStall { stats: Box<SolverStats> },

    /// The step size collapsed below the hard floor.
    #[error("step size underflow at t = {t}: dt = {dt:e} ({diagnostics})")]
    StepUnderflow { t: f64, dt: f64, diagnostics: String },

    #[error("non-finite state at t = {t} after {retries} halved retries")]
    NonFinite { t: f64, retries: usize },

    /// A wall-time, attempt or evaluation budget ran out.
    #[error("{kind} budget exceeded at t = {t}")]
    Budget { kind: BudgetKind, t: f64 },

    #[error("internal error: {0}")]
    Internal(String),

    #[error("i/o error: {0}")]
    Io(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BudgetKind {
    WallTime,
    Attempts,
    Evaluations,
}

impl std::fmt::Display for BudgetKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            BudgetKind::WallTime => "wall-time",
            BudgetKind::Attempts => "attempt",
            BudgetKind::Evaluations => "evaluation",
        })
    }
}

impl Error {
    pub(crate) fn validation(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Validation {
            field: field.into(),
            message: message.into(),
        }
    }

    /// Short machine-readable category used by the CLI.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Validation { .. } => "validation",
            Error::Configuration(_) => "configuration",
            Error::Parse(_) => "parse",
            Error::SolverStall { .. } => "solver_stall",
            Error::StepUnderflow { .. } => "step_underflow",
            Error::NonFinite { .. } => "non_finite",
            Error::Budget { kind: BudgetKind::WallTime, .. } => "timeout",
            Error::Budget { .. } => "budget",
            Error::Internal(_) => "internal",
            Error::Io(_) => "io",
        }
    }

    /// Process exit code: 2 for bad input, 1 for runtime failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Validation { .. } | Error::Configuration(_) | Error::Parse(_) => 2,
            _ => 1,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
