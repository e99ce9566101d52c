use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid qubit label `{0}`")]
    InvalidLabel(String),

    #[error("device invariant violated at {qubit}: {reason}")]
    Device { qubit: String, reason: String },

    #[error("unknown qubit {0}")]
    UnknownQubit(String),

    #[error("active set is empty")]
    EmptyActiveSet,

    #[error("{0} is not a functional qubit")]
    NotFunctional(String),

    #[error("sector ({n_sites} sites, {n_excitations} excitations) is invalid: {reason}")]
    Sector {
        n_sites: usize,
        n_excitations: usize,
        reason: String,
    },

    #[error("expected {expected} excitations, got {got}")]
    ExcitationCount { expected: usize, got: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("state left the excitation sector while applying an operator (basis state {0:#b})")]
    SectorLeak(u64),

    #[error("Krylov propagation did not converge at t = {time_ns} ns (error estimate {estimate:.3e})")]
    KrylovNonConvergence { time_ns: f64, estimate: f64 },

    #[error("integrator step size underflow at t = {time_ns} ns")]
    StepUnderflow { time_ns: f64 },

    #[error("sample times must be nonnegative and strictly increasing")]
    BadTimeGrid,

    #[error("unknown {kind} `{name}` (available: {available})")]
    UnknownStrategy {
        kind: &'static str,
        name: String,
        available: String,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("fit failed: {0}")]
    Fit(String),

    #[error("no shots retained after post-selection")]
    NothingRetained,

    #[error("optimizer exceeded {iterations} iterations (best cost {best_cost:.6e})")]
    OptimizerExhausted {
        iterations: usize,
        best_cost: f64,
        best: Vec<f64>,
    },

    #[error("interferometer path blocked after stage 1: {0}")]
    PathBlocked(String),

    #[error("ZZ coupling pole: {0}")]
    Resonance(String),

    #[error("no feasible idle assignment after {restarts} restarts: {constraint}")]
    Infeasible { restarts: usize, constraint: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Errors the CLI reports with the usage exit code rather than as a domain failure.
    pub fn is_usage(&self) -> bool {
        matches!(
            self,
            Error::Config(_)
                | Error::InvalidLabel(_)
                | Error::UnknownStrategy { .. }
                | Error::Io { .. }
        )
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidLabel(_) => "invalid_label",
            Error::Device { .. } => "device",
            Error::UnknownQubit(_) => "unknown_qubit",
            Error::EmptyActiveSet => "empty_active_set",
            Error::NotFunctional(_) => "not_functional",
            Error::Sector { .. } => "sector",
            Error::ExcitationCount { .. } => "excitation_count",
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::SectorLeak(_) => "sector_leak",
            Error::KrylovNonConvergence { .. } => "krylov_nonconvergence",
            Error::StepUnderflow { .. } => "step_underflow",
            Error::BadTimeGrid => "bad_time_grid",
            Error::UnknownStrategy { .. } => "unknown_strategy",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::Fit(_) => "fit",
            Error::NothingRetained => "nothing_retained",
            Error::OptimizerExhausted { .. } => "optimizer_exhausted",
            Error::PathBlocked(_) => "path_blocked",
            Error::Resonance(_) => "resonance",
            Error::Infeasible { .. } => "infeasible",
            Error::Config(_) => "config",
            Error::Io { .. } => "io",
            Error::Json(_) => "json",
        }
    }
}
