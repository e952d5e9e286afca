use thiserror::Error;

/// Errors raised by the simulation library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("truncation dimension must be at least 2, got {0}")]
    InvalidDimension(usize),

    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },

    #[error("Fock level {level} out of range for dimension {dim}")]
    LevelOutOfRange { level: usize, dim: usize },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("operator is not Hermitian (max deviation {0:e})")]
    NotHermitian(f64),

    #[error("operator is not unitary (max deviation {0:e})")]
    NotUnitary(f64),

    #[error("state cannot survive the no-jump propagator (norm {0:e})")]
    VanishingNorm(f64),

    #[error("jump requested from a dark state (norm of L|psi> is {0:e})")]
    DarkStateJump(f64),

    #[error("time step too coarse: kappa*dt*<L'L> = {0}")]
    CoarseStep(f64),

    #[error("truncation leakage {leakage:e} exceeds budget {budget:e}{}", step.map(|s| format!(" at step {s}")).unwrap_or_default())]
    Truncation {
        step: Option<usize>,
        leakage: f64,
        budget: f64,
    },

    #[error("{skipped} of {total} trajectories exceeded the leakage budget (limit is 1%)")]
    TooManySkipped { skipped: usize, total: usize },

    #[error("density matrix invariant violated: {0}")]
    InvalidDensity(String),

    #[error("integrator failure: {0}")]
    Integrator(String),

    #[error("configuration mismatch: {0}")]
    ConfigMismatch(String),

    #[error("post-selection is empty: no trajectory emitted during step 0")]
    EmptySelection,

    #[error("g2 undefined: no emissions at step {0}")]
    UndefinedCorrelation(usize),

    #[error("uninformative operating point: |slope| = {slope:e} is below 10 x its standard error {slope_err:e}")]
    Uninformative { slope: f64, slope_err: f64 },

    #[error("invalid scan: {0}")]
    InvalidScan(String),

    #[error("Kraus completeness violated by {0:e}")]
    Completeness(f64),

    #[error("step index {step} out of range for {n_steps} steps")]
    StepOutOfRange { step: usize, n_steps: usize },

    #[error("record does not carry the `{0}` trace (recorded in a thinner mode)")]
    MissingTrace(&'static str),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}
