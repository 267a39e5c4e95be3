use thiserror::Error;

/// Failures raised by the numerical routines.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("series did not converge within {terms} terms")]
    NonConvergence { terms: usize },
    #[error("invalid hypergeometric triple: {0}")]
    InvalidTriple(String),
    #[error("precondition violated: {0}")]
    PreconditionViolation(String),
    #[error("quadrature error estimate {estimate:e} exceeds target {target:e}")]
    QuadratureFailure { estimate: f64, target: f64 },
    #[error("point (r={r}, t={t}) lies outside the cone r < 2 + t")]
    OutsideCone { r: f64, t: f64 },
    #[error("radius {r} is within one step {h} of the axis")]
    TooCloseToAxis { r: f64, h: f64 },
    #[error("sample set is empty")]
    EmptySamples,
    #[error("grid too coarse: {cells} cells cover the data support, need at least 16")]
    GridTooCoarse { cells: usize },
    #[error("numerical instability detected at t={t}")]
    Unstable { t: f64 },
    #[error("support radius {support} reaches the cone boundary {bound}")]
    SupportViolation { support: f64, bound: f64 },
    #[error("time samples must be strictly increasing: {prev} then {next}")]
    NonMonotoneTime { prev: f64, next: f64 },
    #[error("delta={delta} is infeasible: {reason}")]
    InfeasibleDelta { delta: f64, reason: String },
    #[error("no blowup before sigma_max={sigma_max:e}")]
    NoBlowupInWindow { sigma_max: f64 },
    #[error("step size underflow at sigma={sigma}")]
    StepUnderflow { sigma: f64 },
    #[error("blowup time shifted by {shift:.3e} (relative) under tolerance tightening")]
    UnconfirmedBlowupTime { shift: f64 },
    #[error("degenerate fit: {0}")]
    DegenerateFit(String),
    #[error("only {found} ladder points blew up, need at least {needed}")]
    InsufficientBlowups { found: usize, needed: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

impl Error {
    /// True for failures of a numerical method rather than of the caller's input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NonConvergence { .. }
                | Error::QuadratureFailure { .. }
                | Error::Unstable { .. }
                | Error::StepUnderflow { .. }
                | Error::UnconfirmedBlowupTime { .. }
                | Error::NoBlowupInWindow { .. }
                | Error::InsufficientBlowups { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn precondition(ok: bool, msg: impl FnOnce() -> String) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::PreconditionViolation(msg()))
    }
}
