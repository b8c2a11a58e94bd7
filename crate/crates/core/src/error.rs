use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// A mathematical precondition was violated (negative concentration,
    /// state outside its admissible set, ...).
    #[error("domain error: {0}")]
    Domain(String),

    /// A numerical procedure failed (singular system, non-finite values,
    /// root solve did not converge).
    #[error("numerical error: {0}")]
    Numerical(String),

    /// Inconsistent mesh geometry (nonpositive cell width, index out of
    /// range for a two-phase mesh).
    #[error("geometry error: {0}")]
    Geometry(String),

    /// The interface moved further than the time-step bound allows.
    #[error("CFL violation: {0}")]
    Cfl(String),

    /// Newton did not converge even after exhausting the step halvings.
    #[error("solver failure: {0}")]
    Solver(String),

    /// A structural run invariant was breached (strict mode aborts on this).
    #[error("invariant breach: {0}")]
    Invariant(String),

    /// Invalid configuration file or scenario description.
    #[error("config error: {0}")]
    Config(String),

    /// API misuse (incompatible grids, unknown preset, ...).
    #[error("usage error: {0}")]
    Usage(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
