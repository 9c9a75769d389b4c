use thiserror::Error;

/// Errors raised by kernel construction and evaluation.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("Bessel K overflow at nu = {nu}, z = {z}")]
    Overflow { nu: f64, z: f64 },

    #[error("tail bound not certified: alpha * R = {alpha_r:.3} (need >= 5 and a valid asymptotic ratio)")]
    NotCertified { alpha_r: f64 },

    #[error("rank mismatch: expected {expected}, got {got}")]
    RankMismatch { expected: usize, got: usize },

    #[error("point within {distance:.3e} of a singular orbit")]
    Singular { distance: f64 },

    #[error("lattice sum did not reach tolerance {tol:.3e} within {max_radius} shells")]
    TruncationLimit { tol: f64, max_radius: usize },

    #[error("domain invalid for this manifold: {0}")]
    InvalidDomain(String),

    #[error("linear algebra failure: {0}")]
    Numerical(String),
}

impl Error {
    /// Stable machine-readable code, used by the CLI.
    pub fn code(&self) -> &'static str {
        match self {
            Error::InvalidParameter(_) => "E_PARAM",
            Error::Overflow { .. } => "E_OVERFLOW",
            Error::NotCertified { .. } => "E_NOT_CERTIFIED",
            Error::RankMismatch { .. } => "E_RANK",
            Error::Singular { .. } => "E_SINGULAR",
            Error::TruncationLimit { .. } => "E_TRUNCATION",
            Error::InvalidDomain(_) => "E_DOMAIN",
            Error::Numerical(_) => "E_NUMERICAL",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
