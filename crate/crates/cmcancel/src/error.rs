//! Crate-wide error type.
//!
//! Numerical routines in this crate reject bad inputs eagerly instead of
//! producing garbage, so most fallible functions return [`Result`]. Variants
//! carry enough context to point at the offending argument or file line.

use thiserror::Error;

/// Errors produced by simulation, estimation, and optimization routines.
#[derive(Debug, Error)]
pub enum Error {
    /// A precondition on an argument was violated. The message names the
    /// argument and the constraint.
    #[error("{0}")]
    Invalid(String),

    /// A spectrum that must be conjugate-symmetric (the DFT of a real
    /// signal) deviated from symmetry by more than the tolerance.
    #[error(
        "spectrum is not conjugate-symmetric: relative deviation {deviation:.3e} at bin {bin} \
         (tolerance {tolerance:.1e})"
    )]
    NotHermitian {
        bin: usize,
        deviation: f64,
        tolerance: f64,
    },

    /// Estimated coupling energy is spread over too large a cyclic span to
    /// localize a training window.
    #[error(
        "coupling energy is diffuse: shortest span holding {fraction} of the energy is \
         {span} of {p} samples"
    )]
    DiffuseCoupling {
        fraction: f64,
        span: usize,
        p: usize,
    },

    /// A Toeplitz normal-equation system was singular or too ill-conditioned
    /// to solve reliably.
    #[error(
        "ill-conditioned normal equations: prediction-error variance {variance:.3e} at \
         order {order} (relative floor {floor:.1e}); increase the regularization"
    )]
    IllConditioned {
        order: usize,
        variance: f64,
        floor: f64,
    },

    /// An autocorrelation sequence was requested for a noise model that is
    /// not wide-sense stationary.
    #[error("noise model is not wide-sense stationary: {0}")]
    NotStationary(String),

    /// A tap text file failed to parse.
    #[error("{path}:{line}: {message}")]
    TapFileParse {
        path: String,
        line: usize,
        message: String,
    },

    /// An underlying I/O operation failed.
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Shorthand for [`Error::Invalid`] with a formatted message.
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }
}
