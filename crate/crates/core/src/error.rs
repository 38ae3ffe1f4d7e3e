//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the mathematical domain of the operation
    /// (e.g. a non-positive abscissa passed to a logarithmic scale).
    #[error("domain error: {0}")]
    Domain(String),

    /// Structurally invalid input data (wrong length, unsorted, non-finite).
    #[error("invalid input: {0}")]
    Input(String),

    /// An invalid experiment or quadrature configuration.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// A request outside the supported range of an operation.
    #[error("unsupported: {0}")]
    Unsupported(String),

    /// An iterative numerical scheme failed to stabilize.
    #[error("{what}: observed spread {spread:.3e} exceeds tolerance {tolerance:.3e}")]
    Convergence {
        what: String,
        spread: f64,
        tolerance: f64,
    },

    /// A Monte Carlo trial failed; carries the index and seed so the trial
    /// can be replayed in isolation.
    #[error("trial {trial} (seed {seed:#018x}) failed: {source}")]
    Trial {
        trial: usize,
        seed: u64,
        #[source]
        source: Box<Error>,
    },

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("config file error: {0}")]
    Toml(#[from] toml::de::Error),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    /// Wraps an error with the trial index and seed that produced it.
    pub fn in_trial(self, trial: usize, seed: u64) -> Self {
        Error::Trial {
            trial,
            seed,
            source: Box::new(self),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trial_wrapper_mentions_index_and_seed() {
        let err = Error::domain("x must be positive").in_trial(7, 0xDEAD_BEEF);
        let msg = err.to_string();
        assert!(msg.contains("trial 7"));
        assert!(msg.contains("0x00000000deadbeef"));
    }

    #[test]
    fn convergence_carries_diagnostics() {
        let err = Error::Convergence {
            what: "tail averaging".into(),
            spread: 2.5e-3,
            tolerance: 1e-4,
        };
        let msg = err.to_string();
        assert!(msg.contains("2.500e-3"));
        assert!(msg.contains("1.000e-4"));
    }
}
