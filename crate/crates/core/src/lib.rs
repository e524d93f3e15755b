//! Simulation and pulse synthesis for Rydberg-blockade controlled-phase gates
//! driven by constrained transitionless quantum driving (cTQD).
//!
//! Units: time in μs, angular frequencies in rad/μs. Helpers in [`units`]
//! convert from the MHz-of-value/2π convention used in configuration files.
//!
//! Single-atom levels are ordered `|0⟩, |1⟩, |g⟩, |p⟩, |r⟩` (indices 0 to 4);
//! the two-atom basis index of `|ab⟩` is `5a + b`.

pub mod atom;
pub mod dynamics;
pub mod fit;
pub mod gate;
pub mod linalg;
pub mod noise;
pub mod optimize;
pub mod pulse;
pub mod reduction;
pub mod units;

use thiserror::Error;

/// Errors raised by the simulation library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("matrix is not Hermitian (max deviation {0:.3e})")]
    NotHermitian(f64),
    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),
    #[error("time {t} μs lies outside the pulse window [0, {duration}] μs")]
    OutsideWindow { t: f64, duration: f64 },
    #[error("negative radicand {0:.3e} while inverting the two-photon drive; the intermediate detuning is too small")]
    NegativeRadicand(f64),
    #[error("state norm drifted by {0:.3e}; the integration step is too large")]
    NormDrift(f64),
    #[error("density-matrix trace drifted by {0:.3e}; the integration step is too large")]
    TraceDrift(f64),
    #[error("density matrix has eigenvalue {0:.3e} below the positivity tolerance")]
    NegativeEigenvalue(f64),
    #[error("phase undefined: amplitude magnitude {0:.3e} is too small")]
    PhaseUndefined(f64),
    #[error("no pulse duration in [{lower}, {upper}] μs satisfies the transfer criteria")]
    NoFeasibleDuration { lower: f64, upper: f64 },
    #[error("target fidelity {target} is unreachable within the search bounds")]
    Unreachable { target: f64 },
    #[error("least-squares fit did not converge: {reason} (residual sum of squares {ssr:.3e})")]
    FitFailed { reason: String, ssr: f64 },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("Monte-Carlo run {run} failed: {source}")]
    RunFailed { run: usize, source: Box<Error> },
}

pub type Result<T> = std::result::Result<T, Error>;

pub use linalg::{ComplexMatrix, DensityMatrix, StateVector, C64};
