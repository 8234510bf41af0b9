//! Simulator and optimization library for multiuser downlink beamforming
//! through a stack of programmable diffractive metasurface layers.
//!
//! A feed array of `N` antennas illuminates a cascade of `L` metasurface
//! layers. Each layer is either phase-controlled (fixed transmittance
//! magnitude, adjustable phase) or amplitude-controlled (adjustable
//! magnitude inside a box, fixed phase). The cascade acts as a wave-domain
//! beamformer serving `N` out of `K` single-antenna users.
//!
//! The pipeline has three stages:
//!
//! 1. [`beamform`] — optimize a geometry-free target beamformer and power
//!    allocation for the scheduled users (projected gradient ascent on the
//!    sum rate alternated with iterative waterfilling), or the closed-form
//!    zero-forcing design in [`zf`].
//! 2. [`scheduler`] — exhaustive search over user subsets of size `N`.
//! 3. [`synth`] — fit the layer coefficients so that the physical cascade
//!    reproduces the target beamformer (projected gradient descent on the
//!    least-squares mismatch), optionally with quantized phase shifts.
//!
//! [`harness`] wires the stages into reproducible Monte Carlo campaigns
//! with a conventional massive-MIMO baseline for comparison.

pub mod beamform;
pub mod channel;
pub mod geometry;
pub mod harness;
pub mod propagation;
pub mod rate;
pub mod scheduler;
pub mod synth;
pub mod zf;

mod numeric;

pub use num_complex::Complex64;

/// Errors surfaced by the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Invalid configuration value (non-positive dimension, malformed sweep, …).
    #[error("invalid configuration: {0}")]
    Config(String),

    /// Input outside the physical/mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// Structurally inconsistent inputs (dimension mismatch, bad index set, …).
    #[error("inconsistent input: {0}")]
    Structure(String),

    /// The user Gram matrix lost positive definiteness during factorization.
    #[error("gram matrix singular at pivot {pivot}")]
    SingularGram { pivot: usize },

    /// The user Gram matrix is too ill-conditioned to invert reliably.
    #[error("gram matrix condition estimate {estimate:.3e} exceeds cap {cap:.3e}")]
    IllConditioned { estimate: f64, cap: f64 },

    /// Every candidate subset failed to solve during scheduling.
    #[error("scheduling failed: all {0} subsets failed to solve")]
    AllSubsetsFailed(usize),

    /// Campaign configuration file could not be parsed.
    #[error("config parse error: {0}")]
    ConfigParse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
