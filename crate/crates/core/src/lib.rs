//! Numerical laboratory for density flows `(ρ_t, θ_t)` solving the coupled
//! continuity / Hamilton-Jacobi system
//!
//! ```text
//! ∂tρ + ∇·(ρ∇θ) = 0
//! ∂tθ + ½|∇θ|² + (σ²/8)[|∇log ρ|² + 2Δlog ρ] + U − W*ρ − f(ρ) = 0
//! ```
//!
//! on a periodic box. The crate builds flows (heat flow, σ = 0 transport,
//! Schrödinger bridges, second-order mean-field games), evaluates the matrix
//! functionals along them (entropy production 𝓢, Fisher information 𝓘,
//! velocity second moment 𝓥, 𝓣± = 𝓢 ± (σ/2)𝓘, matrix entropy 𝓔, energies
//! and costs) and certifies the matrix Riccati inequalities they satisfy.
//!
//! Module map:
//!
//! | module        | contents                                                  |
//! |---------------|-----------------------------------------------------------|
//! | [`grid`]      | periodic lattice, fields, spectral calculus, quadrature   |
//! | [`sym`]       | small symmetric matrices                                  |
//! | [`coeffs`]    | potential `U`, interaction `W`, congestion `f` descriptors |
//! | [`functionals`] | 𝓢, 𝓘, 𝓥, 𝓣±, energies, series assembly, costs          |
//! | [`flows`]     | flow constructions and PDE residuals                      |
//! | [`comparison`]| eigen-solver, Riccati bounds, matrix ODE checks           |
//! | [`checks`]    | one checker per inequality, producing [`checks::CheckReport`] |
//! | [`oracles`]   | closed-form Gaussian flows, refinement, finite differences |

// `!(x > 0.0)` is used on purpose so that NaN is rejected; index loops over
// several parallel component arrays read better than zipped iterators.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod checks;
pub mod coeffs;
pub mod comparison;
pub mod flows;
pub mod functionals;
pub mod grid;
pub mod oracles;
pub mod sym;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("grid mismatch between operands")]
    GridMismatch,
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("density below positivity floor: min {min:e} < floor {floor:e}")]
    BelowFloor { min: f64, floor: f64 },
    #[error("negative propagation time {0}")]
    NegativeTime(f64),
    #[error("interaction must be concave: W = -b|x|^2 requires b >= 0, got b = {0}")]
    NotConcave(f64),
    #[error("under-resolved: {0}")]
    UnderResolved(String),
    #[error("vacuum: density fell below floor ({min:e}) at t = {time}")]
    Vacuum { time: f64, min: f64 },
    #[error("shock imminent at t = {time}: max |hess theta| = {hess_max:e}; trajectory truncated")]
    ShockImminent {
        time: f64,
        hess_max: f64,
        truncated: Box<flows::FlowTrajectory>,
    },
    #[error("sinkhorn diverged after {iterations} iterations (marginal error {error:e})")]
    SinkhornDiverged { iterations: usize, error: f64 },
    #[error("degenerate marginals: {0}")]
    DegenerateMarginals(String),
    #[error("picard stalled after {rounds} rounds (last difference {difference:e}, contraction {contraction:.3})")]
    PicardStalled {
        rounds: usize,
        difference: f64,
        contraction: f64,
    },
    #[error("HJB overflow at t = {time}")]
    HjbOverflow { time: f64 },
    #[error("too few samples: need {need}, got {got}")]
    TooFewSamples { need: usize, got: usize },
    #[error("unsupported coefficients: {0}")]
    Unsupported(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

impl Error {
    /// Short stable identifier, used by front ends to report construction failures.
    pub fn name(&self) -> &'static str {
        match self {
            Error::InvalidGrid(_) => "invalid grid",
            Error::GridMismatch => "grid mismatch",
            Error::NonFinite(_) => "non-finite",
            Error::BelowFloor { .. } => "below floor",
            Error::NegativeTime(_) => "negative time",
            Error::NotConcave(_) => "concavity constraint",
            Error::UnderResolved(_) => "under-resolved",
            Error::Vacuum { .. } => "vacuum",
            Error::ShockImminent { .. } => "shock imminent",
            Error::SinkhornDiverged { .. } => "sinkhorn diverged",
            Error::DegenerateMarginals(_) => "degenerate marginals",
            Error::PicardStalled { .. } => "picard stalled",
            Error::HjbOverflow { .. } => "HJB overflow",
            Error::TooFewSamples { .. } => "too few samples",
            Error::Unsupported(_) => "unsupported",
            Error::InvalidArgument(_) => "invalid argument",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
