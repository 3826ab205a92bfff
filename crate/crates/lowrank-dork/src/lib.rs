//! Dynamical low-rank approximation (DLRA) of matrix differential equations.
//!
//! A matrix ODE dX̄/dt = 𝓛(X̄, t) is evolved on the manifold M_r of rank-r
//! matrices by factoring the state as X = UZᵀ (U m×r orthonormal, Z n×r) and
//! retracting the ambient update X + Δt·L̄ back onto M_r each step. The crate
//! provides:
//!
//! - [`retraction`]: optimal perturbative retractions of orders 1-4, an
//!   adaptive-order variant, and robust (pseudoinverse / span-only) forms that
//!   tolerate singular correlation matrices ZᵀZ.
//! - [`descent`]: gradient-descent retractions that re-apply a base retraction
//!   to the residual toward a fixed target, converging geometrically to the
//!   truncated-SVD projection.
//! - [`rank_adapt`]: angular rank augmentation with a randomized range finder,
//!   post-step rank truncation, and a rank-discovery driver.
//! - [`dork`]: the so-DORK and gd-DORK time integrators, which couple the
//!   retractions with a perturbation series of the integrated right-hand side,
//!   plus projector-splitting and projected Runge-Kutta baselines.
//! - [`experiments`]: reproducible benchmark problems (linear oscillators,
//!   2-D advection-diffusion, stochastic Fisher-KPP, rank discovery) with CSV
//!   reporting.
//!
//! All norms are Frobenius. Every random draw flows from explicit seeds, so
//! runs are bit-reproducible.

pub mod config;
pub mod descent;
pub mod dork;
pub mod experiments;
pub mod manifold;
pub mod matcore;
pub mod rank_adapt;
pub mod retraction;

/// Errors shared across the crate's numerical layers.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// An orthonormalization input had numerically dependent columns.
    #[error("rank-deficient input: smallest pivot {pivot:.3e} below tolerance {tol:.3e}")]
    RankDeficient { pivot: f64, tol: f64 },

    /// `pseudo_solve` received a zero matrix with a nonzero right-hand side.
    #[error("cannot solve: coefficient matrix is zero but right-hand side is not")]
    ZeroMatrix,

    /// Exact-inverse retraction hit a correlation matrix beyond the condition guard.
    #[error("correlation matrix ZᵀZ too ill-conditioned for exact inversion (cond ≈ {cond:.3e})")]
    IllConditioned { cond: f64 },

    /// A direction with zero Frobenius norm was passed where an angle is needed.
    #[error("direction has zero norm; departure angle undefined (treated as 0 by callers)")]
    ZeroDirection,

    /// Rank discovery exceeded its outer-iteration cap without meeting the tolerance.
    #[error("rank discovery did not converge within {iterations} outer iterations (residual {residual:.3e})")]
    MaxOuterIterations { iterations: usize, residual: f64 },

    /// A configuration value failed validation.
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    /// A state or metric became non-finite during integration.
    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
