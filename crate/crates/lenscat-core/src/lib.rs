//! Numerical lens data for compactly supported time-dependent metric
//! perturbations of flat space.
//!
//! The library traces frozen-time geodesics of a metric family `g(t)` on
//! ℝⁿ that agrees with the Euclidean metric outside a spacetime box
//! `[-T, T] × B_R(0)`, and computes the boundary data those geodesics
//! induce on the sphere `∂B_R(0)`:
//!
//! * the scattering relation (entry ray ↦ first exit ray) and the interior
//!   arc length, see [`scattering`];
//! * renormalized sojourn times, in a closed form and as a large-radius
//!   limit, see [`scattering`];
//! * the classical scattering map written on free-ray data at infinity
//!   (direction, time slice, orthogonal offset), its reconstruction of the
//!   truncated relation, and a comparator deciding whether two metrics have
//!   the same boundary graph and sojourn function, see [`cuspmap`];
//! * convexity and curvature diagnostics of the metric family itself,
//!   see [`metric`].
//!
//! All evaluation is pure and immutable after construction, so every
//! operation can be driven from a thread pool; batch sweeps in this crate
//! use `rayon` with order-preserving reductions.

// `!(x > 0.0)` is used deliberately in validation guards: unlike
// `x <= 0.0`, it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cuspmap;
pub mod flow;
pub mod metric;
mod ode;
pub mod oracle;
pub mod sampling;
pub mod scattering;

use thiserror::Error;

/// Errors shared across the geometry, flow and boundary-data modules.
#[derive(Debug, Clone, Error)]
pub enum Error {
    /// The metric matrix failed the positive-definiteness check.
    #[error("metric not positive definite at t={t}: min eigenvalue {min_eig:e}")]
    NonPositiveDefinite { t: f64, min_eig: f64 },

    /// A constructed field is not flat on the verification shell.
    #[error("field violates flat-support invariant on the shell: max deviation {max_dev:e}")]
    SupportViolation { max_dev: f64 },

    /// The two vectors fail to span a 2-plane.
    #[error("degenerate 2-plane: Gram determinant {gram:e} below threshold")]
    DegeneratePlane { gram: f64 },

    /// Hamiltonian right-hand side requested for a vanishing covector.
    #[error("zero momentum covector")]
    ZeroMomentum,

    /// A ray exceeded the arc-length budget without leaving the ball.
    #[error("ray exceeded L_max = {l_max} without exiting; non-trapping hypothesis violated")]
    TrappedRay { l_max: f64 },

    /// The adaptive step controller underflowed.
    #[error("adaptive step size underflow at s = {s}")]
    StepFailure { s: f64 },

    /// A free ray at infinity never meets the truncation ball.
    #[error("free ray misses the ball: |eta1c| = {offset} >= radius {radius}")]
    MissesBall { offset: f64, radius: f64 },

    /// Boundary rays tangent to the sphere carry no scattering data.
    #[error("tangential boundary ray: z·v = {pairing:e}")]
    TangentialRay { pairing: f64 },

    /// Dimensions of two objects do not agree.
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },

    /// Construction-time validation failure.
    #[error("invalid {what}: {why}")]
    Invalid { what: &'static str, why: String },
}

impl Error {
    pub(crate) fn invalid(what: &'static str, why: impl Into<String>) -> Self {
        Error::Invalid {
            what,
            why: why.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
