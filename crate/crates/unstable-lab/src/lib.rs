//! Backward/forward Lyapunov vectors, the full-rank Kalman filter Riccati
//! recursion under additive model error, and boundedness diagnostics for the
//! discrete tangent-linear Lorenz-96 model.
//!
//! The crate is organized around a pipeline:
//!
//! 1. [`model`] integrates Lorenz-96 and records tangent-linear propagators.
//! 2. [`lyapunov`] turns propagators into orthonormal Lyapunov frames and
//!    upper-triangular transition maps by recursive QR, and estimates the
//!    spectrum and local exponents.
//! 3. [`kalman`] runs the covariance Riccati recursion under a choice of
//!    observation design and tracks precision statistics.
//! 4. [`perturbation`] computes the free evolution of unfiltered
//!    perturbations in the stable modes from the triangular transitions.
//! 5. [`bounds`] evaluates Gramians, recursive sandwich bounds, and the
//!    necessary boundedness criteria.
//!
//! The narrative guide in `book/` walks through the same pipeline chapter by
//! chapter; its code snippets compile against this crate as doc-tests.

pub mod bounds;
mod hp;
pub mod cache;
pub mod error;
pub mod kalman;
pub mod lyapunov;
pub mod model;
pub mod perturbation;

pub use error::{LabError, LabResult};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    pub struct Introduction;
    #[doc = include_str!("../../../book/src/model.md")]
    pub struct Model;
    #[doc = include_str!("../../../book/src/lyapunov.md")]
    pub struct Lyapunov;
    #[doc = include_str!("../../../book/src/kalman.md")]
    pub struct Kalman;
    #[doc = include_str!("../../../book/src/perturbations.md")]
    pub struct Perturbations;
    #[doc = include_str!("../../../book/src/bounds.md")]
    pub struct Bounds;
    #[doc = include_str!("../../../book/src/harness.md")]
    pub struct Harness;
}
