//! Identification, estimation and inference for homogeneous linear ODE
//! systems `ẋ = A x` observed on one trajectory at equally spaced times.
//!
//! The crate covers
//!
//! * exact recovery of `(x0, A)` from `d + 1` noise-free samples and the
//!   conditions under which it is possible ([`identifiability`]),
//! * aggregated and time-scaled observation pipelines with their parameter
//!   maps ([`degraded`]),
//! * the nonlinear least-squares estimator with analytic gradients and a
//!   box-constrained quasi-Newton solver ([`nls`]),
//! * sandwich covariances, confidence regions, intervals and tests for
//!   causal edges `a_jk ≠ 0` ([`inference`]),
//! * a Monte-Carlo harness that sweeps sample sizes and reports MSE,
//!   coverage and type I/II error rates ([`harness`]).
//!
//! The packed parameter vector [`ThetaVec`] stores `x0` first and then `A`
//! row-major; every matrix indexed by parameters follows that order.

pub mod degraded;
pub mod error;
pub mod harness;
pub mod identifiability;
pub mod inference;
pub mod linalg;
pub mod model;
pub mod nls;
pub mod special;

pub use error::{Error, Result};
pub use linalg::{Matrix, Vector};
pub use model::{Noise, NoiseSpec, ObsLabel, ObservationSet, SystemParams, ThetaVec};
