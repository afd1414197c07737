//! Learning non-parametric corrections to misspecified ODE models.
//!
//! Given a system `dy/dt = G(y) + F(y)` where the driving term `G` is known
//! and the small correction `F` is not, this crate:
//!
//! - integrates trajectories of the true and proxy (`G`-only) models
//!   ([`dynamics`]);
//! - produces noisy correction readings `f̃ = F(y) + ε` along trajectories,
//!   by direct noise injection or finite differences ([`observation`]);
//! - infers `F` as a vector-valued Gaussian process with a shared scalar
//!   kernel ([`kernels`], [`gp`]);
//! - selects near-optimal experiment initial conditions by greedy
//!   submodular maximization of a mutual-information objective computed on
//!   proxy trajectories, with lazy and partition-matroid variants and
//!   numerically validated proxy-discrepancy bounds ([`design`]);
//! - emulates the corrected system at O(D) per query through random
//!   Fourier features and ridge regression ([`rff`]);
//! - reproduces the desk-scale benchmark scenarios and their method
//!   comparisons ([`bench`]).

pub mod bench;
pub mod design;
pub mod dynamics;
pub mod error;
pub mod gp;
pub mod kernels;
pub mod linalg;
pub mod observation;
pub mod rff;
pub mod seeding;

pub use error::{Error, Result};
