//! Stylized coordination model and collaboration-log analytics.
//!
//! The model side covers a project of `N` parts worked on by `E` sequential
//! users, each of whom either coordinates (probability `beta`) and finishes
//! exactly one empty part, or spends both actions on random parts and risks
//! clashing with finished work (probability `alpha`). It provides the exact
//! per-user transition kernel, Monte Carlo runs, the exact expected outcome
//! by dynamic programming, the deterministic recurrence with its closed form,
//! and a search for the coordination level that maximizes finished parts.
//!
//! The analytics side works on time-ordered project logs: x-core extraction,
//! coordination-share curves, crowdedness profiles, Mann-Whitney U tests,
//! median-split quadrants, decile heatmaps and matched featured/control
//! cohorts.
//!
//! Probability arithmetic in [`model`] is generic over [`Probability`], so the
//! same code runs in `f64` and in exact rationals; [`solver`] is generic over
//! [`num_traits::Float`].

pub mod analytics;
pub mod cohort;
mod error;
pub mod model;
mod scalar;
pub mod solver;
pub mod stats;

pub use error::{Error, Result};
pub use scalar::Probability;

/// Model parameters in double precision.
pub type Params = model::ModelParams<f64>;
/// Model parameters in exact arbitrary-precision rationals.
pub type ExactParams = model::ModelParams<ExactRatio>;
/// Exact rational scalar used for oracle-grade computations.
pub type ExactRatio = num_rational::BigRational;
/// Small exact rational; enough for single-user transitions with `N <= 10^4`.
pub type SmallRatio = num_rational::Rational64;
