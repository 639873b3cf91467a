//! Doubly robust difference-in-differences estimation under network
//! interference.
//!
//! When units interact over a network, a unit's outcome can respond to its
//! neighbors' treatments as well as its own, and the classical
//! difference-in-differences contrast mixes direct effects with spillovers.
//! This crate estimates the two separately. An exposure mapping `G_i`
//! summarizes the treatment of unit `i`'s neighborhood, and the estimands
//! are conditional average effects on the treated at fixed exposure:
//!
//! ```text
//! DATT(g)     direct effect of own treatment, holding exposure at g
//! SATT(g; d)  spillover effect of exposure g versus 0, holding own
//!             treatment at d
//! ATT         overall effect, DATT aggregated plus SATT(.; 0)
//! ```
//!
//! Each is estimated with a doubly robust score in the spirit of
//! Sant'Anna and Zhao (2020), combining inverse weighting by a generalized
//! propensity `P(D = d, G = g | X, A)` with a regression adjustment for the
//! control outcome trend; the estimate is consistent when either nuisance
//! model is correct. Nuisance functions are network-aware: a polynomial
//! sieve GLM on graph features, or a message-passing network trained
//! end to end. Standard errors come from a network HAC estimator that sums
//! score covariances over node pairs within a path-distance bandwidth
//! (Kojevnikov, Marmer, and Song, 2021).
//!
//! The crate also ships the supporting machinery: graph utilities, panel /
//! repeated cross-section / staggered adoption data handling, exact
//! finite-population bias formulas for discrete designs, simulation designs
//! with equilibrium treatment and outcome responses, and a deterministic
//! Monte Carlo harness.

pub mod data;
pub mod error;
pub mod estimators;
pub mod exposure;
pub mod graph;
pub mod mc;
pub mod nuisance;
pub mod oracle;
pub mod simulate;
pub mod variance;

pub use error::{Error, Result};
