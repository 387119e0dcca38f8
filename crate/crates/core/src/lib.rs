//! Numerical library for kernel regression with Hilbert-space-valued responses
//! observed on rectangular lattices `I_n ⊂ Z^N`, together with the machinery
//! needed to verify exponential concentration bounds for such data empirically:
//!
//! * [`lattice`] — site enumeration, aspect-ratio certificates, big-block
//!   parity covers and Cantor-type partitions of rectangular volumes;
//! * [`hilbert`] — truncated orthonormal bases of `L²(D, ν)`, coefficient-space
//!   elements, projection pseudo-metrics, Lipschitz balls and their coverings;
//! * [`fields`] — seeded generators for stationary lattice random fields with
//!   dependence certificates (mixing / weak-dependence) and assumption audits;
//! * [`regression`] — kernels, small-ball estimation and the normalized
//!   kernel regression estimator with covering-based sup errors;
//! * [`concentration`] — closed-form tail / log-Laplace bound evaluators,
//!   seeded empirical counterparts and exact finite checks;
//! * [`experiments`] — ladder drivers tying generators, estimators and bounds
//!   together into reproducible reports;
//! * [`acceptance`] — the end-to-end verification suite.
//!
//! Everything downstream of a seed is deterministic: random draws are keyed by
//! `(seed, site or replicate index)` so results are independent of thread
//! count and iteration order.

pub mod acceptance;
pub mod concentration;
pub mod error;
pub mod experiments;
pub mod fields;
pub mod hilbert;
pub mod lattice;
pub mod numeric;
pub mod regression;
pub mod rng;

pub use error::{Error, Result};
