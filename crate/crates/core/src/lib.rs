//! Finite-volume laboratory for the random-field Ising model with
//! moment-matched non-Gaussian disorder and a multi-body spin perturbation.
//!
//! The crate is organized bottom-up:
//!
//! * [`lattice`]: finite boxes of Z^d with free boundary and their edge sets.
//! * [`disorder`]: disorder families matching Gaussian moments to a declared
//!   order, field-strength schedules, and the decay-condition checker.
//! * [`hamiltonian`]: energy exponents as multilinear spin polynomials,
//!   including the rank-p random couplings.
//! * [`gibbs`]: exact enumeration and Glauber dynamics for the resulting
//!   Gibbs measures, replica draws, and free-energy statistics.
//! * [`overlaps`]: bit-packed configurations, replica overlaps, and the
//!   site-averaged disorder observables.
//! * [`identities`]: estimators for the overlap identities (residuals,
//!   concentration, ergodicity, self-averaging, ultrametricity).
//! * [`ibp`]: certified integration-by-parts bounds for moment-matched
//!   variables, univariate and bivariate.
//! * [`experiments`]: config-driven deterministic runs over volume grids
//!   with trend verdicts and CSV/JSON reporting.

pub mod disorder;
pub mod error;
pub mod experiments;
pub mod gibbs;
pub mod hamiltonian;
pub mod ibp;
pub mod identities;
pub mod lattice;
pub mod numeric;
pub mod overlaps;
pub mod rng;

pub use error::{Error, Result};
