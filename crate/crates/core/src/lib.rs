//! Bi-level surrogate for county-by-treatment simulation grids.
//!
//! Each county's simulated outcomes are summarized by a linear response
//! function in the treatment levels; the response coefficients are learned
//! across counties by independent heteroscedastic Gaussian processes over
//! county covariates; and a two-stage sequential design decides which county
//! and which treatment condition to simulate next.

pub mod artifact;
pub mod config;
pub mod domain;
pub mod error;
pub mod eval;
pub mod gpr;
pub mod regression;
pub mod rng;
pub mod seqdes;
pub mod sim;
pub mod stats;
pub mod synthetic;
pub mod whatif;

pub use error::{Error, Result};

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/library.md")]
pub struct LibraryGuide;
