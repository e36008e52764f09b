//! Omnipredictors for binary outcomes.
//!
//! Given base predictors that are each optimal for one weighted 0-1 loss
//! on a parameter grid, the crate builds a single predictor that competes
//! with all of them at once, either through a two-player game
//! ([`game`]) or by direct pairwise merging ([`ensemble`]). Calibrated
//! multiaccuracy baselines live in [`calma`]; [`eval`] measures the
//! resulting omniprediction gaps.

pub mod calma;
pub mod dataio;
pub mod ensemble;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod game;
pub mod losses;
pub mod predictors;

pub use error::{OmniError, Result};
