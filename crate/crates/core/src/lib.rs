//! BOIN12 utility-based dose optimization for seamless Phase I/II trials, with
//! estimand-aware derivation of outcomes from patient timelines.
//!
//! Module map:
//! - [`model`]: utility specs, dose grids, per-dose counts and the design configuration.
//! - [`posterior`]: Dirichlet posteriors, mean utilities and admissibility tail probabilities.
//! - [`estimand`]: intercurrent-event strategies and outcome derivation.
//! - [`decision`]: BOIN boundaries, admissible sets, isotonic MTD, OBD and next-dose rules.
//! - [`conduct`]: the cohort-by-cohort trial state machine.
//! - [`simulator`]: virtual trials and operating characteristics.
//! - [`sensitivity`]: tipping-point, prior and strategy-map sensitivity.
//! - [`session`]: event-sourced live trials with file persistence.

pub mod conduct;
pub mod decision;
pub mod error;
pub mod estimand;
pub mod model;
pub mod posterior;
pub mod sensitivity;
pub mod session;
pub mod simulator;

pub use error::{Error, Result};
