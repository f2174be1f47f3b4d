//! Data-driven robust model predictive control for greenhouse heating.
//!
//! The crate is organised bottom-up:
//!
//! * [`thermal`] builds a lumped RC model of the greenhouse, discretizes it and
//!   lifts it over the prediction horizon.
//! * [`weather`] ingests measured/forecast weather, estimates solar radiation
//!   from cloud cover and extracts forecast-error samples.
//! * [`uncertainty`] learns support-vector-clustering uncertainty sets with the
//!   weighted generalized intersection kernel and calibrates their radius.
//! * [`lp`] holds the linear-programming backends.
//! * [`robust`] turns a robust program under affine disturbance feedback into a
//!   deterministic LP by duality.
//! * [`control`] implements the rule-based, certainty-equivalent, budget-robust,
//!   data-driven robust and perfect-forecast controllers.
//! * [`sim`] replays weather in closed loop and computes the evaluation metrics.
//! * [`config`] is the experiment configuration shared with the CLI.

pub mod config;
pub mod control;
pub mod error;
pub mod io;
pub mod lp;
pub mod robust;
pub mod sim;
pub mod thermal;
pub mod uncertainty;
pub mod weather;

pub use error::{Error, Result};
