//! Deterministic single-machine simulator for federated learning with
//! conditional-generator knowledge distillation, plus baselines and a
//! gradient-inversion privacy auditor.

pub mod baselines;
pub mod cli;
pub mod datasets;
pub mod error;
pub mod evalpriv;
pub mod fedcore;
pub mod losses;
pub mod models;
pub mod numerics;

pub use error::{Error, Result};
