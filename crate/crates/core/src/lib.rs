//! Counterfactual evaluation of risk-assessment models and fairness audits.
//!
//! Performance metrics are estimated against the potential outcome `Y0` under
//! the baseline decision using doubly-robust pseudo-outcomes, and group
//! fairness metrics are reported in observational and counterfactual forms.

pub mod cli;
pub mod corrections;
pub mod curves;
pub mod datagen;
pub mod error;
pub mod estimators;
pub mod experiments;
pub mod fairness;
pub mod glm;
pub mod io;
pub mod nuisance;

pub use datagen::{generate, Dataset, GeneratorParams};
pub use error::{Error, Result};
pub use estimators::{Estimate, Positivity, PositivityMode};
pub use glm::{fit_logistic, FitConfig, ScoreModel};
pub use nuisance::{NuisanceModels, NuisanceSet};
