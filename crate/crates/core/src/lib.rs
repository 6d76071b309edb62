//! Conditional information flow maximization: mutual-information bounds,
//! adversarial weight perturbation, a composed fine-tuning objective and the
//! evaluation protocols around it.

pub mod data;
pub mod encoder;
pub mod error;
pub mod estimators;
pub mod evalharness;
pub mod metrics;
pub mod objective;
pub mod optim;
pub mod oracle;
pub mod params;
pub mod perturbation;
pub mod trainer;
pub mod workbench;

pub use error::{CifmError, Result};
