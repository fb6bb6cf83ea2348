//! Tabular binary classification toolkit.
//!
//! The crate covers the full path from a raw CSV of health-survey indicators
//! to a served model: cleaning and profiling ([`dataset`]), SMOTE + Tomek-link
//! class balancing ([`resample`]), ensemble feature ranking ([`featsel`]), a
//! set of from-scratch learners ([`learners`]), out-of-fold stacking
//! ([`ensemble`]), hyperparameter search ([`tuning`]), evaluation
//! ([`metrics`]), versioned persistence ([`artifact`]) and the end-to-end
//! driver ([`pipeline`]).

pub mod artifact;
pub mod dataset;
pub mod ensemble;
pub mod error;
pub mod featsel;
pub mod learners;
pub mod matrix;
pub mod metrics;
pub mod neighbors;
pub mod pipeline;
pub mod resample;
pub mod rng;
pub mod tuning;

pub use dataset::{Dataset, FeatureKind, FeatureSchema, Scaler};
pub use error::{Error, Result};
pub use matrix::Matrix;

/// Anything that maps feature rows to class-1 probabilities.
pub trait Classifier: Send + Sync {
    /// Number of input columns the model expects.
    fn n_features(&self) -> usize;

    fn predict_proba(&self, rows: &Matrix) -> Result<Vec<f64>>;

    fn predict(&self, rows: &Matrix, threshold: f64) -> Result<Vec<u8>> {
        Ok(self
            .predict_proba(rows)?
            .into_iter()
            .map(|p| u8::from(p >= threshold))
            .collect())
    }
}
