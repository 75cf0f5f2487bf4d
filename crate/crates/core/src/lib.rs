//! Pathology-history features and 2-year survival classification for
//! cancer cohorts.
//!
//! The pipeline runs in stages, each usable on its own:
//!
//! 1. [`cohort`]: ingest patient and observation tables, apply inclusion filters.
//! 2. [`range`]: classify each result against its hard and soft reference range.
//! 3. [`labeling`]: diagnosis-window groups and the six labeling versions.
//! 4. [`features`]: the deterministic 88-column feature matrix.
//! 5. [`selection`]: chi-squared feature ranking.
//! 6. [`classifiers`]: decision tree, AdaBoost and gradient-boosted trees.
//! 7. [`evaluation`]: shared-fold cross-validation sweeps and cohort statistics.
//!
//! [`synth`] generates synthetic cohorts with a configurable association
//! between out-of-range history and mortality.

pub mod classifiers;
pub mod cli;
pub mod cohort;
pub mod error;
pub mod evaluation;
pub mod features;
pub mod labeling;
pub mod range;
pub mod selection;
pub mod synth;

pub use error::{Error, Result};
