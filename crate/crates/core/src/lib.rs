//! Coverage-guided differential fuzzing of small image classifiers.
//!
//! A [`Fuzzer`] mutates test images along the gradient of an objective that
//! rewards both leaving the current label and activating neurons that the
//! campaign has not yet covered. Mutants that change the prediction are
//! reported as adversarial inputs.

// `!(a > b)` comparisons are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod coverage;
pub mod error;
pub mod fuzzer;
pub mod io;
pub mod nn;
pub mod tensor;
pub mod trainer;

pub use coverage::{CoverageTracker, NeuronId, Strategy};
pub use error::{Error, Result};
pub use fuzzer::{
    paired_random_baseline, process_gradient, relative_distance, AdversarialRecord, CampaignObserver, CampaignReport,
    FuzzConfig, Fuzzer, GradMode, MutationMode,
};
pub use io::DatasetSplit;
pub use nn::{ActivationTrace, Architecture, Layer, Model, ObjectiveSpec};
pub use tensor::{Real, Tensor};
pub use trainer::{Optimizer, TrainConfig};
