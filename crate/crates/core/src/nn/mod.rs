//! Sequential classifiers with activation recording and reverse-mode gradients.

mod arch;
mod layer;
mod model;
mod objective;

pub use arch::Architecture;
pub use layer::{Layer, LayerKind, ParamGrads};
pub use model::{ActivationTrace, Model};
pub use objective::{
    input_gradient, objective_from_trace, objective_gradient, objective_value, top_k_other_labels, LabelSource,
    ObjectiveSpec,
};
