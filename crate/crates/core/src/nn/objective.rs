//! The fuzzing objective and its input gradient.
//!
//! `obj = Σ_{i ∈ topk} s_i − s_c + λ · Σ_{n ∈ targets} out(n)`
//!
//! where `s` are the class confidences (or logits, see [`LabelSource`]), `c` is
//! the label being attacked and `out(n)` is the raw post-activation output of a
//! target neuron as defined in [`crate::coverage`].

use serde::{Deserialize, Serialize};

use crate::coverage::{neuron_layers, NeuronId, NeuronLayer};
use crate::error::{Error, Result};
use crate::nn::model::{ActivationTrace, Model};
use crate::tensor::{Real, Tensor};

/// Which per-class scores the label terms read.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelSource {
    /// Post-softmax confidences.
    #[default]
    Confidence,
    /// Pre-softmax scores.
    Logit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveSpec {
    pub original_label: usize,
    pub topk_labels: Vec<usize>,
    pub target_neurons: Vec<NeuronId>,
    pub lambda: f64,
    #[serde(default)]
    pub label_source: LabelSource,
}

impl ObjectiveSpec {
    pub fn validate<T: Real>(&self, model: &Model<T>) -> Result<Vec<NeuronLayer>> {
        let n = model.num_classes();
        if self.original_label >= n {
            return Err(Error::contract(format!(
                "original label {} out of range for {n} classes",
                self.original_label
            )));
        }
        for (i, &l) in self.topk_labels.iter().enumerate() {
            if l >= n {
                return Err(Error::contract(format!("label {l} out of range for {n} classes")));
            }
            if l == self.original_label {
                return Err(Error::contract("original label listed among top-k labels"));
            }
            if self.topk_labels[..i].contains(&l) {
                return Err(Error::contract(format!("duplicate top-k label {l}")));
            }
        }
        if !self.lambda.is_finite() {
            return Err(Error::contract("lambda must be finite"));
        }
        let layout = neuron_layers(model);
        for id in &self.target_neurons {
            if locate(&layout, *id).is_none() {
                return Err(Error::contract(format!("unknown neuron {id}")));
            }
        }
        Ok(layout)
    }
}

fn locate(layout: &[NeuronLayer], id: NeuronId) -> Option<&NeuronLayer> {
    layout
        .iter()
        .find(|l| l.layer_index == id.layer_index && id.unit_index < l.units)
}

/// The `k` most confident labels other than the predicted one, most confident
/// first. Ties go to the lower class index.
pub fn top_k_other_labels<T: Real>(trace: &ActivationTrace<T>, k: usize) -> Result<Vec<usize>> {
    let conf = trace.confidences().data();
    if k == 0 || k >= conf.len() {
        return Err(Error::contract(format!("k must be in 1..{}, got {k}", conf.len())));
    }
    let predicted = trace.predicted_label();
    let mut order: Vec<usize> = (0..conf.len()).filter(|&i| i != predicted).collect();
    // stable sort keeps lower indices first among equal confidences
    order.sort_by(|&a, &b| conf[b].partial_cmp(&conf[a]).expect("finite confidences"));
    order.truncate(k);
    Ok(order)
}

fn label_scores<T: Real>(trace: &ActivationTrace<T>, source: LabelSource) -> &[T] {
    match source {
        LabelSource::Confidence => trace.confidences().data(),
        LabelSource::Logit => trace.logits().data(),
    }
}

/// Evaluates the objective on an existing trace of `model`.
pub fn objective_from_trace<T: Real>(model: &Model<T>, trace: &ActivationTrace<T>, spec: &ObjectiveSpec) -> Result<T> {
    let layout = spec.validate(model)?;
    let scores = label_scores(trace, spec.label_source);
    let mut obj = spec.topk_labels.iter().fold(T::zero(), |acc, &i| acc + scores[i]) - scores[spec.original_label];
    let mut neuron_sum = T::zero();
    for id in &spec.target_neurons {
        let layer = locate(&layout, *id).expect("validated");
        neuron_sum = neuron_sum + layer.output_of::<T>(trace, id.unit_index);
    }
    obj = obj + T::from_f64_lossy(spec.lambda) * neuron_sum;
    Ok(obj)
}

pub fn objective_value<T: Real>(model: &Model<T>, x: &Tensor<T>, spec: &ObjectiveSpec) -> Result<T> {
    let trace = model.predict(x)?;
    objective_from_trace(model, &trace, spec)
}

/// Gradient of the objective with respect to the input that produced `trace`.
pub fn objective_gradient<T: Real>(
    model: &Model<T>,
    trace: &ActivationTrace<T>,
    spec: &ObjectiveSpec,
) -> Result<Tensor<T>> {
    let layout = spec.validate(model)?;
    let n = model.layers().len();
    let mut seeds: Vec<Option<Vec<T>>> = vec![None; n];

    // logits are the output of the layer feeding the softmax; for a bare
    // softmax model they are the input itself
    let label_slot = match spec.label_source {
        LabelSource::Confidence => Some(n - 1),
        LabelSource::Logit => n.checked_sub(2),
    };
    let mut label_seed = vec![T::zero(); model.num_classes()];
    for &i in &spec.topk_labels {
        label_seed[i] = label_seed[i] + T::one();
    }
    label_seed[spec.original_label] = label_seed[spec.original_label] - T::one();

    let lambda = T::from_f64_lossy(spec.lambda);
    for id in &spec.target_neurons {
        let layer = locate(&layout, *id).expect("validated");
        let slot = layer.activation_index;
        let seed = seeds[slot].get_or_insert_with(|| vec![T::zero(); trace.output(slot).len()]);
        layer.add_output_gradient(seed, id.unit_index, lambda);
    }

    let Some(label_slot) = label_slot else {
        let mut g = model.backward(trace, &seeds, None)?.into_data();
        for (a, b) in g.iter_mut().zip(&label_seed) {
            *a = *a + *b;
        }
        return Ok(Tensor::from_parts(model.input_shape().to_vec(), g));
    };
    let slot = seeds[label_slot].get_or_insert_with(|| vec![T::zero(); model.num_classes()]);
    for (a, b) in slot.iter_mut().zip(&label_seed) {
        *a = *a + *b;
    }
    model.backward(trace, &seeds, None)
}

pub fn input_gradient<T: Real>(model: &Model<T>, x: &Tensor<T>, spec: &ObjectiveSpec) -> Result<Tensor<T>> {
    let trace = model.predict(x)?;
    objective_gradient(model, &trace, spec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::layer::Layer;

    fn linear_model(w: &[f64], inputs: usize, classes: usize) -> Model<f64> {
        Model::new(
            vec![inputs],
            vec![
                Layer::Dense {
                    weights: Tensor::from_f64(vec![inputs, classes], w).unwrap(),
                    bias: Tensor::from_f64(vec![classes], &vec![0.0; classes]).unwrap(),
                },
                Layer::Softmax,
            ],
        )
        .unwrap()
    }

    fn spec(c: usize, topk: &[usize], neurons: &[NeuronId], lambda: f64) -> ObjectiveSpec {
        ObjectiveSpec {
            original_label: c,
            topk_labels: topk.to_vec(),
            target_neurons: neurons.to_vec(),
            lambda,
            label_source: LabelSource::Confidence,
        }
    }

    /// A model whose confidences are exactly the given vector (log-probs as bias).
    fn fixed_conf_model(conf: &[f64]) -> Model<f64> {
        let n = conf.len();
        Model::new(
            vec![1],
            vec![
                Layer::Dense {
                    weights: Tensor::from_f64(vec![1, n], &vec![0.0; n]).unwrap(),
                    bias: Tensor::from_f64(vec![n], &conf.iter().map(|c| c.ln()).collect::<Vec<_>>()).unwrap(),
                },
                Layer::Softmax,
            ],
        )
        .unwrap()
    }

    #[test]
    fn top_k_examples() {
        let m = fixed_conf_model(&[0.7, 0.2, 0.1]);
        let t = m.predict(&Tensor::from_f64(vec![1], &[0.0]).unwrap()).unwrap();
        assert_eq!(top_k_other_labels(&t, 2).unwrap(), vec![1, 2]);
        assert!(top_k_other_labels(&t, 0).is_err());
        assert!(top_k_other_labels(&t, 3).is_err());

        let m = linear_model(&[0.0, 0.0, -50.0], 1, 3);
        let t = m.predict(&Tensor::from_f64(vec![1], &[1.0]).unwrap()).unwrap();
        assert_eq!(t.predicted_label(), 0);
        assert_eq!(top_k_other_labels(&t, 2).unwrap(), vec![1, 2]);
    }

    #[test]
    fn label_term_arithmetic() {
        let m = fixed_conf_model(&[0.6, 0.3, 0.1]);
        let x = Tensor::from_f64(vec![1], &[0.0]).unwrap();
        let v = objective_value(&m, &x, &spec(0, &[1, 2], &[], 0.0)).unwrap();
        assert!((v - (-0.2)).abs() < 1e-12);
    }

    #[test]
    fn zero_neuron_output_leaves_label_term() {
        // dense(2→2) → relu → dense(2→2) → softmax; the first unit is dead for this input
        let m: Model<f64> = Model::new(
            vec![2],
            vec![
                Layer::Dense {
                    weights: Tensor::from_f64(vec![2, 2], &[-1.0, 1.0, -1.0, 1.0]).unwrap(),
                    bias: Tensor::from_f64(vec![2], &[0.0, 0.0]).unwrap(),
                },
                Layer::Relu,
                Layer::Dense {
                    weights: Tensor::from_f64(vec![2, 2], &[0.5, -0.5, 0.25, 1.0]).unwrap(),
                    bias: Tensor::from_f64(vec![2], &[0.0, 0.1]).unwrap(),
                },
                Layer::Softmax,
            ],
        )
        .unwrap();
        let x = Tensor::from_f64(vec![2], &[0.3, 0.4]).unwrap();
        let dead = NeuronId::new(0, 0);
        let with = objective_value(&m, &x, &spec(1, &[0], &[dead], 1.0)).unwrap();
        let without = objective_value(&m, &x, &spec(1, &[0], &[], 0.0)).unwrap();
        assert_eq!(with, without);
    }

    #[test]
    fn linear_logit_gradient_is_weight_difference() {
        let w = [1.0, -2.0, 0.5, 3.0, 0.25, -1.0];
        let m = linear_model(&w, 2, 3);
        let x = Tensor::from_f64(vec![2], &[0.4, -0.7]).unwrap();
        let s = ObjectiveSpec {
            label_source: LabelSource::Logit,
            ..spec(0, &[2], &[], 0.0)
        };
        let g = input_gradient(&m, &x, &s).unwrap();
        // W[:,2] - W[:,0]
        assert_eq!(g.data(), &[0.5 - 1.0, -1.0 - 3.0]);
    }

    #[test]
    fn constant_objective_has_zero_gradient() {
        let m = linear_model(&[0.0; 6], 2, 3);
        let x = Tensor::from_f64(vec![2], &[0.4, -0.7]).unwrap();
        let g = input_gradient(&m, &x, &spec(0, &[1, 2], &[], 0.0)).unwrap();
        assert!(g.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn validation_errors() {
        let m = linear_model(&[0.0; 6], 2, 3);
        let x = Tensor::from_f64(vec![2], &[0.0, 0.0]).unwrap();
        for bad in [
            spec(0, &[0], &[], 0.0),
            spec(0, &[1, 1], &[], 0.0),
            spec(3, &[1], &[], 0.0),
            spec(0, &[1], &[NeuronId::new(1, 0)], 1.0),
            spec(0, &[1], &[NeuronId::new(0, 3)], 1.0),
        ] {
            assert!(
                matches!(objective_value(&m, &x, &bad), Err(Error::Contract(_))),
                "{bad:?}"
            );
        }
    }
}
