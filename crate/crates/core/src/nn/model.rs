use crate::error::{Error, Result};
use crate::nn::layer::{Layer, ParamGrads};
use crate::tensor::{Real, Tensor};

/// A sequential classifier ending in a softmax over `num_classes`.
#[derive(Debug, Clone, PartialEq)]
pub struct Model<T: Real = f32> {
    input_shape: Vec<usize>,
    layers: Vec<Layer<T>>,
    shapes: Vec<Vec<usize>>,
    num_classes: usize,
}

/// Everything `predict` computed for one input: the input itself and the
/// output of every layer. Because ReLU is its own layer, the pre- and
/// post-nonlinearity values of a dense/conv layer are consecutive entries.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationTrace<T: Real = f32> {
    input: Tensor<T>,
    outputs: Vec<Tensor<T>>,
}

impl<T: Real> ActivationTrace<T> {
    pub fn input(&self) -> &Tensor<T> {
        &self.input
    }

    /// Output of layer `i`.
    pub fn output(&self, i: usize) -> &Tensor<T> {
        &self.outputs[i]
    }

    /// Input of layer `i`.
    pub fn layer_input(&self, i: usize) -> &Tensor<T> {
        if i == 0 {
            &self.input
        } else {
            &self.outputs[i - 1]
        }
    }

    pub fn outputs(&self) -> &[Tensor<T>] {
        &self.outputs
    }

    pub fn confidences(&self) -> &Tensor<T> {
        self.outputs.last().expect("model has at least one layer")
    }

    /// Pre-softmax scores.
    pub fn logits(&self) -> &Tensor<T> {
        self.layer_input(self.outputs.len() - 1)
    }

    pub fn predicted_label(&self) -> usize {
        self.confidences().argmax()
    }
}

impl<T: Real> Model<T> {
    pub fn new(input_shape: Vec<usize>, layers: Vec<Layer<T>>) -> Result<Self> {
        if input_shape.is_empty() || input_shape.contains(&0) {
            return Err(Error::model(None, format!("invalid input shape {input_shape:?}")));
        }
        if layers.is_empty() {
            return Err(Error::model(None, "model has no layers"));
        }
        let mut shapes = Vec::with_capacity(layers.len());
        let mut current = input_shape.clone();
        for (i, layer) in layers.iter().enumerate() {
            if let Some((w, b)) = layer.params() {
                if w.data().iter().chain(b.data()).any(|v| !v.is_finite()) {
                    return Err(Error::model(Some(i), "non-finite parameter"));
                }
            }
            current = layer
                .output_shape(&current)
                .map_err(|msg| Error::model(Some(i), format!("{}: {msg}", layer.kind().name())))?;
            shapes.push(current.clone());
        }
        let last = layers.len() - 1;
        if !matches!(layers[last], Layer::Softmax) {
            return Err(Error::model(Some(last), "final layer must be softmax"));
        }
        let num_classes = current[0];
        if num_classes < 2 {
            return Err(Error::model(Some(last), "need at least two classes"));
        }
        Ok(Self {
            input_shape,
            layers,
            shapes,
            num_classes,
        })
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub(crate) fn layers_mut(&mut self) -> &mut [Layer<T>] {
        &mut self.layers
    }

    /// Output shape of layer `i`.
    pub fn output_shape(&self, i: usize) -> &[usize] {
        &self.shapes[i]
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn num_parameters(&self) -> usize {
        self.layers
            .iter()
            .filter_map(|l| l.params())
            .map(|(w, b)| w.len() + b.len())
            .sum()
    }

    pub fn cast<U: Real>(&self) -> Model<U> {
        Model {
            input_shape: self.input_shape.clone(),
            layers: self.layers.iter().map(|l| l.cast()).collect(),
            shapes: self.shapes.clone(),
            num_classes: self.num_classes,
        }
    }

    pub fn predict(&self, x: &Tensor<T>) -> Result<ActivationTrace<T>> {
        if x.shape() != self.input_shape.as_slice() {
            return Err(Error::contract(format!(
                "model expects input {:?}, got {:?}",
                self.input_shape,
                x.shape()
            )));
        }
        let mut outputs: Vec<Tensor<T>> = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let input = outputs.last().unwrap_or(x);
            let y = layer.forward(input, &self.shapes[i]);
            outputs.push(y);
        }
        Ok(ActivationTrace {
            input: x.clone(),
            outputs,
        })
    }

    pub fn zero_grads(&self) -> Vec<ParamGrads<T>> {
        self.layers.iter().map(|l| l.zero_grads()).collect()
    }

    /// Reverse pass through a recorded trace.
    ///
    /// `seeds[i]`, when present, is the gradient of the scalar objective with
    /// respect to the output of layer `i` (objectives may read several layers).
    /// Returns the gradient with respect to the model input; parameter
    /// gradients are accumulated into `param_grads` when given.
    pub fn backward(
        &self,
        trace: &ActivationTrace<T>,
        seeds: &[Option<Vec<T>>],
        mut param_grads: Option<&mut [ParamGrads<T>]>,
    ) -> Result<Tensor<T>> {
        if seeds.len() != self.layers.len() {
            return Err(Error::contract(format!(
                "expected {} seed slots, got {}",
                self.layers.len(),
                seeds.len()
            )));
        }
        for (i, seed) in seeds.iter().enumerate() {
            if let Some(s) = seed {
                if s.len() != trace.outputs[i].len() {
                    return Err(Error::contract(format!(
                        "seed for layer {i} has {} elements, layer output has {}",
                        s.len(),
                        trace.outputs[i].len()
                    )));
                }
            }
        }
        let mut grad: Option<Vec<T>> = None;
        for i in (0..self.layers.len()).rev() {
            if let Some(seed) = &seeds[i] {
                grad = Some(match grad {
                    Some(mut g) => {
                        for (a, &b) in g.iter_mut().zip(seed) {
                            *a = *a + b;
                        }
                        g
                    }
                    None => seed.clone(),
                });
            }
            if let Some(g) = &grad {
                let pg = param_grads.as_deref_mut().map(|p| &mut p[i]);
                grad = Some(self.layers[i].backward(trace.layer_input(i), &trace.outputs[i], g, pg));
            }
        }
        let data = grad.unwrap_or_else(|| vec![T::zero(); trace.input.len()]);
        Ok(Tensor::from_parts(self.input_shape.clone(), data))
    }
}
