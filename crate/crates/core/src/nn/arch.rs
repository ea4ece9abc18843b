//! LeNet-family and MLP builders for 28×28×1 inputs.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::nn::layer::Layer;
use crate::nn::model::Model;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Architecture {
    /// conv5×5(4) → pool → conv5×5(12) → pool → dense(10)
    Lenet1,
    /// conv5×5(6) → pool → conv5×5(16) → pool → dense(84) → dense(10)
    Lenet4,
    /// conv5×5(6) → pool → conv5×5(16) → pool → dense(120) → dense(84) → dense(10)
    Lenet5,
    /// dense(128) → dense(10)
    Mlp,
}

impl Architecture {
    pub const ALL: [Architecture; 4] = [
        Architecture::Lenet1,
        Architecture::Lenet4,
        Architecture::Lenet5,
        Architecture::Mlp,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Architecture::Lenet1 => "lenet1",
            Architecture::Lenet4 => "lenet4",
            Architecture::Lenet5 => "lenet5",
            Architecture::Mlp => "mlp",
        }
    }

    /// Freshly initialised model (He-uniform weights, zero biases).
    pub fn build(self, seed: u64) -> Model<f32> {
        self.build_for(&[28, 28, 1], 10, seed)
    }

    pub fn build_for(self, input_shape: &[usize], num_classes: usize, seed: u64) -> Model<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c_in = input_shape[2];
        let mut layers = Vec::new();
        let conv_block = |layers: &mut Vec<Layer>, rng: &mut ChaCha8Rng, cin, cout| {
            layers.push(conv(rng, 5, cin, cout));
            layers.push(Layer::Relu);
            layers.push(Layer::MaxPool2d { size: 2, stride: 2 });
        };
        let hidden: &[usize] = match self {
            Architecture::Lenet1 => {
                conv_block(&mut layers, &mut rng, c_in, 4);
                conv_block(&mut layers, &mut rng, 4, 12);
                &[]
            }
            Architecture::Lenet4 => {
                conv_block(&mut layers, &mut rng, c_in, 6);
                conv_block(&mut layers, &mut rng, 6, 16);
                &[84]
            }
            Architecture::Lenet5 => {
                conv_block(&mut layers, &mut rng, c_in, 6);
                conv_block(&mut layers, &mut rng, 6, 16);
                &[120, 84]
            }
            Architecture::Mlp => &[128],
        };
        layers.push(Layer::Flatten);
        let mut width = layers
            .iter()
            .try_fold(input_shape.to_vec(), |shape, l| l.output_shape(&shape))
            .expect("input large enough for the conv stack")[0];
        for &h in hidden {
            layers.push(dense(&mut rng, width, h));
            layers.push(Layer::Relu);
            width = h;
        }
        layers.push(dense(&mut rng, width, num_classes));
        layers.push(Layer::Softmax);
        Model::new(input_shape.to_vec(), layers).expect("architecture shapes are consistent")
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Architecture {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Architecture::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| format!("unknown architecture {s:?} (expected lenet1, lenet4, lenet5 or mlp)"))
    }
}

fn uniform(rng: &mut ChaCha8Rng, n: usize, fan_in: usize) -> Vec<f32> {
    let limit = (6.0 / fan_in as f32).sqrt();
    (0..n).map(|_| rng.random_range(-limit..limit)).collect()
}

fn conv(rng: &mut ChaCha8Rng, k: usize, cin: usize, cout: usize) -> Layer {
    Layer::Conv2d {
        weights: Tensor::new(vec![k, k, cin, cout], uniform(rng, k * k * cin * cout, k * k * cin)).unwrap(),
        bias: Tensor::new(vec![cout], vec![0.0; cout]).unwrap(),
        stride: 1,
    }
}

fn dense(rng: &mut ChaCha8Rng, fan_in: usize, out: usize) -> Layer {
    Layer::Dense {
        weights: Tensor::new(vec![fan_in, out], uniform(rng, fan_in * out, fan_in)).unwrap(),
        bias: Tensor::new(vec![out], vec![0.0; out]).unwrap(),
    }
}
