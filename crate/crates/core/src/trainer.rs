//! Mini-batch SGD on softmax cross-entropy.
//!
//! Per-sample gradients are computed in parallel and summed in sample order,
//! so trained weights do not depend on the number of threads.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::DatasetSplit;
use crate::nn::{Architecture, Model, ParamGrads};
use crate::tensor::Tensor;

pub const DEFAULT_MOMENTUM: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    Sgd,
    /// Heavy-ball momentum: `v ← μv + g`, `w ← w − lr·v`.
    SgdMomentum(f64),
}

impl Default for Optimizer {
    fn default() -> Self {
        Optimizer::SgdMomentum(DEFAULT_MOMENTUM)
    }
}

impl fmt::Display for Optimizer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Optimizer::Sgd => write!(f, "sgd"),
            Optimizer::SgdMomentum(m) => write!(f, "sgd_momentum({m})"),
        }
    }
}

impl FromStr for Optimizer {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "sgd" => Ok(Optimizer::Sgd),
            "sgd_momentum" | "momentum" => Ok(Optimizer::SgdMomentum(DEFAULT_MOMENTUM)),
            _ => Err(format!("unknown optimizer {s:?} (expected sgd or sgd_momentum)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub rng_seed: u64,
    pub optimizer: Optimizer,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 10,
            batch_size: 16,
            learning_rate: 0.01,
            rng_seed: 0,
            optimizer: Optimizer::default(),
        }
    }
}

impl TrainConfig {
    /// Zero epochs and a zero learning rate are accepted and leave the
    /// weights untouched.
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::contract("batch_size must be at least 1"));
        }
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::contract("learning_rate must be finite and non-negative"));
        }
        if let Optimizer::SgdMomentum(m) = self.optimizer {
            if !(0.0..1.0).contains(&m) {
                return Err(Error::contract("momentum must lie in [0, 1)"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean cross-entropy over the epoch's batches.
    pub loss: f64,
    /// Accuracy on each batch before its update, averaged over the epoch.
    pub train_acc: f64,
    pub test_acc: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub epochs: Vec<EpochLog>,
}

impl TrainLog {
    /// `epoch,loss,train_acc,test_acc`; `test_acc` is blank without a test split.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["epoch", "loss", "train_acc", "test_acc"])?;
        for e in &self.epochs {
            w.write_record([
                e.epoch.to_string(),
                e.loss.to_string(),
                e.train_acc.to_string(),
                e.test_acc.map(|a| a.to_string()).unwrap_or_default(),
            ])?;
        }
        w.flush()
            .map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }
}

/// Cross-entropy of one sample and its parameter gradients.
fn sample_gradient(model: &Model<f32>, x: &Tensor<f32>, label: usize) -> Result<(f64, bool, Vec<ParamGrads<f32>>)> {
    let trace = model.predict(x)?;
    let n = model.layers().len();
    let logits = trace.logits().data();
    let max = logits.iter().fold(f32::NEG_INFINITY, |m, &v| m.max(v)) as f64;
    let lse = max + logits.iter().map(|&v| (v as f64 - max).exp()).sum::<f64>().ln();
    let loss = lse - logits[label] as f64;
    let correct = trace.predicted_label() == label;

    let mut seed: Vec<f32> = trace.confidences().data().to_vec();
    seed[label] -= 1.0;
    let mut seeds = vec![None; n];
    seeds[n - 2] = Some(seed);
    let mut grads = model.zero_grads();
    model.backward(&trace, &seeds, Some(&mut grads))?;
    Ok((loss, correct, grads))
}

/// Mean loss, number correct and summed gradients over `batch`.
fn batch_gradient(
    model: &Model<f32>,
    data: &DatasetSplit,
    batch: &[usize],
) -> Result<(f64, usize, Vec<ParamGrads<f32>>)> {
    let per_sample: Vec<(f64, bool, Vec<ParamGrads<f32>>)> = batch
        .par_iter()
        .map(|&i| sample_gradient(model, &data.image(i), data.label(i)))
        .collect::<Result<_>>()?;
    let mut total = model.zero_grads();
    let mut loss = 0.0;
    let mut correct = 0;
    for (l, c, g) in &per_sample {
        loss += l;
        correct += usize::from(*c);
        for (acc, layer) in total.iter_mut().zip(g) {
            acc.add_assign(layer);
        }
    }
    Ok((loss / batch.len() as f64, correct, total))
}

fn check_labels(model: &Model<f32>, data: &DatasetSplit) -> Result<()> {
    if model.input_shape() != data.image_shape() {
        return Err(Error::contract(format!(
            "model expects {:?} inputs, dataset has {:?} images",
            model.input_shape(),
            data.image_shape()
        )));
    }
    if let Some(&bad) = data.labels().iter().find(|&&l| l >= model.num_classes()) {
        return Err(Error::contract(format!(
            "label {bad} out of range for {} classes",
            model.num_classes()
        )));
    }
    Ok(())
}

/// Trains `model` in place.
pub fn fit(
    model: &mut Model<f32>,
    data: &DatasetSplit,
    cfg: &TrainConfig,
    test: Option<&DatasetSplit>,
) -> Result<TrainLog> {
    cfg.validate()?;
    check_labels(model, data)?;
    if let Some(t) = test {
        check_labels(model, t)?;
    }
    let mut log = TrainLog::default();
    if model.layers().len() < 2 || data.is_empty() {
        return Ok(log);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let mut velocity = model.zero_grads();
    let lr = cfg.learning_rate as f32;
    let mut order: Vec<usize> = (0..data.len()).collect();

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut correct = 0;
        let mut batches = 0;
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let (loss, ok, grads) = batch_gradient(model, data, batch)?;
            if !loss.is_finite() {
                return Err(Error::Training(format!("loss is {loss} at epoch {epoch}, batch {b}")));
            }
            loss_sum += loss;
            correct += ok;
            batches += 1;

            let scale = 1.0 / batch.len() as f32;
            for (i, layer) in model.layers_mut().iter_mut().enumerate() {
                let Some((w, bias)) = layer.params_mut() else {
                    continue;
                };
                let g = &grads[i];
                let v = &mut velocity[i];
                for (param, (grad, vel)) in [(w, (&g.weights, &mut v.weights)), (bias, (&g.bias, &mut v.bias))] {
                    for ((p, &gr), vl) in param.data_mut().iter_mut().zip(grad.iter()).zip(vel.iter_mut()) {
                        let step = match cfg.optimizer {
                            Optimizer::Sgd => gr * scale,
                            Optimizer::SgdMomentum(mu) => {
                                *vl = mu as f32 * *vl + gr * scale;
                                *vl
                            }
                        };
                        *p -= lr * step;
                        if !p.is_finite() {
                            return Err(Error::Training(format!(
                                "layer {i} weights became non-finite at epoch {epoch}, batch {b}"
                            )));
                        }
                    }
                }
            }
        }
        log.epochs.push(EpochLog {
            epoch,
            loss: loss_sum / batches as f64,
            train_acc: correct as f64 / data.len() as f64,
            test_acc: test.map(|t| evaluate(model, t)).transpose()?,
        });
    }
    Ok(log)
}

/// Builds a 10-class digit classifier of the given architecture (initialized
/// from `cfg.rng_seed`) and trains it.
pub fn train(
    arch: Architecture,
    data: &DatasetSplit,
    cfg: &TrainConfig,
    test: Option<&DatasetSplit>,
) -> Result<(Model<f32>, TrainLog)> {
    if data.image_shape().len() != 3 {
        return Err(Error::contract(format!(
            "expected [h, w, c] images, got {:?}",
            data.image_shape()
        )));
    }
    let mut model = arch.build_for(data.image_shape(), 10, cfg.rng_seed);
    let log = fit(&mut model, data, cfg, test)?;
    Ok((model, log))
}

/// Fraction of `data` whose predicted label matches.
pub fn evaluate(model: &Model<f32>, data: &DatasetSplit) -> Result<f64> {
    accuracy_on(
        model,
        (0..data.len())
            .map(|i| (data.image(i), data.label(i)))
            .collect::<Vec<_>>()
            .as_slice(),
    )
}

/// Fraction of `(image, label)` pairs predicted correctly; 0 for an empty set.
pub fn accuracy_on(model: &Model<f32>, samples: &[(Tensor<f32>, usize)]) -> Result<f64> {
    if samples.is_empty() {
        return Ok(0.0);
    }
    let correct = samples
        .par_iter()
        .map(|(x, y)| Ok::<_, Error>(usize::from(model.predict(x)?.predicted_label() == *y)))
        .try_reduce(|| 0, |a, b| Ok(a + b))?;
    Ok(correct as f64 / samples.len() as f64)
}

/// Mean cross-entropy over `samples`.
pub fn mean_loss(model: &Model<f32>, samples: &[(Tensor<f32>, usize)]) -> Result<f64> {
    let mut total = 0.0;
    for (x, y) in samples {
        total += sample_gradient(model, x, *y)?.0;
    }
    Ok(total / samples.len().max(1) as f64)
}

#[derive(Debug, Clone)]
pub struct RetrainOutcome {
    pub model: Model<f32>,
    pub log: TrainLog,
    pub test_before: f64,
    pub test_after: f64,
    pub adversarial_before: f64,
    pub adversarial_after: f64,
}

/// Fine-tunes a copy of `model` on `train_data` plus the adversarial images,
/// each labelled with the label of the input it was derived from.
pub fn retrain_with_adversarial(
    model: &Model<f32>,
    train_data: &DatasetSplit,
    adversarial: &[(Tensor<f32>, usize)],
    test: &DatasetSplit,
    cfg: &TrainConfig,
) -> Result<RetrainOutcome> {
    let test_before = evaluate(model, test)?;
    let adversarial_before = accuracy_on(model, adversarial)?;
    let augmented = if adversarial.is_empty() {
        train_data.clone()
    } else {
        train_data.extended(adversarial)?
    };
    let mut tuned = model.clone();
    let log = fit(&mut tuned, &augmented, cfg, Some(test))?;
    Ok(RetrainOutcome {
        test_after: evaluate(&tuned, test)?,
        adversarial_after: accuracy_on(&tuned, adversarial)?,
        model: tuned,
        log,
        test_before,
        adversarial_before,
    })
}
