//! Neuron coverage.
//!
//! A neuron is a dense unit or a conv output channel. Its output is the
//! post-activation value (the following ReLU's output when there is one,
//! otherwise the layer's own output); a conv channel's output is the mean of
//! its feature map. Outputs are min-max scaled per layer, and a neuron counts
//! as activated for an input when its scaled output exceeds the tracker's
//! threshold.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{ActivationTrace, Layer, Model};
use crate::tensor::Real;

pub const DEFAULT_ACTIVATION_THRESHOLD: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NeuronId {
    pub layer_index: usize,
    pub unit_index: usize,
}

impl NeuronId {
    pub fn new(layer_index: usize, unit_index: usize) -> Self {
        Self {
            layer_index,
            unit_index,
        }
    }
}

impl fmt::Display for NeuronId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.layer_index, self.unit_index)
    }
}

/// Where the neurons of one dense/conv layer live inside an [`ActivationTrace`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NeuronLayer {
    pub layer_index: usize,
    /// Layer whose output holds the post-activation values.
    pub activation_index: usize,
    pub units: usize,
    /// Spatial positions averaged per unit (1 for dense layers).
    pub positions: usize,
    /// Flat index of this layer's first neuron.
    pub offset: usize,
}

impl NeuronLayer {
    pub(crate) fn output_of<T: Real>(&self, trace: &ActivationTrace<T>, unit: usize) -> T {
        let data = trace.output(self.activation_index).data();
        let sum = (0..self.positions).fold(T::zero(), |acc, p| acc + data[p * self.units + unit]);
        sum / T::from_usize(self.positions).expect("small count")
    }

    fn outputs<T: Real>(&self, trace: &ActivationTrace<T>) -> Vec<f64> {
        let data = trace.output(self.activation_index).data();
        let mut sums = vec![0.0; self.units];
        for p in 0..self.positions {
            for (u, s) in sums.iter_mut().enumerate() {
                *s += data[p * self.units + u].as_f64();
            }
        }
        sums.iter().map(|s| s / self.positions as f64).collect()
    }

    /// Adds `scale · ∂out(unit)/∂(activation output)` into `seed`.
    pub(crate) fn add_output_gradient<T: Real>(&self, seed: &mut [T], unit: usize, scale: T) {
        let g = scale / T::from_usize(self.positions).expect("small count");
        for p in 0..self.positions {
            let i = p * self.units + unit;
            seed[i] = seed[i] + g;
        }
    }
}

/// Neuron-bearing layers of `model`, in layer order.
pub fn neuron_layers<T: Real>(model: &Model<T>) -> Vec<NeuronLayer> {
    let layers = model.layers();
    let mut out = Vec::new();
    let mut offset = 0;
    for (i, layer) in layers.iter().enumerate() {
        if !matches!(layer, Layer::Dense { .. } | Layer::Conv2d { .. }) {
            continue;
        }
        let shape = model.output_shape(i);
        let units = *shape.last().expect("non-empty shape");
        let activation_index = match layers.get(i + 1) {
            Some(Layer::Relu) => i + 1,
            _ => i,
        };
        out.push(NeuronLayer {
            layer_index: i,
            activation_index,
            units,
            positions: shape.iter().product::<usize>() / units,
            offset,
        });
        offset += units;
    }
    out
}

/// Raw output of every neuron for one trace.
pub fn neuron_outputs<T: Real>(model: &Model<T>, trace: &ActivationTrace<T>) -> BTreeMap<NeuronId, f64> {
    neuron_layers(model)
        .iter()
        .flat_map(|l| {
            l.outputs(trace)
                .into_iter()
                .enumerate()
                .map(|(u, v)| (NeuronId::new(l.layer_index, u), v))
                .collect::<Vec<_>>()
        })
        .collect()
}

/// Min-max scales a layer's outputs into [0, 1]. A layer whose outputs are all
/// equal scales to zeros.
pub fn scale_layer(outputs: &[f64]) -> Vec<f64> {
    let (lo, hi) = outputs.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
        (lo.min(v), hi.max(v))
    });
    let range = hi - lo;
    if !(range > 0.0) {
        return vec![0.0; outputs.len()];
    }
    outputs.iter().map(|&v| (v - lo) / range).collect()
}

/// Neuron-selection heuristic used to pick the neurons the objective pushes up.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Strategy {
    /// Neurons activated by the most past inputs.
    Frequent = 1,
    /// Neurons activated by the fewest past inputs.
    Rare = 2,
    /// Neurons with the largest incoming weight mass (L1).
    TopWeight = 3,
    /// Neurons whose latest scaled output is closest to the threshold.
    NearThreshold = 4,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [
        Strategy::Frequent,
        Strategy::Rare,
        Strategy::TopWeight,
        Strategy::NearThreshold,
    ];

    pub fn number(self) -> u8 {
        self as u8
    }
}

impl TryFrom<u8> for Strategy {
    type Error = String;

    fn try_from(v: u8) -> Result<Self, String> {
        match v {
            1 => Ok(Strategy::Frequent),
            2 => Ok(Strategy::Rare),
            3 => Ok(Strategy::TopWeight),
            4 => Ok(Strategy::NearThreshold),
            _ => Err(format!("unknown neuron-selection strategy {v} (expected 1-4)")),
        }
    }
}

impl From<Strategy> for u8 {
    fn from(s: Strategy) -> u8 {
        s as u8
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.number())
    }
}

/// Campaign-wide coverage state.
#[derive(Debug, Clone, PartialEq)]
pub struct CoverageTracker {
    layout: Vec<NeuronLayer>,
    covered: Vec<bool>,
    activation_count: Vec<u64>,
    last_scaled_output: Vec<f64>,
    weight_score: Vec<f64>,
    activation_threshold: f64,
    covered_count: usize,
}

impl CoverageTracker {
    pub fn new<T: Real>(model: &Model<T>, activation_threshold: f64) -> Result<Self> {
        if !(activation_threshold > 0.0 && activation_threshold < 1.0) {
            return Err(Error::contract(format!(
                "activation threshold must be in (0, 1), got {activation_threshold}"
            )));
        }
        let layout = neuron_layers(model);
        let total = layout.iter().map(|l| l.units).sum();
        let weight_score = layout
            .iter()
            .flat_map(|l| {
                let (w, _) = model.layers()[l.layer_index].params().expect("dense or conv");
                let mut score = vec![0.0; l.units];
                // weights are [.., out] in both layouts, so the unit is the fastest index
                for (i, v) in w.data().iter().enumerate() {
                    score[i % l.units] += v.as_f64().abs();
                }
                score
            })
            .collect();
        Ok(Self {
            layout,
            covered: vec![false; total],
            activation_count: vec![0; total],
            last_scaled_output: vec![0.0; total],
            weight_score,
            activation_threshold,
            covered_count: 0,
        })
    }

    pub fn total_neurons(&self) -> usize {
        self.covered.len()
    }

    pub fn activation_threshold(&self) -> f64 {
        self.activation_threshold
    }

    pub fn layout(&self) -> &[NeuronLayer] {
        &self.layout
    }

    pub fn neuron_ids(&self) -> Vec<NeuronId> {
        (0..self.total_neurons()).map(|i| self.id_of(i)).collect()
    }

    fn id_of(&self, flat: usize) -> NeuronId {
        let l = self
            .layout
            .iter()
            .rev()
            .find(|l| l.offset <= flat)
            .expect("flat index in range");
        NeuronId::new(l.layer_index, flat - l.offset)
    }

    fn flat_of(&self, id: NeuronId) -> Result<usize> {
        self.layout
            .iter()
            .find(|l| l.layer_index == id.layer_index && id.unit_index < l.units)
            .map(|l| l.offset + id.unit_index)
            .ok_or_else(|| Error::contract(format!("unknown neuron {id}")))
    }

    pub fn is_covered(&self, id: NeuronId) -> Result<bool> {
        Ok(self.covered[self.flat_of(id)?])
    }

    pub fn activation_count(&self, id: NeuronId) -> Result<u64> {
        Ok(self.activation_count[self.flat_of(id)?])
    }

    pub fn last_scaled_output(&self, id: NeuronId) -> Result<f64> {
        Ok(self.last_scaled_output[self.flat_of(id)?])
    }

    pub fn weight_score(&self, id: NeuronId) -> Result<f64> {
        Ok(self.weight_score[self.flat_of(id)?])
    }

    pub fn covered_ids(&self) -> Vec<NeuronId> {
        (0..self.total_neurons())
            .filter(|&i| self.covered[i])
            .map(|i| self.id_of(i))
            .collect()
    }

    pub fn covered_count(&self) -> usize {
        self.covered_count
    }

    pub fn coverage_rate(&self) -> f64 {
        if self.total_neurons() == 0 {
            return 0.0;
        }
        self.covered_count as f64 / self.total_neurons() as f64
    }

    /// Errors unless `model` has the neuron layout this tracker was built for.
    pub fn check_model<T: Real>(&self, model: &Model<T>) -> Result<()> {
        if neuron_layers(model) != self.layout {
            return Err(Error::contract("coverage tracker was built for a different model"));
        }
        Ok(())
    }

    /// Scaled outputs of every neuron for one trace, in flat order.
    pub fn scaled_outputs<T: Real>(&self, model: &Model<T>, trace: &ActivationTrace<T>) -> Result<Vec<f64>> {
        self.check_model(model)?;
        Ok(self
            .layout
            .iter()
            .flat_map(|l| scale_layer(&l.outputs(trace)))
            .collect())
    }

    /// Neurons the given trace activates.
    pub fn activated_by<T: Real>(&self, model: &Model<T>, trace: &ActivationTrace<T>) -> Result<Vec<NeuronId>> {
        let scaled = self.scaled_outputs(model, trace)?;
        Ok(scaled
            .iter()
            .enumerate()
            .filter(|(_, &s)| s > self.activation_threshold)
            .map(|(i, _)| self.id_of(i))
            .collect())
    }

    /// Records one tested input. Returns how many neurons became covered.
    pub fn update<T: Real>(&mut self, model: &Model<T>, trace: &ActivationTrace<T>) -> Result<usize> {
        let scaled = self.scaled_outputs(model, trace)?;
        let mut newly = 0;
        for (i, s) in scaled.into_iter().enumerate() {
            self.last_scaled_output[i] = s;
            if s > self.activation_threshold {
                self.activation_count[i] += 1;
                if !self.covered[i] {
                    self.covered[i] = true;
                    newly += 1;
                }
            }
        }
        self.covered_count += newly;
        Ok(newly)
    }

    /// Picks up to `m` distinct neurons that `trace` leaves inactive.
    ///
    /// `m` is split as evenly as possible across `strategies`, earlier
    /// strategies taking the remainder; each strategy skips neurons an
    /// earlier one already picked. Ties rank by `(layer_index, unit_index)`.
    /// When fewer than `m` candidates exist, all of them are returned.
    pub fn select_neurons<T: Real>(
        &self,
        model: &Model<T>,
        strategies: &[Strategy],
        m: usize,
        trace: &ActivationTrace<T>,
    ) -> Result<Vec<NeuronId>> {
        if m == 0 {
            return Err(Error::contract("m must be at least 1"));
        }
        if strategies.is_empty() {
            return Err(Error::contract("at least one neuron-selection strategy is required"));
        }
        let scaled = self.scaled_outputs(model, trace)?;
        let candidates: Vec<usize> = (0..self.total_neurons())
            .filter(|&i| scaled[i] <= self.activation_threshold)
            .collect();
        let mut picked: Vec<usize> = Vec::with_capacity(m.min(candidates.len()));
        let per = m / strategies.len();
        let extra = m % strategies.len();
        for (si, &strategy) in strategies.iter().enumerate() {
            let quota = per + usize::from(si < extra);
            let mut ranked: Vec<usize> = candidates.iter().copied().filter(|i| !picked.contains(i)).collect();
            ranked.sort_by(|&a, &b| {
                self.strategy_key(strategy, a)
                    .total_cmp(&self.strategy_key(strategy, b))
                    .then(a.cmp(&b))
            });
            picked.extend(ranked.into_iter().take(quota));
        }
        Ok(picked.into_iter().map(|i| self.id_of(i)).collect())
    }

    /// Ascending sort key: the best neuron for `strategy` sorts first.
    fn strategy_key(&self, strategy: Strategy, i: usize) -> f64 {
        match strategy {
            Strategy::Frequent => -(self.activation_count[i] as f64),
            Strategy::Rare => self.activation_count[i] as f64,
            Strategy::TopWeight => -self.weight_score[i],
            Strategy::NearThreshold => (self.last_scaled_output[i] - self.activation_threshold).abs(),
        }
    }

    /// Test hook: overwrite per-neuron statistics.
    #[cfg(test)]
    fn set_stats(&mut self, id: NeuronId, count: u64, last: f64) {
        let i = self.flat_of(id).unwrap();
        self.activation_count[i] = count;
        self.last_scaled_output[i] = last;
    }
}
