use serde::{Deserialize, Serialize};

use crate::coverage::{Strategy, DEFAULT_ACTIVATION_THRESHOLD};
use crate::error::{Error, Result};
use crate::nn::LabelSource;

/// How a raw input gradient becomes a perturbation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradMode {
    /// `step · sign(g)`
    #[default]
    Sign,
    /// `step · g / ‖g‖₂`
    ScaledRaw,
}

impl std::str::FromStr for GradMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "sign" => Ok(GradMode::Sign),
            "scaled_raw" => Ok(GradMode::ScaledRaw),
            _ => Err(format!("unknown gradient mode {s:?} (expected sign or scaled_raw)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FuzzConfig {
    /// Number of competing labels in the objective.
    pub k: usize,
    /// Number of neurons selected per seed.
    pub m: usize,
    pub strategies: Vec<Strategy>,
    pub lambda: f64,
    /// Mutation steps per seed.
    pub iter_times: usize,
    pub activation_threshold: f64,
    /// Relative L2 bound for keeping a mutant as a seed.
    pub distance_max: f64,
    /// Coverage-gain requirement for the first seed of an input (δ0).
    pub coverage_gain_initial: f64,
    /// Per-seed decay of the requirement (γ).
    pub coverage_gain_decay: f64,
    pub coverage_gain_floor: f64,
    pub grad_mode: GradMode,
    pub step_size: f64,
    /// Cap on seeds ever enqueued for one input, the input itself included.
    pub max_seeds_per_input: usize,
    pub pixel_range: [f32; 2],
    pub recompute_grad_each_iter: bool,
    pub rng_seed: u64,
    pub label_source: LabelSource,
}

impl Default for FuzzConfig {
    fn default() -> Self {
        FuzzConfig {
            k: 4,
            m: 10,
            strategies: vec![Strategy::Frequent],
            lambda: 1.0,
            iter_times: 3,
            activation_threshold: DEFAULT_ACTIVATION_THRESHOLD,
            distance_max: 0.02,
            coverage_gain_initial: 0.01,
            coverage_gain_decay: 0.9,
            coverage_gain_floor: 0.001,
            grad_mode: GradMode::Sign,
            step_size: 0.01,
            max_seeds_per_input: 64,
            pixel_range: [0.0, 1.0],
            recompute_grad_each_iter: false,
            rng_seed: 0,
            label_source: LabelSource::Confidence,
        }
    }
}

impl FuzzConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: &str| Err(Error::contract(format!("invalid fuzz config: {msg}")));
        if self.k == 0 {
            return fail("k must be at least 1");
        }
        if self.m == 0 {
            return fail("m must be at least 1");
        }
        if self.iter_times == 0 {
            return fail("iter_times must be at least 1");
        }
        if self.strategies.is_empty() {
            return fail("at least one strategy is required");
        }
        if !self.lambda.is_finite() {
            return fail("lambda must be finite");
        }
        if !(self.activation_threshold > 0.0 && self.activation_threshold < 1.0) {
            return fail("activation_threshold must lie in (0, 1)");
        }
        if !(self.distance_max > 0.0) || !self.distance_max.is_finite() {
            return fail("distance_max must be positive");
        }
        if !(self.coverage_gain_decay > 0.0 && self.coverage_gain_decay <= 1.0) {
            return fail("coverage_gain_decay must lie in (0, 1]");
        }
        if !(self.coverage_gain_initial >= 0.0 && self.coverage_gain_floor >= 0.0)
            || !self.coverage_gain_initial.is_finite()
            || !self.coverage_gain_floor.is_finite()
        {
            return fail("coverage gain requirements must be finite and non-negative");
        }
        if !(self.step_size > 0.0) || !self.step_size.is_finite() {
            return fail("step_size must be positive");
        }
        if self.max_seeds_per_input == 0 {
            return fail("max_seeds_per_input must be at least 1");
        }
        let [lo, hi] = self.pixel_range;
        if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
            return fail("pixel_range must be [lo, hi] with lo < hi");
        }
        Ok(())
    }

    /// Coverage gain a mutant must bring when `seeds_done` seeds of the
    /// current input have already been processed.
    pub fn gain_requirement(&self, seeds_done: usize) -> f64 {
        let decayed =
            self.coverage_gain_initial * self.coverage_gain_decay.powi(seeds_done.min(i32::MAX as usize) as i32);
        decayed.max(self.coverage_gain_floor)
    }
}
