//! Coverage-guided differential fuzzing.
//!
//! Each input starts a FIFO seed queue holding just the input. A seed is
//! mutated `iter_times` times along a direction computed once from the seed
//! (the objective gradient, or random signs for the baseline). A mutant that
//! changes the predicted label is recorded as adversarial and ends the seed.
//! A mutant that keeps the label, stays close to the original and covers
//! enough new neurons is queued as a further seed.

mod config;
mod report;

use std::collections::VecDeque;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coverage::CoverageTracker;
use crate::error::{Error, Result};
use crate::nn::{objective_gradient, top_k_other_labels, ActivationTrace, Model, ObjectiveSpec};
use crate::tensor::{Real, Tensor};

pub use config::{FuzzConfig, GradMode};
pub use report::{load_adversarial_set, read_manifest, CampaignReport, ManifestRow};

/// Turns a raw gradient into a perturbation.
pub fn process_gradient<T: Real>(grads: &Tensor<T>, mode: GradMode, step_size: f64) -> Result<Tensor<T>> {
    if grads.data().iter().any(|v| !v.is_finite()) {
        return Err(Error::contract("gradient contains non-finite values"));
    }
    Ok(match mode {
        GradMode::Sign => {
            let step = T::from_f64_lossy(step_size);
            grads.map(|g| {
                if g > T::zero() {
                    step
                } else if g < T::zero() {
                    -step
                } else {
                    T::zero()
                }
            })
        }
        GradMode::ScaledRaw => {
            let k = step_size / grads.l2_norm().max(1e-12);
            grads.map(|g| T::from_f64_lossy(g.as_f64() * k))
        }
    })
}

/// `‖x′ − x‖₂ / ‖x‖₂`.
pub fn relative_distance<T: Real>(x_prime: &Tensor<T>, x: &Tensor<T>) -> Result<f64> {
    let norm = x.l2_norm();
    if norm == 0.0 {
        return Err(Error::contract("relative distance to an all-zero input is undefined"));
    }
    Ok(x_prime.sub(x)?.l2_norm() / norm)
}

/// Where mutation directions come from.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MutationMode {
    /// Gradient of the coverage/label objective.
    #[default]
    Guided,
    /// Uniform random ±1 per pixel, drawn once per seed.
    RandomSign,
}

#[derive(Debug, Clone)]
pub struct AdversarialRecord {
    pub input_index: usize,
    /// Position among this input's records.
    pub seq: usize,
    pub original_label: usize,
    pub adversarial_label: usize,
    pub mutated: Tensor<f32>,
    /// Relative L2 distance to the original input.
    pub distance: f64,
    pub absolute_distance: f64,
    /// 0 for the input itself, parent generation + 1 for kept mutants.
    pub seed_generation: usize,
    /// Mutation step (1-based) on the seed that flipped the label.
    pub iteration: usize,
    /// Time since fuzzing of this input began.
    pub elapsed: Duration,
}

/// Per-input bookkeeping, in the order inputs finished.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputSummary {
    pub input_index: usize,
    pub original_label: usize,
    pub seeds_processed: usize,
    pub seeds_kept: usize,
    pub mutations: usize,
    pub adversarial: usize,
    /// Neurons first covered by this input's mutants.
    pub newly_covered: usize,
    pub covered_after: usize,
    #[serde(skip)]
    pub elapsed: Duration,
}

#[derive(Debug, Clone)]
pub struct InputOutcome {
    pub records: Vec<AdversarialRecord>,
    pub summary: InputSummary,
    /// Coverage rate after minus before.
    pub coverage_delta: f64,
}

/// Hooks into a running campaign. All methods default to no-ops.
pub trait CampaignObserver {
    /// Every trace fed to the tracker.
    fn on_tested(&mut self, _input_index: usize, _trace: &ActivationTrace<f32>) {}
    fn on_seed_kept(&mut self, _input_index: usize, _seed: &Tensor<f32>, _distance: f64, _label: usize) {}
    fn on_adversarial(&mut self, _record: &AdversarialRecord) {}
    fn on_input_done(&mut self, _summary: &InputSummary, _coverage_rate: f64) {}
}

impl CampaignObserver for () {}

enum TrackerRef<'a> {
    Local(&'a mut CoverageTracker),
    Shared(&'a Mutex<CoverageTracker>),
}

impl TrackerRef<'_> {
    fn with<R>(&mut self, f: impl FnOnce(&mut CoverageTracker) -> R) -> R {
        match self {
            TrackerRef::Local(t) => f(t),
            TrackerRef::Shared(m) => f(&mut m.lock().unwrap_or_else(|e| e.into_inner())),
        }
    }
}

pub struct Fuzzer<'m> {
    model: &'m Model<f32>,
    config: FuzzConfig,
    mode: MutationMode,
}

impl<'m> Fuzzer<'m> {
    pub fn new(model: &'m Model<f32>, config: FuzzConfig) -> Result<Self> {
        Self::with_mode(model, config, MutationMode::Guided)
    }

    /// Same loop as [`Fuzzer::new`], with random-sign directions.
    pub fn random_baseline(model: &'m Model<f32>, config: FuzzConfig) -> Result<Self> {
        Self::with_mode(model, config, MutationMode::RandomSign)
    }

    pub fn with_mode(model: &'m Model<f32>, config: FuzzConfig, mode: MutationMode) -> Result<Self> {
        config.validate()?;
        if config.k >= model.num_classes() {
            return Err(Error::contract(format!(
                "k = {} needs more than {} classes",
                config.k,
                model.num_classes()
            )));
        }
        Ok(Fuzzer { model, config, mode })
    }

    pub fn config(&self) -> &FuzzConfig {
        &self.config
    }

    pub fn mode(&self) -> MutationMode {
        self.mode
    }

    pub fn model(&self) -> &Model<f32> {
        self.model
    }

    pub fn new_tracker(&self) -> Result<CoverageTracker> {
        CoverageTracker::new(self.model, self.config.activation_threshold)
    }

    pub fn fuzz_one_input(
        &self,
        tracker: &mut CoverageTracker,
        x: &Tensor<f32>,
        input_index: usize,
    ) -> Result<InputOutcome> {
        tracker.check_model(self.model)?;
        self.run_input(TrackerRef::Local(tracker), x, input_index, None, &mut ())
    }

    /// Fuzzes `inputs` in order against a fresh tracker.
    pub fn fuzz_corpus(&self, inputs: &[Tensor<f32>]) -> Result<CampaignReport> {
        let mut tracker = self.new_tracker()?;
        self.fuzz_corpus_with(&mut tracker, inputs, None, &mut ())
    }

    /// Fuzzes `inputs` in order against `tracker`.
    ///
    /// With `budgets`, input `i` gets exactly `budgets[i]` mutations: the
    /// input is re-queued whenever its queue drains early and fuzzing stops
    /// once the budget is spent.
    pub fn fuzz_corpus_with(
        &self,
        tracker: &mut CoverageTracker,
        inputs: &[Tensor<f32>],
        budgets: Option<&[usize]>,
        observer: &mut dyn CampaignObserver,
    ) -> Result<CampaignReport> {
        tracker.check_model(self.model)?;
        check_budgets(inputs, budgets)?;
        let start = Instant::now();
        let initial_covered = tracker.covered_count();
        let mut report = CampaignReport::new(self.mode, self.config.clone(), tracker.total_neurons(), initial_covered);
        for (i, x) in inputs.iter().enumerate() {
            let budget = budgets.map(|b| b[i]);
            let outcome = self.run_input(TrackerRef::Local(tracker), x, i, budget, observer)?;
            observer.on_input_done(&outcome.summary, tracker.coverage_rate());
            report.push(outcome);
        }
        report.finish(tracker.covered_count(), start.elapsed());
        Ok(report)
    }

    /// Fuzzes distinct inputs concurrently on `threads` workers sharing one
    /// tracker. Results depend on scheduling, so runs are not reproducible.
    pub fn fuzz_corpus_parallel(
        &self,
        tracker: &mut CoverageTracker,
        inputs: &[Tensor<f32>],
        budgets: Option<&[usize]>,
        threads: usize,
    ) -> Result<CampaignReport> {
        tracker.check_model(self.model)?;
        check_budgets(inputs, budgets)?;
        if threads == 0 {
            return Err(Error::contract("parallel fuzzing needs at least one thread"));
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| Error::contract(format!("cannot start thread pool: {e}")))?;
        let start = Instant::now();
        let initial_covered = tracker.covered_count();
        let total = tracker.total_neurons();
        let shared = Mutex::new(tracker.clone());
        let finished = AtomicUsize::new(0);
        let outcomes: Vec<(usize, InputOutcome)> = pool.install(|| {
            inputs
                .par_iter()
                .enumerate()
                .map(|(i, x)| {
                    let budget = budgets.map(|b| b[i]);
                    let outcome = self.run_input(TrackerRef::Shared(&shared), x, i, budget, &mut ())?;
                    Ok((finished.fetch_add(1, Ordering::SeqCst), outcome))
                })
                .collect::<Result<_>>()
        })?;
        *tracker = shared.into_inner().unwrap_or_else(|e| e.into_inner());

        let mut outcomes = outcomes;
        outcomes.sort_by_key(|(rank, _)| *rank);
        let mut report = CampaignReport::new(self.mode, self.config.clone(), total, initial_covered);
        for (_, outcome) in outcomes {
            report.push(outcome);
        }
        report.sort_records();
        report.finish(tracker.covered_count(), start.elapsed());
        Ok(report)
    }

    fn run_input(
        &self,
        mut tracker: TrackerRef<'_>,
        x: &Tensor<f32>,
        input_index: usize,
        budget: Option<usize>,
        observer: &mut dyn CampaignObserver,
    ) -> Result<InputOutcome> {
        let cfg = &self.config;
        let [lo, hi] = cfg.pixel_range;
        if let Some(v) = x.data().iter().find(|v| !(lo..=hi).contains(*v)) {
            return Err(Error::contract(format!(
                "input {input_index} has pixel {v} outside [{lo}, {hi}]"
            )));
        }
        if x.l2_norm() == 0.0 {
            return Err(Error::contract(format!(
                "input {input_index} is all zeros, so relative distances are undefined"
            )));
        }
        let start = Instant::now();
        let model = self.model;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
        rng.set_stream(input_index as u64);

        // only mutants reach the tracker; the input itself is never recorded
        let label = model.predict(x)?.predicted_label();
        let (total, before) = tracker.with(|t| (t.total_neurons(), t.coverage_rate()));
        let mut newly_covered = 0;

        let mut queue = VecDeque::from([(x.clone(), 0usize)]);
        let mut enqueued = 1;
        let mut summary = InputSummary {
            input_index,
            original_label: label,
            seeds_processed: 0,
            seeds_kept: 0,
            mutations: 0,
            adversarial: 0,
            newly_covered: 0,
            covered_after: 0,
            elapsed: Duration::ZERO,
        };
        let mut records = Vec::new();
        let spent = |s: &InputSummary| budget.is_some_and(|b| s.mutations >= b);

        while !spent(&summary) {
            let Some((seed, generation)) = queue.pop_front().or_else(|| {
                // with a budget, a drained queue restarts from the input
                budget.map(|_| (x.clone(), 0))
            }) else {
                break;
            };
            let seed_trace = model.predict(&seed)?;
            let objective = match self.mode {
                MutationMode::Guided => Some(self.objective_for(&mut tracker, &seed_trace, label)?),
                MutationMode::RandomSign => None,
            };
            let mut direction = self.direction(objective.as_ref(), &seed_trace, &mut rng)?;
            let requirement = cfg.gain_requirement(summary.seeds_processed);
            summary.seeds_processed += 1;

            let mut current = seed;
            for iteration in 1..=cfg.iter_times {
                if spent(&summary) {
                    break;
                }
                current = current.add(&direction)?.clip(lo, hi)?;
                summary.mutations += 1;
                let trace = model.predict(&current)?;
                let newly = tracker.with(|t| t.update(model, &trace))?;
                newly_covered += newly;
                observer.on_tested(input_index, &trace);
                let new_label = trace.predicted_label();
                let distance = relative_distance(&current, x)?;

                if new_label != label {
                    let record = AdversarialRecord {
                        input_index,
                        seq: records.len(),
                        original_label: label,
                        adversarial_label: new_label,
                        absolute_distance: current.sub(x)?.l2_norm(),
                        mutated: current,
                        distance,
                        seed_generation: generation,
                        iteration,
                        elapsed: start.elapsed(),
                    };
                    observer.on_adversarial(&record);
                    records.push(record);
                    break;
                }
                let gain = if total == 0 { 0.0 } else { newly as f64 / total as f64 };
                if gain >= requirement && distance <= cfg.distance_max && enqueued < cfg.max_seeds_per_input {
                    observer.on_seed_kept(input_index, &current, distance, new_label);
                    queue.push_back((current.clone(), generation + 1));
                    enqueued += 1;
                    summary.seeds_kept += 1;
                }
                if cfg.recompute_grad_each_iter && iteration < cfg.iter_times {
                    direction = self.direction(objective.as_ref(), &trace, &mut rng)?;
                }
            }
        }

        let (covered_after, after) = tracker.with(|t| (t.covered_count(), t.coverage_rate()));
        summary.adversarial = records.len();
        summary.newly_covered = newly_covered;
        summary.covered_after = covered_after;
        summary.elapsed = start.elapsed();
        Ok(InputOutcome {
            records,
            summary,
            coverage_delta: after - before,
        })
    }

    fn objective_for(
        &self,
        tracker: &mut TrackerRef<'_>,
        seed_trace: &ActivationTrace<f32>,
        label: usize,
    ) -> Result<ObjectiveSpec> {
        let cfg = &self.config;
        let target_neurons = tracker.with(|t| t.select_neurons(self.model, &cfg.strategies, cfg.m, seed_trace))?;
        Ok(ObjectiveSpec {
            original_label: label,
            topk_labels: top_k_other_labels(seed_trace, cfg.k)?,
            target_neurons,
            lambda: cfg.lambda,
            label_source: cfg.label_source,
        })
    }

    fn direction(
        &self,
        objective: Option<&ObjectiveSpec>,
        trace: &ActivationTrace<f32>,
        rng: &mut ChaCha8Rng,
    ) -> Result<Tensor<f32>> {
        let raw = match objective {
            Some(spec) => objective_gradient(self.model, trace, spec)?,
            None => {
                let signs = (0..trace.input().len())
                    .map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 })
                    .collect();
                Tensor::new(trace.input().shape().to_vec(), signs)?
            }
        };
        process_gradient(&raw, self.config.grad_mode, self.config.step_size)
    }
}

fn check_budgets(inputs: &[Tensor<f32>], budgets: Option<&[usize]>) -> Result<()> {
    match budgets {
        Some(b) if b.len() != inputs.len() => Err(Error::contract(format!(
            "{} mutation budgets for {} inputs",
            b.len(),
            inputs.len()
        ))),
        _ => Ok(()),
    }
}

/// Runs the random-sign baseline on `inputs` with the per-input mutation
/// counts of an earlier guided campaign over the same inputs.
pub fn paired_random_baseline(
    model: &Model<f32>,
    inputs: &[Tensor<f32>],
    guided: &CampaignReport,
) -> Result<CampaignReport> {
    let budgets = guided.mutation_budgets(inputs.len())?;
    let fuzzer = Fuzzer::random_baseline(model, guided.config.clone())?;
    let mut tracker = fuzzer.new_tracker()?;
    fuzzer.fuzz_corpus_with(&mut tracker, inputs, Some(&budgets), &mut ())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Layer;
    use proptest::prelude::*;

    fn t(data: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(vec![data.len()], data).unwrap()
    }

    #[test]
    fn process_gradient_examples() {
        let g = t(&[0.3, -0.2, 0.0]);
        let p = process_gradient(&g, GradMode::Sign, 0.1).unwrap();
        assert_eq!(p.data(), &[0.1, -0.1, 0.0]);
        let p = process_gradient(&t(&[3.0, 4.0]), GradMode::ScaledRaw, 1.0).unwrap();
        assert!((p.data()[0] - 0.6).abs() < 1e-12 && (p.data()[1] - 0.8).abs() < 1e-12);
        let z = process_gradient(&t(&[0.0, 0.0]), GradMode::ScaledRaw, 1.0).unwrap();
        assert_eq!(z.data(), &[0.0, 0.0]);
    }

    #[test]
    fn relative_distance_examples() {
        let x = t(&[3.0, 4.0]);
        assert_eq!(relative_distance(&x, &x).unwrap(), 0.0);
        let d = relative_distance(&t(&[3.0, 4.5]), &x).unwrap();
        assert!((d - 0.1).abs() < 1e-12);
        assert!(matches!(
            relative_distance(&x, &t(&[0.0, 0.0])),
            Err(Error::Contract(_))
        ));
        assert!(relative_distance(&t(&[1.0]), &x).is_err());
    }

    proptest! {
        #[test]
        fn sign_mode_has_step_linf(v in prop::collection::vec(-1.0f64..1.0, 1..50), step in 1e-4f64..1.0) {
            let g = t(&v);
            let p = process_gradient(&g, GradMode::Sign, step).unwrap();
            if v.iter().any(|&x| x != 0.0) {
                prop_assert_eq!(p.linf_norm(), step);
            }
            for (a, b) in v.iter().zip(p.data()) {
                let ok = if *a == 0.0 { *b == 0.0 } else { b.abs() == step && a.signum() == b.signum() };
                prop_assert!(ok, "grad {} gave {}", a, b);
            }
        }

        #[test]
        fn relative_distance_matches_scalar_loop(
            pair in prop::collection::vec((0.0f64..1.0, 0.0f64..1.0), 1..100)
        ) {
            let x = t(&pair.iter().map(|p| p.0 + 0.01).collect::<Vec<_>>());
            let y = t(&pair.iter().map(|p| p.1).collect::<Vec<_>>());
            let (mut num, mut den) = (0.0, 0.0);
            for (a, b) in x.data().iter().zip(y.data()) {
                num += (b - a) * (b - a);
                den += a * a;
            }
            let expected = num.sqrt() / den.sqrt();
            prop_assert!((relative_distance(&y, &x).unwrap() - expected).abs() <= 1e-6 * expected.max(1.0));
        }
    }

    fn constant_model() -> Model<f32> {
        Model::new(
            vec![4],
            vec![
                Layer::Dense {
                    weights: Tensor::zeros(&[4, 3]).unwrap(),
                    bias: Tensor::new(vec![3], vec![0.3, 0.3, 0.3]).unwrap(),
                },
                Layer::Softmax,
            ],
        )
        .unwrap()
    }

    #[test]
    fn constant_classifier_yields_nothing() {
        let model = constant_model();
        let cfg = FuzzConfig {
            k: 2,
            ..Default::default()
        };
        let fuzzer = Fuzzer::new(&model, cfg).unwrap();
        let mut tracker = fuzzer.new_tracker().unwrap();
        let x = Tensor::new(vec![4], vec![0.2, 0.4, 0.6, 0.8]).unwrap();
        let out = fuzzer.fuzz_one_input(&mut tracker, &x, 0).unwrap();
        assert!(out.records.is_empty());
        assert_eq!(out.summary.seeds_processed, 1);
        assert_eq!(out.summary.seeds_kept, 0);
        assert_eq!(out.summary.mutations, 3);
        // equal logits scale to all zeros, so nothing is ever covered
        assert_eq!(out.summary.newly_covered, 0);
        assert_eq!(out.coverage_delta, 0.0);
    }

    #[test]
    fn rejects_bad_inputs() {
        let model = constant_model();
        let fuzzer = Fuzzer::new(
            &model,
            FuzzConfig {
                k: 2,
                ..Default::default()
            },
        )
        .unwrap();
        let mut tracker = fuzzer.new_tracker().unwrap();
        let zero = Tensor::zeros(&[4]).unwrap();
        assert!(matches!(
            fuzzer.fuzz_one_input(&mut tracker, &zero, 0),
            Err(Error::Contract(_))
        ));
        let bright = Tensor::new(vec![4], vec![0.2, 1.5, 0.0, 0.0]).unwrap();
        assert!(matches!(
            fuzzer.fuzz_one_input(&mut tracker, &bright, 0),
            Err(Error::Contract(_))
        ));
        assert!(
            Fuzzer::new(&model, FuzzConfig::default()).is_err(),
            "k = 4 with 3 classes"
        );
    }

    #[test]
    fn empty_corpus() {
        let model = constant_model();
        let fuzzer = Fuzzer::new(
            &model,
            FuzzConfig {
                k: 1,
                ..Default::default()
            },
        )
        .unwrap();
        let report = fuzzer.fuzz_corpus(&[]).unwrap();
        assert!(report.records.is_empty());
        assert!(report.inputs.is_empty());
        assert_eq!(report.final_coverage(), 0.0);
    }
}
