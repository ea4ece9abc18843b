//! Python bindings for the neurofuzz core.
//!
//! Images cross the boundary as `Tensor` objects or as flat lists of floats
//! in `[h, w, 1]` row-major order; configs are `FuzzConfig` objects built from
//! keyword arguments with the same names as the JSON fields.

use std::path::PathBuf;

use neurofuzz::coverage::NeuronId;
use neurofuzz::fuzzer::{self, CampaignReport as CoreReport, MutationMode};
use neurofuzz::io::{self, DatasetSplit as CoreSplit, Split};
use neurofuzz::nn::{self, LabelSource};
use neurofuzz::trainer::{self, Optimizer, TrainConfig};
use neurofuzz::{Architecture, CoverageTracker as CoreTracker, FuzzConfig as CoreConfig, Fuzzer, GradMode, Strategy};
use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn err(e: neurofuzz::Error) -> PyErr {
    match e {
        neurofuzz::Error::Io { .. } => PyIOError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn parse_arch(name: &str) -> PyResult<Architecture> {
    Architecture::ALL
        .into_iter()
        .find(|a| a.name() == name)
        .ok_or_else(|| PyValueError::new_err(format!("unknown architecture {name:?}")))
}

fn label_source(name: &str) -> PyResult<LabelSource> {
    match name {
        "confidence" => Ok(LabelSource::Confidence),
        "logit" => Ok(LabelSource::Logit),
        _ => Err(PyValueError::new_err(format!("unknown label source {name:?}"))),
    }
}

fn strategies(numbers: &[u8]) -> PyResult<Vec<Strategy>> {
    numbers
        .iter()
        .map(|&n| Strategy::try_from(n).map_err(PyValueError::new_err))
        .collect()
}

#[pyclass(module = "neurofuzz_py", from_py_object)]
#[derive(Clone)]
pub struct Tensor {
    inner: neurofuzz::Tensor<f32>,
}

#[pymethods]
impl Tensor {
    #[new]
    fn new(shape: Vec<usize>, data: Vec<f32>) -> PyResult<Self> {
        Ok(Tensor {
            inner: neurofuzz::Tensor::new(shape, data).map_err(err)?,
        })
    }

    #[staticmethod]
    fn zeros(shape: Vec<usize>) -> PyResult<Self> {
        Ok(Tensor {
            inner: neurofuzz::Tensor::zeros(&shape).map_err(err)?,
        })
    }

    #[getter]
    fn shape(&self) -> Vec<usize> {
        self.inner.shape().to_vec()
    }

    fn tolist(&self) -> Vec<f32> {
        self.inner.data().to_vec()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __add__(&self, other: &Tensor) -> PyResult<Tensor> {
        Ok(Tensor {
            inner: self.inner.add(&other.inner).map_err(err)?,
        })
    }

    fn __sub__(&self, other: &Tensor) -> PyResult<Tensor> {
        Ok(Tensor {
            inner: self.inner.sub(&other.inner).map_err(err)?,
        })
    }

    fn scale(&self, k: f32) -> Tensor {
        Tensor {
            inner: self.inner.scale(k),
        }
    }

    fn clip(&self, lo: f32, hi: f32) -> PyResult<Tensor> {
        Ok(Tensor {
            inner: self.inner.clip(lo, hi).map_err(err)?,
        })
    }

    fn l2_norm(&self) -> f64 {
        self.inner.l2_norm()
    }

    fn linf_norm(&self) -> f64 {
        self.inner.linf_norm()
    }

    fn argmax(&self) -> usize {
        self.inner.argmax()
    }

    fn __repr__(&self) -> String {
        format!("Tensor(shape={:?})", self.inner.shape())
    }
}

/// Accepts a `Tensor` or a flat list shaped like the model input.
fn image(obj: &Bound<'_, PyAny>, shape: &[usize]) -> PyResult<neurofuzz::Tensor<f32>> {
    if let Ok(t) = obj.cast::<Tensor>() {
        return Ok(t.borrow().inner.clone());
    }
    let data: Vec<f32> = obj.extract()?;
    neurofuzz::Tensor::new(shape.to_vec(), data).map_err(err)
}

#[pyclass(module = "neurofuzz_py")]
pub struct Prediction {
    #[pyo3(get)]
    label: usize,
    #[pyo3(get)]
    confidences: Vec<f32>,
    #[pyo3(get)]
    logits: Vec<f32>,
}

#[pyclass(module = "neurofuzz_py")]
pub struct Model {
    inner: neurofuzz::Model<f32>,
}

#[pymethods]
impl Model {
    /// Freshly initialised model of architecture `arch` (lenet1, lenet4, lenet5 or mlp).
    #[staticmethod]
    #[pyo3(signature = (arch, seed = 0))]
    fn build(arch: &str, seed: u64) -> PyResult<Self> {
        Ok(Model {
            inner: parse_arch(arch)?.build(seed),
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Model {
            inner: io::load_model(&path).map_err(err)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        io::save_model(&self.inner, &path).map_err(err)
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let value: serde_json::Value = serde_json::from_str(text).map_err(|e| PyValueError::new_err(e.to_string()))?;
        Ok(Model {
            inner: io::model_from_json(&value).map_err(err)?,
        })
    }

    fn to_json(&self) -> String {
        io::model_to_json(&self.inner).to_string()
    }

    #[getter]
    fn input_shape(&self) -> Vec<usize> {
        self.inner.input_shape().to_vec()
    }

    #[getter]
    fn num_classes(&self) -> usize {
        self.inner.num_classes()
    }

    #[getter]
    fn num_parameters(&self) -> usize {
        self.inner.num_parameters()
    }

    fn predict(&self, x: &Bound<'_, PyAny>) -> PyResult<Prediction> {
        let trace = self.inner.predict(&image(x, self.inner.input_shape())?).map_err(err)?;
        Ok(Prediction {
            label: trace.predicted_label(),
            confidences: trace.confidences().data().to_vec(),
            logits: trace.logits().data().to_vec(),
        })
    }

    /// Gradient of the fuzzing objective with respect to `x`.
    #[pyo3(signature = (x, original_label, topk_labels, target_neurons, lambda_ = 1.0, label_source = "confidence"))]
    fn input_gradient(
        &self,
        x: &Bound<'_, PyAny>,
        original_label: usize,
        topk_labels: Vec<usize>,
        target_neurons: Vec<(usize, usize)>,
        lambda_: f64,
        label_source: &str,
    ) -> PyResult<Tensor> {
        let spec = nn::ObjectiveSpec {
            original_label,
            topk_labels,
            target_neurons: target_neurons.into_iter().map(|(l, u)| NeuronId::new(l, u)).collect(),
            lambda: lambda_,
            label_source: self::label_source(label_source)?,
        };
        let x = image(x, self.inner.input_shape())?;
        Ok(Tensor {
            inner: nn::input_gradient(&self.inner, &x, &spec).map_err(err)?,
        })
    }
}

#[pyclass(module = "neurofuzz_py")]
pub struct CoverageTracker {
    inner: CoreTracker,
}

#[pymethods]
impl CoverageTracker {
    #[new]
    #[pyo3(signature = (model, activation_threshold = 0.25))]
    fn new(model: &Model, activation_threshold: f64) -> PyResult<Self> {
        Ok(CoverageTracker {
            inner: CoreTracker::new(&model.inner, activation_threshold).map_err(err)?,
        })
    }

    #[getter]
    fn total_neurons(&self) -> usize {
        self.inner.total_neurons()
    }

    #[getter]
    fn covered_count(&self) -> usize {
        self.inner.covered_count()
    }

    #[getter]
    fn coverage_rate(&self) -> f64 {
        self.inner.coverage_rate()
    }

    fn neuron_ids(&self) -> Vec<(usize, usize)> {
        self.inner
            .neuron_ids()
            .into_iter()
            .map(|id| (id.layer_index, id.unit_index))
            .collect()
    }

    fn covered_ids(&self) -> Vec<(usize, usize)> {
        self.inner
            .covered_ids()
            .into_iter()
            .map(|id| (id.layer_index, id.unit_index))
            .collect()
    }

    /// Records the activations of `x`; returns the number of newly covered neurons.
    fn update(&mut self, model: &Model, x: &Bound<'_, PyAny>) -> PyResult<usize> {
        let trace = model
            .inner
            .predict(&image(x, model.inner.input_shape())?)
            .map_err(err)?;
        self.inner.update(&model.inner, &trace).map_err(err)
    }

    #[pyo3(signature = (model, x, strategies, m = 10))]
    fn select_neurons(
        &self,
        model: &Model,
        x: &Bound<'_, PyAny>,
        strategies: Vec<u8>,
        m: usize,
    ) -> PyResult<Vec<(usize, usize)>> {
        let trace = model
            .inner
            .predict(&image(x, model.inner.input_shape())?)
            .map_err(err)?;
        let ids = self
            .inner
            .select_neurons(&model.inner, &self::strategies(&strategies)?, m, &trace)
            .map_err(err)?;
        Ok(ids.into_iter().map(|id| (id.layer_index, id.unit_index)).collect())
    }
}

#[pyclass(module = "neurofuzz_py", from_py_object)]
#[derive(Clone)]
pub struct FuzzConfig {
    inner: CoreConfig,
}

#[pymethods]
impl FuzzConfig {
    /// Defaults overridden by keyword arguments named like the JSON fields,
    /// e.g. `FuzzConfig(k=2, strategies=[1, 4], grad_mode="scaled_raw")`.
    #[new]
    #[pyo3(signature = (**kwargs))]
    fn new(py: Python<'_>, kwargs: Option<&Bound<'_, PyDict>>) -> PyResult<Self> {
        let text: String = match kwargs {
            Some(d) => py.import("json")?.call_method1("dumps", (d,))?.extract()?,
            None => "{}".to_string(),
        };
        Self::from_json(&text)
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let inner: CoreConfig = serde_json::from_str(text).map_err(|e| PyValueError::new_err(e.to_string()))?;
        inner.validate().map_err(err)?;
        Ok(FuzzConfig { inner })
    }

    fn to_json(&self) -> String {
        serde_json::to_string(&self.inner).expect("config serializes")
    }

    #[getter]
    fn k(&self) -> usize {
        self.inner.k
    }

    #[getter]
    fn m(&self) -> usize {
        self.inner.m
    }

    #[getter]
    fn iter_times(&self) -> usize {
        self.inner.iter_times
    }

    #[getter]
    fn strategies(&self) -> Vec<u32> {
        self.inner.strategies.iter().map(|s| u32::from(s.number())).collect()
    }

    #[getter]
    fn grad_mode(&self) -> &'static str {
        match self.inner.grad_mode {
            GradMode::Sign => "sign",
            GradMode::ScaledRaw => "scaled_raw",
        }
    }

    fn __repr__(&self) -> String {
        format!("FuzzConfig({})", self.to_json())
    }
}

#[pyclass(module = "neurofuzz_py")]
pub struct AdversarialRecord {
    #[pyo3(get)]
    input_index: usize,
    #[pyo3(get)]
    seq: usize,
    #[pyo3(get)]
    original_label: usize,
    #[pyo3(get)]
    adversarial_label: usize,
    #[pyo3(get)]
    distance: f64,
    #[pyo3(get)]
    absolute_distance: f64,
    #[pyo3(get)]
    seed_generation: usize,
    #[pyo3(get)]
    iteration: usize,
    #[pyo3(get)]
    image: Tensor,
}

#[pyclass(module = "neurofuzz_py")]
pub struct CampaignReport {
    inner: CoreReport,
}

#[pymethods]
impl CampaignReport {
    #[getter]
    fn num_adversarial(&self) -> usize {
        self.inner.num_adversarial()
    }

    #[getter]
    fn total_neurons(&self) -> usize {
        self.inner.total_neurons
    }

    #[getter]
    fn final_covered(&self) -> usize {
        self.inner.final_covered
    }

    #[getter]
    fn final_coverage(&self) -> f64 {
        self.inner.final_coverage()
    }

    #[getter]
    fn mean_distance(&self) -> Option<f64> {
        self.inner.mean_distance()
    }

    fn coverage_curve(&self) -> Vec<(usize, f64)> {
        self.inner.coverage_curve()
    }

    /// Per-input mutation counts, indexed by input position.
    fn mutation_budgets(&self, num_inputs: usize) -> PyResult<Vec<usize>> {
        self.inner.mutation_budgets(num_inputs).map_err(err)
    }

    fn records(&self) -> Vec<AdversarialRecord> {
        self.inner
            .records
            .iter()
            .map(|r| AdversarialRecord {
                input_index: r.input_index,
                seq: r.seq,
                original_label: r.original_label,
                adversarial_label: r.adversarial_label,
                distance: r.distance,
                absolute_distance: r.absolute_distance,
                seed_generation: r.seed_generation,
                iteration: r.iteration,
                image: Tensor {
                    inner: r.mutated.clone(),
                },
            })
            .collect()
    }

    fn summary_line(&self) -> String {
        self.inner.summary_line()
    }

    /// Writes adversarial PGMs, manifest.csv, coverage.csv and timing.csv.
    fn write_dir(&self, path: PathBuf) -> PyResult<()> {
        self.inner.write_dir(&path).map_err(err)
    }
}

fn images(objs: &[Bound<'_, PyAny>], shape: &[usize]) -> PyResult<Vec<neurofuzz::Tensor<f32>>> {
    objs.iter().map(|o| image(o, shape)).collect()
}

/// Runs one campaign over `inputs` with a fresh tracker. `mode` is
/// "guided" or "random"; `budgets` caps the mutations spent on each input.
#[pyfunction]
#[pyo3(signature = (model, inputs, config = None, mode = "guided", budgets = None))]
fn fuzz_corpus(
    py: Python<'_>,
    model: &Model,
    inputs: Vec<Bound<'_, PyAny>>,
    config: Option<FuzzConfig>,
    mode: &str,
    budgets: Option<Vec<usize>>,
) -> PyResult<CampaignReport> {
    let mode = match mode {
        "guided" => MutationMode::Guided,
        "random" => MutationMode::RandomSign,
        _ => {
            return Err(PyValueError::new_err(format!(
                "unknown mode {mode:?} (expected guided or random)"
            )))
        }
    };
    let inputs = images(&inputs, model.inner.input_shape())?;
    let cfg = config.map(|c| c.inner).unwrap_or_default();
    let inner = py.detach(|| {
        let fuzzer = Fuzzer::with_mode(&model.inner, cfg, mode)?;
        let mut tracker = fuzzer.new_tracker()?;
        fuzzer.fuzz_corpus_with(&mut tracker, &inputs, budgets.as_deref(), &mut ())
    });
    Ok(CampaignReport {
        inner: inner.map_err(err)?,
    })
}

/// Random-sign campaign with the per-input mutation counts of `guided`.
#[pyfunction]
fn paired_random_baseline(
    py: Python<'_>,
    model: &Model,
    inputs: Vec<Bound<'_, PyAny>>,
    guided: &CampaignReport,
) -> PyResult<CampaignReport> {
    let inputs = images(&inputs, model.inner.input_shape())?;
    let inner = py.detach(|| fuzzer::paired_random_baseline(&model.inner, &inputs, &guided.inner));
    Ok(CampaignReport {
        inner: inner.map_err(err)?,
    })
}

#[pyfunction]
#[pyo3(signature = (grads, mode = "sign", step_size = 0.01))]
fn process_gradient(grads: &Tensor, mode: &str, step_size: f64) -> PyResult<Tensor> {
    let mode: GradMode = mode.parse().map_err(PyValueError::new_err)?;
    Ok(Tensor {
        inner: fuzzer::process_gradient(&grads.inner, mode, step_size).map_err(err)?,
    })
}

#[pyfunction]
fn relative_distance(x_prime: &Tensor, x: &Tensor) -> PyResult<f64> {
    fuzzer::relative_distance(&x_prime.inner, &x.inner).map_err(err)
}

#[pyfunction]
fn export_pgm(x: &Tensor, path: PathBuf) -> PyResult<()> {
    io::export_image_pgm(&x.inner, &path).map_err(err)
}

#[pyfunction]
fn import_pgm(path: PathBuf) -> PyResult<Tensor> {
    Ok(Tensor {
        inner: io::import_image_pgm(&path).map_err(err)?,
    })
}

#[pyclass(module = "neurofuzz_py")]
pub struct DatasetSplit {
    inner: CoreSplit,
}

#[pymethods]
impl DatasetSplit {
    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn image(&self, i: usize) -> PyResult<Tensor> {
        if i >= self.inner.len() {
            return Err(PyValueError::new_err(format!("index {i} out of range")));
        }
        Ok(Tensor {
            inner: self.inner.image(i),
        })
    }

    fn label(&self, i: usize) -> PyResult<usize> {
        self.inner
            .labels()
            .get(i)
            .copied()
            .ok_or_else(|| PyValueError::new_err(format!("index {i} out of range")))
    }

    #[getter]
    fn labels(&self) -> Vec<usize> {
        self.inner.labels().to_vec()
    }

    fn subset(&self, indices: Vec<usize>) -> PyResult<DatasetSplit> {
        if let Some(&i) = indices.iter().find(|&&i| i >= self.inner.len()) {
            return Err(PyValueError::new_err(format!("index {i} out of range")));
        }
        Ok(DatasetSplit {
            inner: self.inner.subset(&indices).map_err(err)?,
        })
    }
}

/// Loads the "train" or "test" split from a directory of IDX files.
#[pyfunction]
fn load_mnist(dir: PathBuf, split: &str) -> PyResult<DatasetSplit> {
    let split = match split {
        "train" => Split::Train,
        "test" => Split::Test,
        _ => {
            return Err(PyValueError::new_err(format!(
                "unknown split {split:?} (expected train or test)"
            )))
        }
    };
    Ok(DatasetSplit {
        inner: io::load_mnist_dir(&dir, split).map_err(err)?,
    })
}

#[pyfunction]
#[allow(clippy::too_many_arguments)]
#[pyo3(signature = (arch, data, epochs = 10, learning_rate = 0.01, batch_size = 16, momentum = 0.9, seed = 0))]
fn train(
    py: Python<'_>,
    arch: &str,
    data: &DatasetSplit,
    epochs: usize,
    learning_rate: f64,
    batch_size: usize,
    momentum: f64,
    seed: u64,
) -> PyResult<Model> {
    let cfg = TrainConfig {
        epochs,
        batch_size,
        learning_rate,
        rng_seed: seed,
        optimizer: if momentum == 0.0 {
            Optimizer::Sgd
        } else {
            Optimizer::SgdMomentum(momentum)
        },
    };
    let arch = parse_arch(arch)?;
    let (inner, _) = py
        .detach(|| trainer::train(arch, &data.inner, &cfg, None))
        .map_err(err)?;
    Ok(Model { inner })
}

#[pyfunction]
fn evaluate(model: &Model, data: &DatasetSplit) -> PyResult<f64> {
    trainer::evaluate(&model.inner, &data.inner).map_err(err)
}

#[pymodule]
fn neurofuzz_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Tensor>()?;
    m.add_class::<Model>()?;
    m.add_class::<Prediction>()?;
    m.add_class::<CoverageTracker>()?;
    m.add_class::<FuzzConfig>()?;
    m.add_class::<AdversarialRecord>()?;
    m.add_class::<CampaignReport>()?;
    m.add_class::<DatasetSplit>()?;
    m.add_function(wrap_pyfunction!(fuzz_corpus, m)?)?;
    m.add_function(wrap_pyfunction!(paired_random_baseline, m)?)?;
    m.add_function(wrap_pyfunction!(process_gradient, m)?)?;
    m.add_function(wrap_pyfunction!(relative_distance, m)?)?;
    m.add_function(wrap_pyfunction!(export_pgm, m)?)?;
    m.add_function(wrap_pyfunction!(import_pgm, m)?)?;
    m.add_function(wrap_pyfunction!(load_mnist, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    Ok(())
}
