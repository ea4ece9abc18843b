//! Helpers shared by the integration tests.
#![allow(dead_code)]

use std::collections::BTreeSet;
use std::path::PathBuf;

use neurofuzz::io::{load_mnist_dir, DatasetSplit, Split};
use neurofuzz::{ActivationTrace, Layer, Model, NeuronId, Real};

/// `NEUROFUZZ_DATA_DIR` when set, otherwise the bundled subset.
pub fn data_dir() -> (PathBuf, bool) {
    match std::env::var_os("NEUROFUZZ_DATA_DIR") {
        Some(d) => (PathBuf::from(d), true),
        None => (
            PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist-10k"),
            false,
        ),
    }
}

pub fn load_splits() -> (DatasetSplit, DatasetSplit) {
    let (dir, _) = data_dir();
    let train = load_mnist_dir(&dir, Split::Train).expect("training split");
    let test = load_mnist_dir(&dir, Split::Test).expect("test split");
    (train, test)
}

/// Neurons whose layer-scaled output exceeds `threshold` for `trace`,
/// recomputed from the raw layer outputs without the coverage module.
pub fn oracle_activated<T: Real>(model: &Model<T>, trace: &ActivationTrace<T>, threshold: f64) -> BTreeSet<NeuronId> {
    let layers = model.layers();
    let mut out = BTreeSet::new();
    for (li, layer) in layers.iter().enumerate() {
        let units = match layer {
            Layer::Dense { bias, .. } | Layer::Conv2d { bias, .. } => bias.len(),
            _ => continue,
        };
        let post = if matches!(layers.get(li + 1), Some(Layer::Relu)) {
            li + 1
        } else {
            li
        };
        let data = trace.output(post).to_f64_vec();
        let mut values = vec![0.0f64; units];
        let positions = data.len() / units;
        for (i, v) in data.iter().enumerate() {
            values[i % units] += v;
        }
        for v in &mut values {
            *v /= positions as f64;
        }
        let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        for (u, v) in values.iter().enumerate() {
            let scaled = if hi > lo { (v - lo) / (hi - lo) } else { 0.0 };
            if scaled > threshold {
                out.insert(NeuronId::new(li, u));
            }
        }
    }
    out
}
