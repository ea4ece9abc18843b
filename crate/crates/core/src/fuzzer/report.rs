//! Campaign results and their on-disk layout:
//!
//! ```text
//! out/
//!   adversarial/adv_<input>_<seq>_<orig>to<adv>.pgm
//!   manifest.csv    one row per adversarial image
//!   coverage.csv    one row per fuzzed input, in processing order
//!   timing.csv      wall-clock time per adversarial image
//! ```
//!
//! Wall-clock times live in their own file so that `manifest.csv` is
//! byte-identical across runs with the same settings.

use std::fs;
use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{AdversarialRecord, FuzzConfig, InputOutcome, InputSummary, MutationMode};
use crate::error::{Error, Result};
use crate::io::{export_image_pgm, import_image_pgm};
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct CampaignReport {
    pub mode: MutationMode,
    pub config: FuzzConfig,
    pub total_neurons: usize,
    pub initial_covered: usize,
    pub final_covered: usize,
    /// Per-input summaries in processing (completion) order.
    pub inputs: Vec<InputSummary>,
    pub records: Vec<AdversarialRecord>,
    pub wall_time: Duration,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub input_index: usize,
    pub original_label: usize,
    pub adversarial_label: usize,
    pub distance: f64,
    pub seed_generation: usize,
    pub iteration: usize,
    pub seq: usize,
    pub absolute_distance: f64,
    pub file: String,
}

#[derive(Serialize)]
struct CoverageRow {
    images_tested: usize,
    input_index: usize,
    original_label: usize,
    seeds_processed: usize,
    seeds_kept: usize,
    mutations: usize,
    adversarial: usize,
    covered: usize,
    total_neurons: usize,
    coverage: f64,
}

#[derive(Serialize)]
struct TimingRow {
    input_index: usize,
    seq: usize,
    wall_ms: f64,
}

fn rate(covered: usize, total: usize) -> f64 {
    if total == 0 {
        0.0
    } else {
        covered as f64 / total as f64
    }
}

fn mean(values: impl ExactSizeIterator<Item = f64>) -> Option<f64> {
    let n = values.len();
    (n > 0).then(|| values.sum::<f64>() / n as f64)
}

impl CampaignReport {
    pub(super) fn new(mode: MutationMode, config: FuzzConfig, total_neurons: usize, initial_covered: usize) -> Self {
        CampaignReport {
            mode,
            config,
            total_neurons,
            initial_covered,
            final_covered: initial_covered,
            inputs: Vec::new(),
            records: Vec::new(),
            wall_time: Duration::ZERO,
        }
    }

    pub(super) fn push(&mut self, outcome: InputOutcome) {
        self.final_covered = outcome.summary.covered_after;
        self.inputs.push(outcome.summary);
        self.records.extend(outcome.records);
    }

    pub(super) fn sort_records(&mut self) {
        self.records.sort_by_key(|r| (r.input_index, r.seq));
    }

    pub(super) fn finish(&mut self, final_covered: usize, wall_time: Duration) {
        self.final_covered = final_covered;
        self.wall_time = wall_time;
    }

    pub fn num_adversarial(&self) -> usize {
        self.records.len()
    }

    pub fn initial_coverage(&self) -> f64 {
        rate(self.initial_covered, self.total_neurons)
    }

    pub fn final_coverage(&self) -> f64 {
        rate(self.final_covered, self.total_neurons)
    }

    /// `(images tested, coverage rate)` after each input.
    pub fn coverage_curve(&self) -> Vec<(usize, f64)> {
        self.inputs
            .iter()
            .enumerate()
            .map(|(i, s)| (i + 1, rate(s.covered_after, self.total_neurons)))
            .collect()
    }

    pub fn mean_distance(&self) -> Option<f64> {
        mean(self.records.iter().map(|r| r.distance))
    }

    pub fn mean_absolute_distance(&self) -> Option<f64> {
        mean(self.records.iter().map(|r| r.absolute_distance))
    }

    /// Campaign wall time divided by the number of adversarial inputs.
    pub fn mean_ms_per_adversarial(&self) -> Option<f64> {
        let n = self.records.len();
        (n > 0).then(|| self.wall_time.as_secs_f64() * 1e3 / n as f64)
    }

    /// Mutations spent on each input, indexed by input.
    pub fn mutation_budgets(&self, num_inputs: usize) -> Result<Vec<usize>> {
        let mut budgets = vec![None; num_inputs];
        for s in &self.inputs {
            let slot = budgets.get_mut(s.input_index).ok_or_else(|| {
                Error::contract(format!(
                    "report covers input {} but only {num_inputs} were given",
                    s.input_index
                ))
            })?;
            *slot = Some(s.mutations);
        }
        budgets
            .into_iter()
            .enumerate()
            .map(|(i, b)| b.ok_or_else(|| Error::contract(format!("report has no entry for input {i}"))))
            .collect()
    }

    /// `adversarial=N coverage=P% mean_distance=D mean_abs_distance=A ms_per_adversarial=T`
    pub fn summary_line(&self) -> String {
        let opt = |v: Option<f64>, prec: usize| v.map_or("n/a".to_string(), |v| format!("{v:.prec$}"));
        format!(
            "adversarial={} coverage={:.2}% mean_distance={} mean_abs_distance={} ms_per_adversarial={}",
            self.num_adversarial(),
            self.final_coverage() * 100.0,
            opt(self.mean_distance(), 4),
            opt(self.mean_absolute_distance(), 4),
            opt(self.mean_ms_per_adversarial(), 1),
        )
    }

    pub fn manifest_rows(&self) -> Vec<ManifestRow> {
        self.records
            .iter()
            .map(|r| ManifestRow {
                input_index: r.input_index,
                original_label: r.original_label,
                adversarial_label: r.adversarial_label,
                distance: r.distance,
                seed_generation: r.seed_generation,
                iteration: r.iteration,
                seq: r.seq,
                absolute_distance: r.absolute_distance,
                file: format!(
                    "adversarial/adv_{}_{}_{}to{}.pgm",
                    r.input_index, r.seq, r.original_label, r.adversarial_label
                ),
            })
            .collect()
    }

    /// Writes images, manifest, coverage curve and timings into `dir`.
    /// Stale `adv_*.pgm` files from an earlier run are removed first.
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        let adv_dir = dir.join("adversarial");
        fs::create_dir_all(&adv_dir).map_err(|e| Error::io(format!("creating {}", adv_dir.display()), e))?;
        let listing = fs::read_dir(&adv_dir).map_err(|e| Error::io(format!("listing {}", adv_dir.display()), e))?;
        for entry in listing {
            let path = entry.map_err(|e| Error::io("listing adversarial/", e))?.path();
            let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("");
            if name.starts_with("adv_") && name.ends_with(".pgm") {
                fs::remove_file(&path).map_err(|e| Error::io(format!("removing {}", path.display()), e))?;
            }
        }

        let rows = self.manifest_rows();
        let mut manifest = csv::Writer::from_path(dir.join("manifest.csv"))?;
        let mut timing = csv::Writer::from_path(dir.join("timing.csv"))?;
        for (row, record) in rows.iter().zip(&self.records) {
            export_image_pgm(&record.mutated, &dir.join(&row.file))?;
            manifest.serialize(row)?;
            timing.serialize(TimingRow {
                input_index: record.input_index,
                seq: record.seq,
                wall_ms: record.elapsed.as_secs_f64() * 1e3,
            })?;
        }
        if rows.is_empty() {
            manifest.write_record(MANIFEST_HEADER)?;
            timing.write_record(["input_index", "seq", "wall_ms"])?;
        }
        manifest.flush().map_err(|e| Error::io("writing manifest.csv", e))?;
        timing.flush().map_err(|e| Error::io("writing timing.csv", e))?;

        let mut coverage = csv::Writer::from_path(dir.join("coverage.csv"))?;
        for (i, s) in self.inputs.iter().enumerate() {
            coverage.serialize(CoverageRow {
                images_tested: i + 1,
                input_index: s.input_index,
                original_label: s.original_label,
                seeds_processed: s.seeds_processed,
                seeds_kept: s.seeds_kept,
                mutations: s.mutations,
                adversarial: s.adversarial,
                covered: s.covered_after,
                total_neurons: self.total_neurons,
                coverage: rate(s.covered_after, self.total_neurons),
            })?;
        }
        if self.inputs.is_empty() {
            coverage.write_record(COVERAGE_HEADER)?;
        }
        coverage.flush().map_err(|e| Error::io("writing coverage.csv", e))?;
        Ok(())
    }
}

const MANIFEST_HEADER: [&str; 9] = [
    "input_index",
    "original_label",
    "adversarial_label",
    "distance",
    "seed_generation",
    "iteration",
    "seq",
    "absolute_distance",
    "file",
];

const COVERAGE_HEADER: [&str; 10] = [
    "images_tested",
    "input_index",
    "original_label",
    "seeds_processed",
    "seeds_kept",
    "mutations",
    "adversarial",
    "covered",
    "total_neurons",
    "coverage",
];

pub fn read_manifest(dir: &Path) -> Result<Vec<ManifestRow>> {
    let path = dir.join("manifest.csv");
    if !path.exists() {
        return Err(Error::io(
            format!("reading {}", path.display()),
            std::io::Error::new(std::io::ErrorKind::NotFound, "no manifest.csv in campaign directory"),
        ));
    }
    let mut reader = csv::Reader::from_path(&path)?;
    reader.deserialize().map(|row| row.map_err(Error::from)).collect()
}

/// Loads every adversarial image of a campaign directory together with its
/// manifest row.
pub fn load_adversarial_set(dir: &Path) -> Result<Vec<(ManifestRow, Tensor<f32>)>> {
    read_manifest(dir)?
        .into_iter()
        .map(|row| {
            let image = import_image_pgm(&dir.join(&row.file))?;
            Ok((row, image))
        })
        .collect()
}
