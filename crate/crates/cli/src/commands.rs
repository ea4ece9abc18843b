use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use neurofuzz::fuzzer::{load_adversarial_set, CampaignReport};
use neurofuzz::io::{load_mnist_dir, load_model, save_model, Split};
use neurofuzz::trainer::{self, retrain_with_adversarial, TrainConfig};
use neurofuzz::{paired_random_baseline, DatasetSplit, FuzzConfig, Fuzzer, Model, Optimizer, Strategy, Tensor};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::{BaselineArg, CampaignArgs, CompareArgs, Failure, FuzzArgs, FuzzFlags, RetrainArgs, TrainArgs};

type Result<T> = std::result::Result<T, Failure>;

fn optimizer(momentum: f64) -> Optimizer {
    if momentum == 0.0 {
        Optimizer::Sgd
    } else {
        Optimizer::SgdMomentum(momentum)
    }
}

fn validated(cfg: TrainConfig) -> Result<TrainConfig> {
    cfg.validate().map_err(|e| Failure::usage(e.to_string()))?;
    Ok(cfg)
}

fn load_split(dir: &Path, split: Split) -> Result<DatasetSplit> {
    Ok(load_mnist_dir(dir, split)?)
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Failure::runtime(format!("writing {}: {e}", path.display())))
}

pub fn train(args: TrainArgs) -> Result<()> {
    let cfg = validated(TrainConfig {
        epochs: args.epochs,
        batch_size: args.batch,
        learning_rate: args.lr,
        rng_seed: args.seed,
        optimizer: optimizer(args.momentum),
    })?;
    let train_split = load_split(&args.data.data_dir, Split::Train)?;
    let test_split = load_split(&args.data.data_dir, Split::Test)?;
    let (model, log) = trainer::train(args.arch.into(), &train_split, &cfg, Some(&test_split))?;
    for e in &log.epochs {
        println!(
            "epoch {} loss={:.4} train_acc={:.4} test_acc={:.4}",
            e.epoch,
            e.loss,
            e.train_acc,
            e.test_acc.unwrap_or(f64::NAN)
        );
    }
    let acc = trainer::evaluate(&model, &test_split)?;
    save_model(&model, &args.out)?;
    if let Some(path) = &args.log {
        log.write_csv(path)?;
    }
    println!(
        "saved {} ({} parameters) test_accuracy={acc:.4}",
        args.out.display(),
        model.num_parameters()
    );
    Ok(())
}

/// Defaults, overlaid by `--config`, overlaid by explicit flags.
fn resolve_config(flags: &FuzzFlags) -> Result<FuzzConfig> {
    let mut cfg = match &flags.config {
        Some(path) => {
            let text =
                fs::read_to_string(path).map_err(|e| Failure::usage(format!("reading {}: {e}", path.display())))?;
            serde_json::from_str(&text).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))?
        }
        None => FuzzConfig::default(),
    };
    macro_rules! overlay {
        ($($field:ident),*) => {
            $(if let Some(v) = flags.$field.clone() {
                cfg.$field = v.into();
            })*
        };
    }
    overlay!(
        k,
        m,
        lambda,
        iter_times,
        activation_threshold,
        distance_max,
        coverage_gain_initial,
        coverage_gain_decay,
        coverage_gain_floor,
        grad_mode,
        step_size,
        max_seeds_per_input,
        recompute_grad_each_iter,
        label_source
    );
    if let Some(seed) = flags.seed {
        cfg.rng_seed = seed;
    }
    if let Some(s) = &flags.strategies {
        cfg.strategies = s
            .iter()
            .map(|&n| Strategy::try_from(n).map_err(Failure::usage))
            .collect::<Result<_>>()?;
    }
    if let Some(r) = &flags.pixel_range {
        cfg.pixel_range = [r[0], r[1]];
    }
    cfg.validate().map_err(|e| Failure::usage(e.to_string()))?;
    Ok(cfg)
}

struct Campaign {
    model: Model<f32>,
    config: FuzzConfig,
    indices: Vec<usize>,
    labels: Vec<usize>,
    inputs: Vec<Tensor<f32>>,
}

fn prepare(args: &CampaignArgs) -> Result<Campaign> {
    let config = resolve_config(&args.fuzz)?;
    if args.parallel == Some(0) {
        return Err(Failure::usage("--parallel needs at least one thread"));
    }
    let model = load_model(&args.model)?;
    if config.k >= model.num_classes() {
        return Err(Failure::usage(format!(
            "k = {} needs more than {} classes",
            config.k,
            model.num_classes()
        )));
    }
    let test = load_split(&args.data.data_dir, Split::Test)?;
    if args.num_inputs > test.len() {
        return Err(Failure::usage(format!(
            "--num-inputs {} exceeds the {} test images",
            args.num_inputs,
            test.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
    let indices = sample(&mut rng, test.len(), args.num_inputs).into_vec();
    Ok(Campaign {
        inputs: indices.iter().map(|&i| test.image(i)).collect(),
        labels: indices.iter().map(|&i| test.label(i)).collect(),
        indices,
        model,
        config,
    })
}

fn run(fuzzer: &Fuzzer<'_>, inputs: &[Tensor<f32>], parallel: Option<usize>) -> Result<CampaignReport> {
    Ok(match parallel {
        Some(threads) => {
            let mut tracker = fuzzer.new_tracker()?;
            fuzzer.fuzz_corpus_parallel(&mut tracker, inputs, None, threads)?
        }
        None => fuzzer.fuzz_corpus(inputs)?,
    })
}

/// Writes config.json and inputs.csv, the files needed to replay a campaign.
fn write_replay_files(dir: &Path, c: &Campaign) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Failure::runtime(format!("creating {}: {e}", dir.display())))?;
    let json = serde_json::to_string_pretty(&c.config).map_err(|e| Failure::runtime(e.to_string()))?;
    write_file(&dir.join("config.json"), &(json + "\n"))?;
    let mut csv = String::from("input_index,dataset_index,label\n");
    for (i, (&d, &l)) in c.indices.iter().zip(&c.labels).enumerate() {
        writeln!(csv, "{i},{d},{l}").expect("writing to a String");
    }
    write_file(&dir.join("inputs.csv"), &csv)
}

pub fn fuzz(args: FuzzArgs) -> Result<()> {
    let c = prepare(&args.campaign)?;
    let out = &args.campaign.out_dir;
    let fuzzer = Fuzzer::new(&c.model, c.config.clone())?;
    let report = run(&fuzzer, &c.inputs, args.campaign.parallel)?;
    write_replay_files(out, &c)?;
    report.write_dir(out)?;
    println!("guided: {}", report.summary_line());

    if args.baseline == BaselineArg::Random {
        let random = paired_random_baseline(&c.model, &c.inputs, &report)?;
        random.write_dir(&out.join("random"))?;
        println!("random: {}", random.summary_line());
        println!(
            "paired coverage: guided {:.2}% random {:.2}% over {} mutations",
            100.0 * report.final_coverage(),
            100.0 * random.final_coverage(),
            report.inputs.iter().map(|s| s.mutations).sum::<usize>()
        );
    }
    Ok(())
}

pub fn compare_strategies(args: CompareArgs) -> Result<()> {
    let c = prepare(&args.campaign)?;
    let out = &args.campaign.out_dir;
    let mut curves = Vec::new();
    let mut first: Option<CampaignReport> = None;
    for strategy in Strategy::ALL {
        let cfg = FuzzConfig {
            strategies: vec![strategy],
            ..c.config.clone()
        };
        let report = run(&Fuzzer::new(&c.model, cfg)?, &c.inputs, args.campaign.parallel)?;
        println!("s{strategy}: {}", report.summary_line());
        curves.push(report.coverage_curve());
        first.get_or_insert(report);
    }
    // the baseline spends the same per-input mutations as strategy 1
    let random = paired_random_baseline(&c.model, &c.inputs, first.as_ref().expect("four strategies"))?;
    println!("random: {}", random.summary_line());
    curves.push(random.coverage_curve());

    write_replay_files(out, &c)?;
    let mut csv = String::from("images_tested,s1,s2,s3,s4,random\n");
    for row in 0..c.inputs.len() {
        write!(csv, "{}", row + 1).expect("writing to a String");
        for curve in &curves {
            write!(csv, ",{:.6}", curve[row].1).expect("writing to a String");
        }
        csv.push('\n');
    }
    write_file(&out.join("coverage_by_strategy.csv"), &csv)
}

/// Dataset indices a campaign fuzzed, from its inputs.csv.
fn campaign_inputs(dir: &Path) -> Result<Vec<usize>> {
    let path = dir.join("inputs.csv");
    let Ok(text) = fs::read_to_string(&path) else {
        return Ok(Vec::new());
    };
    text.lines()
        .skip(1)
        .filter(|l| !l.is_empty())
        .map(|l| {
            l.split(',')
                .nth(1)
                .and_then(|f| f.parse().ok())
                .ok_or_else(|| Failure::runtime(format!("{}: malformed row {l:?}", path.display())))
        })
        .collect()
}

pub fn retrain(args: RetrainArgs) -> Result<()> {
    let cfg = validated(TrainConfig {
        epochs: args.epochs,
        batch_size: args.batch,
        learning_rate: args.lr,
        rng_seed: args.seed,
        optimizer: optimizer(args.momentum),
    })?;
    let set = load_adversarial_set(&args.campaign_dir)?;
    if set.is_empty() {
        return Err(Failure::runtime(format!(
            "campaign {} contains no adversarial images to retrain on",
            args.campaign_dir.display()
        )));
    }
    let adversarial: Vec<(Tensor<f32>, usize)> = set.into_iter().map(|(row, img)| (img, row.original_label)).collect();
    let model = load_model(&args.model)?;
    let train_split = load_split(&args.data.data_dir, Split::Train)?;
    let test = load_split(&args.data.data_dir, Split::Test)?;

    // images the campaign was derived from are left out of the held-out set
    let fuzzed = campaign_inputs(&args.campaign_dir)?;
    let keep: Vec<usize> = (0..test.len()).filter(|i| !fuzzed.contains(i)).collect();
    let held_out = test.subset(&keep)?;

    let outcome = retrain_with_adversarial(&model, &train_split, &adversarial, &held_out, &cfg)?;
    let out = args.out.unwrap_or_else(|| args.campaign_dir.join("retrained.json"));
    save_model(&outcome.model, &out)?;
    println!(
        "adversarial set ({} images): accuracy {:.4} -> {:.4}",
        adversarial.len(),
        outcome.adversarial_before,
        outcome.adversarial_after
    );
    println!(
        "held-out test ({} images): accuracy {:.4} -> {:.4} ({:+.2} pp)",
        held_out.len(),
        outcome.test_before,
        outcome.test_after,
        100.0 * (outcome.test_after - outcome.test_before)
    );
    println!("saved {}", out.display());
    Ok(())
}
