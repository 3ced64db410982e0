//! Training and evaluation loops, the multi-seed experiment runner, and
//! metrics/checkpoint I/O.
//!
//! Every run is deterministic for a fixed config and seed: initialization
//! comes from a ChaCha stream, per-epoch batch order from per-epoch streams
//! of the same seed, and all floating-point accumulation happens in a fixed
//! order. Metrics files for the same config+seed are byte-identical.

mod checkpoint;

pub use checkpoint::{load_checkpoint, save_checkpoint};

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

use crate::data::{bilinear_downsample, load_mnist_dir, plan_subsets, Dataset, Split, SubsetPlan};
use crate::error::{Error, Result};
use crate::grad::Engine;
use crate::nn::{
    build_model, count_parameters, cross_entropy_batch, Mode, Model, ModelConfig, ModelVariant,
    Optimizer, OptimizerConfig, OptimizerKind,
};

/// Everything a training run needs; echoed into the metrics header.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerConfig,
    pub engine: Engine,
    pub seed: u64,
    pub data_dir: PathBuf,
    pub subset: Option<SubsetPlan>,
    /// Resize inputs to this size before training (the quanv-family models
    /// default to 14×14).
    pub downsample: Option<(usize, usize)>,
    pub out_dir: Option<PathBuf>,
}

impl TrainConfig {
    pub fn new(variant: ModelVariant, data_dir: impl Into<PathBuf>) -> Self {
        let model = ModelConfig::standard(variant);
        TrainConfig {
            model,
            epochs: if variant == ModelVariant::HqnnParallel { 5 } else { 20 },
            batch_size: if variant == ModelVariant::HqnnParallel { 64 } else { 32 },
            optimizer: OptimizerConfig::adam(1e-3),
            engine: Engine::Adjoint,
            seed: 0,
            data_dir: data_dir.into(),
            subset: None,
            downsample: variant.wants_downsampled_input().then_some((14, 14)),
            out_dir: None,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        Ok(())
    }

    /// Key-value echo used in metrics headers and run logs.
    pub fn summary(&self) -> Vec<(String, String)> {
        let mut rows = vec![
            ("variant".into(), self.model.variant.name().into()),
            ("input_hw".into(), format!("{}x{}", self.model.input_hw.0, self.model.input_hw.1)),
            ("classes".into(), self.model.classes.to_string()),
            ("epochs".into(), self.epochs.to_string()),
            ("batch_size".into(), self.batch_size.to_string()),
            ("optimizer".into(), self.optimizer.kind.name().into()),
            ("learning_rate".into(), self.optimizer.learning_rate.to_string()),
            ("engine".into(), self.engine.name().into()),
            ("seed".into(), self.seed.to_string()),
            ("data_dir".into(), self.data_dir.display().to_string()),
        ];
        if self.model.variant == ModelVariant::HqnnParallel {
            rows.push((
                "conv_channels".into(),
                format!("{},{}", self.model.conv_channels.0, self.model.conv_channels.1),
            ));
            rows.push((
                "quantum".into(),
                format!(
                    "q={},i={},c={}",
                    self.model.quantum.qubits, self.model.quantum.depth, self.model.quantum.circuits
                ),
            ));
        } else {
            rows.push(("stride".into(), self.model.stride.to_string()));
        }
        if let Some(plan) = &self.subset {
            rows.push(("train_count".into(), plan.train_count.to_string()));
            rows.push(("test_count".into(), plan.test_count.to_string()));
            rows.push(("subset_seed".into(), plan.seed.to_string()));
        }
        if let Some((h, w)) = self.downsample {
            rows.push(("downsample".into(), format!("{h}x{w}")));
            rows.push((
                "bilinear".into(),
                "half-pixel-centers,clamped,no-antialias".into(),
            ));
        }
        rows
    }
}

/// One epoch's bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub test_loss: f64,
    pub test_acc: f64,
}

/// Per-run result: one record per epoch plus time and size.
#[derive(Debug, Clone)]
pub struct RunMetrics {
    pub epochs: Vec<EpochRecord>,
    pub wall_seconds: f64,
    pub parameter_count: usize,
}

impl RunMetrics {
    pub fn best_accuracy(&self) -> f64 {
        self.epochs.iter().map(|e| e.test_acc).fold(0.0, f64::max)
    }

    pub fn final_accuracy(&self) -> f64 {
        self.epochs.last().map(|e| e.test_acc).unwrap_or(0.0)
    }
}

/// Renders the metrics CSV (config echo as comments, then one row per
/// epoch). Contains nothing time-dependent, so identical runs produce
/// byte-identical files.
pub fn render_metrics_csv(config: &TrainConfig, metrics: &RunMetrics) -> String {
    let mut out = String::new();
    for (key, value) in config.summary() {
        let _ = writeln!(out, "# {key} {value}");
    }
    let _ = writeln!(out, "# parameters {}", metrics.parameter_count);
    let _ = writeln!(out, "# code_version {}", env!("CARGO_PKG_VERSION"));
    let _ = writeln!(out, "epoch,train_loss,test_loss,test_acc");
    for e in &metrics.epochs {
        let _ = writeln!(out, "{},{},{},{}", e.epoch, e.train_loss, e.test_loss, e.test_acc);
    }
    out
}

/// Mean cross-entropy and argmax accuracy over a dataset in eval mode.
pub fn evaluate(model: &mut Model, dataset: &Dataset) -> Result<(f64, f64)> {
    if dataset.is_empty() {
        return Err(Error::Config("cannot evaluate on an empty dataset".into()));
    }
    let classes = model.config.classes;
    let mut loss_sum = 0.0;
    let mut correct = 0usize;
    let indices: Vec<usize> = (0..dataset.len()).collect();
    for chunk in indices.chunks(256) {
        let (images, labels) = dataset.batch(chunk);
        let logits = model.forward(&images, Mode::Eval)?;
        for (row, &label) in logits.data().chunks(classes).zip(&labels) {
            let record = crate::nn::cross_entropy(row, label)?;
            loss_sum += record.loss;
            let pred = row
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).expect("finite logits"))
                .map(|(i, _)| i)
                .unwrap_or(0);
            if pred == label {
                correct += 1;
            }
        }
    }
    let n = dataset.len() as f64;
    Ok((loss_sum / n, correct as f64 / n))
}

/// Loads (and optionally downsamples / subsets) the train and test splits.
pub fn prepare_data(config: &TrainConfig) -> Result<(Dataset, Dataset)> {
    let mut train = load_mnist_dir(&config.data_dir, Split::Train)?;
    let mut test = load_mnist_dir(&config.data_dir, Split::Test)?;
    if let Some((h, w)) = config.downsample {
        train = bilinear_downsample(&train, h, w)?;
        test = bilinear_downsample(&test, h, w)?;
    }
    if let Some(plan) = &config.subset {
        let (tr, te) = plan_subsets(&train, &test, plan)?;
        train = tr;
        test = te;
    }
    Ok((train, test))
}

/// Output of [`run_training`].
pub struct TrainOutcome {
    pub metrics: RunMetrics,
    pub model: Model,
    /// Where the best-accuracy checkpoint was written, when an output
    /// directory was configured.
    pub checkpoint: Option<PathBuf>,
}

/// Trains a model from scratch. Deterministic for a fixed config; the
/// best-accuracy checkpoint and a metrics CSV are written into `out_dir`
/// when one is set. A non-finite loss aborts the run and leaves the last
/// good checkpoint in place.
pub fn run_training(config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    let (train, test) = prepare_data(config)?;
    run_training_on(config, &train, &test)
}

/// [`run_training`] against already-prepared datasets (the multi-seed runner
/// loads the data once and reuses it).
pub fn run_training_on(
    config: &TrainConfig,
    train: &Dataset,
    test: &Dataset,
) -> Result<TrainOutcome> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::Config("training split is empty".into()));
    }
    let started = Instant::now();
    let mut model = build_model(&config.model, config.seed, config.engine)?;
    let parameter_count = count_parameters(&model).total;
    let mut optimizer = Optimizer::new(config.optimizer.clone());

    if let Some(dir) = &config.out_dir {
        fs::create_dir_all(dir)?;
    }
    let checkpoint_path = config.out_dir.as_ref().map(|d| d.join("best.ckpt"));

    let has_batch_norm = model
        .layers
        .iter()
        .any(|l| matches!(l.layer, crate::nn::Layer::BatchNorm(_)));
    let mut records = Vec::with_capacity(config.epochs);
    let mut best_acc = f64::NEG_INFINITY;
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in 1..=config.epochs {
        // Per-epoch shuffle on its own stream of the master seed.
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(epoch as u64);
        order.shuffle(&mut rng);

        let mut loss_sum = 0.0;
        let mut seen = 0usize;
        for chunk in order.chunks(config.batch_size) {
            // Batch statistics need at least two samples.
            if has_batch_norm && chunk.len() < 2 {
                continue;
            }
            let (images, labels) = train.batch(chunk);
            model.zero_grads();
            let logits = model.forward(&images, Mode::Train)?;
            let (loss, grad) = cross_entropy_batch(&logits, &labels)?;
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!(
                    "training loss became {loss} in epoch {epoch}; last good checkpoint retained"
                )));
            }
            model.backward(&grad)?;
            optimizer.step(&mut model.bindings())?;
            loss_sum += loss * chunk.len() as f64;
            seen += chunk.len();
        }
        let train_loss = loss_sum / seen.max(1) as f64;
        let (test_loss, test_acc) = evaluate(&mut model, test)?;
        records.push(EpochRecord { epoch, train_loss, test_loss, test_acc });

        if test_acc > best_acc {
            best_acc = test_acc;
            if let Some(path) = &checkpoint_path {
                save_checkpoint(&model, config.seed, path)?;
            }
        }
    }

    let metrics = RunMetrics {
        epochs: records,
        wall_seconds: started.elapsed().as_secs_f64(),
        parameter_count,
    };
    if let Some(dir) = &config.out_dir {
        fs::write(dir.join("metrics.csv"), render_metrics_csv(config, &metrics))?;
    }
    Ok(TrainOutcome { metrics, model, checkpoint: checkpoint_path })
}

/// Accuracy aggregated across seeds: one row per (model, epoch).
#[derive(Debug, Clone)]
pub struct AggregateRow {
    pub epoch: usize,
    pub model: String,
    pub mean_acc: f64,
    pub std_acc: f64,
}

/// Result of a multi-seed comparison.
pub struct ExperimentOutcome {
    pub rows: Vec<AggregateRow>,
    pub runs: Vec<(String, u64, RunMetrics)>,
    /// True when every scheduled run finished.
    pub complete: bool,
}

pub fn render_aggregate_csv(rows: &[AggregateRow]) -> String {
    let mut out = String::from("epoch,model,mean_acc,std_acc\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{},{}", r.epoch, r.model, r.mean_acc, r.std_acc);
    }
    out
}

/// Mean and sample standard deviation (n−1).
fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Trains every variant once per seed (same data subset throughout, fresh
/// weights per seed) and aggregates per-epoch test accuracy. Individual run
/// metrics land in `out_dir/<model>-seed<k>/`, the aggregate table in
/// `out_dir/aggregate.csv`. A failed run flags the experiment incomplete
/// but keeps the finished results.
pub fn multi_seed_experiment(
    base: &TrainConfig,
    variants: &[ModelVariant],
    seeds: &[u64],
) -> Result<ExperimentOutcome> {
    if seeds.len() < 2 {
        return Err(Error::Config(format!(
            "multi-seed experiment needs at least 2 seeds, got {}",
            seeds.len()
        )));
    }
    let (train, test) = prepare_data(base)?;

    let mut runs = Vec::new();
    let mut rows = Vec::new();
    let mut complete = true;
    for &variant in variants {
        let mut per_seed: Vec<&RunMetrics> = Vec::new();
        let mut kept = Vec::new();
        for &seed in seeds {
            let mut config = base.clone();
            config.model = ModelConfig {
                variant,
                input_hw: base.model.input_hw,
                classes: base.model.classes,
                ..ModelConfig::standard(variant)
            };
            config.seed = seed;
            config.out_dir = base
                .out_dir
                .as_ref()
                .map(|d| d.join(format!("{}-seed{seed}", variant.name())));
            match run_training_on(&config, &train, &test) {
                Ok(outcome) => kept.push((variant.name().to_string(), seed, outcome.metrics)),
                Err(err) => {
                    eprintln!("run {} seed {seed} aborted: {err}", variant.name());
                    complete = false;
                }
            }
        }
        for run in &kept {
            per_seed.push(&run.2);
        }
        if per_seed.is_empty() {
            continue;
        }
        let epochs = per_seed.iter().map(|m| m.epochs.len()).min().unwrap_or(0);
        for epoch_idx in 0..epochs {
            let accs: Vec<f64> = per_seed.iter().map(|m| m.epochs[epoch_idx].test_acc).collect();
            let (mean, std) = mean_std(&accs);
            rows.push(AggregateRow {
                epoch: epoch_idx + 1,
                model: variant.name().to_string(),
                mean_acc: mean,
                std_acc: std,
            });
        }
        runs.extend(kept);
    }

    if let Some(dir) = &base.out_dir {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("aggregate.csv"), render_aggregate_csv(&rows))?;
    }
    Ok(ExperimentOutcome { rows, runs, complete })
}

/// Flat key-value config file (TOML syntax, flat keys only).
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    variant: String,
    data_dir: String,
    epochs: Option<usize>,
    batch_size: Option<usize>,
    optimizer: Option<String>,
    learning_rate: Option<f64>,
    engine: Option<String>,
    seed: Option<u64>,
    train_count: Option<usize>,
    test_count: Option<usize>,
    subset_seed: Option<u64>,
    downsample: Option<bool>,
    out_dir: Option<String>,
    classes: Option<usize>,
    qubits: Option<usize>,
    depth: Option<usize>,
    circuits: Option<usize>,
    conv1_channels: Option<usize>,
    conv2_channels: Option<usize>,
    stride: Option<usize>,
}

pub fn parse_engine(s: &str) -> Result<Engine> {
    match s {
        "adjoint" => Ok(Engine::Adjoint),
        "param-shift" => Ok(Engine::ParamShift),
        other => Err(Error::Config(format!(
            "unknown gradient engine '{other}' (use adjoint or param-shift)"
        ))),
    }
}

/// Reads a train config from a flat key-value file.
pub fn load_config(path: &Path) -> Result<TrainConfig> {
    let text = fs::read_to_string(path)?;
    let file: ConfigFile = toml::from_str(&text)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;

    let variant = ModelVariant::parse(&file.variant)?;
    let mut config = TrainConfig::new(variant, file.data_dir);
    if let Some(epochs) = file.epochs {
        config.epochs = epochs;
    }
    if let Some(batch) = file.batch_size {
        config.batch_size = batch;
    }
    let kind = match file.optimizer.as_deref() {
        Some(s) => OptimizerKind::parse(s)?,
        None => OptimizerKind::Adam,
    };
    let lr = file.learning_rate.unwrap_or(1e-3);
    config.optimizer = match kind {
        OptimizerKind::Adam => OptimizerConfig::adam(lr),
        OptimizerKind::Sgd => OptimizerConfig::sgd(lr),
    };
    if let Some(engine) = file.engine.as_deref() {
        config.engine = parse_engine(engine)?;
    }
    if let Some(seed) = file.seed {
        config.seed = seed;
    }
    match (file.train_count, file.test_count) {
        (Some(train_count), Some(test_count)) => {
            config.subset = Some(SubsetPlan {
                train_count,
                test_count,
                seed: file.subset_seed.unwrap_or(config.seed),
            });
        }
        (None, None) => {}
        _ => {
            return Err(Error::Config(
                "train_count and test_count must be set together".into(),
            ))
        }
    }
    if let Some(false) = file.downsample {
        config.downsample = None;
    } else if let Some(true) = file.downsample {
        config.downsample = Some((14, 14));
    }
    if file.downsample == Some(true) || variant.wants_downsampled_input() {
        config.model.input_hw = (14, 14);
    }
    if let Some(dir) = file.out_dir {
        config.out_dir = Some(PathBuf::from(dir));
    }
    if let Some(classes) = file.classes {
        config.model.classes = classes;
    }
    if let Some(q) = file.qubits {
        config.model.quantum.qubits = q;
    }
    if let Some(i) = file.depth {
        config.model.quantum.depth = i;
    }
    if let Some(c) = file.circuits {
        config.model.quantum.circuits = c;
    }
    if let Some(c1) = file.conv1_channels {
        config.model.conv_channels.0 = c1;
    }
    if let Some(c2) = file.conv2_channels {
        config.model.conv_channels.1 = c2;
    }
    if let Some(stride) = file.stride {
        config.model.stride = stride;
    }
    Ok(config)
}
