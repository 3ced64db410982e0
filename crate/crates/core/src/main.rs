use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

use hqnn::data::{bilinear_downsample, load_mnist_dir, make_subset, Split};
use hqnn::fourier::{
    correlation_determinant, export_violin_csv, render_violin_csv, sample_coefficient_distribution,
    AnalysisSpec,
};
use hqnn::grad::{
    adjoint_grad, finite_diff_grad, param_shift_grad, GradientRequest, Gradients, Wrt,
};
use hqnn::nn::{count_parameters, ModelVariant};
use hqnn::pqc::PqcCircuit;
use hqnn::train::{evaluate, load_checkpoint, load_config, multi_seed_experiment, run_training};

#[derive(Parser)]
#[command(name = "hqnn", version, about = "Hybrid quantum-classical neural networks on a statevector simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model as described by a config file.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated seeds; with more than one, runs the multi-seed
        /// comparison and aggregates accuracies.
        #[arg(long)]
        seeds: Option<String>,
        /// Comma-separated model variants for the multi-seed comparison
        /// (default: hqnn-quanv,cnn1,cnn4).
        #[arg(long)]
        models: Option<String>,
    },
    /// Evaluate a checkpoint on a dataset split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Directory holding the MNIST IDX files.
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        /// Evaluate only a deterministic subset of this size.
        #[arg(long)]
        count: Option<usize>,
        #[arg(long, default_value_t = 0)]
        subset_seed: u64,
    },
    /// Cross-check the gradient engines on random circuits; prints CSV.
    Gradcheck {
        #[arg(long, default_value_t = 5)]
        qubits: usize,
        #[arg(long, default_value_t = 3)]
        depth: usize,
        #[arg(long, default_value_t = 50)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Check the quanvolutional kernel circuit instead.
        #[arg(long)]
        quanv: bool,
        /// Engine pair: shift-adjoint, shift-fd, or adjoint-fd.
        #[arg(long, default_value = "shift-adjoint")]
        pair: String,
    },
    /// Sample Fourier coefficients of the quantum layer over random weights.
    Fourier {
        #[arg(long, default_value_t = 100)]
        samples: usize,
        /// Grid bandwidth d (the layer encodes each input once, so 1 is exact).
        #[arg(long, default_value_t = 1)]
        frequency: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 5)]
        qubits: usize,
        #[arg(long, default_value_t = 3)]
        depth: usize,
        /// Output CSV path; written to stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the parameter table of a checkpoint.
    Inspect {
        #[arg(long)]
        checkpoint: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let code = match err.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = err.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Train { config, seeds, models } => cmd_train(&config, seeds, models),
        Command::Eval { checkpoint, data, split, count, subset_seed } => {
            cmd_eval(&checkpoint, &data, &split, count, subset_seed)
        }
        Command::Gradcheck { qubits, depth, trials, seed, quanv, pair } => {
            cmd_gradcheck(qubits, depth, trials, seed, quanv, &pair)
        }
        Command::Fourier { samples, frequency, seed, qubits, depth, out } => {
            cmd_fourier(samples, frequency, seed, qubits, depth, out.as_deref())
        }
        Command::Inspect { checkpoint } => cmd_inspect(&checkpoint),
    }
}

fn cmd_train(
    config_path: &std::path::Path,
    seeds: Option<String>,
    models: Option<String>,
) -> anyhow::Result<()> {
    let config = load_config(config_path)
        .with_context(|| format!("loading {}", config_path.display()))?;

    let seed_list: Vec<u64> = match seeds {
        Some(list) => list
            .split(',')
            .map(|s| s.trim().parse::<u64>().context("seeds must be integers"))
            .collect::<anyhow::Result<_>>()?,
        None => vec![config.seed],
    };

    if seed_list.len() > 1 {
        let variants: Vec<ModelVariant> = match models {
            Some(list) => list
                .split(',')
                .map(|s| ModelVariant::parse(s.trim()).map_err(Into::into))
                .collect::<anyhow::Result<_>>()?,
            None => vec![ModelVariant::HqnnQuanv, ModelVariant::Cnn1, ModelVariant::Cnn4],
        };
        let outcome = multi_seed_experiment(&config, &variants, &seed_list)?;
        println!("epoch,model,mean_acc,std_acc");
        for row in &outcome.rows {
            println!("{},{},{},{}", row.epoch, row.model, row.mean_acc, row.std_acc);
        }
        if !outcome.complete {
            println!("# INCOMPLETE: some runs aborted, aggregate covers finished runs only");
        }
        for (model, seed, metrics) in &outcome.runs {
            println!(
                "# run {model} seed {seed}: final acc {:.4}, {:.1}s",
                metrics.final_accuracy(),
                metrics.wall_seconds
            );
        }
        return Ok(());
    }

    let outcome = run_training(&config)?;
    for record in &outcome.metrics.epochs {
        println!(
            "epoch {}: train loss {:.4}, test loss {:.4}, test acc {:.4}",
            record.epoch, record.train_loss, record.test_loss, record.test_acc
        );
    }
    println!(
        "trained {} parameters in {:.1}s, best test accuracy {:.4}",
        outcome.metrics.parameter_count,
        outcome.metrics.wall_seconds,
        outcome.metrics.best_accuracy()
    );
    if let Some(path) = &outcome.checkpoint {
        println!("best checkpoint: {}", path.display());
    }
    Ok(())
}

fn cmd_eval(
    checkpoint: &std::path::Path,
    data_dir: &std::path::Path,
    split: &str,
    count: Option<usize>,
    subset_seed: u64,
) -> anyhow::Result<()> {
    let split = match split {
        "train" => Split::Train,
        "test" => Split::Test,
        other => bail!("unknown split '{other}' (use train or test)"),
    };
    let mut model = load_checkpoint(checkpoint)?;
    let mut dataset = load_mnist_dir(data_dir, split)?;
    let want_hw = model.config.input_hw;
    if dataset.image_hw() != want_hw {
        dataset = bilinear_downsample(&dataset, want_hw.0, want_hw.1)?;
    }
    if let Some(count) = count {
        dataset = make_subset(&dataset, count, subset_seed)?;
    }
    let (loss, acc) = evaluate(&mut model, &dataset)?;
    println!(
        "{} ({} samples): loss {loss:.6}, accuracy {acc:.4}",
        split.name(),
        dataset.len()
    );
    Ok(())
}

fn max_pair_diff(a: &Gradients, b: &Gradients) -> f64 {
    let mut worst: f64 = 0.0;
    if let (Some(pa), Some(pb)) = (&a.params, &b.params) {
        worst = worst.max(pa.max_abs_diff(pb));
    }
    if let (Some(ia), Some(ib)) = (&a.inputs, &b.inputs) {
        worst = worst.max(ia.max_abs_diff(ib));
    }
    worst
}

fn cmd_gradcheck(
    qubits: usize,
    depth: usize,
    trials: usize,
    seed: u64,
    quanv: bool,
    pair: &str,
) -> anyhow::Result<()> {
    use rand::{Rng, SeedableRng};
    let circuit = if quanv {
        PqcCircuit::quanv_kernel()
    } else {
        PqcCircuit::strongly_entangling(qubits, depth)
    };
    println!("circuit-id,engine-pair,max-abs-diff");
    for trial in 0..trials {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(trial as u64);
        let x: Vec<f64> = (0..circuit.input_count())
            .map(|_| if quanv { rng.gen_range(0.0..1.0) } else { rng.gen_range(-2.0..2.0) })
            .collect();
        let theta: Vec<f64> = (0..circuit.param_count())
            .map(|_| rng.gen_range(0.0..std::f64::consts::TAU))
            .collect();
        let req = GradientRequest::jacobian(&circuit, &x, &theta, Wrt::Both);
        let diff = match pair {
            "shift-adjoint" => max_pair_diff(&param_shift_grad(&req)?, &adjoint_grad(&req)?),
            "shift-fd" => max_pair_diff(&param_shift_grad(&req)?, &finite_diff_grad(&req, 1e-5)?),
            "adjoint-fd" => max_pair_diff(&adjoint_grad(&req)?, &finite_diff_grad(&req, 1e-5)?),
            other => bail!("unknown engine pair '{other}'"),
        };
        let id = if quanv { format!("quanv-{trial}") } else { format!("sel{qubits}x{depth}-{trial}") };
        println!("{id},{pair},{diff:e}");
    }
    Ok(())
}

fn cmd_fourier(
    samples: usize,
    frequency: usize,
    seed: u64,
    qubits: usize,
    depth: usize,
    out: Option<&std::path::Path>,
) -> anyhow::Result<()> {
    let mut spec = AnalysisSpec::parallel_layer(qubits, depth);
    spec.d = frequency;
    let distribution = sample_coefficient_distribution(&spec, samples, seed)?;
    match out {
        Some(path) => {
            export_violin_csv(&distribution, path)?;
            eprintln!(
                "wrote {} rows to {}",
                samples * distribution.coefficient_count(),
                path.display()
            );
        }
        None => print!("{}", render_violin_csv(&distribution)?),
    }
    for flat in 0..distribution.coefficient_count() {
        let omega = distribution.spectra[0].omega(flat);
        let (sre, sim) = distribution.spread(flat);
        eprintln!("c{omega:?}: std(re) {sre:.4}, std(im) {sim:.4}");
    }
    eprintln!(
        "correlation-matrix determinant: {:e}",
        correlation_determinant(&distribution)
    );
    Ok(())
}

fn cmd_inspect(checkpoint: &std::path::Path) -> anyhow::Result<()> {
    let model = load_checkpoint(checkpoint)?;
    println!("variant: {}", model.config.variant.name());
    println!(
        "input: {}x{}, classes: {}",
        model.config.input_hw.0, model.config.input_hw.1, model.config.classes
    );
    let count = count_parameters(&model);
    for (name, params) in &count.rows {
        println!("{name} {params}");
    }
    println!("total {}", count.total);
    Ok(())
}
