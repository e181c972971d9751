use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use datamask::dataset::{load_samples_csv, LabelColumn, LabeledDataset, MixtureSpec};
use datamask::harness::{self, BoundCheckConfig, DatasetSource, Method, SweepConfig};
use datamask::maskgen::{mask_dataset, MaskGenOptions};
use datamask::model::{accuracy, train, Mode, ModelParams, TrainOptions};
use datamask::noise::PrivacyBudget;
use datamask::perturb::input_perturbation_with;
use datamask::{rng, Error, Execution, Result};

#[derive(Parser)]
#[command(name = "datamask", version, about = "Privacy-masked data release for logistic regression")]
struct Cli {
    /// Run every job on the calling thread.
    #[arg(long, global = true)]
    sequential: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample a Gaussian-mixture dataset to CSV.
    Synth(SynthArgs),
    /// Train a regularized logistic-regression classifier.
    Train(TrainArgs),
    /// Release a masked version of a dataset.
    Mask(MaskArgs),
    /// Release an input-perturbed version of a dataset.
    Perturb(PerturbArgs),
    /// Accuracy of a saved classifier on a labeled CSV.
    Eval(EvalArgs),
    /// Accuracy-versus-privacy sweep over methods, budgets and sizes.
    Sweep(SweepArgs),
    /// Compare the excess objective of a private classifier with its bound.
    BoundCheck(BoundArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum ToySource {
    Toy,
    ToyBinary,
}

#[derive(Clone, Copy, ValueEnum, PartialEq)]
enum Normalize {
    /// Require rows to already have norm at most 1.
    None,
    /// Divide by the largest row norm.
    MaxNorm,
    /// Clip each row to norm 1.
    Clip,
}

#[derive(Args)]
struct DataArgs {
    /// Input CSV with a header row.
    #[arg(long)]
    data: PathBuf,
    /// Label column name or zero-based index.
    #[arg(long, default_value = "label")]
    label_column: LabelColumn,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, value_enum, default_value = "toy")]
    source: ToySource,
    /// JSON mixture spec; overrides --source.
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Total number of samples.
    #[arg(long, default_value_t = 100)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value_t = 0.5)]
    lambda: f64,
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,
    #[arg(long, value_enum, default_value = "none")]
    normalize: Normalize,
    /// Output model JSON.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct MaskArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    epsilon: f64,
    #[arg(long, default_value_t = 0.5)]
    lambda: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,
    /// Initial masked samples to complete (CSV, same layout as --data).
    #[arg(long)]
    seed_set: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "none")]
    normalize: Normalize,
    #[arg(long, default_value_t = 5)]
    restarts: usize,
    /// Keep synthesized samples within this norm.
    #[arg(long)]
    projection_radius: Option<f64>,
    /// Masked dataset CSV.
    #[arg(long)]
    out: PathBuf,
    /// Also write the noisy classifier as JSON.
    #[arg(long)]
    model_out: Option<PathBuf>,
    /// Per-sample diagnostics as JSON lines on stderr.
    #[arg(long)]
    verbose: bool,
}

#[derive(Args)]
struct PerturbArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    epsilon: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value = "none")]
    normalize: Normalize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    model: PathBuf,
    /// Write `{"accuracy": …}` here instead of only printing it.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    /// JSON file mirroring the sweep configuration; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// CSV data source (default: the toy mixture).
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    label_column: Option<LabelColumn>,
    #[arg(long, value_enum)]
    source: Option<ToySource>,
    /// Comma-separated privacy budgets.
    #[arg(long, value_delimiter = ',')]
    epsilon: Option<Vec<f64>>,
    /// Comma-separated training sizes.
    #[arg(long, value_delimiter = ',')]
    n: Option<Vec<usize>>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    reps: Option<usize>,
    /// Methods to run (repeatable or comma-separated).
    #[arg(long, value_delimiter = ',')]
    method: Option<Vec<String>>,
    #[arg(long)]
    validation_size: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    tol: Option<f64>,
    /// Output CSV.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BoundArgs {
    #[arg(long)]
    method: String,
    #[arg(long, default_value_t = 0.05)]
    delta: f64,
    #[arg(long, default_value_t = 1.0)]
    epsilon: f64,
    #[arg(long, default_value_t = 0.5)]
    lambda: f64,
    #[arg(long, default_value_t = 100)]
    n: usize,
    #[arg(long, default_value_t = 50)]
    reps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,
    /// CSV data source (default: the two-class toy mixture).
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, default_value = "label")]
    label_column: LabelColumn,
    /// Report JSON.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let exec = if cli.sequential { Execution::Sequential } else { Execution::Parallel };
    match run(cli.command, exec) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(command: Command, exec: Execution) -> Result<()> {
    match command {
        Command::Synth(a) => synth(a),
        Command::Train(a) => train_cmd(a),
        Command::Mask(a) => mask_cmd(a, exec),
        Command::Perturb(a) => perturb_cmd(a, exec),
        Command::Eval(a) => eval_cmd(a),
        Command::Sweep(a) => sweep_cmd(a, exec),
        Command::BoundCheck(a) => bound_cmd(a, exec),
    }
}

fn synth(a: SynthArgs) -> Result<()> {
    let spec = match &a.spec {
        Some(path) => serde_json::from_reader::<_, MixtureSpec>(File::open(path)?)?.resized(a.n),
        None => match a.source {
            ToySource::Toy => MixtureSpec::toy_sized(a.n),
            ToySource::ToyBinary => MixtureSpec::toy_binary(a.n),
        },
    };
    spec.generate(a.seed)?.save_csv(&a.out)
}

fn load_prepared(data: &DataArgs, normalize: Normalize) -> Result<LabeledDataset> {
    let ds = LabeledDataset::load_csv(&data.data, &data.label_column)?;
    match normalize {
        Normalize::None => ds.certify_norm_bounded(),
        Normalize::MaxNorm => {
            let (ds, scale) = ds.normalize_max_norm()?;
            eprintln!("normalized by max row norm {scale}");
            Ok(ds)
        }
        Normalize::Clip => ds.clip_norms(1.0),
    }
}

fn train_cmd(a: TrainArgs) -> Result<()> {
    let ds = match a.normalize {
        Normalize::None => LabeledDataset::load_csv(&a.data.data, &a.data.label_column)?,
        other => load_prepared(&a.data, other)?,
    };
    let opts = TrainOptions { lambda: a.lambda, tol: a.tol, ..TrainOptions::default() };
    let w = train(&ds, &opts)?;
    w.save_json(&a.out)
}

fn mask_cmd(a: MaskArgs, exec: Execution) -> Result<()> {
    let ds = load_prepared(&a.data, a.normalize)?;
    let seed_set = match &a.seed_set {
        Some(path) => load_samples_csv(path, &a.data.label_column, ds.dim(), ds.classes())?,
        None => Vec::new(),
    };
    if !seed_set.is_empty() {
        eprintln!("warning: the seed set is released verbatim; its privacy is not covered by the noise calibration");
    }
    if ds.classes() > 2 {
        eprintln!("warning: multiclass epsilon is heuristic and unproven");
    }
    let budget = PrivacyBudget::new(a.epsilon, a.lambda, ds.len())?;
    let opts = MaskGenOptions {
        restarts: a.restarts,
        projection_radius: a.projection_radius,
        training: TrainOptions { tol: a.tol, ..TrainOptions::default() },
        execution: exec,
        ..MaskGenOptions::default()
    };
    let release = mask_dataset(&ds, &budget, &seed_set, &opts, &mut rng::seeded(a.seed))?;
    if a.verbose {
        release.report.write_json_lines(std::io::stderr().lock())?;
    }
    release.dataset.save_csv(&a.out)?;
    if let Some(path) = &a.model_out {
        release.w_prime.save_json(path)?;
    }
    eprintln!(
        "masked {} samples, final mean residual {:e} ({} unconverged)",
        release.dataset.len(),
        release.report.final_mean_residual,
        release.report.unconverged
    );
    Ok(())
}

fn perturb_cmd(a: PerturbArgs, exec: Execution) -> Result<()> {
    let ds = load_prepared(&a.data, a.normalize)?;
    let out = input_perturbation_with(&ds, a.epsilon, &mut rng::seeded(a.seed), exec)?;
    out.save_csv(&a.out)
}

fn eval_cmd(a: EvalArgs) -> Result<()> {
    let model = ModelParams::load_json(&a.model)?;
    let ds = LabeledDataset::load_csv(&a.data.data, &a.data.label_column)?;
    let acc = accuracy(&model, &ds)?;
    println!("accuracy {acc}");
    if let Some(path) = &a.out {
        let mut w = BufWriter::new(File::create(path)?);
        serde_json::to_writer(&mut w, &serde_json::json!({ "accuracy": acc, "n": ds.len() }))?;
        w.write_all(b"\n")?;
        w.flush()?;
    }
    if model.mode() == Mode::Multiclass && model.classes() < ds.classes() {
        eprintln!("warning: data has labels the model cannot predict");
    }
    Ok(())
}

fn sweep_cmd(a: SweepArgs, exec: Execution) -> Result<()> {
    let mut cfg = match &a.config {
        Some(path) => SweepConfig::load_json(path)?,
        None => SweepConfig::default(),
    };
    if let Some(path) = a.data {
        cfg.source = DatasetSource::Csv { path, label_column: a.label_column.unwrap_or_default() };
    } else if let Some(src) = a.source {
        cfg.source = toy_source(src);
    }
    if let Some(eps) = a.epsilon {
        cfg.epsilons = eps;
    }
    if let Some(ns) = a.n {
        cfg.ns = ns;
    }
    if let Some(l) = a.lambda {
        cfg.lambda = l;
    }
    if let Some(r) = a.reps {
        cfg.repetitions = r;
    }
    if let Some(methods) = a.method {
        cfg.methods = methods.iter().map(|m| m.parse()).collect::<Result<_>>()?;
    }
    if a.validation_size.is_some() {
        cfg.validation_size = a.validation_size;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(t) = a.tol {
        cfg.mask.training.tol = t;
    }
    if a.out.is_some() {
        cfg.output = a.out;
    }
    cfg.execution = exec;
    let records = harness::sweep(&cfg)?;
    if cfg.output.is_none() {
        harness::write_sweep_csv(&records, std::io::stdout().lock())?;
    }
    Ok(())
}

fn toy_source(src: ToySource) -> DatasetSource {
    match src {
        ToySource::Toy => DatasetSource::Toy,
        ToySource::ToyBinary => DatasetSource::ToyBinary,
    }
}

fn bound_cmd(a: BoundArgs, exec: Execution) -> Result<()> {
    let method: Method = a.method.parse()?;
    let source = match a.data {
        Some(path) => DatasetSource::Csv { path, label_column: a.label_column },
        None => DatasetSource::ToyBinary,
    };
    let cfg = BoundCheckConfig {
        source,
        n: a.n,
        epsilon: a.epsilon,
        lambda: a.lambda,
        repetitions: a.reps,
        seed: a.seed,
        training: TrainOptions { tol: a.tol, ..TrainOptions::default() },
        execution: exec,
    };
    let report = harness::bound_check(method, &cfg, a.delta)?;
    println!(
        "{} bound {} violation rate {} over {} repetitions",
        report.method,
        report.bound,
        report.violation_rate,
        report.gaps.len()
    );
    if let Some(path) = &a.out {
        write_json(path, &report)?;
    }
    Ok(())
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush().map_err(Error::from)
}
