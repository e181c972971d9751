//! Privacy/utility experiments.
//!
//! A sweep runs every `(method, ε, N, repetition)` cell as an independent job.
//! Each cell derives its randomness from the master seed and its own key:
//! the training set from `(N, repetition)`, the mechanism's noise from
//! `(method, ε, N, repetition)`. Records therefore do not depend on grid
//! order, method order or execution strategy, and every method sees the same
//! training sets.

use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataset::{LabelColumn, LabeledDataset, MixtureSpec};
use crate::error::{invalid, Error, Result};
use crate::exec::{map_indexed, Execution};
use crate::maskgen::{mask_dataset, MaskGenOptions};
use crate::model::{accuracy, objective, train, TrainOptions};
use crate::noise::{output_perturb, PrivacyBudget};
use crate::perturb::input_perturbation;
use crate::rng::{self, StreamRng};

const TAG_DATA: u64 = 1;
const TAG_VALIDATION: u64 = 2;
const TAG_METHOD: u64 = 3;
const TAG_BOUND: u64 = 4;

/// Privacy budgets swept by default, log-spaced from 0.1 to 50.
pub const DEFAULT_EPSILONS: [f64; 9] = [0.1, 0.2, 0.5, 1.0, 2.0, 5.0, 10.0, 20.0, 50.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Masked data generation, evaluated by retraining on the masked data.
    Mdg,
    /// Noisy copies of every sample, evaluated by retraining on them.
    InputPerturb,
    /// The noisy classifier itself.
    OutputPerturb,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Mdg, Method::InputPerturb, Method::OutputPerturb];

    pub fn name(self) -> &'static str {
        match self {
            Method::Mdg => "mdg",
            Method::InputPerturb => "input_perturb",
            Method::OutputPerturb => "output_perturb",
        }
    }

    fn tag(self) -> u64 {
        match self {
            Method::Mdg => 1,
            Method::InputPerturb => 2,
            Method::OutputPerturb => 3,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mdg" => Ok(Method::Mdg),
            "input_perturb" => Ok(Method::InputPerturb),
            "output_perturb" => Ok(Method::OutputPerturb),
            other => Err(Error::UnknownMethod(other.to_string())),
        }
    }
}

/// Where training sets come from.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetSource {
    /// Three-class 2-D toy mixture.
    #[default]
    Toy,
    /// Two-class restriction of the toy mixture.
    ToyBinary,
    /// Arbitrary mixture; counts are rescaled to each requested N.
    Mixture(MixtureSpec),
    /// A CSV file; each repetition subsamples N rows from the non-validation
    /// part.
    Csv {
        path: PathBuf,
        #[serde(default)]
        label_column: LabelColumn,
    },
}

/// Resolved data source with a fixed validation set.
pub struct Workbench {
    pool: Pool,
    validation: Option<LabeledDataset>,
    seed: u64,
}

enum Pool {
    Mixture(MixtureSpec),
    Rows(LabeledDataset),
}

/// Validation samples drawn from a mixture when no size is configured.
pub const DEFAULT_MIXTURE_VALIDATION: usize = 1000;
/// Share of CSV rows held out for validation when no size is configured.
pub const DEFAULT_CSV_VALIDATION_FRACTION: f64 = 0.3;

impl Workbench {
    /// `validation`: `None` skips the validation set, `Some(None)` uses the
    /// default size, `Some(Some(k))` holds out `k` samples.
    pub fn new(source: &DatasetSource, validation: Option<Option<usize>>, seed: u64) -> Result<Self> {
        let spec = match source {
            DatasetSource::Toy => Some(MixtureSpec::toy()),
            DatasetSource::ToyBinary => Some(MixtureSpec::toy_binary(100)),
            DatasetSource::Mixture(spec) => {
                spec.validate()?;
                Some(spec.clone())
            }
            DatasetSource::Csv { .. } => None,
        };
        if let Some(spec) = spec {
            let validation = match validation {
                None => None,
                Some(size) => {
                    let size = size.unwrap_or(DEFAULT_MIXTURE_VALIDATION);
                    if size < spec.components.len() {
                        return Err(invalid("validation size must cover every class"));
                    }
                    Some(spec.resized(size).generate_with(&mut rng::stream(seed, &[TAG_VALIDATION]))?)
                }
            };
            return Ok(Self { pool: Pool::Mixture(spec), validation, seed });
        }

        let DatasetSource::Csv { path, label_column } = source else { unreachable!() };
        let all = LabeledDataset::load_csv(path, label_column)?;
        let (pool, validation) = match validation {
            None => (all, None),
            Some(size) => {
                let total = all.len();
                let size = size.unwrap_or(((total as f64 * DEFAULT_CSV_VALIDATION_FRACTION).floor() as usize).max(1));
                if size >= total {
                    return Err(invalid(format!("validation size {size} leaves no training rows out of {total}")));
                }
                let shuffled = all.subsample(total, &mut rng::stream(seed, &[TAG_VALIDATION]))?;
                let mut rows = shuffled.into_samples();
                let pool_rows = rows.split_off(size);
                let classes = all.classes();
                (LabeledDataset::new(pool_rows, classes)?, Some(LabeledDataset::new(rows, classes)?))
            }
        };
        Ok(Self { pool: Pool::Rows(pool), validation, seed })
    }

    pub fn validation(&self) -> Option<&LabeledDataset> {
        self.validation.as_ref()
    }

    pub fn dim(&self) -> usize {
        match &self.pool {
            Pool::Mixture(spec) => spec.dim(),
            Pool::Rows(ds) => ds.dim(),
        }
    }

    /// Raw (unnormalized) training set of size `n` for repetition `rep`.
    pub fn raw_training_set(&self, n: usize, rep: usize) -> Result<LabeledDataset> {
        let mut r = rng::stream(self.seed, &[TAG_DATA, n as u64, rep as u64]);
        match &self.pool {
            Pool::Mixture(spec) => spec.resized(n).generate_with(&mut r),
            Pool::Rows(ds) => ds.subsample(n, &mut r),
        }
    }

    /// Training set normalized to unit max norm, plus the scale used.
    pub fn training_set(&self, n: usize, rep: usize) -> Result<(LabeledDataset, f64)> {
        self.raw_training_set(n, rep)?.normalize_max_norm()
    }
}

/// Settings shared by every method run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunOptions {
    pub lambda: f64,
    pub mask: MaskGenOptions,
}

impl RunOptions {
    pub fn new(lambda: f64) -> Self {
        Self { lambda, mask: MaskGenOptions::default() }
    }

    fn training(&self) -> TrainOptions {
        TrainOptions { lambda: self.lambda, ..self.mask.training }
    }
}

/// Validation accuracy of one privatized release.
pub fn run_method(
    method: Method,
    train_ds: &LabeledDataset,
    val_ds: &LabeledDataset,
    epsilon: f64,
    opts: &RunOptions,
    rng: &mut StreamRng,
) -> Result<f64> {
    if !train_ds.norm_bounded() {
        return Err(Error::NotNormBounded { max_norm: train_ds.max_norm() });
    }
    let budget = PrivacyBudget::new(epsilon, opts.lambda, train_ds.len())?;
    let training = opts.training();
    let classifier = match method {
        Method::Mdg => {
            let release = mask_dataset(train_ds, &budget, &[], &opts.mask, rng)?;
            train(&release.dataset, &training)?
        }
        Method::InputPerturb => {
            let noisy = input_perturbation(train_ds, epsilon, rng)?;
            train(&noisy, &training)?
        }
        Method::OutputPerturb => {
            let w = train(train_ds, &training)?;
            output_perturb(&w, &budget, rng)
        }
    };
    accuracy(&classifier, val_ds)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepConfig {
    pub source: DatasetSource,
    pub ns: Vec<usize>,
    pub epsilons: Vec<f64>,
    pub lambda: f64,
    pub repetitions: usize,
    pub methods: Vec<Method>,
    /// Mixture sources: validation samples drawn (default 1000). CSV
    /// sources: rows held out (default 30%).
    pub validation_size: Option<usize>,
    pub seed: u64,
    pub output: Option<PathBuf>,
    pub mask: MaskGenOptions,
    #[serde(skip)]
    pub execution: Execution,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            source: DatasetSource::Toy,
            ns: vec![100, 200],
            epsilons: DEFAULT_EPSILONS.to_vec(),
            lambda: 0.5,
            repetitions: 50,
            methods: Method::ALL.to_vec(),
            validation_size: None,
            seed: 0,
            output: None,
            mask: MaskGenOptions::default(),
            execution: Execution::default(),
        }
    }
}

impl SweepConfig {
    pub fn load_json(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_reader(std::io::BufReader::new(File::open(path)?))?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.ns.is_empty() || self.epsilons.is_empty() || self.methods.is_empty() {
            return Err(invalid("sweep grids (ns, epsilons, methods) must be nonempty"));
        }
        if self.ns.contains(&0) {
            return Err(invalid("training sizes must be positive"));
        }
        if let Some(e) = self.epsilons.iter().find(|e| !(**e > 0.0)) {
            return Err(invalid(format!("epsilon must be positive, got {e}")));
        }
        if self.repetitions == 0 {
            return Err(invalid("repetitions must be at least 1"));
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(invalid("lambda must be positive"));
        }
        self.mask.validate()
    }

    fn run_options(&self) -> RunOptions {
        RunOptions { lambda: self.lambda, mask: MaskGenOptions { execution: self.execution, ..self.mask } }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub method: Method,
    pub epsilon: f64,
    pub n: usize,
    pub mean_accuracy: f64,
    /// Sample standard deviation across repetitions (0 for one repetition).
    pub std_accuracy: f64,
    pub reps: usize,
}

/// Runs the full grid; one record per `(method, ε, N)` in config order.
/// Writes the CSV to `config.output` when set.
pub fn sweep(config: &SweepConfig) -> Result<Vec<SweepRecord>> {
    config.validate()?;
    let bench = Workbench::new(&config.source, Some(config.validation_size), config.seed)?;
    let validation = bench.validation().expect("validation requested");
    let opts = config.run_options();

    let mut groups = Vec::new();
    for &method in &config.methods {
        for &epsilon in &config.epsilons {
            for &n in &config.ns {
                groups.push((method, epsilon, n));
            }
        }
    }
    let reps = config.repetitions;
    let accuracies = map_indexed(groups.len() * reps, config.execution, |cell| {
        let (method, epsilon, n) = groups[cell / reps];
        let rep = cell % reps;
        let (train_ds, scale) = bench.training_set(n, rep)?;
        let val = validation.scaled(scale);
        // Methods share the stream of their (ε, N, rep) cell, so mdg and
        // output_perturb draw the same w'.
        let mut r = rng::stream(config.seed, &[TAG_METHOD, epsilon.to_bits(), n as u64, rep as u64]);
        run_method(method, &train_ds, &val, epsilon, &opts, &mut r)
    });

    let mut records = Vec::with_capacity(groups.len());
    for (g, &(method, epsilon, n)) in groups.iter().enumerate() {
        let accs = accuracies[g * reps..(g + 1) * reps]
            .iter()
            .map(|r| r.as_ref().copied().map_err(|e| invalid(format!("{method} ε={epsilon} N={n}: {e}"))))
            .collect::<Result<Vec<f64>>>()?;
        let (mean, std) = mean_std(&accs);
        records.push(SweepRecord { method, epsilon, n, mean_accuracy: mean, std_accuracy: std, reps });
    }
    if let Some(path) = &config.output {
        write_sweep_csv(&records, BufWriter::new(File::create(path)?))?;
    }
    Ok(records)
}

pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

pub fn write_sweep_csv<W: Write>(records: &[SweepRecord], out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    w.write_record(["method", "epsilon", "n", "mean_accuracy", "std_accuracy", "reps"])?;
    for r in records {
        w.write_record([
            r.method.name().to_string(),
            r.epsilon.to_string(),
            r.n.to_string(),
            r.mean_accuracy.to_string(),
            r.std_accuracy.to_string(),
            r.reps.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// High-probability excess-risk bound for the released classifier:
/// `½ (2 d ln(d/δ) / (λ N ε))² (λ + 1)`.
pub fn output_perturbation_bound(d: usize, delta: f64, lambda: f64, n: usize, epsilon: f64) -> f64 {
    let d = d as f64;
    let r = 2.0 * d * (d / delta).ln() / (lambda * n as f64 * epsilon);
    0.5 * r * r * (lambda + 1.0)
}

/// Input-perturbation counterpart of [`output_perturbation_bound`]; the
/// training size does not appear.
pub fn input_perturbation_bound(d: usize, delta: f64, lambda: f64, epsilon: f64) -> f64 {
    output_perturbation_bound(d, delta, lambda, 1, epsilon)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BoundCheckConfig {
    pub source: DatasetSource,
    pub n: usize,
    pub epsilon: f64,
    pub lambda: f64,
    pub repetitions: usize,
    pub seed: u64,
    pub training: TrainOptions,
    #[serde(skip)]
    pub execution: Execution,
}

impl Default for BoundCheckConfig {
    fn default() -> Self {
        Self {
            source: DatasetSource::ToyBinary,
            n: 100,
            epsilon: 1.0,
            lambda: 0.5,
            repetitions: 200,
            seed: 0,
            training: TrainOptions::default(),
            execution: Execution::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub method: Method,
    pub delta: f64,
    /// Noise dimension used in the bound (d, or d·C for multiclass output
    /// perturbation).
    pub dimension: usize,
    pub bound: f64,
    /// `J(w') - J(w)` on the original training set, one per repetition.
    pub gaps: Vec<f64>,
    pub violation_rate: f64,
}

/// Measures the excess regularized objective of a privatized classifier
/// against the analytic high-probability bound.
pub fn bound_check(method: Method, config: &BoundCheckConfig, delta: f64) -> Result<BoundReport> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(invalid(format!("delta must lie in (0,1), got {delta}")));
    }
    if method == Method::Mdg {
        return Err(invalid("bound checks cover output_perturb and input_perturb only"));
    }
    if config.repetitions == 0 {
        return Err(invalid("repetitions must be at least 1"));
    }
    let budget = PrivacyBudget::new(config.epsilon, config.lambda, config.n)?;
    let training = TrainOptions { lambda: config.lambda, ..config.training };
    training.validate()?;
    let bench = Workbench::new(&config.source, None, config.seed)?;

    let gaps = map_indexed(config.repetitions, config.execution, |rep| -> Result<(f64, usize)> {
        let (ds, _) = bench.training_set(config.n, rep)?;
        let w = train(&ds, &training)?;
        let mut r = rng::stream(config.seed, &[TAG_BOUND, method.tag(), rep as u64]);
        let (w_prime, dim) = match method {
            Method::OutputPerturb => (output_perturb(&w, &budget, &mut r), w.len()),
            Method::InputPerturb => (train(&input_perturbation(&ds, config.epsilon, &mut r)?, &training)?, ds.dim()),
            Method::Mdg => unreachable!(),
        };
        Ok((objective(&w_prime, &ds, config.lambda)? - objective(&w, &ds, config.lambda)?, dim))
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;

    let dimension = gaps[0].1;
    let bound = match method {
        Method::OutputPerturb => output_perturbation_bound(dimension, delta, config.lambda, config.n, config.epsilon),
        _ => input_perturbation_bound(dimension, delta, config.lambda, config.epsilon),
    };
    let gaps: Vec<f64> = gaps.into_iter().map(|(g, _)| g).collect();
    let violations = gaps.iter().filter(|&&g| g > bound).count();
    Ok(BoundReport { method, delta, dimension, bound, violation_rate: violations as f64 / gaps.len() as f64, gaps })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
        }
        assert!(matches!("ridge".parse::<Method>(), Err(Error::UnknownMethod(_))));
    }

    #[test]
    fn bound_closed_form() {
        let b = output_perturbation_bound(2, 0.05, 0.5, 100, 1.0);
        let expected = 0.5 * (2.0 * 2.0 * 40f64.ln() / 50.0).powi(2) * 1.5;
        assert!((b - expected).abs() < 1e-15);
        assert!((b - 0.0653).abs() < 5e-5, "{b}");
        let ratio = input_perturbation_bound(2, 0.05, 0.5, 1.0) / b;
        assert!((ratio - 1e4).abs() < 1e-8);
    }

    #[test]
    fn std_of_single_rep_is_zero() {
        assert_eq!(mean_std(&[0.7]), (0.7, 0.0));
        let (m, s) = mean_std(&[1.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn sweep_csv_header() {
        let rec =
            SweepRecord { method: Method::Mdg, epsilon: 0.5, n: 100, mean_accuracy: 0.75, std_accuracy: 0.0, reps: 1 };
        let mut buf = Vec::new();
        write_sweep_csv(&[rec], &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "method,epsilon,n,mean_accuracy,std_accuracy,reps\nmdg,0.5,100,0.75,0,1\n"
        );
    }

    #[test]
    fn config_json_defaults() {
        let cfg: SweepConfig = serde_json::from_str(r#"{"ns":[50],"methods":["mdg"],"source":"toy_binary"}"#).unwrap();
        assert_eq!(cfg.ns, vec![50]);
        assert_eq!(cfg.lambda, 0.5);
        assert_eq!(cfg.repetitions, 50);
        assert_eq!(cfg.source, DatasetSource::ToyBinary);
        let csv: SweepConfig = serde_json::from_str(r#"{"source":{"csv":{"path":"d.csv"}}}"#).unwrap();
        assert_eq!(csv.source, DatasetSource::Csv { path: "d.csv".into(), label_column: LabelColumn::default() });
    }

    #[test]
    fn invalid_configs_rejected() {
        let cfg = SweepConfig { repetitions: 0, ..SweepConfig::default() };
        assert!(sweep(&cfg).is_err());
        let cfg = SweepConfig { epsilons: vec![], ..SweepConfig::default() };
        assert!(sweep(&cfg).is_err());
        assert!(bound_check(Method::OutputPerturb, &BoundCheckConfig::default(), 1.5).is_err());
        assert!(bound_check(Method::Mdg, &BoundCheckConfig::default(), 0.05).is_err());
    }
}
