//! Labeled datasets: CSV interchange, norm normalization, synthetic Gaussian
//! mixtures, train/validation splits and neighbor construction.
//!
//! Labels are class indices `0..C`. Files using the binary `{-1, +1}`
//! convention are mapped `-1 -> 0`, `+1 -> 1` on load.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linalg::norm;
use crate::rng;

/// Slack allowed on the unit norm bound.
pub const NORM_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledSample {
    pub x: Vec<f64>,
    pub y: usize,
}

impl LabeledSample {
    pub fn new(x: Vec<f64>, y: usize) -> Self {
        Self { x, y }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    samples: Vec<LabeledSample>,
    dim: usize,
    classes: usize,
    norm_bounded: bool,
}

impl LabeledDataset {
    /// Builds a dataset, checking that it is nonempty, that all samples share
    /// one dimension with finite entries, and that every label is `< classes`.
    /// The result is not marked norm-bounded.
    pub fn new(samples: Vec<LabeledSample>, classes: usize) -> Result<Self> {
        let first = samples.first().ok_or(Error::Empty)?;
        let dim = first.x.len();
        if dim == 0 {
            return Err(invalid("samples must have at least one feature"));
        }
        if classes < 2 {
            return Err(invalid(format!("need at least 2 classes, got {classes}")));
        }
        for (i, s) in samples.iter().enumerate() {
            check_sample(s, dim, classes).map_err(|e| match e {
                Error::Invalid(m) => invalid(format!("sample {i}: {m}")),
                other => other,
            })?;
        }
        Ok(Self { samples, dim, classes, norm_bounded: false })
    }

    pub fn samples(&self) -> &[LabeledSample] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<LabeledSample> {
        self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn norm_bounded(&self) -> bool {
        self.norm_bounded
    }

    pub fn labels(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.y).collect()
    }

    pub fn max_norm(&self) -> f64 {
        self.samples.iter().map(|s| norm(&s.x)).fold(0.0, f64::max)
    }

    /// Marks the dataset norm-bounded if every row already has norm at most
    /// one (within [`NORM_SLACK`]).
    pub fn certify_norm_bounded(mut self) -> Result<Self> {
        let max_norm = self.max_norm();
        if max_norm > 1.0 + NORM_SLACK {
            return Err(Error::NotNormBounded { max_norm });
        }
        self.norm_bounded = true;
        Ok(self)
    }

    /// Drops the norm-bounded flag, e.g. after perturbing features.
    pub(crate) fn with_unbounded(mut self) -> Self {
        self.norm_bounded = false;
        self
    }

    /// Divides every feature vector by the largest row norm so the farthest
    /// sample lands exactly on the unit sphere. Returns the scale used.
    pub fn normalize_max_norm(&self) -> Result<(LabeledDataset, f64)> {
        let scale = self.max_norm();
        if scale == 0.0 {
            return Err(invalid("cannot normalize a dataset whose features are all zero"));
        }
        let mut out = self.scaled(scale);
        out.norm_bounded = true;
        Ok((out, scale))
    }

    /// Divides every feature vector by `scale` without touching the
    /// norm-bounded flag. Used to bring a validation set onto the training
    /// set's scale.
    pub fn scaled(&self, scale: f64) -> LabeledDataset {
        let samples =
            self.samples.iter().map(|s| LabeledSample::new(s.x.iter().map(|v| v / scale).collect(), s.y)).collect();
        LabeledDataset { samples, dim: self.dim, classes: self.classes, norm_bounded: false }
    }

    /// Projects each row onto the ball of the given radius independently.
    /// An alternative to [`normalize_max_norm`](Self::normalize_max_norm)
    /// when one outlier would shrink every other row.
    pub fn clip_norms(&self, radius: f64) -> Result<LabeledDataset> {
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(invalid("clip radius must be positive"));
        }
        let samples = self
            .samples
            .iter()
            .map(|s| {
                let n = norm(&s.x);
                let x = if n > radius { s.x.iter().map(|v| v * radius / n).collect() } else { s.x.clone() };
                LabeledSample::new(x, s.y)
            })
            .collect();
        Ok(LabeledDataset { samples, dim: self.dim, classes: self.classes, norm_bounded: radius <= 1.0 + NORM_SLACK })
    }

    /// Copy of the dataset with the sample at `index` replaced.
    pub fn neighbor(&self, index: usize, replacement: LabeledSample) -> Result<LabeledDataset> {
        if index >= self.len() {
            return Err(Error::IndexOutOfRange { index, len: self.len() });
        }
        check_sample(&replacement, self.dim, self.classes)?;
        let bounded = self.norm_bounded && norm(&replacement.x) <= 1.0 + NORM_SLACK;
        let mut out = self.clone();
        out.samples[index] = replacement;
        out.norm_bounded = bounded;
        Ok(out)
    }

    /// Shuffles and splits into `(train, validation)` with
    /// `floor(N * train_fraction)` training samples, clamped so each part
    /// keeps at least one sample.
    pub fn split(&self, train_fraction: f64, seed: u64) -> Result<(LabeledDataset, LabeledDataset)> {
        if !(train_fraction > 0.0 && train_fraction < 1.0) {
            return Err(invalid(format!("train fraction must lie in (0,1), got {train_fraction}")));
        }
        let n = self.len();
        if n < 2 {
            return Err(invalid("need at least 2 samples to split"));
        }
        let n_train = ((n as f64 * train_fraction).floor() as usize).clamp(1, n - 1);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng::seeded(seed));
        let pick = |idx: &[usize]| LabeledDataset {
            samples: idx.iter().map(|&i| self.samples[i].clone()).collect(),
            dim: self.dim,
            classes: self.classes,
            norm_bounded: self.norm_bounded,
        };
        Ok((pick(&order[..n_train]), pick(&order[n_train..])))
    }

    /// Uniform subsample of `n` distinct rows, in random order.
    pub fn subsample<R: rand::Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<LabeledDataset> {
        if n == 0 || n > self.len() {
            return Err(invalid(format!("cannot draw {n} samples from a pool of {}", self.len())));
        }
        let idx = rand::seq::index::sample(rng, self.len(), n);
        Ok(LabeledDataset {
            samples: idx.iter().map(|i| self.samples[i].clone()).collect(),
            dim: self.dim,
            classes: self.classes,
            norm_bounded: self.norm_bounded,
        })
    }

    /// Reads a CSV file with a header row. Features are every column except
    /// the label column.
    pub fn load_csv(path: impl AsRef<Path>, label: &LabelColumn) -> Result<LabeledDataset> {
        let path = path.as_ref();
        let mut reader = csv::ReaderBuilder::new().has_headers(true).flexible(true).from_path(path)?;
        let headers = reader.headers()?.clone();
        let width = headers.len();
        let label_idx = match label {
            LabelColumn::Index(i) if *i < width => *i,
            LabelColumn::Index(i) => return Err(invalid(format!("label column {i} out of range for {width} columns"))),
            LabelColumn::Name(name) => headers
                .iter()
                .position(|h| h.trim() == name)
                .ok_or_else(|| invalid(format!("{}: no column named `{name}`", path.display())))?,
        };
        if width < 2 {
            return Err(invalid(format!("{}: need at least one feature column and a label", path.display())));
        }

        let mut features = Vec::new();
        let mut raw_labels = Vec::new();
        for record in reader.records() {
            let record = record?;
            let row = record.position().map_or(0, |p| p.line());
            if record.len() != width {
                return Err(Error::RaggedRow { path: path.into(), row, found: record.len(), expected: width });
            }
            let mut x = Vec::with_capacity(width - 1);
            for (col, cell) in record.iter().enumerate() {
                let cell = cell.trim();
                if col == label_idx {
                    raw_labels.push(parse_label(cell).ok_or_else(|| Error::Parse {
                        path: path.into(),
                        row,
                        column: col,
                        message: format!("label `{cell}` is not an integer"),
                    })?);
                } else {
                    let v: f64 = cell.parse().map_err(|_| Error::Parse {
                        path: path.into(),
                        row,
                        column: col,
                        message: format!("`{cell}` is not a number"),
                    })?;
                    if !v.is_finite() {
                        return Err(Error::Parse {
                            path: path.into(),
                            row,
                            column: col,
                            message: format!("`{cell}` is not finite"),
                        });
                    }
                    x.push(v);
                }
            }
            features.push(x);
        }
        if features.is_empty() {
            return Err(Error::Empty);
        }

        let (labels, classes) = map_labels(&raw_labels)?;
        let samples = features.into_iter().zip(labels).map(|(x, y)| LabeledSample::new(x, y)).collect();
        LabeledDataset::new(samples, classes)
    }

    /// Writes `f0,…,f{d-1},label` rows. Values use the shortest
    /// representation that parses back to the same `f64`.
    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = BufWriter::new(File::create(path)?);
        self.write_csv(file)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        write_samples_csv(&self.samples, self.dim, out)
    }
}

pub(crate) fn write_samples_csv<W: Write>(samples: &[LabeledSample], dim: usize, out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    let mut header: Vec<String> = (0..dim).map(|j| format!("f{j}")).collect();
    header.push("label".into());
    w.write_record(&header)?;
    let mut row = Vec::with_capacity(dim + 1);
    for s in samples {
        row.clear();
        row.extend(s.x.iter().map(|v| v.to_string()));
        row.push(s.y.to_string());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a seed set (or any sample list) with a known class count; unlike
/// [`LabeledDataset::load_csv`] the label values are taken as class indices
/// as-is, except that `-1` maps to class 0 for binary files.
pub fn load_samples_csv(
    path: impl AsRef<Path>,
    label: &LabelColumn,
    dim: usize,
    classes: usize,
) -> Result<Vec<LabeledSample>> {
    let path = path.as_ref();
    let ds = match LabeledDataset::load_csv(path, label) {
        Ok(ds) => ds,
        Err(Error::Empty) => return Ok(Vec::new()),
        Err(e) => return Err(e),
    };
    if ds.dim() != dim {
        return Err(Error::DimensionMismatch { expected: dim, found: ds.dim() });
    }
    if ds.classes() > classes {
        return Err(invalid(format!("{}: labels exceed the {classes} classes of the data", path.display())));
    }
    Ok(ds.into_samples())
}

fn check_sample(s: &LabeledSample, dim: usize, classes: usize) -> Result<()> {
    if s.x.len() != dim {
        return Err(Error::DimensionMismatch { expected: dim, found: s.x.len() });
    }
    if s.y >= classes {
        return Err(invalid(format!("label {} out of range for {classes} classes", s.y)));
    }
    if s.x.iter().any(|v| !v.is_finite()) {
        return Err(invalid("non-finite feature value"));
    }
    Ok(())
}

fn parse_label(cell: &str) -> Option<i64> {
    if let Ok(v) = cell.parse::<i64>() {
        return Some(v);
    }
    let v: f64 = cell.parse().ok()?;
    (v.fract() == 0.0 && v.abs() < 1e15).then_some(v as i64)
}

/// `{-1, 1}` labels become `{0, 1}`; otherwise labels must be nonnegative
/// class indices and C is one past the largest.
fn map_labels(raw: &[i64]) -> Result<(Vec<usize>, usize)> {
    if raw.contains(&-1) {
        if let Some(bad) = raw.iter().find(|&&v| v != -1 && v != 1) {
            return Err(invalid(format!("label {bad} mixed with -1; ±1 files may only use -1 and 1")));
        }
        return Ok((raw.iter().map(|&v| usize::from(v == 1)).collect(), 2));
    }
    if let Some(bad) = raw.iter().find(|&&v| v < 0) {
        return Err(invalid(format!("negative label {bad}")));
    }
    let labels: Vec<usize> = raw.iter().map(|&v| v as usize).collect();
    let classes = labels.iter().max().map_or(2, |m| (m + 1).max(2));
    Ok((labels, classes))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LabelColumn {
    Index(usize),
    Name(String),
}

impl Default for LabelColumn {
    fn default() -> Self {
        LabelColumn::Name("label".into())
    }
}

impl std::str::FromStr for LabelColumn {
    type Err = std::convert::Infallible;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Ok(match s.parse::<usize>() {
            Ok(i) => LabelColumn::Index(i),
            Err(_) => LabelColumn::Name(s.to_string()),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureComponent {
    pub mean: Vec<f64>,
    /// Per-coordinate variance of the isotropic covariance.
    pub variance: f64,
    pub count: usize,
}

/// Isotropic Gaussian mixture with one component per class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureSpec {
    pub components: Vec<MixtureComponent>,
}

const TOY_MEANS: [[f64; 2]; 3] = [[0.0, 1.5], [1.0, 1.0], [1.0, -1.0]];
const TOY_VARIANCE: f64 = 0.25;

impl MixtureSpec {
    /// The three-class 2-D toy problem with 100 samples.
    pub fn toy() -> Self {
        Self::toy_sized(100)
    }

    /// The three-class toy problem with `n` samples split as evenly as
    /// possible (earlier classes take the remainder).
    pub fn toy_sized(n: usize) -> Self {
        Self::from_means(&TOY_MEANS, TOY_VARIANCE, n)
    }

    /// Two-class restriction of the toy problem: the `(1, 1)` and `(1, -1)`
    /// components.
    pub fn toy_binary(n: usize) -> Self {
        Self::from_means(&TOY_MEANS[1..], TOY_VARIANCE, n)
    }

    /// Decoy component at `(2, 2)` used as a replacement manifold for a
    /// sensitive class.
    pub fn decoy(count: usize) -> MixtureComponent {
        MixtureComponent { mean: vec![2.0, 2.0], variance: TOY_VARIANCE, count }
    }

    fn from_means(means: &[[f64; 2]], variance: f64, n: usize) -> Self {
        let k = means.len();
        let components = means
            .iter()
            .enumerate()
            .map(|(c, m)| MixtureComponent { mean: m.to_vec(), variance, count: n / k + usize::from(c < n % k) })
            .collect();
        Self { components }
    }

    /// Same component means and variances, with counts rescaled to total `n`.
    pub fn resized(&self, n: usize) -> Self {
        let k = self.components.len();
        let components = self
            .components
            .iter()
            .enumerate()
            .map(|(c, comp)| MixtureComponent { count: n / k + usize::from(c < n % k), ..comp.clone() })
            .collect();
        Self { components }
    }

    pub fn total(&self) -> usize {
        self.components.iter().map(|c| c.count).sum()
    }

    pub fn dim(&self) -> usize {
        self.components.first().map_or(0, |c| c.mean.len())
    }

    pub fn validate(&self) -> Result<()> {
        if self.components.len() < 2 {
            return Err(invalid("a mixture needs at least two classes"));
        }
        let d = self.dim();
        if d == 0 {
            return Err(invalid("component means must be nonempty"));
        }
        for (c, comp) in self.components.iter().enumerate() {
            if comp.mean.len() != d {
                return Err(Error::DimensionMismatch { expected: d, found: comp.mean.len() });
            }
            if !(comp.variance > 0.0 && comp.variance.is_finite()) {
                return Err(invalid(format!("class {c}: variance must be positive, got {}", comp.variance)));
            }
            if comp.count == 0 {
                return Err(invalid(format!("class {c}: sample count must be at least 1")));
            }
            if comp.mean.iter().any(|v| !v.is_finite()) {
                return Err(invalid(format!("class {c}: non-finite mean")));
            }
        }
        Ok(())
    }

    /// Draws the mixture deterministically from `seed`. Samples are emitted
    /// in shuffled order so classes interleave.
    pub fn generate(&self, seed: u64) -> Result<LabeledDataset> {
        self.generate_with(&mut rng::seeded(seed))
    }

    pub fn generate_with<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> Result<LabeledDataset> {
        self.validate()?;
        let mut samples = Vec::with_capacity(self.total());
        for (c, comp) in self.components.iter().enumerate() {
            samples.extend(sample_component(comp, c, rng));
        }
        samples.shuffle(rng);
        LabeledDataset::new(samples, self.components.len())
    }
}

/// Draws `comp.count` samples labeled `label` from one component.
pub fn sample_component<R: rand::Rng + ?Sized>(
    comp: &MixtureComponent,
    label: usize,
    rng: &mut R,
) -> Vec<LabeledSample> {
    let normal = Normal::new(0.0, comp.variance.sqrt()).expect("validated variance");
    (0..comp.count)
        .map(|_| LabeledSample::new(comp.mean.iter().map(|m| m + normal.sample(rng)).collect(), label))
        .collect()
}

pub fn gen_gaussian_mixture(spec: &MixtureSpec, seed: u64) -> Result<LabeledDataset> {
    spec.generate(seed)
}
