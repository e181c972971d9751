//! L2-regularized logistic regression.
//!
//! The objective is the regularized mean negative log-likelihood
//!
//! ```text
//! J(w) = -(1/N) Σ log p(y_i | x_i, w) + (λ/2) ||w||²
//! ```
//!
//! which is λ-strongly convex. Binary models keep a single weight vector with
//! `p(1 | x) = σ(w·x)`; multiclass models keep a `d × C` matrix (row-major,
//! entry `(j, c)` at `j * C + c`) with softmax probabilities. There is no
//! intercept; append a constant feature if one is needed.
//!
//! [`accumulate_sample_gradient`] is the one place the per-sample gradient
//! `(p(·|x) - e_y) ⊗ x` is written down. Training and mask generation both
//! go through it.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::LabeledDataset;
use crate::error::{invalid, Error, Result};
use crate::linalg::{axpy, cholesky_solve, distance, dot, norm, sigmoid, softmax_in_place, softplus};
use crate::optim::{is_descent_direction, LineSearch};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Binary,
    Multiclass,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ParamsRepr", into = "ParamsRepr")]
pub struct ModelParams {
    mode: Mode,
    dim: usize,
    classes: usize,
    weights: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct ParamsRepr {
    mode: Mode,
    d: usize,
    #[serde(rename = "C")]
    classes: usize,
    weights: Vec<f64>,
}

impl From<ModelParams> for ParamsRepr {
    fn from(p: ModelParams) -> Self {
        ParamsRepr { mode: p.mode, d: p.dim, classes: p.classes, weights: p.weights }
    }
}

impl TryFrom<ParamsRepr> for ModelParams {
    type Error = Error;

    fn try_from(r: ParamsRepr) -> Result<Self> {
        let p = ModelParams::from_weights(r.d, r.classes, r.weights)?;
        if p.mode != r.mode {
            return Err(invalid(format!("mode {:?} inconsistent with C = {}", r.mode, r.classes)));
        }
        Ok(p)
    }
}

impl ModelParams {
    /// All-zero parameters; binary when `classes == 2`.
    pub fn zeros(dim: usize, classes: usize) -> Self {
        let mode = if classes == 2 { Mode::Binary } else { Mode::Multiclass };
        let len = if mode == Mode::Binary { dim } else { dim * classes };
        Self { mode, dim, classes, weights: vec![0.0; len] }
    }

    pub fn binary(w: Vec<f64>) -> Self {
        Self { mode: Mode::Binary, dim: w.len(), classes: 2, weights: w }
    }

    /// Wraps a flat weight vector: length `dim` for two classes, otherwise
    /// `dim * classes` in row-major order.
    pub fn from_weights(dim: usize, classes: usize, weights: Vec<f64>) -> Result<Self> {
        if classes < 2 || dim == 0 {
            return Err(invalid(format!("invalid shape d = {dim}, C = {classes}")));
        }
        let mut p = Self::zeros(dim, classes);
        if weights.len() != p.weights.len() {
            return Err(Error::DimensionMismatch { expected: p.weights.len(), found: weights.len() });
        }
        if weights.iter().any(|v| !v.is_finite()) {
            return Err(invalid("non-finite weight"));
        }
        p.weights = weights;
        Ok(p)
    }

    pub fn for_dataset(ds: &LabeledDataset) -> Self {
        Self::zeros(ds.dim(), ds.classes())
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub(crate) fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub fn into_weights(self) -> Vec<f64> {
        self.weights
    }

    /// Number of free parameters (d or d·C).
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn norm(&self) -> f64 {
        norm(&self.weights)
    }

    /// Euclidean distance between two parameter sets of the same shape.
    pub fn distance(&self, other: &ModelParams) -> f64 {
        assert_eq!(self.weights.len(), other.weights.len(), "parameter shapes differ");
        distance(&self.weights, &other.weights)
    }

    pub fn same_shape(&self, other: &ModelParams) -> bool {
        self.mode == other.mode && self.dim == other.dim && self.classes == other.classes
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, found: x.len() });
        }
        Ok(())
    }

    /// Class scores: `w·x` for binary models, `(w_c·x)_c` for multiclass.
    pub(crate) fn scores_into(&self, x: &[f64], out: &mut [f64]) {
        match self.mode {
            Mode::Binary => out[0] = dot(&self.weights, x),
            Mode::Multiclass => {
                let c = self.classes;
                out[..c].fill(0.0);
                for (j, xj) in x.iter().enumerate() {
                    let row = &self.weights[j * c..(j + 1) * c];
                    for (o, w) in out[..c].iter_mut().zip(row) {
                        *o += w * xj;
                    }
                }
            }
        }
    }

    /// Class probabilities into `out` (length C).
    pub(crate) fn proba_into(&self, x: &[f64], out: &mut [f64]) {
        self.scores_into(x, out);
        match self.mode {
            Mode::Binary => {
                let p1 = sigmoid(out[0]);
                out[0] = 1.0 - p1;
                out[1] = p1;
            }
            Mode::Multiclass => {
                softmax_in_place(&mut out[..self.classes]);
            }
        }
    }

    pub fn predict_proba(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(x)?;
        let mut out = vec![0.0; self.classes];
        self.proba_into(x, &mut out);
        Ok(out)
    }

    /// Most probable class; ties go to the lower index (so `w·x = 0` predicts
    /// class 0 in binary mode).
    pub fn predict(&self, x: &[f64]) -> Result<usize> {
        self.check_dim(x)?;
        let mut s = vec![0.0; self.classes];
        self.scores_into(x, &mut s);
        Ok(match self.mode {
            Mode::Binary => usize::from(s[0] > 0.0),
            Mode::Multiclass => {
                let mut best = 0;
                for c in 1..self.classes {
                    if s[c] > s[best] {
                        best = c;
                    }
                }
                best
            }
        })
    }

    pub fn save_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        serde_json::to_writer(&mut w, self)?;
        w.write_all(b"\n")?;
        w.flush()?;
        Ok(())
    }

    pub fn load_json(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_reader(BufReader::new(File::open(path)?))?)
    }
}

/// `-log p(y | x, w)`, computed without overflow.
pub(crate) fn sample_loss(params: &ModelParams, x: &[f64], y: usize, scratch: &mut [f64]) -> f64 {
    params.scores_into(x, scratch);
    match params.mode {
        Mode::Binary => {
            let z = scratch[0];
            if y == 1 {
                softplus(-z)
            } else {
                softplus(z)
            }
        }
        Mode::Multiclass => {
            let zy = scratch[y];
            let lse = softmax_in_place(&mut scratch[..params.classes]);
            lse - zy
        }
    }
}

/// Adds `scale * (p(·|x) - e_y) ⊗ x` to `out`, which has the parameter
/// layout. In binary mode this is `scale * (σ(w·x) - [y = 1]) x`.
///
/// `probs` is scratch of length C and holds `p(·|x)` on return.
pub fn accumulate_sample_gradient(
    params: &ModelParams,
    x: &[f64],
    y: usize,
    scale: f64,
    out: &mut [f64],
    probs: &mut [f64],
) {
    params.proba_into(x, probs);
    match params.mode {
        Mode::Binary => {
            let r = probs[1] - if y == 1 { 1.0 } else { 0.0 };
            axpy(scale * r, x, out);
        }
        Mode::Multiclass => {
            let c = params.classes;
            for (j, xj) in x.iter().enumerate() {
                let row = &mut out[j * c..(j + 1) * c];
                for (k, o) in row.iter_mut().enumerate() {
                    let r = probs[k] - if k == y { 1.0 } else { 0.0 };
                    *o += scale * r * xj;
                }
            }
        }
    }
}

fn check_compatible(params: &ModelParams, ds: &LabeledDataset) -> Result<()> {
    if params.dim != ds.dim() {
        return Err(Error::DimensionMismatch { expected: params.dim, found: ds.dim() });
    }
    if params.classes != ds.classes() {
        return Err(invalid(format!("model has {} classes, data has {}", params.classes, ds.classes())));
    }
    Ok(())
}

/// Regularized mean negative log-likelihood.
pub fn objective(params: &ModelParams, ds: &LabeledDataset, lambda: f64) -> Result<f64> {
    check_compatible(params, ds)?;
    Ok(objective_unchecked(params, ds, lambda))
}

fn objective_unchecked(params: &ModelParams, ds: &LabeledDataset, lambda: f64) -> f64 {
    let mut scratch = vec![0.0; params.classes];
    let nll: f64 = ds.samples().iter().map(|s| sample_loss(params, &s.x, s.y, &mut scratch)).sum();
    nll / ds.len() as f64 + 0.5 * lambda * params.norm().powi(2)
}

/// Gradient of [`objective`]; zero exactly at the regularized minimizer.
pub fn gradient_residual(params: &ModelParams, ds: &LabeledDataset, lambda: f64) -> Result<Vec<f64>> {
    check_compatible(params, ds)?;
    Ok(gradient_unchecked(params, ds, lambda))
}

fn gradient_unchecked(params: &ModelParams, ds: &LabeledDataset, lambda: f64) -> Vec<f64> {
    let inv_n = 1.0 / ds.len() as f64;
    let mut g: Vec<f64> = params.weights.iter().map(|w| lambda * w).collect();
    let mut probs = vec![0.0; params.classes];
    for s in ds.samples() {
        accumulate_sample_gradient(params, &s.x, s.y, inv_n, &mut g, &mut probs);
    }
    g
}

fn hessian(params: &ModelParams, ds: &LabeledDataset, lambda: f64) -> Vec<f64> {
    let n = params.len();
    let inv_n = 1.0 / ds.len() as f64;
    let mut h = vec![0.0; n * n];
    let mut probs = vec![0.0; params.classes];
    match params.mode {
        Mode::Binary => {
            for s in ds.samples() {
                params.proba_into(&s.x, &mut probs);
                let a = inv_n * probs[0] * probs[1];
                for (j, xj) in s.x.iter().enumerate() {
                    for (k, xk) in s.x.iter().enumerate() {
                        h[j * n + k] += a * xj * xk;
                    }
                }
            }
        }
        Mode::Multiclass => {
            let c = params.classes;
            for s in ds.samples() {
                params.proba_into(&s.x, &mut probs);
                for (j, xj) in s.x.iter().enumerate() {
                    for (k, xk) in s.x.iter().enumerate() {
                        let xx = inv_n * xj * xk;
                        for a in 0..c {
                            for b in 0..c {
                                let cov = if a == b { probs[a] - probs[a] * probs[b] } else { -probs[a] * probs[b] };
                                h[(j * c + a) * n + k * c + b] += xx * cov;
                            }
                        }
                    }
                }
            }
        }
    }
    for i in 0..n {
        h[i * n + i] += lambda;
    }
    h
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Solver {
    /// Damped Newton steps with backtracking.
    #[default]
    Newton,
    /// Steepest descent with backtracking.
    GradientDescent,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainOptions {
    pub lambda: f64,
    /// Stopping threshold on the gradient 2-norm.
    pub tol: f64,
    pub max_iters: usize,
    pub line_search: LineSearch,
    pub solver: Solver,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self { lambda: 0.5, tol: 1e-8, max_iters: 10_000, line_search: LineSearch::default(), solver: Solver::Newton }
    }
}

impl TrainOptions {
    pub fn with_lambda(lambda: f64) -> Self {
        Self { lambda, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(invalid(format!("lambda must be positive, got {}", self.lambda)));
        }
        if !(self.tol > 0.0) {
            return Err(invalid("tolerance must be positive"));
        }
        self.line_search.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainReport {
    pub iterations: usize,
    pub residual: f64,
}

/// Minimizes the regularized objective from `w = 0`.
pub fn train(ds: &LabeledDataset, opts: &TrainOptions) -> Result<ModelParams> {
    train_from(ds, opts, ModelParams::for_dataset(ds)).map(|(p, _)| p)
}

/// Minimizes the regularized objective starting from `init`. Stops as soon as
/// the gradient norm is at most `opts.tol`, so a stationary `init` is
/// returned unchanged after zero iterations.
pub fn train_from(ds: &LabeledDataset, opts: &TrainOptions, init: ModelParams) -> Result<(ModelParams, TrainReport)> {
    opts.validate()?;
    check_compatible(&init, ds)?;
    let lambda = opts.lambda;
    let mut params = init;
    let mut fx = objective_unchecked(&params, ds, lambda);
    let mut g = gradient_unchecked(&params, ds, lambda);
    let mut gn = norm(&g);
    let mut iterations = 0;

    let eval = |w: &[f64], shape: &ModelParams| {
        let p = ModelParams { weights: w.to_vec(), ..shape.clone() };
        objective_unchecked(&p, ds, lambda)
    };

    while gn > opts.tol {
        if iterations >= opts.max_iters {
            return Err(Error::NotConverged { iterations, residual: gn });
        }
        let steepest: Vec<f64> = g.iter().map(|v| -v).collect();
        let dir = match opts.solver {
            Solver::GradientDescent => steepest,
            Solver::Newton => match cholesky_solve(&hessian(&params, ds, lambda), &g) {
                Some(step) => {
                    let d: Vec<f64> = step.iter().map(|v| -v).collect();
                    if is_descent_direction(&g, &d) {
                        d
                    } else {
                        steepest
                    }
                }
                None => steepest,
            },
        };

        let shape = params.clone();
        let next = match opts.line_search.search(|w| eval(w, &shape), &params.weights, fx, &g, &dir, None) {
            Some(acc) => Some((acc.x, acc.value)),
            // Near the optimum the Armijo decrease can fall below the
            // resolution of f; accept a unit step that still shrinks the
            // gradient.
            None => {
                let mut w = params.weights.clone();
                axpy(opts.line_search.initial_step, &dir, &mut w);
                let trial = ModelParams { weights: w.clone(), ..shape.clone() };
                let tg = norm(&gradient_unchecked(&trial, ds, lambda));
                (tg < gn).then(|| (w, eval(&trial.weights, &shape)))
            }
        };
        let Some((w, fw)) = next else {
            return Err(Error::NotConverged { iterations, residual: gn });
        };
        params.weights = w;
        fx = fw;
        g = gradient_unchecked(&params, ds, lambda);
        gn = norm(&g);
        iterations += 1;
    }
    Ok((params, TrainReport { iterations, residual: gn }))
}

/// Fraction of samples whose predicted class matches the label.
pub fn accuracy(params: &ModelParams, validation: &LabeledDataset) -> Result<f64> {
    if params.dim != validation.dim() {
        return Err(Error::DimensionMismatch { expected: params.dim, found: validation.dim() });
    }
    let mut correct = 0usize;
    for s in validation.samples() {
        if params.predict(&s.x)? == s.y {
            correct += 1;
        }
    }
    Ok(correct as f64 / validation.len() as f64)
}
