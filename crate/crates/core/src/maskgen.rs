//! Masked data generation.
//!
//! Given a noisy classifier `w'`, the generator builds a dataset `S` of `N`
//! samples whose unnormalized regularized gradient
//!
//! ```text
//! g(S) = Σ_{i∈S} (p(·|x_i, w') - e_{y_i}) ⊗ x_i + N λ w'
//! ```
//!
//! is driven toward zero, one sample at a time. Each new sample keeps its
//! (given) label and picks the feature vector minimizing `||g(S ∪ {x})||²`
//! by backtracking gradient descent from several starting points. When
//! `g(S) = 0`, `w'` is the exact regularized minimizer on `S`, so retraining
//! on the masked data returns the noisy classifier; in general the distance
//! is at most `||g|| / (N λ)` by strong convexity.
//!
//! The synthesized samples depend on the private data only through `w'` and
//! the label sequence.

use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{LabeledDataset, LabeledSample};
use crate::error::{invalid, Error, Result};
use crate::exec::{map_indexed, Execution};
use crate::linalg::{dot, norm, norm_sq};
use crate::model::{accumulate_sample_gradient, train, Mode, ModelParams, TrainOptions};
use crate::noise::{output_perturb, unit_direction, PrivacyBudget};
use crate::optim::{gradient_descent, LineSearch};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MaskGenOptions {
    /// Random starting points per synthesized sample. One extra descent
    /// always starts at the origin.
    pub restarts: usize,
    /// Norm of the random starting points.
    pub init_norm: f64,
    /// Gradient-norm tolerance of each descent.
    pub tol: f64,
    pub max_iters: usize,
    pub line_search: LineSearch,
    /// Keep synthesized samples inside the ball of this radius.
    pub projection_radius: Option<f64>,
    /// Trainer settings for the classifier fitted before perturbation; its
    /// `lambda` is replaced by the budget's.
    pub training: TrainOptions,
    #[serde(skip)]
    pub execution: Execution,
}

impl Default for MaskGenOptions {
    fn default() -> Self {
        Self {
            restarts: 5,
            init_norm: 0.5,
            tol: 1e-8,
            max_iters: 500,
            line_search: LineSearch::default(),
            projection_radius: None,
            training: TrainOptions::default(),
            execution: Execution::default(),
        }
    }
}

impl MaskGenOptions {
    pub fn validate(&self) -> Result<()> {
        if self.restarts == 0 {
            return Err(invalid("restarts must be at least 1"));
        }
        if !(self.init_norm >= 0.0 && self.init_norm.is_finite()) {
            return Err(invalid("init_norm must be nonnegative"));
        }
        if !(self.tol > 0.0) {
            return Err(invalid("mask tolerance must be positive"));
        }
        if let Some(r) = self.projection_radius {
            if !(r > 0.0 && r.is_finite()) {
                return Err(invalid("projection radius must be positive"));
            }
        }
        self.line_search.validate()
    }
}

/// The growing masked set and its gradient accumulator.
#[derive(Debug, Clone)]
pub struct MaskState {
    target_n: usize,
    w_prime: ModelParams,
    lambda: f64,
    samples: Vec<LabeledSample>,
    g: Vec<f64>,
}

impl MaskState {
    /// Empty set; the accumulator starts at `N λ w'`.
    pub fn new(w_prime: ModelParams, lambda: f64, target_n: usize) -> Result<Self> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(invalid(format!("lambda must be positive, got {lambda}")));
        }
        if target_n == 0 {
            return Err(invalid("target size must be at least 1"));
        }
        let scale = target_n as f64 * lambda;
        let g = w_prime.weights().iter().map(|w| scale * w).collect();
        Ok(Self { target_n, w_prime, lambda, samples: Vec::with_capacity(target_n), g })
    }

    pub fn with_seed_set(
        w_prime: ModelParams,
        lambda: f64,
        target_n: usize,
        seed_set: Vec<LabeledSample>,
    ) -> Result<Self> {
        if seed_set.len() > target_n {
            return Err(invalid(format!("seed set has {} samples, more than the target {target_n}", seed_set.len())));
        }
        let mut state = Self::new(w_prime, lambda, target_n)?;
        for s in seed_set {
            state.push(s)?;
        }
        Ok(state)
    }

    pub fn target_n(&self) -> usize {
        self.target_n
    }

    pub fn w_prime(&self) -> &ModelParams {
        &self.w_prime
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn samples(&self) -> &[LabeledSample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.samples.len() == self.target_n
    }

    /// The accumulator `g`, in the parameter layout.
    pub fn residual(&self) -> &[f64] {
        &self.g
    }

    /// `||g||²`.
    pub fn residual_norm(&self) -> f64 {
        norm_sq(&self.g)
    }

    /// `||g|| / N`, the gradient norm of the mean objective once the set is
    /// full.
    pub fn mean_residual(&self) -> f64 {
        norm(&self.g) / self.target_n as f64
    }

    fn check_candidate(&self, x: &[f64], y: usize) -> Result<()> {
        if x.len() != self.w_prime.dim() {
            return Err(Error::DimensionMismatch { expected: self.w_prime.dim(), found: x.len() });
        }
        if y >= self.w_prime.classes() {
            return Err(invalid(format!("label {y} out of range for {} classes", self.w_prime.classes())));
        }
        Ok(())
    }

    /// Appends a sample and folds its gradient contribution into `g`.
    pub fn push(&mut self, sample: LabeledSample) -> Result<()> {
        self.check_candidate(&sample.x, sample.y)?;
        if self.is_full() {
            return Err(invalid(format!("masked set already holds {} samples", self.target_n)));
        }
        let mut probs = vec![0.0; self.w_prime.classes()];
        accumulate_sample_gradient(&self.w_prime, &sample.x, sample.y, 1.0, &mut self.g, &mut probs);
        self.samples.push(sample);
        Ok(())
    }

    /// `||g + contribution(x, y)||²`: the residual norm after appending
    /// `(x, y)`.
    pub fn per_sample_objective(&self, x: &[f64], y: usize) -> f64 {
        let mut ev = Evaluator::new(self, y);
        ev.value(x)
    }

    /// Gradient of [`per_sample_objective`](Self::per_sample_objective) with
    /// respect to `x`.
    pub fn objective_gradient(&self, x: &[f64], y: usize) -> Vec<f64> {
        let mut ev = Evaluator::new(self, y);
        ev.gradient(x)
    }
}

/// Scratch-holding evaluator of the per-sample objective for a fixed label.
struct Evaluator<'a> {
    w: &'a ModelParams,
    g: &'a [f64],
    y: usize,
    probs: Vec<f64>,
    r: Vec<f64>,
}

impl<'a> Evaluator<'a> {
    fn new(state: &'a MaskState, y: usize) -> Self {
        Self {
            w: &state.w_prime,
            g: &state.g,
            y,
            probs: vec![0.0; state.w_prime.classes()],
            r: vec![0.0; state.g.len()],
        }
    }

    /// Fills `self.r = g + contribution(x)` and `self.probs = p(·|x)`.
    fn residual_at(&mut self, x: &[f64]) {
        self.r.copy_from_slice(self.g);
        accumulate_sample_gradient(self.w, x, self.y, 1.0, &mut self.r, &mut self.probs);
    }

    fn value(&mut self, x: &[f64]) -> f64 {
        self.residual_at(x);
        norm_sq(&self.r)
    }

    // With r = g + (p - e_y) ⊗ x, the Jacobian of block c with respect to x is
    // (p_c - [c = y]) I + x ∇p_cᵀ, and ∇p_c = p_c (w_c - Σ_l p_l w_l). Binary
    // mode is the single-vector case with ∇σ = σ(1 - σ) w.
    fn gradient(&mut self, x: &[f64]) -> Vec<f64> {
        self.residual_at(x);
        let w = self.w.weights();
        match self.w.mode() {
            Mode::Binary => {
                let s = self.probs[1];
                let a = s - if self.y == 1 { 1.0 } else { 0.0 };
                let b = s * (1.0 - s) * dot(x, &self.r);
                self.r.iter().zip(w).map(|(r, wk)| 2.0 * (a * r + b * wk)).collect()
            }
            Mode::Multiclass => {
                let c = self.w.classes();
                let d = x.len();
                // x · r_c for each class column.
                let mut xr = vec![0.0; c];
                for (xj, r_row) in x.iter().zip(self.r.chunks_exact(c)) {
                    for (acc, r) in xr.iter_mut().zip(r_row) {
                        *acc += xj * r;
                    }
                }
                let mut grad = vec![0.0; d];
                for (j, gj) in grad.iter_mut().enumerate() {
                    let row = &w[j * c..(j + 1) * c];
                    let wbar: f64 = row.iter().zip(&self.probs).map(|(a, p)| a * p).sum();
                    let mut acc = 0.0;
                    for k in 0..c {
                        let a = self.probs[k] - if k == self.y { 1.0 } else { 0.0 };
                        acc += a * self.r[j * c + k] + xr[k] * self.probs[k] * (row[k] - wbar);
                    }
                    *gj = 2.0 * acc;
                }
                grad
            }
        }
    }
}

/// Outcome of one synthesized sample.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSolution {
    pub x: Vec<f64>,
    pub objective: f64,
    /// Whether the selected descent met its stopping tolerance.
    pub converged: bool,
    pub iterations: usize,
}

/// Finds the feature vector for a new sample labeled `y` that minimizes the
/// residual norm of the enlarged set.
///
/// Runs `opts.restarts` descents from random points of norm
/// `opts.init_norm` plus one from the origin, and keeps the lowest objective
/// (earliest run on ties). Starting points come from substreams of a single
/// draw from `rng`, so the result does not depend on execution strategy.
pub fn solve_next_sample<R: Rng + ?Sized>(
    y: usize,
    state: &MaskState,
    opts: &MaskGenOptions,
    rng: &mut R,
) -> SampleSolution {
    let dim = state.w_prime.dim();
    let base: u64 = rng.random();
    let radius = opts.projection_radius;
    let project = move |x: &mut [f64]| {
        if let Some(r) = radius {
            let n = norm(x);
            if n > r {
                for v in x.iter_mut() {
                    *v *= r / n;
                }
            }
        }
    };

    let runs = opts.restarts + 1;
    let results = map_indexed(runs, opts.execution, |run| {
        let x0 = if run < opts.restarts {
            let mut sub = rng::stream(base, &[run as u64]);
            unit_direction(dim, &mut sub).into_iter().map(|v| v * opts.init_norm).collect()
        } else {
            vec![0.0; dim]
        };
        let mut fval = Evaluator::new(state, y);
        let mut fgrad = Evaluator::new(state, y);
        gradient_descent(
            |x| fval.value(x),
            |x| fgrad.gradient(x),
            x0,
            opts.tol,
            0.0,
            opts.max_iters,
            &opts.line_search,
            radius.is_some().then_some(&project as &dyn Fn(&mut [f64])),
        )
    });

    let best =
        results.into_iter().reduce(|best, r| if r.value < best.value { r } else { best }).expect("at least one run");
    SampleSolution { x: best.x, objective: best.value, converged: best.converged, iterations: best.iterations }
}

/// One line of generation diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskStep {
    /// Position of the sample in the output dataset.
    pub index: usize,
    pub label: usize,
    /// `||g||²` after appending the sample.
    pub residual_norm: f64,
    pub converged: bool,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MaskReport {
    /// `||g||²` once the seed set has been absorbed.
    pub initial_residual_norm: f64,
    pub steps: Vec<MaskStep>,
    pub final_residual_norm: f64,
    /// `||g|| / N` for the finished set.
    pub final_mean_residual: f64,
    pub unconverged: usize,
}

impl MaskReport {
    /// Writes one JSON object per synthesized sample.
    pub fn write_json_lines<W: Write>(&self, mut out: W) -> Result<()> {
        for step in &self.steps {
            serde_json::to_writer(&mut out, step)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct MaskOutput {
    pub dataset: LabeledDataset,
    pub report: MaskReport,
}

/// Completes `seed_set` to `seed_set.len() + labels.len()` samples, one
/// synthesized sample per label, in order.
pub fn generate_masked<R: Rng + ?Sized>(
    labels: &[usize],
    w_prime: &ModelParams,
    lambda: f64,
    seed_set: &[LabeledSample],
    opts: &MaskGenOptions,
    rng: &mut R,
) -> Result<MaskOutput> {
    opts.validate()?;
    let target_n = seed_set.len() + labels.len();
    if let Some(&bad) = labels.iter().find(|&&y| y >= w_prime.classes()) {
        return Err(invalid(format!("label {bad} out of range for {} classes", w_prime.classes())));
    }
    let mut state = MaskState::with_seed_set(w_prime.clone(), lambda, target_n, seed_set.to_vec())?;
    let mut report = MaskReport { initial_residual_norm: state.residual_norm(), ..MaskReport::default() };

    for &y in labels {
        let sol = solve_next_sample(y, &state, opts, rng);
        if !sol.converged {
            report.unconverged += 1;
        }
        state.push(LabeledSample::new(sol.x, y))?;
        report.steps.push(MaskStep {
            index: state.len() - 1,
            label: y,
            residual_norm: state.residual_norm(),
            converged: sol.converged,
            iterations: sol.iterations,
        });
    }

    report.final_residual_norm = state.residual_norm();
    report.final_mean_residual = state.mean_residual();
    let dataset = LabeledDataset::new(state.samples, w_prime.classes())?;
    Ok(MaskOutput { dataset, report })
}

/// Labels still to synthesize once the seed set is in place: each seed sample
/// cancels the first unmatched occurrence of its label in `labels`; a seed
/// sample whose label has no occurrence left cancels the last remaining
/// label instead, so the result always has `labels.len() - seed_set.len()`
/// entries.
pub fn remaining_labels(labels: &[usize], seed_set: &[LabeledSample]) -> Result<Vec<usize>> {
    if seed_set.len() > labels.len() {
        return Err(invalid(format!(
            "seed set has {} samples, more than the {} in the data",
            seed_set.len(),
            labels.len()
        )));
    }
    let mut slots: Vec<Option<usize>> = labels.iter().copied().map(Some).collect();
    let mut unmatched = 0;
    for s in seed_set {
        match slots.iter().position(|l| *l == Some(s.y)) {
            Some(pos) => slots[pos] = None,
            None => unmatched += 1,
        }
    }
    let mut out: Vec<usize> = slots.into_iter().flatten().collect();
    out.truncate(out.len() - unmatched);
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct MaskedRelease {
    pub dataset: LabeledDataset,
    /// The noisy classifier the masked data was fitted to.
    pub w_prime: ModelParams,
    pub report: MaskReport,
}

/// Full release: train on `ds`, perturb the classifier at `budget`, then
/// synthesize the masked dataset around `seed_set`.
pub fn mask_dataset<R: Rng + ?Sized>(
    ds: &LabeledDataset,
    budget: &PrivacyBudget,
    seed_set: &[LabeledSample],
    opts: &MaskGenOptions,
    rng: &mut R,
) -> Result<MaskedRelease> {
    if !ds.norm_bounded() {
        return Err(Error::NotNormBounded { max_norm: ds.max_norm() });
    }
    if budget.n != ds.len() {
        return Err(invalid(format!("budget is for N = {}, dataset has {} samples", budget.n, ds.len())));
    }
    let labels = remaining_labels(&ds.labels(), seed_set)?;
    for s in seed_set {
        if s.x.len() != ds.dim() {
            return Err(Error::DimensionMismatch { expected: ds.dim(), found: s.x.len() });
        }
    }
    opts.validate()?;

    let training = TrainOptions { lambda: budget.lambda, ..opts.training };
    let w = train(ds, &training)?;
    let w_prime = output_perturb(&w, budget, rng);
    let out = generate_masked(&labels, &w_prime, budget.lambda, seed_set, opts, rng)?;
    Ok(MaskedRelease { dataset: out.dataset, w_prime, report: out.report })
}
