//! Spherical-Laplace noise: density proportional to `exp(-s ||η||₂)` on R^dim.
//!
//! A draw factors into a uniform direction on the unit sphere times a
//! `Gamma(shape = dim, rate = s)` radius. Releasing a classifier uses rate
//! `s = λNε/2`, which pairs with the `2/(λN)` sensitivity of regularized
//! logistic regression on unit-norm data; perturbing raw samples uses
//! `s = ε/2`, which pairs with the diameter 2 of the unit ball.

use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::linalg::norm;
use crate::model::{Mode, ModelParams};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrivacyBudget {
    pub epsilon: f64,
    pub lambda: f64,
    pub n: usize,
}

impl PrivacyBudget {
    pub fn new(epsilon: f64, lambda: f64, n: usize) -> Result<Self> {
        if !(epsilon > 0.0) || epsilon.is_nan() {
            return Err(invalid(format!("epsilon must be positive, got {epsilon}")));
        }
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(invalid(format!("lambda must be positive, got {lambda}")));
        }
        if n == 0 {
            return Err(invalid("n must be at least 1"));
        }
        Ok(Self { epsilon, lambda, n })
    }

    /// L2 sensitivity of the trained classifier, `2/(λN)`.
    pub fn sensitivity(&self) -> f64 {
        2.0 / (self.lambda * self.n as f64)
    }

    /// Rate `λNε/2` of the noise added to the classifier.
    pub fn release_rate(&self) -> f64 {
        0.5 * self.lambda * self.n as f64 * self.epsilon
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseRate {
    rate: f64,
    dim: usize,
}

impl NoiseRate {
    pub fn new(rate: f64, dim: usize) -> Result<Self> {
        if !(rate > 0.0 && rate.is_finite()) {
            return Err(invalid(format!("noise rate must be positive and finite, got {rate}")));
        }
        if dim == 0 {
            return Err(invalid("noise dimension must be at least 1"));
        }
        Ok(Self { rate, dim })
    }

    pub fn for_release(budget: &PrivacyBudget, dim: usize) -> Result<Self> {
        Self::new(budget.release_rate(), dim)
    }

    pub fn for_input(epsilon: f64, dim: usize) -> Result<Self> {
        Self::new(0.5 * epsilon, dim)
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// `E||η|| = dim / s`.
    pub fn mean_norm(&self) -> f64 {
        self.dim as f64 / self.rate
    }

    /// `Var ||η|| = dim / s²`.
    pub fn norm_variance(&self) -> f64 {
        self.dim as f64 / (self.rate * self.rate)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        sample_spherical_laplace(self, rng)
    }

    /// `-s ||η||`; the normalizing constant is omitted, so only differences
    /// of log-densities are meaningful.
    pub fn log_density_unnormalized(&self, eta: &[f64]) -> f64 {
        log_density_unnormalized(eta, self)
    }
}

pub fn sample_spherical_laplace<R: Rng + ?Sized>(rate: &NoiseRate, rng: &mut R) -> Vec<f64> {
    let mut dir = unit_direction(rate.dim, rng);
    let radius: f64 = Gamma::new(rate.dim as f64, 1.0 / rate.rate).expect("validated rate").sample(rng);
    for v in &mut dir {
        *v *= radius;
    }
    dir
}

/// Uniform direction on the unit sphere in R^dim (a random sign when dim = 1).
pub fn unit_direction<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let n = norm(&v);
        if n > 1e-300 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

pub fn log_density_unnormalized(eta: &[f64], rate: &NoiseRate) -> f64 {
    debug_assert_eq!(eta.len(), rate.dim);
    -rate.rate * norm(eta)
}

/// Adds release-calibrated noise to a trained classifier.
///
/// Multiclass parameters are perturbed as one flattened `d·C` vector with
/// the same rate (no privacy proof covers this case), then each feature row
/// is centered across classes. Centering is a function of the noisy output
/// alone and leaves every prediction unchanged; it removes the direction
/// along which no masked dataset can move the gradient.
pub fn output_perturb<R: Rng + ?Sized>(params: &ModelParams, budget: &PrivacyBudget, rng: &mut R) -> ModelParams {
    let rate = NoiseRate::for_release(budget, params.len()).expect("budget validated");
    let eta = sample_spherical_laplace(&rate, rng);
    let mut out = params.clone();
    for (w, e) in out.weights_mut().iter_mut().zip(&eta) {
        *w += e;
    }
    if out.mode() == Mode::Multiclass {
        center_classes(&mut out);
    }
    out
}

/// Subtracts, for every feature, the mean weight across classes.
pub fn center_classes(params: &mut ModelParams) {
    if params.mode() != Mode::Multiclass {
        return;
    }
    let c = params.classes();
    for row in params.weights_mut().chunks_mut(c) {
        let mean = row.iter().sum::<f64>() / c as f64;
        for v in row {
            *v -= mean;
        }
    }
}

/// `x + η` with `η` drawn at rate `ε/2`.
pub fn input_perturb_sample<R: Rng + ?Sized>(x: &[f64], epsilon: f64, rng: &mut R) -> Result<Vec<f64>> {
    let rate = NoiseRate::for_input(epsilon, x.len())?;
    let eta = sample_spherical_laplace(&rate, rng);
    Ok(x.iter().zip(&eta).map(|(a, b)| a + b).collect())
}
