//! Backtracking (Armijo) line search and a plain gradient-descent driver.
//!
//! Shared by the classifier trainer and the masked-sample solver.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::linalg::{dot, norm};

/// In-place projection applied to every trial point.
pub type Projection<'a> = &'a dyn Fn(&mut [f64]);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineSearch {
    /// First trial step of every search.
    pub initial_step: f64,
    /// Step multiplier after a rejected trial, in (0, 1).
    pub shrink: f64,
    /// Sufficient-decrease constant, in (0, 0.5).
    pub armijo: f64,
    pub max_backtracks: usize,
}

impl Default for LineSearch {
    fn default() -> Self {
        Self { initial_step: 1.0, shrink: 0.5, armijo: 1e-4, max_backtracks: 80 }
    }
}

impl LineSearch {
    pub fn validate(&self) -> Result<()> {
        if !(self.shrink > 0.0 && self.shrink < 1.0) {
            return Err(invalid(format!("line-search shrink must lie in (0,1), got {}", self.shrink)));
        }
        if !(self.armijo > 0.0 && self.armijo < 0.5) {
            return Err(invalid(format!("Armijo constant must lie in (0,0.5), got {}", self.armijo)));
        }
        if !(self.initial_step > 0.0 && self.initial_step.is_finite()) {
            return Err(invalid("initial step must be positive"));
        }
        Ok(())
    }

    /// Searches along `direction` from `x` for a point satisfying the Armijo
    /// condition `f(x+) <= f(x) + c * grad . (x+ - x)`, where `x+` is the
    /// (optionally projected) trial point. Returns `None` when no trial step
    /// gives sufficient decrease.
    pub fn search<F>(
        &self,
        mut f: F,
        x: &[f64],
        fx: f64,
        grad: &[f64],
        direction: &[f64],
        project: Option<Projection<'_>>,
    ) -> Option<Accepted>
    where
        F: FnMut(&[f64]) -> f64,
    {
        let mut step = self.initial_step;
        let mut trial = vec![0.0; x.len()];
        for _ in 0..=self.max_backtracks {
            for ((t, xi), di) in trial.iter_mut().zip(x).zip(direction) {
                *t = xi + step * di;
            }
            if let Some(p) = project {
                p(&mut trial);
            }
            let moved: f64 = grad.iter().zip(trial.iter().zip(x)).map(|(g, (t, xi))| g * (t - xi)).sum();
            let ft = f(&trial);
            if ft.is_finite() && moved < 0.0 && ft <= fx + self.armijo * moved {
                return Some(Accepted { x: trial, value: ft, step });
            }
            step *= self.shrink;
        }
        None
    }
}

#[derive(Debug, Clone)]
pub struct Accepted {
    pub x: Vec<f64>,
    pub value: f64,
    pub step: f64,
}

#[derive(Debug, Clone)]
pub struct Descent {
    pub x: Vec<f64>,
    pub value: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Steepest descent with backtracking until `||grad|| <= tol`, the objective
/// reaches `floor`, or `max_iters` is exhausted. The returned value never
/// exceeds `f(x0)`.
#[allow(clippy::too_many_arguments)]
pub fn gradient_descent<F, G>(
    mut f: F,
    mut grad: G,
    x0: Vec<f64>,
    tol: f64,
    floor: f64,
    max_iters: usize,
    ls: &LineSearch,
    project: Option<Projection<'_>>,
) -> Descent
where
    F: FnMut(&[f64]) -> f64,
    G: FnMut(&[f64]) -> Vec<f64>,
{
    let mut x = x0;
    if let Some(p) = project {
        p(&mut x);
    }
    let mut fx = f(&x);
    let mut g = grad(&x);
    let mut gn = norm(&g);
    let mut iterations = 0;
    while iterations < max_iters {
        if gn <= tol || fx <= floor {
            return Descent { x, value: fx, grad_norm: gn, iterations, converged: true };
        }
        let dir: Vec<f64> = g.iter().map(|v| -v).collect();
        match ls.search(&mut f, &x, fx, &g, &dir, project) {
            Some(acc) => {
                x = acc.x;
                fx = acc.value;
            }
            None => break,
        }
        g = grad(&x);
        gn = norm(&g);
        iterations += 1;
    }
    let converged = gn <= tol || fx <= floor;
    Descent { x, value: fx, grad_norm: gn, iterations, converged }
}

/// Directional derivative helper kept next to the search for callers that
/// need to check descent directions.
pub(crate) fn is_descent_direction(grad: &[f64], direction: &[f64]) -> bool {
    dot(grad, direction) < 0.0
}
