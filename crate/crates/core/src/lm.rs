//! Dense Levenberg–Marquardt for small and medium least-squares problems.
//!
//! Parameters live in a flat vector; problems with manifold-valued pieces
//! (rotations) override [`LeastSquares::retract`] so that increments are
//! applied in the tangent space.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};

pub trait LeastSquares: Sync {
    fn residuals(&self, params: &DVector<f64>) -> DVector<f64>;

    /// Applies a tangent increment. Defaults to vector addition.
    fn retract(&self, params: &DVector<f64>, delta: &DVector<f64>) -> DVector<f64> {
        params + delta
    }

    /// Finite-difference step for parameter `j`.
    fn diff_step(&self, params: &DVector<f64>, j: usize) -> f64 {
        1e-6 * params[j].abs().max(1.0)
    }

    /// Central-difference Jacobian through [`retract`](Self::retract).
    fn jacobian(&self, params: &DVector<f64>, m: usize) -> DMatrix<f64> {
        let n = params.len();
        let columns: Vec<DVector<f64>> = (0..n)
            .into_par_iter()
            .map(|j| {
                let h = self.diff_step(params, j);
                let mut d = DVector::zeros(n);
                d[j] = h;
                let plus = self.residuals(&self.retract(params, &d));
                d[j] = -h;
                let minus = self.residuals(&self.retract(params, &d));
                (plus - minus) / (2.0 * h)
            })
            .collect();
        let mut jac = DMatrix::zeros(m, n);
        for (j, c) in columns.into_iter().enumerate() {
            jac.set_column(j, &c);
        }
        jac
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LmConfig {
    pub max_iterations: usize,
    /// Relative decrease of the cost below which an accepted step ends the solve.
    pub cost_tolerance: f64,
    /// Increment norm (relative to `1 + ‖x‖`) below which the solve ends.
    pub step_tolerance: f64,
    pub initial_damping: f64,
}

impl Default for LmConfig {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            cost_tolerance: 1e-12,
            step_tolerance: 1e-10,
            initial_damping: 1e-3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    CostTolerance,
    StepTolerance,
    Gradient,
    ZeroCost,
    MaxIterations,
}

#[derive(Debug, Clone)]
pub struct LmReport {
    pub params: DVector<f64>,
    /// Sum of squared residuals at `params`.
    pub cost: f64,
    pub initial_cost: f64,
    pub iterations: usize,
    /// Cost after the initial evaluation and after every accepted step.
    pub cost_history: Vec<f64>,
    pub termination: Termination,
    pub residual_count: usize,
}

impl LmReport {
    pub fn converged(&self) -> bool {
        self.termination != Termination::MaxIterations
    }

    /// RMS over residual entries.
    pub fn rms(&self) -> f64 {
        (self.cost / self.residual_count.max(1) as f64).sqrt()
    }
}

pub fn minimize<P: LeastSquares>(problem: &P, x0: DVector<f64>, config: &LmConfig) -> Result<LmReport> {
    let mut x = x0;
    let mut r = problem.residuals(&x);
    let m = r.len();
    let mut cost = r.norm_squared();
    if !cost.is_finite() {
        return Err(Error::Divergence("non-finite initial residuals".into()));
    }
    let initial_cost = cost;
    let mut history = vec![cost];
    let mut lambda = config.initial_damping;
    let mut iterations = 0;

    let termination = loop {
        if cost == 0.0 {
            break Termination::ZeroCost;
        }
        if iterations >= config.max_iterations {
            break Termination::MaxIterations;
        }
        iterations += 1;

        let jac = problem.jacobian(&x, m);
        let jt = jac.transpose();
        let a = &jt * &jac;
        let g = &jt * &r;
        let g_max = g.amax();
        if g_max <= 1e-14 * (1.0 + cost) {
            break Termination::Gradient;
        }
        let diag_floor = a.diagonal().max() * 1e-12;

        let accepted;
        loop {
            let mut damped = a.clone();
            for i in 0..damped.nrows() {
                damped[(i, i)] += lambda * a[(i, i)].max(diag_floor).max(1e-300);
            }
            let step = damped
                .clone()
                .cholesky()
                .map(|c| c.solve(&(-&g)))
                .or_else(|| damped.clone().lu().solve(&(-&g)));
            let Some(step) = step else {
                lambda *= 10.0;
                if lambda > 1e32 {
                    return Err(Error::Divergence("damping overflow (singular normal equations)".into()));
                }
                continue;
            };
            if step.norm() <= config.step_tolerance * (1.0 + x.norm()) {
                accepted = Some(None);
                break;
            }
            let x_new = problem.retract(&x, &step);
            let r_new = problem.residuals(&x_new);
            let cost_new = r_new.norm_squared();
            if cost_new.is_finite() && cost_new < cost {
                let rel = (cost - cost_new) / cost;
                x = x_new;
                r = r_new;
                cost = cost_new;
                history.push(cost);
                lambda = (lambda / 3.0).max(1e-15);
                accepted = Some(Some(rel));
                break;
            }
            lambda *= 4.0;
            if lambda > 1e32 {
                if g_max <= 1e-6 * (1.0 + cost) {
                    accepted = Some(None);
                    break;
                }
                return Err(Error::Divergence("damping overflow".into()));
            }
        }
        match accepted {
            Some(None) => break Termination::StepTolerance,
            Some(Some(rel)) if rel < config.cost_tolerance => break Termination::CostTolerance,
            _ => {}
        }
    };

    Ok(LmReport {
        params: x,
        cost,
        initial_cost,
        iterations,
        cost_history: history,
        termination,
        residual_count: m,
    })
}
