//! One-step portfolio optimization.
//!
//! [`solve_qp`] maximizes one of three objectives minus a proportional
//! transaction cost `beta * ||w - w0||_1`:
//!
//! * `target_return`: `-(1/2 w'Σw)` subject to `mu'w = target`,
//! * `risk_aversion`: `mu'w - alpha w'Σw`,
//! * `sharpe`: `(mu'w - cost) / sqrt(w'Σw)` (cost enters the numerator),
//!
//! over the simplex or, with shorting, the budget hyperplane. Concave cases
//! use accelerated proximal gradient with an exact constrained prox; the
//! Sharpe ratio is maximized by a minorize-maximize sequence of
//! risk-aversion problems from several starting points.

mod frontier;
mod markowitz;
mod prox;

pub use frontier::{efficient_frontier, write_frontier_csv, FrontierPoint};
pub use markowitz::{markowitz_closed_form, min_variance_closed_form};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::market_data::{PortfolioVector, ReturnsFrame};
use crate::metrics::{self, MetricsError};
use crate::rng;
use prox::ProxProblem;

pub const DEFAULT_BETA: f64 = 0.002;
const SIGMA_RIDGE: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum OptimizerError {
    #[error("covariance is not positive semidefinite (min eigenvalue {0})")]
    NotPsd(f64),
    #[error("covariance is rank deficient")]
    RankDeficient,
    #[error("mean vector is a multiple of the ones vector")]
    Degenerate,
    #[error("infeasible: {0}")]
    Infeasible(String),
    #[error("unbounded: {0}")]
    Unbounded(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid objective: {0}")]
    Validation(String),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

pub type Result<T> = std::result::Result<T, OptimizerError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Objective {
    TargetReturn { target: f64 },
    RiskAversion { alpha: f64 },
    Sharpe,
}

fn default_beta() -> f64 {
    DEFAULT_BETA
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveSpec {
    #[serde(flatten)]
    pub objective: Objective,
    #[serde(default = "default_beta")]
    pub beta: f64,
    /// Current holdings; uniform when absent.
    #[serde(default)]
    pub w0: Option<PortfolioVector>,
    #[serde(default)]
    pub short_allowed: bool,
}

impl ObjectiveSpec {
    pub fn new(objective: Objective) -> Self {
        Self { objective, beta: DEFAULT_BETA, w0: None, short_allowed: false }
    }

    pub fn with_beta(mut self, beta: f64) -> Self {
        self.beta = beta;
        self
    }

    pub fn with_w0(mut self, w0: PortfolioVector) -> Self {
        self.w0 = Some(w0);
        self
    }

    pub fn with_shorts(mut self, short_allowed: bool) -> Self {
        self.short_allowed = short_allowed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.beta >= 0.0) {
            return Err(OptimizerError::Validation(format!("beta {} < 0", self.beta)));
        }
        if let Objective::RiskAversion { alpha } = self.objective {
            if !(alpha >= 0.0) {
                return Err(OptimizerError::Validation(format!("alpha {alpha} < 0")));
            }
        }
        Ok(())
    }

    fn holdings(&self, m: usize) -> Result<Vec<f64>> {
        match &self.w0 {
            Some(w) if w.len() == m => Ok(w.weights().to_vec()),
            Some(w) => Err(OptimizerError::Dimension(format!("w0 has {} entries, need {m}", w.len()))),
            None => Ok(vec![1.0 / m as f64; m]),
        }
    }
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub weights: PortfolioVector,
    /// Value of the maximized objective (for `target_return`, the negated
    /// half variance minus cost).
    pub objective_value: f64,
    /// Norm of the proximal-gradient mapping at the solution (zero at an
    /// optimum of the concave problems); for the closed form, the
    /// stationarity residual of the bordered system.
    pub kkt_residual: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Multipliers `(lambda, kappa)` of the closed-form solve.
    pub multipliers: Option<(f64, f64)>,
}

#[derive(Debug, Clone, Copy)]
pub struct SolverOptions {
    pub max_iter: usize,
    pub tol: f64,
    pub restarts: usize,
    pub seed: u64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self { max_iter: 10_000, tol: 1e-12, restarts: 8, seed: 0x5EED }
    }
}

fn quad(sigma: &DMatrix<f64>, w: &[f64]) -> f64 {
    let m = w.len();
    let mut s = 0.0;
    for i in 0..m {
        let mut row = 0.0;
        for j in 0..m {
            row += sigma[(i, j)] * w[j];
        }
        s += w[i] * row;
    }
    s
}

fn l1(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Objective value of `w` under `spec` (the quantity `solve_qp` maximizes).
pub fn objective_value(mu: &[f64], sigma: &DMatrix<f64>, spec: &ObjectiveSpec, w: &[f64]) -> Result<f64> {
    let w0 = spec.holdings(mu.len())?;
    let cost = spec.beta * l1(w, &w0);
    Ok(match spec.objective {
        Objective::TargetReturn { .. } => -0.5 * quad(sigma, w) - cost,
        Objective::RiskAversion { alpha } => dot(mu, w) - alpha * quad(sigma, w) - cost,
        Objective::Sharpe => (dot(mu, w) - cost) / quad(sigma, w).max(0.0).sqrt(),
    })
}

struct Prepared {
    sigma: DMatrix<f64>,
    max_eig: f64,
}

fn prepare(mu: &[f64], sigma: &DMatrix<f64>) -> Result<Prepared> {
    let m = mu.len();
    if m == 0 || sigma.nrows() != m || sigma.ncols() != m {
        return Err(OptimizerError::Dimension(format!(
            "mu has {m} entries, sigma is {}x{}",
            sigma.nrows(),
            sigma.ncols()
        )));
    }
    if mu.iter().chain(sigma.iter()).any(|v| !v.is_finite()) {
        return Err(OptimizerError::Validation("non-finite moments".into()));
    }
    let asym = (sigma - sigma.transpose()).abs().max();
    let scale = sigma.abs().max().max(1e-300);
    if asym > 1e-9 * scale {
        return Err(OptimizerError::NotPsd(f64::NAN));
    }
    let sym = (sigma + sigma.transpose()) * 0.5;
    let eig = sym.clone().symmetric_eigen().eigenvalues;
    let (min_eig, max_eig) = (eig.min(), eig.max());
    if min_eig < -1e-10 * scale.max(1.0) {
        return Err(OptimizerError::NotPsd(min_eig));
    }
    let sigma = sym + DMatrix::identity(m, m) * SIGMA_RIDGE;
    Ok(Prepared { sigma, max_eig: max_eig.max(0.0) + SIGMA_RIDGE })
}

/// Accelerated proximal gradient for
/// `min  a w'Σw - lin'w + beta ||w - w0||_1` over the feasible set.
struct ConcaveProblem<'a> {
    sigma: &'a DMatrix<f64>,
    max_eig: f64,
    a: f64,
    lin: &'a [f64],
    beta: f64,
    w0: &'a [f64],
    long_only: bool,
    target: Option<(&'a [f64], f64)>,
}

struct ConcaveResult {
    w: Vec<f64>,
    residual: f64,
    iterations: usize,
    converged: bool,
}

impl ConcaveProblem<'_> {
    fn value(&self, w: &[f64]) -> f64 {
        self.a * quad(self.sigma, w) - dot(self.lin, w) + self.beta * l1(w, self.w0)
    }

    fn grad(&self, w: &[f64], out: &mut [f64]) {
        let m = w.len();
        for i in 0..m {
            let mut s = 0.0;
            for j in 0..m {
                s += self.sigma[(i, j)] * w[j];
            }
            out[i] = 2.0 * self.a * s - self.lin[i];
        }
    }

    fn prox_step(&self, y: &[f64], g: &[f64], step: f64, out: &mut [f64]) -> Result<()> {
        let z: Vec<f64> = y.iter().zip(g).map(|(y, g)| y - step * g).collect();
        ProxProblem { w0: self.w0, c: step * self.beta, long_only: self.long_only, target: self.target }
            .solve(&z, out)
    }

    fn solve(&self, start: &[f64], opts: &SolverOptions) -> Result<ConcaveResult> {
        let m = start.len();
        let lip = 2.0 * self.a * self.max_eig;
        let lin_scale = self.lin.iter().fold(0.0f64, |s, v| s.max(v.abs())) + self.beta;
        // With no curvature any positive step is valid; a long one reaches
        // the vertex of a linear program in one prox.
        let step = if lip > 1e-12 * lin_scale.max(1e-300) { 1.0 / lip } else { 1e6 / lin_scale.max(1e-12) };

        let mut g = vec![0.0; m];
        let mut x = vec![0.0; m];
        // project the start so iterates are feasible from the outset
        self.prox_step(start, &vec![0.0; m], step, &mut x)?;
        let mut x_prev = x.clone();
        let mut y = x.clone();
        let mut t = 1.0f64;
        let mut f_prev = self.value(&x);
        let mut next = vec![0.0; m];
        let mut converged = false;
        let mut iterations = 0;
        for k in 0..opts.max_iter {
            iterations = k + 1;
            self.grad(&y, &mut g);
            self.prox_step(&y, &g, step, &mut next)?;
            let f_next = self.value(&next);
            if f_next > f_prev + 1e-15 * f_prev.abs().max(1.0) && t > 1.0 {
                // adaptive restart: momentum overshot
                t = 1.0;
                y.copy_from_slice(&x);
                continue;
            }
            let delta = next.iter().zip(&x).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
            let mom = (t - 1.0) / t_next;
            x_prev.copy_from_slice(&x);
            x.copy_from_slice(&next);
            for i in 0..m {
                y[i] = x[i] + mom * (x[i] - x_prev[i]);
            }
            t = t_next;
            f_prev = f_next;
            if delta <= opts.tol {
                converged = true;
                break;
            }
        }
        self.grad(&x, &mut g);
        self.prox_step(&x, &g, step, &mut next)?;
        let residual = next.iter().zip(&x).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt() / step;
        Ok(ConcaveResult { w: x, residual, iterations, converged })
    }
}

pub fn solve_qp(mu: &[f64], sigma: &DMatrix<f64>, spec: &ObjectiveSpec) -> Result<QpSolution> {
    solve_qp_with(mu, sigma, spec, &SolverOptions::default())
}

pub fn solve_qp_with(
    mu: &[f64],
    sigma: &DMatrix<f64>,
    spec: &ObjectiveSpec,
    opts: &SolverOptions,
) -> Result<QpSolution> {
    spec.validate()?;
    let prep = prepare(mu, sigma)?;
    let m = mu.len();
    let w0 = spec.holdings(m)?;
    let long_only = !spec.short_allowed;
    let zeros = vec![0.0; m];

    let (w, residual, iterations, converged) = match spec.objective {
        Objective::TargetReturn { target } => {
            if long_only {
                let (lo, hi) = mu.iter().fold((f64::MAX, f64::MIN), |(a, b), &v| (a.min(v), b.max(v)));
                if target < lo - 1e-12 || target > hi + 1e-12 {
                    return Err(OptimizerError::Infeasible(format!(
                        "target {target} outside [{lo}, {hi}] without shorting"
                    )));
                }
            } else if mu.iter().all(|&v| (v - mu[0]).abs() <= 1e-14 * v.abs().max(1.0)) && (target - mu[0]).abs() > 1e-12 {
                return Err(OptimizerError::Infeasible(format!("all assets return {}", mu[0])));
            }
            let p = ConcaveProblem {
                sigma: &prep.sigma,
                max_eig: prep.max_eig,
                a: 0.5,
                lin: &zeros,
                beta: spec.beta,
                w0: &w0,
                long_only,
                target: Some((mu, target)),
            };
            let r = p.solve(&w0, opts)?;
            (r.w, r.residual, r.iterations, r.converged)
        }
        Objective::RiskAversion { alpha } => {
            if !long_only && alpha == 0.0 {
                let flat = mu.iter().all(|&v| v == mu[0]);
                if !flat {
                    return Err(OptimizerError::Unbounded(
                        "linear objective with shorting and alpha = 0".into(),
                    ));
                }
            }
            let p = ConcaveProblem {
                sigma: &prep.sigma,
                max_eig: prep.max_eig,
                a: alpha,
                lin: mu,
                beta: spec.beta,
                w0: &w0,
                long_only,
                target: None,
            };
            let r = p.solve(&w0, opts)?;
            (r.w, r.residual, r.iterations, r.converged)
        }
        Objective::Sharpe => {
            let best = sharpe_search(mu, &prep, spec.beta, &w0, long_only, opts)?;
            (best.w, best.residual, best.iterations, best.converged)
        }
    };
    if !converged {
        log::warn!("solve_qp: no convergence after {iterations} iterations, returning best iterate");
    }
    let value = objective_value(mu, &prep.sigma, spec, &w)?;
    let weights = if long_only {
        PortfolioVector::from_clipped(&w)
    } else {
        let s: f64 = w.iter().sum();
        PortfolioVector::new(w.iter().map(|x| x / s).collect(), true)
    }
    .map_err(|e| OptimizerError::Validation(e.to_string()))?;
    Ok(QpSolution {
        weights,
        objective_value: value,
        kkt_residual: residual,
        iterations,
        converged,
        multipliers: None,
    })
}

fn sharpe_value(mu: &[f64], sigma: &DMatrix<f64>, beta: f64, w0: &[f64], w: &[f64]) -> f64 {
    (dot(mu, w) - beta * l1(w, w0)) / quad(sigma, w).max(1e-300).sqrt()
}

/// Minorize-maximize on the Sharpe ratio: with `lambda` the ratio at `w_k`,
/// `sqrt(q) <= (d_k + q / d_k) / 2` turns `N - lambda D` into a
/// risk-aversion problem with `alpha = lambda / (2 d_k)`; for negative
/// `lambda` the convex `D` is linearized instead. Each step cannot lower
/// the ratio.
fn sharpe_search(
    mu: &[f64],
    prep: &Prepared,
    beta: f64,
    w0: &[f64],
    long_only: bool,
    opts: &SolverOptions,
) -> Result<ConcaveResult> {
    let m = mu.len();
    let sigma = &prep.sigma;
    let mut starts: Vec<Vec<f64>> = vec![w0.to_vec(), vec![1.0 / m as f64; m]];
    if long_only {
        starts.extend((0..m).map(|j| {
            let mut e = vec![0.0; m];
            e[j] = 1.0;
            e
        }));
    }
    let warm = ConcaveProblem {
        sigma,
        max_eig: prep.max_eig,
        a: 1.0,
        lin: mu,
        beta,
        w0,
        long_only,
        target: None,
    }
    .solve(w0, opts)?;
    starts.push(warm.w);
    if m > 1 {
        let mut rng = rng::seeded(opts.seed);
        let ones = vec![1.0; m];
        for _ in 0..opts.restarts {
            starts.push(rng::dirichlet(&mut rng, &ones));
        }
    }

    let mut best: Option<(f64, ConcaveResult)> = None;
    let mut total_iter = 0;
    for start in starts {
        let mut w = start;
        let mut ratio = sharpe_value(mu, sigma, beta, w0, &w);
        let mut converged = false;
        let mut residual = f64::NAN;
        for _ in 0..500 {
            let d = quad(sigma, &w).max(1e-300).sqrt();
            let (a, lin): (f64, Vec<f64>) = if ratio > 0.0 {
                (ratio / (2.0 * d), mu.to_vec())
            } else {
                if !long_only {
                    break;
                }
                // gradient of D at w is Σw / d
                let sw = sigma * DVector::from_column_slice(&w);
                (0.0, mu.iter().zip(sw.iter()).map(|(m, s)| m - ratio * s / d).collect())
            };
            let sub = ConcaveProblem {
                sigma,
                max_eig: prep.max_eig,
                a,
                lin: &lin,
                beta,
                w0,
                long_only,
                target: None,
            }
            .solve(&w, opts)?;
            total_iter += sub.iterations;
            residual = sub.residual;
            let next_ratio = sharpe_value(mu, sigma, beta, w0, &sub.w);
            if next_ratio < ratio {
                converged = true;
                break;
            }
            let step = sub.w.iter().zip(&w).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            w = sub.w;
            let gain = next_ratio - ratio;
            ratio = next_ratio;
            if gain <= 1e-14 * ratio.abs().max(1e-12) && step <= 1e-10 {
                converged = true;
                break;
            }
        }
        let better = best.as_ref().is_none_or(|(r, _)| ratio > *r);
        if better {
            best = Some((ratio, ConcaveResult { w, residual, iterations: 0, converged }));
        }
    }
    let (_, mut res) = best.expect("at least one start");
    res.iterations = total_iter;
    Ok(res)
}

/// One rebalance of the sequential Markowitz model: Sharpe-with-costs QP on
/// the window's sample moments, starting from holdings `w0`.
pub fn smm_step(window: &ReturnsFrame, w0: &PortfolioVector, beta: f64) -> Result<PortfolioVector> {
    let moments = metrics::moments(window)?;
    let spec = ObjectiveSpec::new(Objective::Sharpe).with_beta(beta).with_w0(w0.clone());
    Ok(solve_qp(&moments.mean, &moments.covariance, &spec)?.weights)
}
