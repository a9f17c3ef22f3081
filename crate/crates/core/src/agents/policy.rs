use serde::{Deserialize, Serialize};

use crate::rng::{self, Rng};
use crate::tensor::{Result, Tape, Tensor, Var};

const ACTION_FLOOR: f64 = 1e-12;

/// Stochastic action model on the simplex around the network's mean
/// allocation `probs`.
pub trait ActionDistribution {
    fn sample(&self, probs: &[f64], rng: &mut Rng) -> Vec<f64>;
    /// `ln pi(action)` as a differentiable function of `probs`.
    fn log_prob(&self, tape: &mut Tape, probs: Var, action: &[f64]) -> Result<Var>;
    /// Called once per training episode.
    fn anneal(&mut self) {}
}

/// `Dirichlet(kappa * probs)`; `kappa` grows by `anneal_rate` per episode so
/// exploration narrows over training.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DirichletPolicy {
    pub kappa: f64,
    pub anneal_rate: f64,
}

impl Default for DirichletPolicy {
    fn default() -> Self {
        Self { kappa: 50.0, anneal_rate: 1.001 }
    }
}

impl ActionDistribution for DirichletPolicy {
    fn sample(&self, probs: &[f64], rng: &mut Rng) -> Vec<f64> {
        let alpha: Vec<f64> = probs.iter().map(|p| self.kappa * p).collect();
        let mut a = rng::dirichlet(rng, &alpha);
        if a.iter().any(|&v| v < ACTION_FLOOR) {
            a.iter_mut().for_each(|v| *v = v.max(ACTION_FLOOR));
            let s: f64 = a.iter().sum();
            a.iter_mut().for_each(|v| *v /= s);
        }
        a
    }

    fn log_prob(&self, tape: &mut Tape, probs: Var, action: &[f64]) -> Result<Var> {
        // ln Gamma(sum alpha) - sum ln Gamma(alpha_i) + sum (alpha_i - 1) ln a_i
        let alpha = tape.scale(probs, self.kappa);
        let total = tape.sum(alpha);
        let norm = tape.lgamma(total);
        let lg = tape.lgamma(alpha);
        let lg_sum = tape.sum(lg);
        let ln_a: Vec<f64> = action.iter().map(|v| v.ln()).collect();
        let ln_a_sum: f64 = ln_a.iter().sum();
        let ln_a = tape.input(Tensor::vector(ln_a));
        let kernel = tape.dot(alpha, ln_a)?;
        let kernel = tape.affine(kernel, 1.0, -ln_a_sum);
        let lp = tape.sub(norm, lg_sum)?;
        tape.add(lp, kernel)
    }

    fn anneal(&mut self) {
        self.kappa *= self.anneal_rate;
    }
}
