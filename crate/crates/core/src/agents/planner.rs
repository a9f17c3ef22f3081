use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::market_data::PortfolioVector;
use crate::optimizer::{solve_qp, Objective, ObjectiveSpec};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlannerConfig {
    /// Number of predicted steps `L`.
    pub horizon: usize,
    pub objective: Objective,
    /// Weight of the diagonal target when shrinking the residual covariance.
    pub shrinkage: f64,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self { horizon: 5, objective: Objective::RiskAversion { alpha: 1.0 }, shrinkage: 0.1 }
    }
}

#[derive(Debug, Clone)]
pub struct Plan {
    pub horizon: usize,
    /// `L x M` predicted log returns.
    pub path: Vec<Vec<f64>>,
    pub action: PortfolioVector,
}

/// Turns a predicted log-return path into an allocation: the mean predicted
/// simple return and the shrunk residual covariance feed the QP, starting
/// from holdings `w0` (`None` while in cash, where every long-only portfolio
/// costs the same and `beta` is dropped).
pub fn plan_action(
    path: &[Vec<f64>],
    residual_cov: &DMatrix<f64>,
    w0: Option<&PortfolioVector>,
    beta: f64,
    config: &PlannerConfig,
) -> Result<Plan> {
    let Some(m) = path.first().map(Vec::len) else {
        return Err(Error::Agent("empty prediction path".into()));
    };
    if residual_cov.nrows() != m || residual_cov.ncols() != m {
        return Err(Error::Agent(format!("covariance is {}x{}, path has {m} assets", residual_cov.nrows(), residual_cov.ncols())));
    }
    let l = path.len() as f64;
    let mu: Vec<f64> = (0..m).map(|i| path.iter().map(|row| row[i].exp_m1()).sum::<f64>() / l).collect();
    let s = config.shrinkage;
    let sigma = DMatrix::from_fn(m, m, |i, j| if i == j { residual_cov[(i, i)] } else { (1.0 - s) * residual_cov[(i, j)] });
    let spec = match w0 {
        Some(w) => ObjectiveSpec::new(config.objective).with_beta(beta).with_w0(w.clone()),
        None => ObjectiveSpec::new(config.objective).with_beta(0.0),
    };
    let action = solve_qp(&mu, &sigma, &spec)?.weights;
    Ok(Plan { horizon: path.len(), path: path.to_vec(), action })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config(alpha: f64) -> PlannerConfig {
        PlannerConfig { horizon: 1, objective: Objective::RiskAversion { alpha }, shrinkage: 0.1 }
    }

    #[test]
    fn favored_asset_gets_the_mass() {
        let path = vec![vec![0.01, 0.05, 0.0]; 3];
        let plan = plan_action(&path, &DMatrix::identity(3, 3), None, 0.0, &config(1e-3)).unwrap();
        // grid check over the simplex at step 0.01
        let mu: Vec<f64> = [0.01f64, 0.05, 0.0].iter().map(|v| v.exp_m1()).collect();
        let mut best = (f64::MIN, 0.0);
        for a in 0..=100 {
            for b in 0..=(100 - a) {
                let w = [a as f64 / 100.0, b as f64 / 100.0, (100 - a - b) as f64 / 100.0];
                let f = w.iter().zip(&mu).map(|(x, y)| x * y).sum::<f64>() - 1e-3 * w.iter().map(|x| x * x).sum::<f64>();
                if f > best.0 {
                    best = (f, w[1]);
                }
            }
        }
        assert!((plan.action.weights()[1] - best.1).abs() < 0.02);
        assert!(plan.action.weights()[1] > 0.9);
    }

    #[test]
    fn linear_objective_is_one_hot_argmax() {
        let path = vec![vec![-0.01, 0.002, 0.001]];
        let plan = plan_action(&path, &DMatrix::identity(3, 3), None, 0.0, &config(0.0)).unwrap();
        assert!((plan.action.weights()[1] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn prohibitive_costs_keep_holdings() {
        let w0 = PortfolioVector::new(vec![0.2, 0.3, 0.5], false).unwrap();
        let path = vec![vec![0.05, -0.01, 0.0]];
        let plan = plan_action(&path, &DMatrix::identity(3, 3), Some(&w0), 1e6, &config(1.0)).unwrap();
        for (a, b) in plan.action.weights().iter().zip(w0.weights()) {
            assert!((a - b).abs() < 1e-6);
        }
    }
}
