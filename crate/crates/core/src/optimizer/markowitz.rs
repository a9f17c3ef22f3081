use nalgebra::{DMatrix, DVector};

use super::{quad, OptimizerError, QpSolution, Result};
use crate::market_data::PortfolioVector;

fn check_rank(sigma: &DMatrix<f64>) -> Result<()> {
    let m = sigma.nrows();
    if sigma.ncols() != m {
        return Err(OptimizerError::Dimension(format!("sigma is {}x{}", m, sigma.ncols())));
    }
    let eig = ((sigma + sigma.transpose()) * 0.5).symmetric_eigen().eigenvalues;
    let (lo, hi) = (eig.min(), eig.max());
    if lo < -1e-10 * hi.abs().max(1.0) {
        return Err(OptimizerError::NotPsd(lo));
    }
    if !(lo > 1e-12 * hi) {
        return Err(OptimizerError::RankDeficient);
    }
    Ok(())
}

/// Minimum-variance portfolio with a return target and shorting, from the
/// bordered system `[Σ mu 1; mu' 0 0; 1' 0 0] [w; -lambda; -kappa] = [0; target; 1]`.
pub fn markowitz_closed_form(mu: &[f64], sigma: &DMatrix<f64>, target: f64) -> Result<QpSolution> {
    let m = mu.len();
    if sigma.nrows() != m {
        return Err(OptimizerError::Dimension(format!("mu has {m} entries, sigma {}", sigma.nrows())));
    }
    check_rank(sigma)?;
    let mean = mu.iter().sum::<f64>() / m as f64;
    let spread = mu.iter().map(|v| (v - mean).abs()).fold(0.0, f64::max);
    if spread <= 1e-12 * mean.abs().max(1e-12) {
        return Err(OptimizerError::Degenerate);
    }
    let n = m + 2;
    let mut k = DMatrix::zeros(n, n);
    k.view_mut((0, 0), (m, m)).copy_from(sigma);
    for i in 0..m {
        k[(i, m)] = mu[i];
        k[(m, i)] = mu[i];
        k[(i, m + 1)] = 1.0;
        k[(m + 1, i)] = 1.0;
    }
    let mut rhs = DVector::zeros(n);
    rhs[m] = target;
    rhs[m + 1] = 1.0;
    let x = k.clone().lu().solve(&rhs).ok_or(OptimizerError::RankDeficient)?;
    // one step of iterative refinement
    let r = &rhs - &k * &x;
    let x = &x + k.lu().solve(&r).unwrap_or_else(|| DVector::zeros(n));

    let w: Vec<f64> = x.rows(0, m).iter().copied().collect();
    let (lambda, kappa) = (-x[m], -x[m + 1]);
    let residual = kkt_residual(mu, sigma, &w, lambda, kappa);
    let weights = PortfolioVector::new(w.clone(), true).map_err(|e| OptimizerError::Validation(e.to_string()))?;
    Ok(QpSolution {
        objective_value: -0.5 * quad(sigma, &w),
        weights,
        kkt_residual: residual,
        iterations: 1,
        converged: true,
        multipliers: Some((lambda, kappa)),
    })
}

/// Max-norm of `Σw - lambda mu - kappa 1`.
pub(crate) fn kkt_residual(mu: &[f64], sigma: &DMatrix<f64>, w: &[f64], lambda: f64, kappa: f64) -> f64 {
    let sw = sigma * DVector::from_column_slice(w);
    sw.iter()
        .zip(mu)
        .map(|(s, m)| (s - lambda * m - kappa).abs())
        .fold(0.0, f64::max)
}

/// Global minimum-variance portfolio `Σ^-1 1 / (1' Σ^-1 1)`.
pub fn min_variance_closed_form(sigma: &DMatrix<f64>) -> Result<Vec<f64>> {
    check_rank(sigma)?;
    let m = sigma.nrows();
    let chol = sigma.clone().cholesky().ok_or(OptimizerError::RankDeficient)?;
    let x = chol.solve(&DVector::from_element(m, 1.0));
    let s = x.sum();
    Ok(x.iter().map(|v| v / s).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_asset_identity() {
        let s = markowitz_closed_form(&[0.1, 0.2], &DMatrix::identity(2, 2), 0.15).unwrap();
        let w = s.weights.weights();
        assert!((w[0] - 0.5).abs() < 1e-12 && (w[1] - 0.5).abs() < 1e-12);
        // grid reference along the budget line
        let best = (0..=1000)
            .map(|k| -1.0 + k as f64 * 3e-3)
            .filter(|a| ((a * 0.1 + (1.0 - a) * 0.2) - 0.15).abs() < 2e-4)
            .map(|a| (a, a * a + (1.0 - a) * (1.0 - a)))
            .fold((0.0, f64::MAX), |b, c| if c.1 < b.1 { c } else { b });
        assert!((best.0 - w[0]).abs() < 1e-3);
    }

    #[test]
    fn target_at_gmv_return_gives_gmv() {
        let sigma = DMatrix::from_row_slice(3, 3, &[0.04, 0.006, 0.002, 0.006, 0.09, 0.01, 0.002, 0.01, 0.01]);
        let mu = [0.05, 0.08, 0.03];
        let gmv = min_variance_closed_form(&sigma).unwrap();
        let target: f64 = gmv.iter().zip(&mu).map(|(a, b)| a * b).sum();
        let s = markowitz_closed_form(&mu, &sigma, target).unwrap();
        for (a, b) in s.weights.weights().iter().zip(&gmv) {
            assert!((a - b).abs() < 1e-10);
        }
        assert!(s.kkt_residual < 1e-12);
        // at the GMV point the return constraint is slack
        assert!(s.multipliers.unwrap().0.abs() < 1e-10);
    }

    #[test]
    fn degenerate_and_singular() {
        assert!(matches!(
            markowitz_closed_form(&[0.1, 0.1], &DMatrix::identity(2, 2), 0.1),
            Err(OptimizerError::Degenerate)
        ));
        let singular = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        assert!(matches!(
            markowitz_closed_form(&[0.1, 0.2], &singular, 0.15),
            Err(OptimizerError::RankDeficient)
        ));
    }
}
