use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;
use serde::Serialize;

use super::{
    dot, markowitz_closed_form, min_variance_closed_form, quad, solve_qp, Objective, ObjectiveSpec, OptimizerError,
    Result,
};

#[derive(Debug, Clone, Serialize)]
pub struct FrontierPoint {
    pub target: f64,
    pub feasible: bool,
    /// Below the global minimum-variance return (the lower, dominated branch).
    pub efficient: bool,
    pub sigma: f64,
    pub mu: f64,
    pub weights: Vec<f64>,
}

fn gmv_return(mu: &[f64], sigma: &DMatrix<f64>, short_allowed: bool) -> Result<f64> {
    let w = if short_allowed {
        min_variance_closed_form(sigma)?
    } else {
        let spec = ObjectiveSpec::new(Objective::RiskAversion { alpha: 1.0 }).with_beta(0.0);
        // pure variance minimization: drop the return term
        let zeros = vec![0.0; mu.len()];
        solve_qp(&zeros, sigma, &spec)?.weights.into_weights()
    };
    Ok(dot(mu, &w))
}

/// Minimum-variance portfolio for each target return.
pub fn efficient_frontier(
    mu: &[f64],
    sigma: &DMatrix<f64>,
    targets: &[f64],
    short_allowed: bool,
) -> Result<Vec<FrontierPoint>> {
    let gmv = gmv_return(mu, sigma, short_allowed)?;
    let single = mu.len() == 1;
    targets
        .iter()
        .map(|&target| {
            let solved = if single {
                if (target - mu[0]).abs() <= 1e-12 * mu[0].abs().max(1.0) {
                    Ok(vec![1.0])
                } else {
                    Err(OptimizerError::Infeasible("single asset".into()))
                }
            } else if short_allowed {
                markowitz_closed_form(mu, sigma, target).map(|s| s.weights.into_weights())
            } else {
                let spec = ObjectiveSpec::new(Objective::TargetReturn { target }).with_beta(0.0);
                solve_qp(mu, sigma, &spec).map(|s| s.weights.into_weights())
            };
            match solved {
                Ok(w) => Ok(FrontierPoint {
                    target,
                    feasible: true,
                    efficient: single || target >= gmv - 1e-12,
                    sigma: quad(sigma, &w).max(0.0).sqrt(),
                    mu: dot(mu, &w),
                    weights: w,
                }),
                Err(OptimizerError::Infeasible(_)) => Ok(FrontierPoint {
                    target,
                    feasible: false,
                    efficient: false,
                    sigma: f64::NAN,
                    mu: f64::NAN,
                    weights: vec![f64::NAN; mu.len()],
                }),
                Err(e) => Err(e),
            }
        })
        .collect()
}

/// Columns `target,sigma,mu,feasible,efficient,w0..w{M-1}`.
pub fn write_frontier_csv(points: &[FrontierPoint], path: impl AsRef<Path>) -> std::io::Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    let m = points.first().map_or(0, |p| p.weights.len());
    write!(f, "target,sigma,mu,feasible,efficient")?;
    for i in 0..m {
        write!(f, ",w{i}")?;
    }
    writeln!(f)?;
    for p in points {
        write!(f, "{},{},{},{},{}", p.target, p.sigma, p.mu, p.feasible, p.efficient)?;
        for w in &p.weights {
            write!(f, ",{w}")?;
        }
        writeln!(f)?;
    }
    f.flush()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn instance() -> (Vec<f64>, DMatrix<f64>) {
        (
            vec![0.02, 0.06, 0.1],
            DMatrix::from_row_slice(3, 3, &[0.01, 0.002, 0.0, 0.002, 0.04, 0.01, 0.0, 0.01, 0.09]),
        )
    }

    #[test]
    fn no_short_targets_bounded_by_asset_means() {
        let (mu, sigma) = instance();
        let pts = efficient_frontier(&mu, &sigma, &[0.0, 0.02, 0.05, 0.1, 0.12], false).unwrap();
        let feasible: Vec<bool> = pts.iter().map(|p| p.feasible).collect();
        assert_eq!(feasible, vec![false, true, true, true, false]);
        for p in pts.iter().filter(|p| p.feasible) {
            assert!((p.mu - p.target).abs() < 1e-8);
        }
    }

    #[test]
    fn sigma_has_single_minimum() {
        let (mu, sigma) = instance();
        let targets: Vec<f64> = (0..=40).map(|k| 0.02 + k as f64 * 0.002).collect();
        let pts = efficient_frontier(&mu, &sigma, &targets, false).unwrap();
        let s: Vec<f64> = pts.iter().map(|p| p.sigma).collect();
        let argmin = (0..s.len()).fold(0, |b, k| if s[k] < s[b] { k } else { b });
        assert!(s[..=argmin].windows(2).all(|w| w[1] < w[0]));
        assert!(s[argmin..].windows(2).all(|w| w[1] > w[0]));
        assert!(pts[argmin + 1..].iter().all(|p| p.efficient));
        assert!(!pts[0].efficient);
    }

    #[test]
    fn single_asset_collapses() {
        let pts = efficient_frontier(&[0.05], &DMatrix::from_element(1, 1, 0.04), &[0.05], false).unwrap();
        assert_eq!(pts[0].weights, vec![1.0]);
        assert!(pts[0].feasible);
    }
}
