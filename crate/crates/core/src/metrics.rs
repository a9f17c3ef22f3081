//! Sample moments and risk/performance measures.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::market_data::ReturnsFrame;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("need at least {need} samples, got {got}")]
    TooFewSamples { need: usize, got: usize },
    #[error("sharpe ratio undefined: zero standard deviation")]
    UndefinedSharpe,
    #[error("cutoff {0} outside (0, 1)")]
    InvalidCutoff(f64),
    #[error("non-finite value in input")]
    NonFinite,
}

pub type Result<T> = std::result::Result<T, MetricsError>;

#[derive(Debug, Clone)]
pub struct MomentSummary {
    pub mean: Vec<f64>,
    /// Bessel-corrected sample covariance.
    pub covariance: DMatrix<f64>,
    /// `None` for constant columns.
    pub skewness: Vec<Option<f64>>,
    pub kurtosis: Vec<Option<f64>>,
    pub median: Vec<f64>,
    pub mode: Vec<f64>,
}

impl MomentSummary {
    pub fn std_dev(&self) -> Vec<f64> {
        self.covariance.diagonal().iter().map(|v| v.max(0.0).sqrt()).collect()
    }

    pub fn correlation(&self) -> DMatrix<f64> {
        let sd = self.std_dev();
        DMatrix::from_fn(self.covariance.nrows(), self.covariance.ncols(), |i, j| {
            if sd[i] > 0.0 && sd[j] > 0.0 {
                self.covariance[(i, j)] / (sd[i] * sd[j])
            } else if i == j {
                1.0
            } else {
                0.0
            }
        })
    }

    pub fn portfolio_variance(&self, w: &[f64]) -> f64 {
        let w = nalgebra::DVector::from_column_slice(w);
        (w.transpose() * &self.covariance * &w)[(0, 0)]
    }
}

pub fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Bessel-corrected variance; 0 for fewer than two samples.
pub fn variance(x: &[f64]) -> f64 {
    if x.len() < 2 {
        return 0.0;
    }
    let mu = mean(x);
    x.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / (x.len() - 1) as f64
}

pub fn std_dev(x: &[f64]) -> f64 {
    variance(x).sqrt()
}

pub fn moments(returns: &ReturnsFrame) -> Result<MomentSummary> {
    let (n, m) = (returns.len(), returns.n_assets());
    if n < 2 {
        return Err(MetricsError::TooFewSamples { need: 2, got: n });
    }
    if returns.values().iter().any(|v| !v.is_finite()) {
        return Err(MetricsError::NonFinite);
    }
    let columns: Vec<Vec<f64>> = (0..m).map(|i| returns.column(i)).collect();
    let mu: Vec<f64> = columns.iter().map(|c| mean(c)).collect();
    let mut cov = DMatrix::zeros(m, m);
    for i in 0..m {
        for j in i..m {
            let s: f64 = columns[i]
                .iter()
                .zip(&columns[j])
                .map(|(a, b)| (a - mu[i]) * (b - mu[j]))
                .sum::<f64>()
                / (n - 1) as f64;
            cov[(i, j)] = s;
            cov[(j, i)] = s;
        }
    }
    let mut skewness = Vec::with_capacity(m);
    let mut kurtosis = Vec::with_capacity(m);
    for (c, &mu_i) in columns.iter().zip(&mu) {
        let m2 = c.iter().map(|v| (v - mu_i).powi(2)).sum::<f64>() / n as f64;
        if m2 <= f64::EPSILON * mu_i.abs().max(1.0) * f64::EPSILON {
            skewness.push(None);
            kurtosis.push(None);
            continue;
        }
        let m3 = c.iter().map(|v| (v - mu_i).powi(3)).sum::<f64>() / n as f64;
        let m4 = c.iter().map(|v| (v - mu_i).powi(4)).sum::<f64>() / n as f64;
        skewness.push(Some(m3 / m2.powf(1.5)));
        kurtosis.push(Some(m4 / (m2 * m2)));
    }
    Ok(MomentSummary {
        mean: mu,
        covariance: cov,
        skewness,
        kurtosis,
        median: columns.iter().map(|c| quantile(c, 0.5)).collect(),
        mode: columns.iter().map(|c| histogram_mode(c)).collect(),
    })
}

/// Type-7 sample quantile (linear interpolation between order statistics).
pub fn quantile(x: &[f64], q: f64) -> f64 {
    let mut s = x.to_vec();
    s.sort_by(f64::total_cmp);
    quantile_sorted(&s, q)
}

fn quantile_sorted(s: &[f64], q: f64) -> f64 {
    let h = (s.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(s.len() - 1);
    s[lo] + (h - lo as f64) * (s[hi] - s[lo])
}

/// Centre of the fullest bin of a Freedman-Diaconis histogram.
pub fn histogram_mode(x: &[f64]) -> f64 {
    let mut s = x.to_vec();
    s.sort_by(f64::total_cmp);
    let (lo, hi) = (s[0], s[s.len() - 1]);
    let iqr = quantile_sorted(&s, 0.75) - quantile_sorted(&s, 0.25);
    if hi <= lo {
        return lo;
    }
    let width = if iqr > 0.0 { 2.0 * iqr / (s.len() as f64).cbrt() } else { hi - lo };
    let bins = (((hi - lo) / width).ceil() as usize).clamp(1, s.len());
    let width = (hi - lo) / bins as f64;
    let mut counts = vec![0usize; bins];
    for v in &s {
        counts[(((v - lo) / width) as usize).min(bins - 1)] += 1;
    }
    let best = (0..bins).fold(0, |b, k| if counts[k] > counts[b] { k } else { b });
    lo + (best as f64 + 0.5) * width
}

/// `sqrt(T) * mean / std` with the Bessel-corrected standard deviation.
pub fn sharpe_ratio(returns: &[f64], t: f64) -> Result<f64> {
    if returns.len() < 2 {
        return Err(MetricsError::TooFewSamples { need: 2, got: returns.len() });
    }
    let mu = mean(returns);
    let sd = std_dev(returns);
    if !(sd > 1e-14 * mu.abs()) || sd == 0.0 {
        return Err(MetricsError::UndefinedSharpe);
    }
    Ok(t.sqrt() * mu / sd)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Drawdown {
    pub dd: Vec<f64>,
    pub mdd: Vec<f64>,
    /// Mean number of steps from a peak until the curve regains it; an
    /// episode still open at the end counts up to the last sample.
    pub avg_duration: f64,
}

pub fn drawdown_curve(cumulative: &[f64]) -> Drawdown {
    let mut dd = Vec::with_capacity(cumulative.len());
    let mut mdd = Vec::with_capacity(cumulative.len());
    let mut peak = f64::NEG_INFINITY;
    let mut peak_at = 0;
    let mut worst: f64 = 0.0;
    let mut durations = Vec::new();
    let mut in_dd = false;
    for (t, &c) in cumulative.iter().enumerate() {
        if c >= peak {
            if in_dd {
                durations.push((t - peak_at) as f64);
                in_dd = false;
            }
            peak = c;
            peak_at = t;
        }
        let d = (peak - c).max(0.0);
        in_dd |= d > 0.0;
        worst = worst.max(d);
        dd.push(d);
        mdd.push(worst);
    }
    if in_dd {
        durations.push((cumulative.len() - 1 - peak_at) as f64);
    }
    let avg_duration = if durations.is_empty() { 0.0 } else { mean(&durations) };
    Drawdown { dd, mdd, avg_duration }
}

/// Empirical `c`-quantile of returns and the mean of the tail at or below it.
pub fn value_at_risk(returns: &[f64], c: f64) -> Result<(f64, f64)> {
    if !(c > 0.0 && c < 1.0) {
        return Err(MetricsError::InvalidCutoff(c));
    }
    if returns.len() < 2 {
        return Err(MetricsError::TooFewSamples { need: 2, got: returns.len() });
    }
    let var = quantile(returns, c);
    let tail: Vec<f64> = returns.iter().copied().filter(|&r| r <= var).collect();
    let cvar = if tail.is_empty() { var } else { mean(&tail) };
    Ok((var, cvar))
}

/// Summary of a strategy's per-step simple returns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerformanceReport {
    pub cumulative_return: f64,
    /// `None` when the return series has zero variance.
    pub sharpe: Option<f64>,
    pub max_drawdown: f64,
    pub avg_drawdown_days: f64,
    pub var_5: f64,
    pub cvar_5: f64,
    pub hit_ratio: f64,
    /// `None` when there are no losing steps.
    pub win_loss_ratio: Option<f64>,
}

impl PerformanceReport {
    pub const CSV_HEADER: &'static str =
        "cumulative_return,sharpe,max_drawdown,avg_drawdown_days,var_5,cvar_5,hit_ratio,win_loss_ratio";

    /// `annualization` replaces the `sqrt(T)` Sharpe factor, e.g. `Some(252.0)`.
    pub fn from_returns(returns: &[f64], annualization: Option<f64>) -> Self {
        let n = returns.len();
        let mut wealth = 1.0;
        let cumulative: Vec<f64> = returns
            .iter()
            .map(|r| {
                wealth *= 1.0 + r;
                wealth - 1.0
            })
            .collect();
        let dd = if n > 0 { drawdown_curve(&cumulative) } else { drawdown_curve(&[0.0]) };
        let (var_5, cvar_5) = value_at_risk(returns, 0.05).unwrap_or((0.0, 0.0));
        let wins: Vec<f64> = returns.iter().copied().filter(|&r| r > 0.0).collect();
        let losses: Vec<f64> = returns.iter().copied().filter(|&r| r < 0.0).collect();
        let win_loss_ratio = (!wins.is_empty() && !losses.is_empty()).then(|| mean(&wins) / mean(&losses).abs());
        Self {
            cumulative_return: cumulative.last().copied().unwrap_or(0.0),
            sharpe: sharpe_ratio(returns, annualization.unwrap_or(n as f64)).ok(),
            max_drawdown: dd.mdd.last().copied().unwrap_or(0.0),
            avg_drawdown_days: dd.avg_duration,
            var_5,
            cvar_5,
            hit_ratio: if n == 0 { 0.0 } else { wins.len() as f64 / n as f64 },
            win_loss_ratio,
        }
    }

    pub fn csv_row(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{},{}",
            self.cumulative_return,
            opt(self.sharpe),
            self.max_drawdown,
            self.avg_drawdown_days,
            self.var_5,
            self.cvar_5,
            self.hit_ratio,
            opt(self.win_loss_ratio)
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market_data::ReturnsKind;
    use proptest::prelude::*;

    fn frame(rows: &[Vec<f64>]) -> ReturnsFrame {
        let m = rows[0].len();
        ReturnsFrame::from_rows(ReturnsKind::Log, (0..m).map(|i| format!("A{i}")).collect(), rows).unwrap()
    }

    #[test]
    fn constant_column() {
        let s = moments(&frame(&[vec![1.0], vec![1.0], vec![1.0]])).unwrap();
        assert_eq!(s.mean, vec![1.0]);
        assert_eq!(s.covariance[(0, 0)], 0.0);
        assert_eq!(s.skewness, vec![None]);
        assert_eq!(s.mode, vec![1.0]);
    }

    #[test]
    fn bessel_two_samples() {
        let s = moments(&frame(&[vec![0.0], vec![2.0]])).unwrap();
        assert_eq!(s.mean, vec![1.0]);
        assert!((s.covariance[(0, 0)] - 2.0).abs() < 1e-15);
    }

    #[test]
    fn self_correlation_is_one() {
        let s = moments(&frame(&[vec![0.1, 0.1], vec![-0.3, -0.3], vec![0.2, 0.2], vec![0.05, 0.05]])).unwrap();
        let c = s.correlation();
        assert!((c[(0, 1)] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn skew_and_kurtosis_reference() {
        // x = (0,0,0,4): mean 1, central moments m2=3, m3=6, m4=84/4=21
        let s = moments(&frame(&[vec![0.0], vec![0.0], vec![0.0], vec![4.0]])).unwrap();
        assert!((s.skewness[0].unwrap() - 6.0 / 3f64.powf(1.5)).abs() < 1e-12);
        assert!((s.kurtosis[0].unwrap() - 21.0 / 9.0).abs() < 1e-12);
        assert_eq!(s.median[0], 0.0);
    }

    #[test]
    fn sharpe_worked_examples() {
        // mean 4, std 3: samples 1 and 7; mean 1, std 1: 1 +/- 1/sqrt(2)
        let t = 10.0;
        let r = sharpe_ratio(&[1.0, 7.0], t).unwrap();
        assert!((r - t.sqrt() * 4.0 / (18f64).sqrt()).abs() < 1e-12);
        let red = [4.0 - 3.0, 4.0 + 3.0, 4.0];
        assert!((sharpe_ratio(&red, t).unwrap() - t.sqrt() * 4.0 / 3.0).abs() < 1e-12);
        let blue = [0.0, 2.0, 1.0];
        assert!((sharpe_ratio(&blue, t).unwrap() - t.sqrt()).abs() < 1e-12);
        assert_eq!(sharpe_ratio(&[0.3; 5], t), Err(MetricsError::UndefinedSharpe));
    }

    #[test]
    fn drawdown_examples() {
        let d = drawdown_curve(&[0.0, 1.0, 0.5, 2.0]);
        assert_eq!(d.dd, vec![0.0, 0.0, 0.5, 0.0]);
        assert_eq!(*d.mdd.last().unwrap(), 0.5);
        assert_eq!(d.avg_duration, 2.0);
        assert!(drawdown_curve(&[1.0, 2.0, 3.0]).dd.iter().all(|&v| v == 0.0));
        assert!(drawdown_curve(&[2.0; 4]).dd.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn var_examples() {
        let x: Vec<f64> = (1..=100).map(f64::from).collect();
        let (v, cv) = value_at_risk(&x, 0.05).unwrap();
        assert!((v - 5.95).abs() < 1e-12);
        assert!((cv - 3.0).abs() < 1e-12);
        assert!((value_at_risk(&[-2.0, -1.0, 1.0, 2.0], 0.5).unwrap().0).abs() < 1e-15);
        let (v, cv) = value_at_risk(&[0.7; 6], 0.05).unwrap();
        assert!((v - 0.7).abs() < 1e-15 && (cv - 0.7).abs() < 1e-15);
        assert!(value_at_risk(&x, 1.0).is_err());
    }

    #[test]
    fn report_on_flat_returns() {
        let r = PerformanceReport::from_returns(&[0.0; 10], None);
        assert_eq!(r.cumulative_return, 0.0);
        assert_eq!(r.sharpe, None);
        assert_eq!(r.hit_ratio, 0.0);
        assert_eq!(r.csv_row().split(',').count(), PerformanceReport::CSV_HEADER.split(',').count());
    }

    proptest! {
        #[test]
        fn covariance_psd_and_portfolio_variance(
            data in prop::collection::vec(-0.1f64..0.1, 40..80),
            raw_w in prop::collection::vec(0.01f64..1.0, 4),
        ) {
            let rows: Vec<Vec<f64>> = data.chunks_exact(4).map(|c| c.to_vec()).collect();
            let s = moments(&frame(&rows)).unwrap();
            let eig = s.covariance.clone().symmetric_eigen();
            prop_assert!(eig.eigenvalues.min() > -1e-10);
            let sum: f64 = raw_w.iter().sum();
            let w: Vec<f64> = raw_w.iter().map(|x| x / sum).collect();
            let projected: Vec<f64> = rows.iter().map(|r| r.iter().zip(&w).map(|(a, b)| a * b).sum()).collect();
            prop_assert!((s.portfolio_variance(&w) - variance(&projected)).abs() < 1e-9);
        }

        #[test]
        fn sharpe_scale_invariant(x in prop::collection::vec(-1.0f64..1.0, 3..30), k in 0.01f64..100.0) {
            if let Ok(a) = sharpe_ratio(&x, 7.0) {
                let scaled: Vec<f64> = x.iter().map(|v| v * k).collect();
                let b = sharpe_ratio(&scaled, 7.0).unwrap();
                prop_assert!((a - b).abs() < 1e-12 * a.abs().max(1.0));
            }
        }

        #[test]
        fn mdd_nondecreasing_and_var_monotone(x in prop::collection::vec(-1.0f64..1.0, 2..50)) {
            let d = drawdown_curve(&x);
            prop_assert!(d.mdd.windows(2).all(|w| w[1] >= w[0]));
            let mut prev = f64::NEG_INFINITY;
            for c in [0.01, 0.05, 0.1, 0.3, 0.5, 0.9] {
                let v = value_at_risk(&x, c).unwrap().0;
                prop_assert!(v >= prev);
                prev = v;
            }
        }
    }
}
