use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::market_data::ReturnsFrame;
use crate::{Error, Result};

const RIDGE: f64 = 1e-8;
const RANK_TOL: f64 = 1e-12;

/// Vector autoregression `x_t = c + sum_i A_i x_{t-i} + e_t`.
#[derive(Debug, Clone, PartialEq)]
pub struct VarModel {
    pub m: usize,
    pub p: usize,
    pub intercept: Vec<f64>,
    /// `A_1..A_p`, each `M x M`.
    pub coefficients: Vec<DMatrix<f64>>,
    /// Residual covariance of the fit (zero until fitted).
    pub residual_cov: DMatrix<f64>,
    /// Residual mean square averaged over assets.
    pub residual_mse: f64,
    pub fitted: bool,
}

impl VarModel {
    /// Unfitted model with zero coefficients.
    pub fn new(m: usize, p: usize) -> Self {
        Self {
            m,
            p,
            intercept: vec![0.0; m],
            coefficients: vec![DMatrix::zeros(m, m); p],
            residual_cov: DMatrix::zeros(m, m),
            residual_mse: 0.0,
            fitted: false,
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.m * self.m * self.p + self.m
    }

    /// One-step prediction from `lags`, most recent first.
    fn predict_one(&self, lags: &[&[f64]]) -> Vec<f64> {
        let mut y = self.intercept.clone();
        for (a, x) in self.coefficients.iter().zip(lags) {
            for r in 0..self.m {
                y[r] += (0..self.m).map(|c| a[(r, c)] * x[c]).sum::<f64>();
            }
        }
        y
    }

    /// Largest eigenvalue modulus of the companion matrix.
    pub fn spectral_radius(&self) -> f64 {
        let (m, p) = (self.m, self.p);
        let mut comp = DMatrix::zeros(m * p, m * p);
        for (i, a) in self.coefficients.iter().enumerate() {
            comp.view_mut((0, i * m), (m, m)).copy_from(a);
        }
        for k in m..m * p {
            comp[(k, k - m)] = 1.0;
        }
        comp.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    /// Recursive `horizon`-step rollout from a row-major window of log
    /// returns (oldest row first, at least `p` rows).
    pub fn predict_path(&self, window: &[f64], horizon: usize) -> Result<Vec<Vec<f64>>> {
        if !self.fitted {
            return Err(Error::Agent("VAR model is not fitted".into()));
        }
        let rows = window.len() / self.m;
        if !window.len().is_multiple_of(self.m) || rows < self.p {
            return Err(Error::Agent(format!("window of {rows} rows is shorter than the VAR order {}", self.p)));
        }
        let mut hist: Vec<Vec<f64>> = window[(rows - self.p) * self.m..].chunks(self.m).map(<[f64]>::to_vec).collect();
        let mut path = Vec::with_capacity(horizon);
        for _ in 0..horizon {
            let y = {
                let lags: Vec<&[f64]> = hist.iter().rev().map(Vec::as_slice).collect();
                self.predict_one(&lags)
            };
            hist.push(y.clone());
            hist.remove(0);
            path.push(y);
        }
        Ok(path)
    }

    /// One least-mean-squares step on the regression pair
    /// `(window's last p rows -> target)`.
    pub fn lms_update(&mut self, window: &[f64], target: &[f64], lr: f64) {
        let rows = window.len() / self.m;
        let lags: Vec<&[f64]> = (0..self.p).map(|i| &window[(rows - 1 - i) * self.m..(rows - i) * self.m]).collect();
        let e: Vec<f64> = self.predict_one(&lags).iter().zip(target).map(|(y, t)| t - y).collect();
        for r in 0..self.m {
            self.intercept[r] += lr * e[r];
        }
        for (a, x) in self.coefficients.iter_mut().zip(&lags) {
            for r in 0..self.m {
                for c in 0..self.m {
                    a[(r, c)] += lr * e[r] * x[c];
                }
            }
        }
    }

    /// Writes `<base>.json` (order, dimensions, diagnostics) and `<base>.bin`
    /// (intercept, `A_1..A_p` column-major, residual covariance as LE f64).
    pub fn save(&self, base: impl AsRef<Path>) -> Result<()> {
        let base = base.as_ref();
        let manifest = VarManifest {
            format: "portfolio-rl.var".into(),
            m: self.m,
            p: self.p,
            fitted: self.fitted,
            residual_mse: self.residual_mse,
            spectral_radius: self.spectral_radius(),
        };
        let mut bytes = Vec::new();
        let values = self
            .intercept
            .iter()
            .chain(self.coefficients.iter().flat_map(|a| a.iter()))
            .chain(self.residual_cov.iter());
        for v in values {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        let (bin, json) = (base.with_extension("bin"), base.with_extension("json"));
        std::fs::write(&bin, bytes).map_err(crate::io_err(&bin))?;
        let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Agent(e.to_string()))?;
        std::fs::write(&json, text).map_err(crate::io_err(&json))
    }

    pub fn load(base: impl AsRef<Path>) -> Result<Self> {
        let base = base.as_ref();
        let (bin, json) = (base.with_extension("bin"), base.with_extension("json"));
        let text = std::fs::read_to_string(&json).map_err(crate::io_err(&json))?;
        let man: VarManifest = serde_json::from_str(&text).map_err(|e| Error::Agent(format!("{}: {e}", json.display())))?;
        let bytes = std::fs::read(&bin).map_err(crate::io_err(&bin))?;
        let (m, p) = (man.m, man.p);
        let need = m + m * m * p + m * m;
        if bytes.len() != need * 8 {
            return Err(Error::Agent(format!("{} holds {} bytes, expected {}", bin.display(), bytes.len(), need * 8)));
        }
        let vals: Vec<f64> = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        let mut model = Self::new(m, p);
        model.intercept.copy_from_slice(&vals[..m]);
        for (i, a) in model.coefficients.iter_mut().enumerate() {
            let at = m + i * m * m;
            *a = DMatrix::from_column_slice(m, m, &vals[at..at + m * m]);
        }
        model.residual_cov = DMatrix::from_column_slice(m, m, &vals[m + m * m * p..]);
        model.residual_mse = man.residual_mse;
        model.fitted = man.fitted;
        Ok(model)
    }
}

#[derive(Serialize, Deserialize)]
struct VarManifest {
    format: String,
    m: usize,
    p: usize,
    fitted: bool,
    residual_mse: f64,
    spectral_radius: f64,
}

/// Least-squares fit of a VAR(p) to log returns.
pub fn fit_var(returns: &ReturnsFrame, p: usize) -> Result<VarModel> {
    fit_var_rows(returns.values(), returns.n_assets(), p)
}

/// [`fit_var`] on a row-major `T x M` slice.
pub fn fit_var_rows(values: &[f64], m: usize, p: usize) -> Result<VarModel> {
    if m == 0 || !values.len().is_multiple_of(m) {
        return Err(Error::Agent(format!("{} values do not form rows of {m}", values.len())));
    }
    let t = values.len() / m;
    if p == 0 || t <= m * p + 1 {
        return Err(Error::Agent(format!("VAR({p}) on {m} assets needs more than {} rows, got {t}", m * p + 1)));
    }
    let row = |k: usize| &values[k * m..(k + 1) * m];
    let n = t - p;
    let k = 1 + m * p;
    let x = DMatrix::from_fn(n, k, |r, c| {
        if c == 0 {
            1.0
        } else {
            let lag = (c - 1) / m + 1;
            row(p + r - lag)[(c - 1) % m]
        }
    });
    let y = DMatrix::from_fn(n, m, |r, c| row(p + r)[c]);

    let svd = x.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    let b = if smax > 0.0 && smin > RANK_TOL * smax {
        svd.solve(&y, 0.0).map_err(|e| Error::Agent(e.to_string()))?
    } else {
        log::warn!("rank-deficient VAR({p}) design (singular values {smin:e}..{smax:e}); using ridge {RIDGE:e}");
        let xtx = x.transpose() * &x + DMatrix::identity(k, k) * RIDGE;
        let xty = x.transpose() * &y;
        xtx.cholesky()
            .ok_or_else(|| Error::Agent("ridge normal equations are not positive definite".into()))?
            .solve(&xty)
    };

    let mut model = VarModel::new(m, p);
    for c in 0..m {
        model.intercept[c] = b[(0, c)];
    }
    for (i, a) in model.coefficients.iter_mut().enumerate() {
        for r in 0..m {
            for c in 0..m {
                a[(r, c)] = b[(1 + i * m + c, r)];
            }
        }
    }
    let resid = &y - &x * &b;
    let dof = if n > k { n - k } else { n };
    model.residual_cov = resid.transpose() * &resid / dof as f64;
    model.residual_mse = resid.iter().map(|e| e * e).sum::<f64>() / (n * m) as f64;
    model.fitted = true;
    Ok(model)
}

/// Order minimizing `ln(MSE) + 2p / N` over `p = 1..=p_max`. All candidates
/// are fitted on the same targets (rows `p_max..T`), so `N = T - p_max`; ties
/// go to the smaller order.
pub fn select_order_aic(returns: &ReturnsFrame, p_max: usize) -> Result<usize> {
    select_order_rows(returns.values(), returns.n_assets(), p_max)
}

pub(crate) fn select_order_rows(values: &[f64], m: usize, p_max: usize) -> Result<usize> {
    if p_max == 0 {
        return Err(Error::Agent("p_max must be at least 1".into()));
    }
    let t = values.len() / m;
    if t <= m * p_max + 1 {
        return Err(Error::Agent(format!("{t} rows are too few for order {p_max} on {m} assets")));
    }
    let n = (t - p_max) as f64;
    let mut best = (f64::INFINITY, 1);
    for p in 1..=p_max {
        let model = fit_var_rows(&values[(p_max - p) * m..], m, p)?;
        let aic = model.residual_mse.ln() + 2.0 * p as f64 / n;
        if aic < best.0 {
            best = (aic, p);
        }
    }
    Ok(best.1)
}
