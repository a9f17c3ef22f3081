use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::{MarketDataError, PortfolioVector, Result};

/// Aligned multi-asset price history, stored row-major (`T` rows of `M` prices).
#[derive(Debug, Clone, PartialEq)]
pub struct PriceFrame {
    timestamps: Vec<NaiveDate>,
    assets: Vec<String>,
    values: Vec<f64>,
}

impl PriceFrame {
    /// Validates positivity, strictly increasing dates and the `T x M` shape.
    pub fn new(timestamps: Vec<NaiveDate>, assets: Vec<String>, values: Vec<f64>) -> Result<Self> {
        let m = assets.len();
        if m == 0 {
            return Err(MarketDataError::Validation("price frame needs at least one asset".into()));
        }
        if values.len() != timestamps.len() * m {
            return Err(MarketDataError::Dimension(format!(
                "{} values for {} rows x {} assets",
                values.len(),
                timestamps.len(),
                m
            )));
        }
        if let Some(w) = timestamps.windows(2).find(|w| w[0] >= w[1]) {
            return Err(MarketDataError::Validation(format!(
                "timestamps not strictly increasing at {} -> {}",
                w[0], w[1]
            )));
        }
        if let Some((k, p)) = values.iter().enumerate().find(|(_, p)| !(**p > 0.0) || !p.is_finite()) {
            return Err(MarketDataError::Validation(format!(
                "non-positive price {} at row {}, asset {}",
                p,
                k / m,
                assets[k % m]
            )));
        }
        Ok(Self { timestamps, assets, values })
    }

    /// Frame with synthetic consecutive daily dates starting at 2000-01-01.
    pub fn from_rows(assets: Vec<String>, rows: &[Vec<f64>]) -> Result<Self> {
        let values = rows.iter().flatten().copied().collect();
        Self::new(synthetic_dates(rows.len()), assets, values)
    }

    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    pub fn n_assets(&self) -> usize {
        self.assets.len()
    }

    pub fn assets(&self) -> &[String] {
        &self.assets
    }

    pub fn timestamps(&self) -> &[NaiveDate] {
        &self.timestamps
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, t: usize) -> &[f64] {
        let m = self.n_assets();
        &self.values[t * m..(t + 1) * m]
    }

    pub fn column(&self, i: usize) -> Vec<f64> {
        (0..self.len()).map(|t| self.row(t)[i]).collect()
    }

    pub fn get(&self, t: usize, i: usize) -> f64 {
        self.values[t * self.n_assets() + i]
    }

    /// Rows `start..end` as a new frame.
    pub fn slice(&self, start: usize, end: usize) -> Result<Self> {
        if start >= end || end > self.len() {
            return Err(MarketDataError::Dimension(format!(
                "slice {start}..{end} out of range for {} rows",
                self.len()
            )));
        }
        let m = self.n_assets();
        Self::new(
            self.timestamps[start..end].to_vec(),
            self.assets.clone(),
            self.values[start * m..end * m].to_vec(),
        )
    }
}

pub(crate) fn synthetic_dates(n: usize) -> Vec<NaiveDate> {
    let base = NaiveDate::from_ymd_opt(2000, 1, 1).expect("valid base date");
    base.iter_days().take(n).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReturnsKind {
    Gross,
    Simple,
    Log,
}

/// Per-step returns; row `t` holds the return realized at `timestamps[t]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReturnsFrame {
    kind: ReturnsKind,
    timestamps: Vec<NaiveDate>,
    assets: Vec<String>,
    values: Vec<f64>,
}

impl ReturnsFrame {
    pub fn new(
        kind: ReturnsKind,
        timestamps: Vec<NaiveDate>,
        assets: Vec<String>,
        values: Vec<f64>,
    ) -> Result<Self> {
        let m = assets.len();
        if m == 0 || values.len() != timestamps.len() * m {
            return Err(MarketDataError::Dimension(format!(
                "{} values for {} rows x {} assets",
                values.len(),
                timestamps.len(),
                m
            )));
        }
        let bad = values.iter().find(|&&v| match kind {
            ReturnsKind::Gross => !(v > 0.0) || !v.is_finite(),
            ReturnsKind::Simple => !(v > -1.0) || !v.is_finite(),
            ReturnsKind::Log => !v.is_finite(),
        });
        if let Some(v) = bad {
            return Err(MarketDataError::Validation(format!("invalid {kind:?} return {v}")));
        }
        Ok(Self { kind, timestamps, assets, values })
    }

    /// Build from a list of rows with synthetic dates.
    pub fn from_rows(kind: ReturnsKind, assets: Vec<String>, rows: &[Vec<f64>]) -> Result<Self> {
        let values = rows.iter().flatten().copied().collect();
        Self::new(kind, synthetic_dates(rows.len()), assets, values)
    }

    pub fn kind(&self) -> ReturnsKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    pub fn n_assets(&self) -> usize {
        self.assets.len()
    }

    pub fn assets(&self) -> &[String] {
        &self.assets
    }

    pub fn timestamps(&self) -> &[NaiveDate] {
        &self.timestamps
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, t: usize) -> &[f64] {
        let m = self.n_assets();
        &self.values[t * m..(t + 1) * m]
    }

    pub fn column(&self, i: usize) -> Vec<f64> {
        (0..self.len()).map(|t| self.row(t)[i]).collect()
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks(self.n_assets())
    }

    /// Rows `start..end` (a lookback window).
    pub fn window(&self, start: usize, end: usize) -> Result<Self> {
        if start >= end || end > self.len() {
            return Err(MarketDataError::Dimension(format!(
                "window {start}..{end} out of range for {} rows",
                self.len()
            )));
        }
        let m = self.n_assets();
        Ok(Self {
            kind: self.kind,
            timestamps: self.timestamps[start..end].to_vec(),
            assets: self.assets.clone(),
            values: self.values[start * m..end * m].to_vec(),
        })
    }

    /// Re-express the same returns in another kind.
    pub fn convert(&self, kind: ReturnsKind) -> Result<Self> {
        let values = self
            .values
            .iter()
            .map(|&v| {
                let gross = match self.kind {
                    ReturnsKind::Gross => v,
                    ReturnsKind::Simple => 1.0 + v,
                    ReturnsKind::Log => v.exp(),
                };
                match kind {
                    ReturnsKind::Gross => gross,
                    ReturnsKind::Simple => match self.kind {
                        ReturnsKind::Log => v.exp_m1(),
                        _ => gross - 1.0,
                    },
                    ReturnsKind::Log => match self.kind {
                        ReturnsKind::Simple => v.ln_1p(),
                        ReturnsKind::Log => v,
                        ReturnsKind::Gross => gross.ln(),
                    },
                }
            })
            .collect();
        Self::new(kind, self.timestamps.clone(), self.assets.clone(), values)
    }

    /// Compound the returns onto `base` prices; the result has one more row
    /// than `self`, dated one day before the first return.
    pub fn to_prices(&self, base: &[f64]) -> Result<PriceFrame> {
        let m = self.n_assets();
        if base.len() != m {
            return Err(MarketDataError::Dimension(format!(
                "{} base prices for {} assets",
                base.len(),
                m
            )));
        }
        let log = self.convert(ReturnsKind::Log)?;
        let mut values = Vec::with_capacity((self.len() + 1) * m);
        let mut level: Vec<f64> = base.iter().map(|p| p.ln()).collect();
        values.extend(base.iter().copied());
        for row in log.rows() {
            for (l, r) in level.iter_mut().zip(row) {
                *l += r;
            }
            values.extend(level.iter().map(|l| l.exp()));
        }
        let first = self
            .timestamps
            .first()
            .and_then(|d| d.pred_opt())
            .unwrap_or_else(|| synthetic_dates(1)[0]);
        let mut timestamps = vec![first];
        timestamps.extend(self.timestamps.iter().copied());
        PriceFrame::new(timestamps, self.assets.clone(), values)
    }
}

/// Per-step returns of each asset: gross `p_t / p_{t-1}`, simple `gross - 1`,
/// log `ln(gross)`.
pub fn to_returns(frame: &PriceFrame, kind: ReturnsKind) -> Result<ReturnsFrame> {
    if frame.len() < 2 {
        return Err(MarketDataError::Validation(format!(
            "need at least 2 price rows, got {}",
            frame.len()
        )));
    }
    let m = frame.n_assets();
    let mut values = Vec::with_capacity((frame.len() - 1) * m);
    for t in 1..frame.len() {
        for (prev, cur) in frame.row(t - 1).iter().zip(frame.row(t)) {
            values.push(match kind {
                ReturnsKind::Gross => cur / prev,
                ReturnsKind::Simple => cur / prev - 1.0,
                ReturnsKind::Log => (cur / prev).ln(),
            });
        }
    }
    ReturnsFrame::new(kind, frame.timestamps[1..].to_vec(), frame.assets.clone(), values)
}

/// Portfolio simple return per step, `w_t . r_t`.
pub fn portfolio_returns(returns: &ReturnsFrame, weights_path: &[PortfolioVector]) -> Result<Vec<f64>> {
    if returns.kind() != ReturnsKind::Simple {
        return Err(MarketDataError::Validation(
            "portfolio returns are linear only in simple returns".into(),
        ));
    }
    if weights_path.len() != returns.len() {
        return Err(MarketDataError::Dimension(format!(
            "{} weight vectors for {} return rows",
            weights_path.len(),
            returns.len()
        )));
    }
    returns
        .rows()
        .zip(weights_path)
        .map(|(r, w)| {
            if w.len() != r.len() {
                return Err(MarketDataError::Dimension(format!(
                    "portfolio of {} assets against {} returns",
                    w.len(),
                    r.len()
                )));
            }
            Ok(w.dot(r))
        })
        .collect()
}
