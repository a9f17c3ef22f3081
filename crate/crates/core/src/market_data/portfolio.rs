use serde::{Deserialize, Serialize};

use super::{MarketDataError, Result};

pub const BUDGET_TOLERANCE: f64 = 1e-9;

/// Budget allocation across `M` assets; weights sum to one and, unless
/// `short_allowed`, are nonnegative.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawPortfolio", into = "RawPortfolio")]
pub struct PortfolioVector {
    weights: Vec<f64>,
    short_allowed: bool,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPortfolio {
    weights: Vec<f64>,
    #[serde(default)]
    short_allowed: bool,
}

impl TryFrom<RawPortfolio> for PortfolioVector {
    type Error = MarketDataError;

    fn try_from(raw: RawPortfolio) -> Result<Self> {
        PortfolioVector::new(raw.weights, raw.short_allowed)
    }
}

impl From<PortfolioVector> for RawPortfolio {
    fn from(p: PortfolioVector) -> Self {
        RawPortfolio { weights: p.weights, short_allowed: p.short_allowed }
    }
}

impl PortfolioVector {
    pub fn new(weights: Vec<f64>, short_allowed: bool) -> Result<Self> {
        if weights.is_empty() {
            return Err(MarketDataError::Validation("empty portfolio vector".into()));
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(MarketDataError::Validation(format!("non-finite weights {weights:?}")));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > BUDGET_TOLERANCE {
            return Err(MarketDataError::Validation(format!("weights sum to {sum}, not 1")));
        }
        if !short_allowed {
            if let Some(w) = weights.iter().find(|&&w| w < 0.0) {
                return Err(MarketDataError::Validation(format!(
                    "negative weight {w} with short sales disabled"
                )));
            }
        }
        Ok(Self { weights, short_allowed })
    }

    /// Long-only vector from approximately feasible weights: tiny negatives
    /// (solver noise) are clipped and the budget renormalized.
    pub fn from_clipped(weights: &[f64]) -> Result<Self> {
        let clipped: Vec<f64> = weights.iter().map(|w| w.max(0.0)).collect();
        let sum: f64 = clipped.iter().sum();
        if !(sum > 0.0) {
            return Err(MarketDataError::Validation(format!("cannot normalize {weights:?}")));
        }
        Self::new(clipped.into_iter().map(|w| w / sum).collect(), false)
    }

    pub fn uniform(m: usize) -> Self {
        Self { weights: vec![1.0 / m as f64; m], short_allowed: false }
    }

    pub fn one_hot(m: usize, j: usize) -> Self {
        let mut weights = vec![0.0; m];
        weights[j] = 1.0;
        Self { weights, short_allowed: false }
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn into_weights(self) -> Vec<f64> {
        self.weights
    }

    pub fn short_allowed(&self) -> bool {
        self.short_allowed
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn dot(&self, x: &[f64]) -> f64 {
        self.weights.iter().zip(x).map(|(w, x)| w * x).sum()
    }

    /// `||self - other||_1`
    pub fn turnover(&self, other: &[f64]) -> f64 {
        self.weights.iter().zip(other).map(|(a, b)| (a - b).abs()).sum()
    }

    /// Holdings after one period of simple returns `r` without rebalancing:
    /// `w_i (1 + r_i) / (1 + w . r)`.
    pub fn drifted(&self, r: &[f64]) -> Self {
        let growth = 1.0 + self.dot(r);
        let weights = self
            .weights
            .iter()
            .zip(r)
            .map(|(w, ri)| w * (1.0 + ri) / growth)
            .collect();
        Self { weights, short_allowed: self.short_allowed }
    }
}
