use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::planner::{plan_action, PlannerConfig};
use super::rnn::{RnnConfig, RnnPredictor};
use super::var::{fit_var_rows, select_order_rows, VarModel};
use super::{holdings, Agent};
use crate::env::{AgentObservation, EnvStep};
use crate::market_data::PortfolioVector;
use crate::{Error, Result};

/// Companion spectral radius above which VAR rollouts are refused.
pub const MAX_SPECTRAL_RADIUS: f64 = 1.5;

/// An identified model of the market used for planning.
pub trait Predictor {
    fn kind(&self) -> &str;
    /// Offline fit on a row-major `T x M` log-return history.
    fn fit(&mut self, values: &[f64], m: usize) -> Result<()>;
    fn is_fitted(&self) -> bool;
    /// Forget per-episode state.
    fn reset(&mut self);
    /// `horizon x M` predicted log returns following the observation.
    fn predict(&mut self, obs: &AgentObservation, horizon: usize) -> Result<Vec<Vec<f64>>>;
    /// Online learning step once the row following `obs` is revealed.
    fn update(&mut self, obs: &AgentObservation, next_row: &[f64]) -> Result<()>;
    fn residual_cov(&self) -> DMatrix<f64>;
    fn parameter_count(&self) -> usize;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VarModelConfig {
    /// Fixed order; chosen by AIC up to `p_max` when absent.
    pub order: Option<usize>,
    pub p_max: usize,
    /// Least-mean-squares step size of the online update.
    pub lr: f64,
}

impl Default for VarModelConfig {
    fn default() -> Self {
        Self { order: None, p_max: 12, lr: 1e-4 }
    }
}

#[derive(Debug, Clone)]
pub struct VarPredictor {
    pub config: VarModelConfig,
    pub model: Option<VarModel>,
}

impl VarPredictor {
    pub fn new(config: VarModelConfig) -> Self {
        Self { config, model: None }
    }

    fn model(&self) -> Result<&VarModel> {
        self.model.as_ref().ok_or_else(|| Error::Agent("VAR model is not fitted".into()))
    }
}

impl Predictor for VarPredictor {
    fn kind(&self) -> &str {
        "var"
    }

    fn fit(&mut self, values: &[f64], m: usize) -> Result<()> {
        let t = values.len() / m;
        let p = match self.config.order {
            Some(p) => p,
            None => {
                let feasible = t.saturating_sub(2) / m;
                let p_max = self.config.p_max.min(feasible);
                if p_max == 0 {
                    return Err(Error::Agent(format!("{t} rows are too few to fit a VAR on {m} assets")));
                }
                select_order_rows(values, m, p_max)?
            }
        };
        let model = fit_var_rows(values, m, p)?;
        log::debug!("VAR({p}) fitted, spectral radius {:.3}", model.spectral_radius());
        self.model = Some(model);
        Ok(())
    }

    fn is_fitted(&self) -> bool {
        self.model.is_some()
    }

    fn reset(&mut self) {}

    fn predict(&mut self, obs: &AgentObservation, horizon: usize) -> Result<Vec<Vec<f64>>> {
        let model = self.model()?;
        let radius = model.spectral_radius();
        if radius > MAX_SPECTRAL_RADIUS {
            return Err(Error::Agent(format!("VAR companion spectral radius {radius:.3} exceeds {MAX_SPECTRAL_RADIUS}")));
        }
        model.predict_path(&obs.log_window, horizon)
    }

    fn update(&mut self, obs: &AgentObservation, next_row: &[f64]) -> Result<()> {
        let lr = self.config.lr;
        if let Some(model) = self.model.as_mut() {
            model.lms_update(&obs.log_window, next_row, lr);
        }
        Ok(())
    }

    fn residual_cov(&self) -> DMatrix<f64> {
        self.model.as_ref().map(|m| m.residual_cov.clone()).unwrap_or_else(|| DMatrix::zeros(0, 0))
    }

    fn parameter_count(&self) -> usize {
        self.model.as_ref().map_or(0, VarModel::parameter_count)
    }
}

/// [`RnnPredictor`] kept in step with the observation stream: the first
/// observation of an episode warms the state up on the whole window, later
/// ones feed only the newly revealed row.
#[derive(Debug, Clone)]
pub struct RnnModel {
    pub rnn: RnnPredictor,
    last_t: Option<usize>,
}

impl RnnModel {
    pub fn new(m: usize, config: RnnConfig) -> Self {
        Self { rnn: RnnPredictor::new(m, config), last_t: None }
    }

    fn sync(&mut self, obs: &AgentObservation) -> Result<()> {
        let first_new = match self.last_t {
            Some(t) if obs.t >= t && obs.t - t <= obs.window => obs.window - (obs.t - t),
            _ => {
                self.rnn.reset_state();
                0
            }
        };
        for k in first_new..obs.window {
            self.rnn.consume(obs.row(k))?;
        }
        self.last_t = Some(obs.t);
        Ok(())
    }
}

impl Predictor for RnnModel {
    fn kind(&self) -> &str {
        "rnn"
    }

    fn fit(&mut self, values: &[f64], _m: usize) -> Result<()> {
        let curve = self.rnn.fit(values)?;
        if let Some(last) = curve.last() {
            log::debug!("RNN fitted, final epoch loss {last:.6}");
        }
        self.last_t = None;
        Ok(())
    }

    fn is_fitted(&self) -> bool {
        self.rnn.is_fitted()
    }

    fn reset(&mut self) {
        self.last_t = None;
        self.rnn.reset_state();
    }

    fn predict(&mut self, obs: &AgentObservation, horizon: usize) -> Result<Vec<Vec<f64>>> {
        self.sync(obs)?;
        self.rnn.predict_path(horizon)
    }

    fn update(&mut self, obs: &AgentObservation, next_row: &[f64]) -> Result<()> {
        self.sync(obs)?;
        self.rnn.update(next_row).map(|_| ())
    }

    fn residual_cov(&self) -> DMatrix<f64> {
        self.rnn.residual_cov().clone()
    }

    fn parameter_count(&self) -> usize {
        self.rnn.param_count()
    }
}

/// Identify, predict, plan: the predictor's path goes through the planner's
/// QP at every step; with training on, the model learns online from each
/// revealed row.
pub struct ModelBasedAgent {
    name: String,
    pub predictor: Box<dyn Predictor>,
    pub planner: PlannerConfig,
    pub beta: f64,
    training: bool,
}

impl ModelBasedAgent {
    pub fn new(predictor: Box<dyn Predictor>, planner: PlannerConfig, beta: f64) -> Self {
        let name = format!("{}_planner", predictor.kind());
        Self { name, predictor, planner, beta, training: true }
    }

    pub fn fit(&mut self, values: &[f64], m: usize) -> Result<()> {
        self.predictor.fit(values, m)
    }
}

impl Agent for ModelBasedAgent {
    fn name(&self) -> &str {
        &self.name
    }

    fn reset(&mut self) {
        self.predictor.reset();
    }

    fn act(&mut self, obs: &AgentObservation) -> Result<PortfolioVector> {
        if !self.predictor.is_fitted() {
            log::warn!("{}: model not fitted before trading; fitting on the first window", self.name);
            self.predictor.fit(&obs.log_window, obs.n_assets)?;
        }
        let current = holdings(obs);
        let path = match self.predictor.predict(obs, self.planner.horizon) {
            Ok(path) => path,
            Err(Error::Agent(msg)) => {
                log::warn!("{}: {msg}; holding position", self.name);
                return Ok(current.unwrap_or_else(|| PortfolioVector::uniform(obs.n_assets)));
            }
            Err(e) => return Err(e),
        };
        let plan = plan_action(&path, &self.predictor.residual_cov(), current.as_ref(), self.beta, &self.planner)?;
        Ok(plan.action)
    }

    fn observe(&mut self, obs: &AgentObservation, _action: &PortfolioVector, step: &EnvStep) -> Result<()> {
        if self.training {
            self.predictor.update(obs, step.observation.last_row())?;
        }
        Ok(())
    }

    fn set_training(&mut self, training: bool) {
        self.training = training;
    }
}
