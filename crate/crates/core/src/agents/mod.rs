//! Trading agents. Every agent maps an [`AgentObservation`] to a long-only
//! [`PortfolioVector`] and may learn from the transitions it is shown.

mod dsrqn;
mod model_based;
mod msm;
mod network;
mod planner;
mod policy;
mod qlearning;
mod reinforce;
mod rnn;
mod var;

pub use dsrqn::{DsrqnAgent, DsrqnConfig};
pub use model_based::{ModelBasedAgent, Predictor, RnnModel, VarModelConfig, VarPredictor};
pub use msm::{pair_indices, MsmConfig, ScoreMachines};
pub use network::{ConvGruNet, NetConfig, PolicyNetwork};
pub use planner::{plan_action, Plan, PlannerConfig};
pub use policy::{ActionDistribution, DirichletPolicy};
pub use qlearning::{q_learning_tabular, value_iteration, FiniteMdp, QLearningConfig, QTable};
pub use reinforce::{Reinforce, ReinforceConfig};
pub use rnn::{RnnConfig, RnnPredictor};
pub use var::{fit_var, fit_var_rows, select_order_aic, VarModel};

use crate::env::{AgentObservation, EnvStep};
use crate::market_data::{PortfolioVector, ReturnsFrame};
use crate::optimizer::smm_step;
use crate::Result;

pub trait Agent {
    fn name(&self) -> &str;

    /// Called at the start of every episode.
    fn reset(&mut self) {}

    fn act(&mut self, obs: &AgentObservation) -> Result<PortfolioVector>;

    /// The transition that followed `act(obs) == action`.
    fn observe(&mut self, _obs: &AgentObservation, _action: &PortfolioVector, _step: &EnvStep) -> Result<()> {
        Ok(())
    }

    /// Toggles learning and exploration; agents without either ignore it.
    fn set_training(&mut self, _training: bool) {}
}

impl<A: Agent + ?Sized> Agent for Box<A> {
    fn name(&self) -> &str {
        (**self).name()
    }
    fn reset(&mut self) {
        (**self).reset()
    }
    fn act(&mut self, obs: &AgentObservation) -> Result<PortfolioVector> {
        (**self).act(obs)
    }
    fn observe(&mut self, obs: &AgentObservation, action: &PortfolioVector, step: &EnvStep) -> Result<()> {
        (**self).observe(obs, action, step)
    }
    fn set_training(&mut self, training: bool) {
        (**self).set_training(training)
    }
}

/// Current holdings as a portfolio, or `None` while the agent is in cash.
pub(crate) fn holdings(obs: &AgentObservation) -> Option<PortfolioVector> {
    let sum: f64 = obs.current_weights.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return None;
    }
    PortfolioVector::from_clipped(&obs.current_weights).ok()
}

/// Buys `target` once and then lets the holdings drift with prices.
#[derive(Debug, Clone)]
pub struct BuyAndHold {
    target: PortfolioVector,
}

impl BuyAndHold {
    pub fn new(target: PortfolioVector) -> Self {
        Self { target }
    }

    pub fn uniform(m: usize) -> Self {
        Self::new(PortfolioVector::uniform(m))
    }
}

impl Agent for BuyAndHold {
    fn name(&self) -> &str {
        "buy_and_hold"
    }

    fn act(&mut self, obs: &AgentObservation) -> Result<PortfolioVector> {
        Ok(holdings(obs).unwrap_or_else(|| self.target.clone()))
    }
}

/// Rebalances to the same portfolio every step (constant mix).
#[derive(Debug, Clone)]
pub struct FixedAgent {
    name: String,
    weights: PortfolioVector,
}

impl FixedAgent {
    pub fn new(name: impl Into<String>, weights: PortfolioVector) -> Self {
        Self { name: name.into(), weights }
    }

    pub fn uniform(m: usize) -> Self {
        Self::new("uniform", PortfolioVector::uniform(m))
    }
}

impl Agent for FixedAgent {
    fn name(&self) -> &str {
        &self.name
    }

    fn act(&mut self, _obs: &AgentObservation) -> Result<PortfolioVector> {
        Ok(self.weights.clone())
    }
}

/// Sequential Markowitz model: the Sharpe-with-costs QP on the sample
/// moments of the observed window at every rebalance.
#[derive(Debug, Clone)]
pub struct SmmAgent {
    beta: f64,
}

impl SmmAgent {
    pub fn new(beta: f64) -> Self {
        Self { beta }
    }
}

pub(crate) fn simple_window(obs: &AgentObservation) -> Result<ReturnsFrame> {
    let rows: Vec<Vec<f64>> = (0..obs.window).map(|k| obs.row(k).iter().map(|v| v.exp_m1()).collect()).collect();
    let assets = (0..obs.n_assets).map(|i| format!("A{i}")).collect();
    Ok(ReturnsFrame::from_rows(crate::market_data::ReturnsKind::Simple, assets, &rows)?)
}

impl Agent for SmmAgent {
    fn name(&self) -> &str {
        "smm"
    }

    fn act(&mut self, obs: &AgentObservation) -> Result<PortfolioVector> {
        let window = simple_window(obs)?;
        // out of cash every long-only portfolio costs the same beta
        let (w0, beta) = match holdings(obs) {
            Some(w) => (w, self.beta),
            None => (PortfolioVector::uniform(obs.n_assets), 0.0),
        };
        Ok(smm_step(&window, &w0, beta)?)
    }
}

/// Clairvoyant benchmark: puts everything on the asset with the largest
/// next-step return. It reads the future from the frame it was built with.
#[derive(Debug, Clone)]
pub struct ArgmaxOracle {
    simple: ReturnsFrame,
}

impl ArgmaxOracle {
    /// `simple` must be the environment's simple-return frame, so that row
    /// `t` holds the move from price `t` to `t + 1`.
    pub fn new(simple: ReturnsFrame) -> Self {
        Self { simple }
    }
}

impl Agent for ArgmaxOracle {
    fn name(&self) -> &str {
        "oracle"
    }

    fn act(&mut self, obs: &AgentObservation) -> Result<PortfolioVector> {
        let r = self.simple.row(obs.t);
        let j = (0..r.len()).fold(0, |b, k| if r[k] > r[b] { k } else { b });
        Ok(PortfolioVector::one_hot(r.len(), j))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{run_episode, EnvConfig, MarketEnv, RunOptions};
    use crate::market_data::PriceFrame;

    fn zigzag() -> PriceFrame {
        let rows: Vec<Vec<f64>> =
            (0..12).map(|t| if t % 2 == 0 { vec![100.0, 100.0] } else { vec![110.0, 95.0] }).collect();
        PriceFrame::from_rows(vec!["A".into(), "B".into()], &rows).unwrap()
    }

    #[test]
    fn oracle_dominates_fixed_mixes() {
        let p = zigzag();
        let cfg = EnvConfig { window: 2, beta: 0.0, ..EnvConfig::default() };
        let mut env = MarketEnv::new(&p, cfg).unwrap();
        let mut oracle = ArgmaxOracle::new(env.simple_returns().clone());
        let best = run_episode(&mut env, &mut oracle, RunOptions::default()).unwrap().log_wealth();
        for w in [0.0, 0.3, 0.5, 1.0] {
            let fixed = PortfolioVector::new(vec![w, 1.0 - w], false).unwrap();
            let got = run_episode(&mut env, &mut FixedAgent::new("f", fixed), RunOptions::default()).unwrap();
            assert!(got.log_wealth() <= best + 1e-12);
        }
    }

    #[test]
    fn buy_and_hold_never_trades_after_entry() {
        let p = zigzag();
        let mut env = MarketEnv::new(&p, EnvConfig { window: 2, beta: 0.01, ..EnvConfig::default() }).unwrap();
        let ep = run_episode(&mut env, &mut BuyAndHold::uniform(2), RunOptions::default()).unwrap();
        assert!((ep.infos[0].cost - 0.01).abs() < 1e-15);
        assert!(ep.infos[1..].iter().all(|i| i.cost < 1e-15));
    }

    #[test]
    fn smm_emits_valid_portfolios() {
        let rows: Vec<Vec<f64>> = (0..40)
            .map(|t| {
                let t = t as f64;
                vec![100.0 + 5.0 * (0.3 * t).sin(), 100.0 + 0.2 * t, 50.0 + 2.0 * (0.7 * t).cos()]
            })
            .collect();
        let p = PriceFrame::from_rows(vec!["A".into(), "B".into(), "C".into()], &rows).unwrap();
        let mut env = MarketEnv::new(&p, EnvConfig { window: 10, ..EnvConfig::default() }).unwrap();
        let ep = run_episode(&mut env, &mut SmmAgent::new(0.002), RunOptions::default()).unwrap();
        for a in &ep.actions {
            assert!((a.weights().iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert!(a.weights().iter().all(|&w| w >= 0.0));
        }
    }
}
