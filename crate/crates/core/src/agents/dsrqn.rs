use serde::{Deserialize, Serialize};

use super::network::{ConvGruNet, NetConfig, PolicyNetwork};
use super::Agent;
use crate::env::{AgentObservation, EnvStep};
use crate::market_data::PortfolioVector;
use crate::tensor::{softmax, Adam, Optimizer, Tape, Tensor, Var};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DsrqnConfig {
    pub gamma: f64,
    pub lr: f64,
    pub net: NetConfig,
}

impl Default for DsrqnConfig {
    fn default() -> Self {
        Self { gamma: 0.99, lr: 1e-3, net: NetConfig::default() }
    }
}

/// Deep soft recurrent Q-network. The head estimates one action value per
/// asset, the softmax of those values is the allocation, and training is
/// online one-step TD without replay. Component `j` is regressed on the log
/// return asset `j` would have earned plus the discounted best next value.
pub struct DsrqnAgent {
    pub net: ConvGruNet,
    pub config: DsrqnConfig,
    adam: Adam,
    training: bool,
    hidden: Vec<f64>,
    pending: Option<(Tape, Var)>,
}

impl DsrqnAgent {
    pub fn new(m: usize, window: usize, config: DsrqnConfig) -> Self {
        let net = ConvGruNet::new(m, window, config.net.clone());
        Self {
            hidden: vec![0.0; net.state_size()],
            adam: Adam::with_lr(config.lr),
            net,
            config,
            training: true,
            pending: None,
        }
    }

    /// Action values for `obs` from a fresh recurrent state.
    pub fn q_values(&self, obs: &AgentObservation) -> Result<Vec<f64>> {
        Ok(self.net.eval(obs, &vec![0.0; self.net.state_size()])?.0)
    }
}

fn check_finite(q: &[f64]) -> Result<()> {
    if q.iter().any(|v| !v.is_finite()) {
        return Err(Error::Diverged(format!("DSRQN action values {q:?}")));
    }
    Ok(())
}

impl Agent for DsrqnAgent {
    fn name(&self) -> &str {
        "dsrqn"
    }

    fn reset(&mut self) {
        self.hidden = vec![0.0; self.net.state_size()];
        self.pending = None;
    }

    fn act(&mut self, obs: &AgentObservation) -> Result<PortfolioVector> {
        let mut tape = Tape::new();
        let vars = self.net.bind(&mut tape);
        let h0 = tape.input(Tensor::vector(self.hidden.clone()));
        let (q, h) = self.net.forward(&mut tape, &vars, obs, h0)?;
        let qv = tape.value(q).data().to_vec();
        check_finite(&qv)?;
        self.hidden = tape.value(h).data().to_vec();
        if self.training {
            self.pending = Some((tape, q));
        }
        Ok(PortfolioVector::from_clipped(&softmax(&qv)?)?)
    }

    fn observe(&mut self, _obs: &AgentObservation, _action: &PortfolioVector, step: &EnvStep) -> Result<()> {
        let Some((mut tape, q)) = self.pending.take() else { return Ok(()) };
        let bootstrap = if step.done {
            0.0
        } else {
            let (next, _) = self.net.eval(&step.observation, &self.hidden)?;
            check_finite(&next)?;
            self.config.gamma * next.iter().copied().fold(f64::NEG_INFINITY, f64::max)
        };
        let targets: Vec<f64> = step.observation.last_row().iter().map(|r| r + bootstrap).collect();
        let y = tape.input(Tensor::vector(targets));
        let d = tape.sub(q, y)?;
        let sq = tape.mul(d, d)?;
        let s = tape.sum(sq);
        let loss = tape.scale(s, 0.5);
        if !tape.scalar(loss).is_finite() {
            return Err(Error::Diverged(format!("DSRQN TD loss is {}", tape.scalar(loss))));
        }
        tape.backward(loss, self.net.store_mut());
        self.adam.step(self.net.store_mut());
        Ok(())
    }

    fn set_training(&mut self, training: bool) {
        self.training = training;
        self.pending = None;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::StepInfo;

    fn small(gamma: f64) -> DsrqnAgent {
        let net = NetConfig { filters: vec![2], hidden: 4, ..NetConfig::default() };
        DsrqnAgent::new(3, 4, DsrqnConfig { gamma, lr: 1e-3, net })
    }

    fn obs(last: [f64; 3]) -> AgentObservation {
        let mut log_window = vec![0.001, -0.002, 0.0, 0.003, 0.0, -0.001, 0.002, 0.001, 0.0];
        log_window.extend(last);
        AgentObservation { t: 4, window: 4, n_assets: 3, log_window, current_weights: vec![0.0; 3] }
    }

    fn scripted_step(next: AgentObservation) -> EnvStep {
        let info = StepInfo { t: 4, portfolio_return: 0.0, cost: 0.0, net_return: 0.0, bankrupt: false };
        EnvStep { observation: next, reward: 0.0, done: false, info }
    }

    #[test]
    fn equal_values_give_uniform_action() {
        let q = [0.3; 4];
        let p = softmax(&q).unwrap();
        assert!(p.iter().all(|v| (v - 0.25).abs() < 1e-15));
    }

    #[test]
    fn myopic_td_raises_the_rewarded_component() {
        let mut agent = small(0.0);
        let o = obs([0.0; 3]);
        let step = scripted_step(obs([0.0, 0.5, 0.0]));
        let mut last = agent.q_values(&o).unwrap()[1];
        for _ in 0..100 {
            agent.reset();
            let a = agent.act(&o).unwrap();
            agent.observe(&o, &a, &step).unwrap();
            let now = agent.q_values(&o).unwrap()[1];
            assert!(now > last, "{now} <= {last}");
            last = now;
        }
    }

    #[test]
    fn myopic_td_is_regression_on_the_rewards() {
        let mut agent = DsrqnAgent::new(3, 4, DsrqnConfig { gamma: 0.0, lr: 1e-2, net: NetConfig { filters: vec![2], hidden: 4, ..NetConfig::default() } });
        let o = obs([0.0; 3]);
        let target = [0.02, -0.01, 0.03];
        let step = scripted_step(obs(target));
        for _ in 0..2000 {
            agent.reset();
            let a = agent.act(&o).unwrap();
            agent.observe(&o, &a, &step).unwrap();
        }
        let q = agent.q_values(&o).unwrap();
        for (a, b) in q.iter().zip(&target) {
            assert!((a - b).abs() < 1e-3, "{q:?}");
        }
    }

    #[test]
    fn evaluation_mode_is_frozen() {
        let mut agent = small(0.9);
        agent.set_training(false);
        let before = agent.net.store().flat_values();
        let o = obs([0.01, 0.0, -0.01]);
        let step = scripted_step(obs([0.0, 0.05, 0.0]));
        for _ in 0..5 {
            let a = agent.act(&o).unwrap();
            agent.observe(&o, &a, &step).unwrap();
        }
        assert_eq!(agent.net.store().flat_values(), before);
    }
}
