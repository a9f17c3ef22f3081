use serde::{Deserialize, Serialize};

use super::network::PolicyNetwork;
use super::policy::{ActionDistribution, DirichletPolicy};
use super::Agent;
use crate::env::{AgentObservation, EnvStep};
use crate::market_data::PortfolioVector;
use crate::rng::{self, Rng};
use crate::tensor::{softmax, Adam, Optimizer, Tape, Tensor, Var};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReinforceConfig {
    pub gamma: f64,
    pub lr: f64,
    pub policy: DirichletPolicy,
    /// Subtract a per-step baseline from the returns.
    pub baseline: bool,
    /// Across-episode smoothing of the baseline.
    pub baseline_decay: f64,
    pub seed: u64,
}

impl Default for ReinforceConfig {
    fn default() -> Self {
        Self { gamma: 0.99, lr: 1e-3, policy: DirichletPolicy::default(), baseline: true, baseline_decay: 0.9, seed: 0 }
    }
}

struct EpisodeTape<V> {
    tape: Tape,
    vars: V,
    state: Var,
    log_probs: Vec<Var>,
    rewards: Vec<f64>,
    bankrupt: bool,
}

/// Monte-Carlo policy gradient. While training, actions are drawn from the
/// policy distribution around the network's softmax output, the whole
/// episode is recorded on one tape, and a single Adam step follows each
/// episode. In evaluation the softmax output is played directly.
pub struct Reinforce<N: PolicyNetwork> {
    name: String,
    pub net: N,
    pub config: ReinforceConfig,
    dist: DirichletPolicy,
    adam: Adam,
    rng: Rng,
    training: bool,
    episode: Option<EpisodeTape<N::Vars>>,
    hidden: Vec<f64>,
    /// Baseline for the return from step `t`, smoothed across episodes.
    baseline: Vec<f64>,
    episodes_trained: usize,
}

impl<N: PolicyNetwork> Reinforce<N> {
    pub fn new(name: impl Into<String>, net: N, config: ReinforceConfig) -> Self {
        let hidden = vec![0.0; net.state_size()];
        Self {
            name: name.into(),
            dist: config.policy,
            adam: Adam::with_lr(config.lr),
            rng: rng::seeded(config.seed),
            net,
            config,
            training: true,
            episode: None,
            hidden,
            baseline: Vec::new(),
            episodes_trained: 0,
        }
    }

    pub fn episodes_trained(&self) -> usize {
        self.episodes_trained
    }

    pub fn distribution(&self) -> &DirichletPolicy {
        &self.dist
    }

    fn finish_episode(&mut self) -> Result<()> {
        let Some(ep) = self.episode.take() else { return Ok(()) };
        let n = ep.rewards.len();
        if n == 0 {
            return Ok(());
        }
        if ep.bankrupt && n == 1 {
            log::warn!("{}: bankrupt on the first step; episode skipped", self.name);
            return Ok(());
        }
        let mut returns = vec![0.0; n];
        let mut g = 0.0;
        for t in (0..n).rev() {
            g = ep.rewards[t] + self.config.gamma * g;
            returns[t] = g;
        }
        let advantages: Vec<f64> = if self.config.baseline {
            let d = self.config.baseline_decay;
            returns
                .iter()
                .enumerate()
                .map(|(t, &g)| {
                    if t == self.baseline.len() {
                        self.baseline.push(g);
                    }
                    let adv = g - self.baseline[t];
                    self.baseline[t] = d * self.baseline[t] + (1.0 - d) * g;
                    adv
                })
                .collect()
        } else {
            returns
        };
        let EpisodeTape { mut tape, log_probs, .. } = ep;
        let lp = tape.concat(&log_probs);
        let adv = tape.input(Tensor::vector(advantages));
        let weighted = tape.dot(lp, adv)?;
        let loss = tape.scale(weighted, -1.0 / n as f64);
        tape.backward(loss, self.net.store_mut());
        self.adam.step(self.net.store_mut());
        self.dist.anneal();
        self.episodes_trained += 1;
        Ok(())
    }
}

impl<N: PolicyNetwork> Agent for Reinforce<N> {
    fn name(&self) -> &str {
        &self.name
    }

    fn reset(&mut self) {
        self.episode = None;
        self.hidden = vec![0.0; self.net.state_size()];
    }

    fn act(&mut self, obs: &AgentObservation) -> Result<PortfolioVector> {
        if !self.training {
            let (logits, h) = self.net.eval(obs, &self.hidden)?;
            self.hidden = h;
            let p = softmax(&logits).map_err(|e| Error::Diverged(format!("{}: {e}", self.name)))?;
            return Ok(PortfolioVector::from_clipped(&p)?);
        }
        let net = &self.net;
        let ep = self.episode.get_or_insert_with(|| {
            let mut tape = Tape::new();
            let vars = net.bind(&mut tape);
            let state = tape.input(Tensor::zeros(&[net.state_size()]));
            EpisodeTape { tape, vars, state, log_probs: Vec::new(), rewards: Vec::new(), bankrupt: false }
        });
        let (logits, h) = net.forward(&mut ep.tape, &ep.vars, obs, ep.state)?;
        let probs = ep.tape.softmax(logits)?;
        let p = ep.tape.value(probs).data().to_vec();
        if p.iter().any(|v| !v.is_finite()) {
            return Err(Error::Diverged(format!("{}: policy output {p:?}", self.name)));
        }
        let a = self.dist.sample(&p, &mut self.rng);
        let lp = self.dist.log_prob(&mut ep.tape, probs, &a)?;
        ep.log_probs.push(lp);
        ep.state = h;
        Ok(PortfolioVector::from_clipped(&a)?)
    }

    fn observe(&mut self, _obs: &AgentObservation, _action: &PortfolioVector, step: &EnvStep) -> Result<()> {
        if let Some(ep) = self.episode.as_mut() {
            ep.rewards.push(step.reward);
            ep.bankrupt |= step.info.bankrupt;
            if step.done {
                self.finish_episode()?;
            }
        }
        Ok(())
    }

    fn set_training(&mut self, training: bool) {
        self.training = training;
        self.episode = None;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::{ConvGruNet, NetConfig};
    use crate::env::{run_episode, EnvConfig, MarketEnv, RunOptions};
    use crate::market_data::PriceFrame;

    fn small_net(m: usize, window: usize, seed: u64) -> ConvGruNet {
        ConvGruNet::new(m, window, NetConfig { filters: vec![2], hidden: 4, seed, ..NetConfig::default() })
    }

    /// Two-step price path where asset `j` rises and the others stay flat,
    /// giving a one-decision episode.
    fn bandit(m: usize, j: usize) -> PriceFrame {
        let first = vec![100.0; m];
        let mut last = first.clone();
        last[j] = 110.0;
        PriceFrame::from_rows((0..m).map(|i| format!("A{i}")).collect(), &[first.clone(), first, last]).unwrap()
    }

    #[test]
    fn learns_the_dominant_asset() {
        for seed in [1, 2] {
            let prices = bandit(3, 2);
            let mut env = MarketEnv::new(&prices, EnvConfig { window: 1, beta: 0.0, ..EnvConfig::default() }).unwrap();
            let cfg = ReinforceConfig { lr: 0.05, seed, ..ReinforceConfig::default() };
            let mut agent = Reinforce::new("reinforce", small_net(3, 1, seed), cfg);
            for _ in 0..500 {
                run_episode(&mut env, &mut agent, RunOptions::default()).unwrap();
            }
            agent.set_training(false);
            let ep = run_episode(&mut env, &mut agent, RunOptions::default()).unwrap();
            assert!(ep.actions[0].weights()[2] >= 0.9, "seed {seed}: {:?}", ep.actions[0]);
        }
    }

    #[test]
    fn constant_rewards_give_no_update() {
        let rows: Vec<Vec<f64>> = (0..8).map(|t| vec![100.0 * 1.01f64.powi(t); 2]).collect();
        let prices = PriceFrame::from_rows(vec!["A".into(), "B".into()], &rows).unwrap();
        let mut env = MarketEnv::new(&prices, EnvConfig { window: 2, beta: 0.0, ..EnvConfig::default() }).unwrap();
        let cfg = ReinforceConfig { gamma: 1.0, lr: 0.01, ..ReinforceConfig::default() };
        let mut agent = Reinforce::new("reinforce", small_net(2, 2, 0), cfg);
        // both assets grow 1% per step, so every reward is ln(1.01) whatever
        // the sampled action
        for _ in 0..5 {
            let before = agent.net.store().flat_values();
            run_episode(&mut env, &mut agent, RunOptions::default()).unwrap();
            let drift = agent.net.store().flat_values().iter().zip(&before).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(drift < 1e-6);
        }
        assert_eq!(agent.episodes_trained(), 5);
    }

    #[test]
    fn evaluation_is_deterministic_and_frozen() {
        let prices = bandit(2, 0);
        let mut env = MarketEnv::new(&prices, EnvConfig { window: 1, ..EnvConfig::default() }).unwrap();
        let mut agent = Reinforce::new("reinforce", small_net(2, 1, 0), ReinforceConfig::default());
        agent.set_training(false);
        let before = agent.net.store().flat_values();
        let a = run_episode(&mut env, &mut agent, RunOptions::default()).unwrap();
        let b = run_episode(&mut env, &mut agent, RunOptions::default()).unwrap();
        assert_eq!(a.actions, b.actions);
        assert_eq!(agent.net.store().flat_values(), before);
    }
}
