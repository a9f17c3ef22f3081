use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::rng::{self, Rng};

/// Explicit finite MDP with expected rewards `r[s][a]` and transition
/// probabilities `p[s][a][s']`.
#[derive(Debug, Clone, PartialEq)]
pub struct FiniteMdp {
    pub n_states: usize,
    pub n_actions: usize,
    pub rewards: Vec<f64>,
    pub transitions: Vec<f64>,
}

impl FiniteMdp {
    pub fn new(n_states: usize, n_actions: usize, rewards: Vec<f64>, transitions: Vec<f64>) -> Self {
        assert_eq!(rewards.len(), n_states * n_actions);
        assert_eq!(transitions.len(), n_states * n_actions * n_states);
        Self { n_states, n_actions, rewards, transitions }
    }

    /// Rewards uniform on `[0, 1)`, transition rows `Dirichlet(1)`.
    pub fn random(n_states: usize, n_actions: usize, rng: &mut Rng) -> Self {
        let rewards = (0..n_states * n_actions).map(|_| rng.random::<f64>()).collect();
        let ones = vec![1.0; n_states];
        let transitions = (0..n_states * n_actions).flat_map(|_| rng::dirichlet(rng, &ones)).collect();
        Self::new(n_states, n_actions, rewards, transitions)
    }

    pub fn reward(&self, s: usize, a: usize) -> f64 {
        self.rewards[s * self.n_actions + a]
    }

    pub fn next_probs(&self, s: usize, a: usize) -> &[f64] {
        let at = (s * self.n_actions + a) * self.n_states;
        &self.transitions[at..at + self.n_states]
    }

    pub fn sample_next(&self, s: usize, a: usize, rng: &mut Rng) -> usize {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let probs = self.next_probs(s, a);
        for (k, p) in probs.iter().enumerate() {
            acc += p;
            if u < acc {
                return k;
            }
        }
        probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QTable {
    pub n_states: usize,
    pub n_actions: usize,
    pub q: Vec<f64>,
}

impl QTable {
    pub fn zeros(n_states: usize, n_actions: usize) -> Self {
        Self { n_states, n_actions, q: vec![0.0; n_states * n_actions] }
    }

    pub fn get(&self, s: usize, a: usize) -> f64 {
        self.q[s * self.n_actions + a]
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.q[s * self.n_actions..(s + 1) * self.n_actions]
    }

    pub fn greedy(&self, s: usize) -> usize {
        let row = self.row(s);
        (0..row.len()).fold(0, |b, k| if row[k] > row[b] { k } else { b })
    }

    pub fn max_abs_diff(&self, other: &[f64]) -> f64 {
        self.q.iter().zip(other).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QLearningConfig {
    pub steps: usize,
    /// Step size of the first visit to a state-action pair.
    pub alpha: f64,
    /// Visit-count decay exponent: the n-th update uses `alpha / n^decay`.
    pub alpha_decay: f64,
    pub gamma: f64,
    pub epsilon: f64,
    /// Steps before the walk restarts from a uniformly drawn state.
    pub episode_len: usize,
    pub seed: u64,
}

impl Default for QLearningConfig {
    fn default() -> Self {
        Self { steps: 200_000, alpha: 1.0, alpha_decay: 0.7, gamma: 0.9, epsilon: 0.2, episode_len: 100, seed: 0 }
    }
}

/// Q-learning with epsilon-greedy exploration:
/// `q(s,a) += alpha (r + gamma max_a' q(s',a') - q(s,a))`.
pub fn q_learning_tabular(mdp: &FiniteMdp, config: &QLearningConfig) -> QTable {
    let mut rng = rng::seeded(config.seed);
    let mut table = QTable::zeros(mdp.n_states, mdp.n_actions);
    let mut visits = vec![0u64; table.q.len()];
    let mut s = rng.random_range(0..mdp.n_states);
    for step in 0..config.steps {
        if config.episode_len > 0 && step > 0 && step % config.episode_len == 0 {
            s = rng.random_range(0..mdp.n_states);
        }
        let a = if rng.random::<f64>() < config.epsilon {
            rng.random_range(0..mdp.n_actions)
        } else {
            table.greedy(s)
        };
        let r = mdp.reward(s, a);
        let next = mdp.sample_next(s, a, &mut rng);
        let k = s * mdp.n_actions + a;
        visits[k] += 1;
        let lr = config.alpha / (visits[k] as f64).powf(config.alpha_decay);
        let best_next = table.row(next).iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let td = r + config.gamma * best_next - table.q[k];
        table.q[k] += lr * td;
        s = next;
    }
    table
}

/// Fixed point of the Bellman optimality operator on action values.
pub fn value_iteration(mdp: &FiniteMdp, gamma: f64, tol: f64) -> Vec<f64> {
    let (ns, na) = (mdp.n_states, mdp.n_actions);
    let mut q = vec![0.0; ns * na];
    loop {
        let v: Vec<f64> = (0..ns).map(|s| q[s * na..(s + 1) * na].iter().copied().fold(f64::NEG_INFINITY, f64::max)).collect();
        let mut delta: f64 = 0.0;
        for s in 0..ns {
            for a in 0..na {
                let ev: f64 = mdp.next_probs(s, a).iter().zip(&v).map(|(p, x)| p * x).sum();
                let new = mdp.reward(s, a) + gamma * ev;
                delta = delta.max((new - q[s * na + a]).abs());
                q[s * na + a] = new;
            }
        }
        if delta <= tol * (1.0 - gamma).max(1e-12) {
            return q;
        }
    }
}
