//! Mixture of score machines. SM(1) scores every asset's return series,
//! SM(2) every pair (lexicographic `i < j`), each with one set of shared
//! parameters; a universe-specific mixture network turns the scores, the
//! past action and a recurrent manager state into allocation logits.

use serde::{Deserialize, Serialize};

use super::network::PolicyNetwork;
use crate::env::AgentObservation;
use crate::rng::{self, Rng};
use crate::tensor::{Conv2d, GruCell, GruVars, Linear, LinearVars, ParamId, ParamStore, Result, Tape, Tensor, Var};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MsmConfig {
    pub filters: usize,
    /// Temporal kernel length of the score-machine convolution.
    pub kernel: usize,
    pub sm_hidden: usize,
    pub manager_hidden: usize,
    pub input_scale: f64,
    pub seed: u64,
}

impl Default for MsmConfig {
    fn default() -> Self {
        Self { filters: 8, kernel: 3, sm_hidden: 16, manager_hidden: 16, input_scale: 20.0, seed: 0 }
    }
}

/// `(i, j)` with `i < j`, in lexicographic order.
pub fn pair_indices(m: usize) -> Vec<(usize, usize)> {
    (0..m).flat_map(|i| (i + 1..m).map(move |j| (i, j))).collect()
}

/// Conv over time, ReLU, max-pool, then a two-layer read-out to a scalar.
#[derive(Debug, Clone)]
struct ScoreMachine {
    channels: usize,
    conv: Conv2d,
    pool: usize,
    hidden: Linear,
    out: Linear,
}

#[derive(Debug, Clone)]
struct SmVars {
    k: Var,
    b: Var,
    hidden: LinearVars,
    out: LinearVars,
}

impl ScoreMachine {
    fn new(store: &mut ParamStore, name: &str, channels: usize, window: usize, config: &MsmConfig, rng: &mut Rng) -> Self {
        let kt = config.kernel.clamp(1, window);
        let conv = Conv2d::with_geometry(store, &format!("{name}.conv"), channels, config.filters, (kt, 1), 1, ((kt - 1) / 2, 0), rng);
        let pool = if window >= 2 { 2 } else { 1 };
        let (h, _) = conv.output_shape(window, 1);
        let features = config.filters * (h / pool);
        let hidden = Linear::new(store, &format!("{name}.hidden"), features, config.sm_hidden, rng);
        let out = Linear::new(store, &format!("{name}.score"), config.sm_hidden, 1, rng);
        Self { channels, conv, pool, hidden, out }
    }

    fn params(&self) -> Vec<ParamId> {
        [self.conv.params(), self.hidden.params(), self.out.params()].concat()
    }

    fn param_count(&self) -> usize {
        self.conv.param_count() + self.hidden.param_count() + self.out.param_count()
    }

    fn bind(&self, tape: &mut Tape, store: &ParamStore) -> SmVars {
        SmVars {
            k: tape.param(store, self.conv.kernel),
            b: tape.param(store, self.conv.bias),
            hidden: self.hidden.bind(tape, store),
            out: self.out.bind(tape, store),
        }
    }

    /// `x` is `[channels, T, 1]`.
    fn score(&self, tape: &mut Tape, vars: &SmVars, x: Var) -> Result<Var> {
        let y = tape.conv2d(x, vars.k, vars.b, 1, self.conv.pad)?;
        let y = tape.relu(y);
        let y = tape.max_pool(y, self.pool, 1)?;
        let n = tape.value(y).len();
        let flat = tape.reshape(y, &[n])?;
        let h = vars.hidden.forward(tape, flat)?;
        let h = tape.tanh(h);
        vars.out.forward(tape, h)
    }
}

#[derive(Debug, Clone)]
pub struct ScoreMachines {
    pub config: MsmConfig,
    m: usize,
    window: usize,
    store: ParamStore,
    sm1: ScoreMachine,
    sm2: ScoreMachine,
    manager: GruCell,
    mixture: Linear,
}

#[derive(Debug, Clone)]
pub struct MsmVars {
    sm1: SmVars,
    sm2: SmVars,
    manager: GruVars,
    mixture: LinearVars,
}

impl ScoreMachines {
    pub fn new(m: usize, window: usize, config: MsmConfig) -> Self {
        let mut r = rng::seeded(config.seed);
        let mut store = ParamStore::new();
        // score machines first so their parameter ids are the same for every M
        let sm1 = ScoreMachine::new(&mut store, "sm1", 1, window, &config, &mut r);
        let sm2 = ScoreMachine::new(&mut store, "sm2", 2, window, &config, &mut r);
        let mut mix_rng = rng::substream(config.seed, m as u64);
        let n_scores = m + m * m.saturating_sub(1) / 2;
        let manager = GruCell::new(&mut store, "mixture.manager", n_scores, config.manager_hidden, &mut mix_rng);
        let mixture = Linear::new(&mut store, "mixture.head", n_scores + m + config.manager_hidden, m, &mut mix_rng);
        Self { config, m, window, store, sm1, sm2, manager, mixture }
    }

    /// Same score machines (values copied, gradients masked) with a fresh
    /// mixture network for an `m`-asset universe.
    pub fn transfer(&self, m: usize, seed: u64) -> Self {
        let mut next = Self::new(m, self.window, MsmConfig { seed, ..self.config.clone() });
        let ids = self.score_machine_params();
        for &id in &ids {
            next.store.get_mut(id).value = self.store.value(id).clone();
        }
        next.store.set_requires_grad(&ids, false);
        next
    }

    pub fn freeze_score_machines(&mut self) {
        let ids = self.score_machine_params();
        self.store.set_requires_grad(&ids, false);
    }

    pub fn score_machine_params(&self) -> Vec<ParamId> {
        [self.sm1.params(), self.sm2.params()].concat()
    }

    pub fn score_machine_values(&self) -> Vec<f64> {
        self.score_machine_params().iter().flat_map(|&id| self.store.value(id).data().to_vec()).collect()
    }

    pub fn score_machine_param_count(&self) -> usize {
        self.sm1.param_count() + self.sm2.param_count()
    }

    pub fn mixture_param_count(&self) -> usize {
        self.manager.param_count() + self.mixture.param_count()
    }

    /// Number of scores fed to the mixture: `M + C(M, 2)`.
    pub fn mixture_input_width(&self) -> usize {
        self.m + pair_indices(self.m).len()
    }

    fn column(&self, obs: &AgentObservation, i: usize) -> Vec<f64> {
        obs.column(i).into_iter().map(|v| v * self.config.input_scale).collect()
    }

    fn score_vars(&self, tape: &mut Tape, vars: &MsmVars, obs: &AgentObservation) -> Result<(Vec<Var>, Vec<Var>)> {
        let t = self.window;
        let cols: Vec<Vec<f64>> = (0..self.m).map(|i| self.column(obs, i)).collect();
        let mut first = Vec::with_capacity(self.m);
        for c in &cols {
            let x = tape.input(Tensor::new(vec![1, t, 1], c.clone())?);
            first.push(self.sm1.score(tape, &vars.sm1, x)?);
        }
        let mut second = Vec::new();
        for (i, j) in pair_indices(self.m) {
            let x = tape.input(Tensor::new(vec![2, t, 1], [cols[i].as_slice(), cols[j].as_slice()].concat())?);
            second.push(self.sm2.score(tape, &vars.sm2, x)?);
        }
        Ok((first, second))
    }

    /// First- and second-order scores of one observation.
    pub fn scores(&self, obs: &AgentObservation) -> Result<(Vec<f64>, Vec<f64>)> {
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape);
        let (a, b) = self.score_vars(&mut tape, &vars, obs)?;
        let read = |vs: &[Var], tape: &Tape| vs.iter().map(|&v| tape.scalar(v)).collect();
        Ok((read(&a, &tape), read(&b, &tape)))
    }

    pub fn channels(&self) -> (usize, usize) {
        (self.sm1.channels, self.sm2.channels)
    }
}

impl PolicyNetwork for ScoreMachines {
    type Vars = MsmVars;

    fn n_assets(&self) -> usize {
        self.m
    }

    fn window(&self) -> usize {
        self.window
    }

    fn store(&self) -> &ParamStore {
        &self.store
    }

    fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    fn state_size(&self) -> usize {
        self.config.manager_hidden
    }

    fn bind(&self, tape: &mut Tape) -> MsmVars {
        MsmVars {
            sm1: self.sm1.bind(tape, &self.store),
            sm2: self.sm2.bind(tape, &self.store),
            manager: self.manager.bind(tape, &self.store),
            mixture: self.mixture.bind(tape, &self.store),
        }
    }

    fn forward(&self, tape: &mut Tape, vars: &MsmVars, obs: &AgentObservation, state: Var) -> Result<(Var, Var)> {
        let (first, second) = self.score_vars(tape, vars, obs)?;
        let scores = tape.concat(&[first, second].concat());
        let h = vars.manager.step(tape, scores, state)?;
        let past = tape.input(Tensor::vector(obs.current_weights.clone()));
        let z = tape.concat(&[scores, past, h]);
        let logits = vars.mixture.forward(tape, z)?;
        Ok((logits, h))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn obs(m: usize, t: usize) -> AgentObservation {
        AgentObservation {
            t,
            window: t,
            n_assets: m,
            log_window: (0..t * m).map(|k| 0.01 * (((k * 31) % 17) as f64 - 8.0)).collect(),
            current_weights: vec![1.0 / m as f64; m],
        }
    }

    #[test]
    fn score_counts() {
        let sm = ScoreMachines::new(12, 8, MsmConfig { filters: 2, sm_hidden: 3, manager_hidden: 3, ..MsmConfig::default() });
        let (a, b) = sm.scores(&obs(12, 8)).unwrap();
        assert_eq!((a.len(), b.len()), (12, 66));
        assert_eq!(pair_indices(4), vec![(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)]);
    }

    #[test]
    fn duplicated_asset_has_identical_first_order_scores() {
        let sm = ScoreMachines::new(3, 6, MsmConfig::default());
        let mut o = obs(3, 6);
        for k in 0..6 {
            o.log_window[k * 3 + 2] = o.log_window[k * 3];
        }
        let (a, _) = sm.scores(&o).unwrap();
        assert_eq!(a[0].to_bits(), a[2].to_bits());
    }

    #[test]
    fn permuting_assets_permutes_scores() {
        let sm = ScoreMachines::new(3, 6, MsmConfig::default());
        let o = obs(3, 6);
        let mut swapped = o.clone();
        for k in 0..6 {
            swapped.log_window.swap(k * 3, k * 3 + 1);
        }
        let (a, b) = sm.scores(&o).unwrap();
        let (pa, pb) = sm.scores(&swapped).unwrap();
        assert_eq!((a[0], a[1], a[2]), (pa[1], pa[0], pa[2]));
        // swapped pairs (0,2) and (1,2) are the original (1,2) and (0,2);
        // pair (0,1) reverses its channel order and is not compared
        assert_eq!(b[2], pb[1]);
        assert_eq!(b[1], pb[2]);
    }

    #[test]
    fn transfer_keeps_score_machines_and_resizes_mixture() {
        let sm = ScoreMachines::new(4, 6, MsmConfig::default());
        let moved = sm.transfer(3, 9);
        assert_eq!(moved.mixture_input_width(), 6);
        assert_eq!(moved.score_machine_values(), sm.score_machine_values());
        assert_eq!(moved.store().trainable_count(), moved.mixture_param_count());
    }

    #[test]
    fn score_machine_size_is_independent_of_universe() {
        let counts: Vec<(usize, usize)> = [3, 6, 12]
            .iter()
            .map(|&m| {
                let sm = ScoreMachines::new(m, 8, MsmConfig::default());
                (sm.score_machine_param_count(), sm.mixture_param_count())
            })
            .collect();
        assert!(counts.iter().all(|c| c.0 == counts[0].0));
        assert!(counts[0].1 < counts[1].1 && counts[1].1 < counts[2].1);
    }
}
