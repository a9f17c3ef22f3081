use serde::{Deserialize, Serialize};

use crate::env::AgentObservation;
use crate::rng;
use crate::tensor::{Conv2d, GruCell, GruVars, Linear, LinearVars, ParamStore, Result, Tape, Tensor, Var};

/// A recurrent network producing `M` logits per observation. Parameters are
/// bound to a tape once (`bind`) and reused for every step recorded on it.
pub trait PolicyNetwork {
    type Vars;

    fn n_assets(&self) -> usize;
    fn window(&self) -> usize;
    fn store(&self) -> &ParamStore;
    fn store_mut(&mut self) -> &mut ParamStore;
    fn state_size(&self) -> usize;
    fn bind(&self, tape: &mut Tape) -> Self::Vars;
    /// Logits for `obs` and the next recurrent state, given the previous one.
    fn forward(&self, tape: &mut Tape, vars: &Self::Vars, obs: &AgentObservation, state: Var) -> Result<(Var, Var)>;

    /// Forward pass on a scratch tape: `(logits, next state)`.
    fn eval(&self, obs: &AgentObservation, state: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape);
        let h = tape.input(Tensor::vector(state.to_vec()));
        let (logits, h) = self.forward(&mut tape, &vars, obs, h)?;
        Ok((tape.value(logits).data().to_vec(), tape.value(h).data().to_vec()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetConfig {
    /// Output channels of each 2-D convolution over the `T x M` window.
    pub filters: Vec<usize>,
    pub kernel: usize,
    pub pool: usize,
    pub hidden: usize,
    /// Multiplier applied to log returns before the first layer.
    pub input_scale: f64,
    pub seed: u64,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self { filters: vec![16, 16], kernel: 3, pool: 2, hidden: 64, input_scale: 20.0, seed: 0 }
    }
}

/// Convolutions over the return window, max-pooling, a GRU state manager
/// and an affine head on `[state, past action]`.
#[derive(Debug, Clone)]
pub struct ConvGruNet {
    pub config: NetConfig,
    m: usize,
    window: usize,
    store: ParamStore,
    convs: Vec<Conv2d>,
    pool: (usize, usize),
    gru: GruCell,
    head: Linear,
}

#[derive(Debug, Clone)]
pub struct ConvGruVars {
    convs: Vec<(Var, Var)>,
    gru: GruVars,
    head: LinearVars,
}

impl ConvGruNet {
    pub fn new(m: usize, window: usize, config: NetConfig) -> Self {
        let mut r = rng::seeded(config.seed);
        let mut store = ParamStore::new();
        let mut c_in = 1;
        let mut convs = Vec::new();
        for (i, &f) in config.filters.iter().enumerate() {
            convs.push(Conv2d::new(&mut store, &format!("conv{i}"), c_in, f, config.kernel, config.kernel, &mut r));
            c_in = f;
        }
        let pool = (config.pool.clamp(1, window), config.pool.clamp(1, m));
        let features = c_in * (window / pool.0) * (m / pool.1);
        let gru = GruCell::new(&mut store, "gru", features, config.hidden, &mut r);
        let head = Linear::new(&mut store, "head", config.hidden + m, m, &mut r);
        Self { config, m, window, store, convs, pool, gru, head }
    }

    pub fn param_count(&self) -> usize {
        self.store.scalar_count()
    }
}

impl PolicyNetwork for ConvGruNet {
    type Vars = ConvGruVars;

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
        self.config.hidden
    }

    fn bind(&self, tape: &mut Tape) -> ConvGruVars {
        ConvGruVars {
            convs: self.convs.iter().map(|c| (tape.param(&self.store, c.kernel), tape.param(&self.store, c.bias))).collect(),
            gru: self.gru.bind(tape, &self.store),
            head: self.head.bind(tape, &self.store),
        }
    }

    fn forward(&self, tape: &mut Tape, vars: &ConvGruVars, obs: &AgentObservation, state: Var) -> Result<(Var, Var)> {
        let scaled = obs.log_window.iter().map(|v| v * self.config.input_scale).collect();
        let mut x = tape.input(Tensor::new(vec![1, self.window, self.m], scaled)?);
        for (conv, &(k, b)) in self.convs.iter().zip(&vars.convs) {
            let y = tape.conv2d(x, k, b, conv.stride, conv.pad).map_err(|e| e.in_layer(&conv.name))?;
            x = tape.relu(y);
        }
        let pooled = tape.max_pool(x, self.pool.0, self.pool.1)?;
        let n = tape.value(pooled).len();
        let flat = tape.reshape(pooled, &[n])?;
        let h = vars.gru.step(tape, flat, state)?;
        let past = tape.input(Tensor::vector(obs.current_weights.clone()));
        let z = tape.concat(&[h, past]);
        let logits = vars.head.forward(tape, z)?;
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
            log_window: (0..t * m).map(|k| 0.01 * ((k * 7 % 13) as f64 - 6.0)).collect(),
            current_weights: vec![1.0 / m as f64; m],
        }
    }

    #[test]
    fn output_shapes() {
        for (m, t) in [(1, 5), (2, 8), (4, 20)] {
            let cfg = NetConfig { filters: vec![3, 2], hidden: 5, ..NetConfig::default() };
            let net = ConvGruNet::new(m, t, cfg);
            let (logits, h) = net.eval(&obs(m, t), &[0.0; 5]).unwrap();
            assert_eq!((logits.len(), h.len()), (m, 5));
        }
    }

    #[test]
    fn same_seed_same_weights() {
        let a = ConvGruNet::new(3, 10, NetConfig::default());
        let b = ConvGruNet::new(3, 10, NetConfig::default());
        assert_eq!(a.store().flat_values(), b.store().flat_values());
    }
}
