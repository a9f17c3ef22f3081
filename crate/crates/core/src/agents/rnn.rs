use std::collections::VecDeque;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::rng;
use crate::tensor::{mse_loss, Adam, GruCell, Linear, Optimizer, ParamStore, Tape, Tensor, Var};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RnnConfig {
    pub hidden: usize,
    /// Adam step size for offline fitting.
    pub lr: f64,
    /// Adam step size for the per-step online update.
    pub online_lr: f64,
    pub epochs: usize,
    /// Truncation length for backpropagation through time.
    pub bptt: usize,
    pub seed: u64,
}

impl Default for RnnConfig {
    fn default() -> Self {
        Self { hidden: 32, lr: 1e-2, online_lr: 1e-4, epochs: 100, bptt: 20, seed: 0 }
    }
}

/// GRU state manager with an affine read-out: the prediction of the next
/// log-return row is `V tanh(s_t) + b`. Inputs and targets are internally
/// rescaled to unit standard deviation.
#[derive(Debug, Clone)]
pub struct RnnPredictor {
    pub config: RnnConfig,
    m: usize,
    store: ParamStore,
    gru: GruCell,
    head: Linear,
    scale: f64,
    state: Vec<f64>,
    fit_opt: Adam,
    online_opt: Adam,
    residual_cov: DMatrix<f64>,
    fitted: bool,
    /// Scaled inputs inside the truncation window and the state before them.
    recent: VecDeque<Vec<f64>>,
    anchor: Vec<f64>,
}

impl RnnPredictor {
    pub fn new(m: usize, config: RnnConfig) -> Self {
        let mut r = rng::seeded(config.seed);
        let mut store = ParamStore::new();
        let gru = GruCell::new(&mut store, "gru", m, config.hidden, &mut r);
        let head = Linear::new(&mut store, "readout", config.hidden, m, &mut r);
        Self {
            m,
            state: vec![0.0; config.hidden],
            anchor: vec![0.0; config.hidden],
            fit_opt: Adam::with_lr(config.lr),
            online_opt: Adam::with_lr(config.online_lr),
            config,
            store,
            gru,
            head,
            scale: 1.0,
            residual_cov: DMatrix::zeros(m, m),
            fitted: false,
            recent: VecDeque::new(),
        }
    }

    pub fn param_count(&self) -> usize {
        self.gru.param_count() + self.head.param_count()
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn is_fitted(&self) -> bool {
        self.fitted
    }

    pub fn residual_cov(&self) -> &DMatrix<f64> {
        &self.residual_cov
    }

    pub fn state(&self) -> &[f64] {
        &self.state
    }

    pub fn reset_state(&mut self) {
        self.state = vec![0.0; self.config.hidden];
        self.anchor = self.state.clone();
        self.recent.clear();
    }

    fn readout(&self, tape: &mut Tape, h: Var) -> crate::tensor::Result<Var> {
        let s = tape.tanh(h);
        self.head.forward(tape, &self.store, s)
    }

    fn step_values(&self, x: &[f64], h: &[f64]) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let xv = tape.input(Tensor::vector(x.to_vec()));
        let hv = tape.input(Tensor::vector(h.to_vec()));
        let out = self.gru.forward(&mut tape, &self.store, xv, hv)?;
        Ok(tape.value(out).data().to_vec())
    }

    fn readout_values(&self, h: &[f64]) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let hv = tape.input(Tensor::vector(h.to_vec()));
        let y = self.readout(&mut tape, hv)?;
        Ok(tape.value(y).data().iter().map(|v| v / self.scale).collect())
    }

    /// Folds one observed log-return row into the hidden state.
    pub fn consume(&mut self, row: &[f64]) -> Result<()> {
        let x: Vec<f64> = row.iter().map(|v| v * self.scale).collect();
        self.state = self.step_values(&x, &self.state)?;
        self.recent.push_back(x);
        while self.recent.len() > self.config.bptt.max(1) {
            let old = self.recent.pop_front().expect("nonempty");
            self.anchor = self.step_values(&old, &self.anchor)?;
        }
        Ok(())
    }

    /// `horizon` recursive predictions from `state`, feeding each prediction
    /// back as the next input; also returns the rolled state.
    pub fn predict_path_from(&self, state: &[f64], horizon: usize) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
        let mut h = state.to_vec();
        let mut path = Vec::with_capacity(horizon);
        for k in 0..horizon {
            let y = self.readout_values(&h)?;
            if k + 1 < horizon {
                let x: Vec<f64> = y.iter().map(|v| v * self.scale).collect();
                h = self.step_values(&x, &h)?;
            }
            path.push(y);
        }
        Ok((path, h))
    }

    pub fn predict_path(&self, horizon: usize) -> Result<Vec<Vec<f64>>> {
        Ok(self.predict_path_from(&self.state, horizon)?.0)
    }

    /// One Adam step on the newest pair (recent inputs -> `target`) with
    /// backpropagation truncated to the buffered inputs. Returns the loss.
    pub fn update(&mut self, target: &[f64]) -> Result<f64> {
        if self.recent.is_empty() {
            return Ok(0.0);
        }
        let mut tape = Tape::new();
        let vars = self.gru.bind(&mut tape, &self.store);
        let mut h = tape.input(Tensor::vector(self.anchor.clone()));
        for x in &self.recent {
            let xv = tape.input(Tensor::vector(x.clone()));
            h = vars.step(&mut tape, xv, h)?;
        }
        let pred = self.readout(&mut tape, h)?;
        let y = tape.input(Tensor::vector(target.iter().map(|v| v * self.scale).collect()));
        let loss = mse_loss(&mut tape, pred, y)?;
        let value = tape.scalar(loss);
        if !value.is_finite() {
            return Err(Error::Diverged(format!("online RNN loss is {value}")));
        }
        tape.backward(loss, &mut self.store);
        self.online_opt.step(&mut self.store);
        Ok(value)
    }

    /// Offline fit on a row-major `T x M` log-return history by truncated
    /// BPTT; returns the mean training loss per epoch.
    pub fn fit(&mut self, values: &[f64]) -> Result<Vec<f64>> {
        let m = self.m;
        let t = values.len() / m;
        if t < 3 || !values.len().is_multiple_of(m) {
            return Err(Error::Agent(format!("RNN fit needs at least 3 rows of {m}, got {}", values.len())));
        }
        let sd = crate::metrics::std_dev(values);
        self.scale = if sd > 1e-12 { 1.0 / sd } else { 1.0 };
        let xs: Vec<Vec<f64>> = values.chunks(m).map(|r| r.iter().map(|v| v * self.scale).collect()).collect();
        let chunk = self.config.bptt.max(1);
        let mut curve = Vec::with_capacity(self.config.epochs);
        for _ in 0..self.config.epochs {
            let mut h = vec![0.0; self.config.hidden];
            let mut total = 0.0;
            let mut start = 0;
            while start + 1 < t {
                let end = (start + chunk).min(t - 1);
                let mut tape = Tape::new();
                let vars = self.gru.bind(&mut tape, &self.store);
                let mut hv = tape.input(Tensor::vector(h.clone()));
                let mut losses = Vec::with_capacity(end - start);
                for k in start..end {
                    let xv = tape.input(Tensor::vector(xs[k].clone()));
                    hv = vars.step(&mut tape, xv, hv)?;
                    let pred = self.readout(&mut tape, hv)?;
                    let y = tape.input(Tensor::vector(xs[k + 1].clone()));
                    losses.push(mse_loss(&mut tape, pred, y)?);
                }
                let all = tape.concat(&losses);
                let sum = tape.sum(all);
                let loss = tape.scale(sum, 1.0 / losses.len() as f64);
                let value = tape.scalar(loss);
                if !value.is_finite() {
                    return Err(Error::Diverged(format!("RNN fit loss is {value}")));
                }
                total += value * losses.len() as f64;
                h = tape.value(hv).data().to_vec();
                tape.backward(loss, &mut self.store);
                self.fit_opt.step(&mut self.store);
                start = end;
            }
            curve.push(total / (t - 1) as f64);
        }

        let mut h = vec![0.0; self.config.hidden];
        let mut cov = DMatrix::zeros(m, m);
        for k in 0..t - 1 {
            h = self.step_values(&xs[k], &h)?;
            let pred = self.readout_values(&h)?;
            let e: Vec<f64> = values[(k + 1) * m..(k + 2) * m].iter().zip(&pred).map(|(a, b)| a - b).collect();
            for i in 0..m {
                for j in 0..m {
                    cov[(i, j)] += e[i] * e[j] / (t - 1) as f64;
                }
            }
        }
        self.residual_cov = cov;
        self.fitted = true;
        self.reset_state();
        Ok(curve)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sine_log_returns(t: usize) -> Vec<f64> {
        let price = |k: usize, w: f64, a: f64| 100.0 + a * (w * k as f64).sin();
        (1..=t)
            .flat_map(|k| {
                [
                    (price(k, 0.3, 10.0) / price(k - 1, 0.3, 10.0)).ln(),
                    (price(k, 0.17, 8.0) / price(k - 1, 0.17, 8.0)).ln(),
                ]
            })
            .collect()
    }

    #[test]
    fn parameter_count_anchor() {
        let rnn = RnnPredictor::new(4, RnnConfig { hidden: 3, ..RnnConfig::default() });
        assert_eq!(rnn.param_count(), 88);
    }

    #[test]
    fn beats_mean_predictor_on_sinusoids() {
        let data = sine_log_returns(300);
        let mut rnn = RnnPredictor::new(2, RnnConfig { hidden: 8, epochs: 60, ..RnnConfig::default() });
        rnn.fit(&data[..400]).unwrap();
        // out-of-sample one-step error on the remaining rows
        let test = &data[400..];
        let mean = crate::metrics::mean(test);
        let var = test.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / test.len() as f64;
        for row in data[..400].chunks(2) {
            rnn.consume(row).unwrap();
        }
        let mut se = 0.0;
        for row in test.chunks(2) {
            let pred = rnn.predict_path(1).unwrap().remove(0);
            se += pred.iter().zip(row).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
            rnn.consume(row).unwrap();
        }
        let mse = se / test.len() as f64;
        assert!(mse < var, "mse {mse} vs variance {var}");
    }

    #[test]
    fn rollout_splits_consistently() {
        let mut rnn = RnnPredictor::new(2, RnnConfig { hidden: 4, ..RnnConfig::default() });
        for row in sine_log_returns(10).chunks(2) {
            rnn.consume(row).unwrap();
        }
        let (full, _) = rnn.predict_path_from(rnn.state(), 5).unwrap();
        let (head, _) = rnn.predict_path_from(rnn.state(), 2).unwrap();
        // continue from the state after feeding the second prediction back
        let (_, h1) = rnn.predict_path_from(rnn.state(), 2).unwrap();
        let x: Vec<f64> = head[1].iter().map(|v| v * rnn.scale).collect();
        let h2 = rnn.step_values(&x, &h1).unwrap();
        let (tail, _) = rnn.predict_path_from(&h2, 3).unwrap();
        assert_eq!(full, [head, tail].concat());
    }

    #[test]
    fn zero_error_update_leaves_parameters() {
        let mut rnn = RnnPredictor::new(2, RnnConfig { hidden: 4, ..RnnConfig::default() });
        rnn.consume(&[0.01, -0.02]).unwrap();
        let pred = rnn.predict_path(1).unwrap().remove(0);
        let before = rnn.store().flat_values();
        rnn.update(&pred).unwrap();
        assert_eq!(rnn.store().flat_values(), before);
    }
}
