//! Supervised pre-training of policy networks on synthetic windows labelled
//! by the Sharpe-with-costs QP.

use std::io::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::agents::PolicyNetwork;
use crate::env::AgentObservation;
use crate::market_data::{PortfolioVector, ReturnsFrame, ReturnsKind};
use crate::optimizer::{solve_qp, Objective, ObjectiveSpec};
use crate::rng;
use crate::tensor::{Adam, Optimizer, Tape, Tensor};
use crate::{metrics, Error, Result};

const MAX_RETRIES: usize = 10;
const FORMAT: &str = "portfolio-rl.dataset";

/// One training example: a `T x M` log-return window with the holdings
/// carried into it, and the QP allocation for that situation.
#[derive(Debug, Clone, PartialEq)]
pub struct SupervisedPair {
    /// Row-major `T x M` log returns.
    pub window: Vec<f64>,
    pub weights: Vec<f64>,
    pub target: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub n: usize,
    pub m: usize,
    pub t: usize,
    pub beta: f64,
    pub seed: u64,
    /// Mean of the sampled log returns.
    #[serde(default)]
    pub mean: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub spec: DatasetSpec,
    pub pairs: Vec<SupervisedPair>,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    format: String,
    version: u32,
    #[serde(flatten)]
    spec: DatasetSpec,
    /// Per pair: `T*M` window values, `M` weights, `M` targets.
    values_per_pair: usize,
}

pub fn generate_dataset(n: usize, m: usize, t: usize, beta: f64, seed: u64) -> Result<Dataset> {
    generate(&DatasetSpec { n, m, t, beta, seed, mean: 0.0 })
}

/// Pair `i` is drawn from its own random stream, so the dataset does not
/// depend on generation order.
pub fn generate(spec: &DatasetSpec) -> Result<Dataset> {
    if spec.n == 0 || spec.m == 0 || spec.t < 3 {
        return Err(Error::Config(format!("dataset needs n >= 1, m >= 1, t >= 3 (got {}, {}, {})", spec.n, spec.m, spec.t)));
    }
    let pairs = (0..spec.n).map(|i| generate_pair(spec, i)).collect::<Result<Vec<_>>>()?;
    Ok(Dataset { spec: spec.clone(), pairs })
}

fn generate_pair(spec: &DatasetSpec, i: usize) -> Result<SupervisedPair> {
    let (m, t) = (spec.m, spec.t);
    let mut r = rng::substream(spec.seed, i as u64);
    let diag = Normal::<f64>::new(0.0, 0.02).expect("valid normal");
    let off = Normal::new(0.0, 0.01).expect("valid normal");
    let std = Normal::new(0.0, 1.0).expect("valid normal");
    let mut last_err = None;
    for _ in 0..MAX_RETRIES {
        let weights = rng::dirichlet(&mut r, &vec![1.0; m]);
        let mut l = vec![0.0; m * m];
        for a in 0..m {
            for b in 0..a {
                l[a * m + b] = off.sample(&mut r);
            }
            l[a * m + a] = diag.sample(&mut r).abs() + 1e-3;
        }
        let mut window = Vec::with_capacity(t * m);
        for _ in 0..t {
            let z: Vec<f64> = (0..m).map(|_| std.sample(&mut r)).collect();
            for a in 0..m {
                window.push(spec.mean + (0..=a).map(|b| l[a * m + b] * z[b]).sum::<f64>());
            }
        }
        match label(&window, &weights, m, spec.beta) {
            Ok(target) => return Ok(SupervisedPair { window, weights, target }),
            Err(e) => {
                log::debug!("pair {i}: resampling after QP failure: {e}");
                last_err = Some(e);
            }
        }
    }
    Err(Error::Agent(format!(
        "pair {i}: QP failed {MAX_RETRIES} times, last error: {}",
        last_err.map(|e| e.to_string()).unwrap_or_default()
    )))
}

/// Sharpe-with-costs allocation for the window's sample moments (of simple
/// returns), starting from `weights`.
fn label(window: &[f64], weights: &[f64], m: usize, beta: f64) -> Result<Vec<f64>> {
    let rows: Vec<Vec<f64>> = window.chunks(m).map(|r| r.iter().map(|v| v.exp_m1()).collect()).collect();
    let frame = ReturnsFrame::from_rows(ReturnsKind::Simple, (0..m).map(|i| format!("A{i}")).collect(), &rows)?;
    let mo = metrics::moments(&frame)?;
    let w0 = PortfolioVector::from_clipped(weights)?;
    let spec = ObjectiveSpec::new(Objective::Sharpe).with_beta(beta).with_w0(w0);
    Ok(solve_qp(&mo.mean, &mo.covariance, &spec)?.weights.into_weights())
}

impl SupervisedPair {
    pub fn observation(&self, m: usize) -> AgentObservation {
        let t = self.window.len() / m;
        AgentObservation { t, window: t, n_assets: m, log_window: self.window.clone(), current_weights: self.weights.clone() }
    }
}

impl Dataset {
    /// Writes `<base>.bin` (LE f64, pair after pair) and `<base>.json`.
    pub fn save(&self, base: impl AsRef<Path>) -> Result<()> {
        let base = base.as_ref();
        let (m, t) = (self.spec.m, self.spec.t);
        let manifest = Manifest { format: FORMAT.into(), version: 1, spec: self.spec.clone(), values_per_pair: t * m + 2 * m };
        let mut bytes = Vec::with_capacity(self.pairs.len() * manifest.values_per_pair * 8);
        for p in &self.pairs {
            for v in p.window.iter().chain(&p.weights).chain(&p.target) {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
        let (bin, json) = (base.with_extension("bin"), base.with_extension("json"));
        std::fs::write(&bin, bytes).map_err(crate::io_err(&bin))?;
        let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Config(e.to_string()))?;
        std::fs::write(&json, text + "\n").map_err(crate::io_err(&json))
    }

    pub fn load(base: impl AsRef<Path>) -> Result<Self> {
        let base = base.as_ref();
        let (bin, json) = (base.with_extension("bin"), base.with_extension("json"));
        let text = std::fs::read_to_string(&json).map_err(crate::io_err(&json))?;
        let man: Manifest = serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", json.display())))?;
        if man.format != FORMAT || man.version != 1 {
            return Err(Error::Config(format!("{}: unsupported format {} v{}", json.display(), man.format, man.version)));
        }
        let (m, t, n) = (man.spec.m, man.spec.t, man.spec.n);
        let per = t * m + 2 * m;
        let bytes = std::fs::read(&bin).map_err(crate::io_err(&bin))?;
        if man.values_per_pair != per || bytes.len() != n * per * 8 {
            return Err(Error::Config(format!("{} does not hold {n} pairs of {per} values", bin.display())));
        }
        let vals: Vec<f64> = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        let pairs = vals
            .chunks(per)
            .map(|c| SupervisedPair {
                window: c[..t * m].to_vec(),
                weights: c[t * m..t * m + m].to_vec(),
                target: c[t * m + m..].to_vec(),
            })
            .collect();
        Ok(Self { spec: man.spec, pairs })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainConfig {
    /// L2 penalty weight.
    pub lambda: f64,
    pub epochs: usize,
    /// Epochs without a validation improvement before stopping.
    pub patience: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub validation_fraction: f64,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self { lambda: 1e-4, epochs: 1000, patience: 50, lr: 1e-3, batch_size: 32, validation_fraction: 0.2, seed: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_mse: f64,
    pub validation_mse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PretrainReport {
    pub curve: Vec<EpochStats>,
    /// Epoch whose parameters were kept.
    pub best_epoch: usize,
    pub stopped_early: bool,
    /// Set when a non-finite loss aborted training.
    pub diverged: Option<String>,
}

impl PretrainReport {
    pub fn write_curve_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = String::from("epoch,train_mse,validation_mse\n");
        for s in &self.curve {
            out.push_str(&format!("{},{},{}\n", s.epoch, s.train_mse, s.validation_mse));
        }
        let mut f = std::fs::File::create(path).map_err(crate::io_err(path))?;
        f.write_all(out.as_bytes()).map_err(crate::io_err(path))
    }
}

fn pair_loss<N: PolicyNetwork>(net: &N, tape: &mut Tape, vars: &N::Vars, pair: &SupervisedPair) -> Result<crate::tensor::Var> {
    let obs = pair.observation(net.n_assets());
    let h = tape.input(Tensor::zeros(&[net.state_size()]));
    let (logits, _) = net.forward(tape, vars, &obs, h)?;
    let pred = tape.softmax(logits)?;
    let y = tape.input(Tensor::vector(pair.target.clone()));
    Ok(crate::tensor::mse_loss(tape, pred, y)?)
}

fn mean_mse<N: PolicyNetwork>(net: &N, pairs: &[&SupervisedPair]) -> Result<f64> {
    if pairs.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for p in pairs {
        let mut tape = Tape::new();
        let vars = net.bind(&mut tape);
        let l = pair_loss(net, &mut tape, &vars, p)?;
        total += tape.scalar(l);
    }
    Ok(total / pairs.len() as f64)
}

/// Adam on `MSE(y, softmax(net(X))) + lambda ||theta||^2` with a held-out
/// validation split and early stopping. The parameters with the lowest
/// validation objective (held-out MSE plus the penalty) are restored at the
/// end, and also when a non-finite loss aborts training.
pub fn pretrain<N: PolicyNetwork>(net: &mut N, data: &Dataset, config: &PretrainConfig) -> Result<PretrainReport> {
    if data.pairs.is_empty() {
        return Err(Error::Config("empty pre-training dataset".into()));
    }
    if data.spec.m != net.n_assets() || data.spec.t != net.window() {
        return Err(Error::Config(format!(
            "dataset is {}x{}, network expects {}x{}",
            data.spec.t,
            data.spec.m,
            net.window(),
            net.n_assets()
        )));
    }
    let mut r = rng::seeded(config.seed);
    let mut order: Vec<usize> = (0..data.pairs.len()).collect();
    order.shuffle(&mut r);
    let n_val = ((data.pairs.len() as f64) * config.validation_fraction).round() as usize;
    let n_val = n_val.min(data.pairs.len() - 1);
    let (val_idx, train_idx) = order.split_at(n_val);
    let val: Vec<&SupervisedPair> = val_idx.iter().map(|&i| &data.pairs[i]).collect();
    let mut train: Vec<&SupervisedPair> = train_idx.iter().map(|&i| &data.pairs[i]).collect();
    let held_out = |net: &N, train: &[&SupervisedPair]| -> Result<f64> {
        if val.is_empty() {
            mean_mse(net, train)
        } else {
            mean_mse(net, &val)
        }
    };
    let monitor = |net: &N, mse: f64| mse + config.lambda * net.store().l2_norm_sq();

    let mut adam = Adam::with_lr(config.lr);
    let initial = held_out(net, &train)?;
    let mut best = (monitor(net, initial), 0, net.store().flat_values());
    let mut report = PretrainReport { curve: Vec::new(), best_epoch: 0, stopped_early: false, diverged: None };
    let batch = config.batch_size.max(1);
    'epochs: for epoch in 1..=config.epochs {
        train.shuffle(&mut r);
        let mut total = 0.0;
        for chunk in train.chunks(batch) {
            let mut tape = Tape::new();
            let vars = net.bind(&mut tape);
            let mut losses = Vec::with_capacity(chunk.len());
            for p in chunk {
                losses.push(pair_loss(net, &mut tape, &vars, p)?);
            }
            let all = tape.concat(&losses);
            let sum = tape.sum(all);
            let loss = tape.scale(sum, 1.0 / chunk.len() as f64);
            let value = tape.scalar(loss);
            if !value.is_finite() {
                report.diverged = Some(format!("loss {value} at epoch {epoch}"));
                log::error!("pre-training diverged at epoch {epoch}; restoring epoch {}", best.1);
                break 'epochs;
            }
            total += value * chunk.len() as f64;
            tape.backward(loss, net.store_mut());
            net.store_mut().add_l2(config.lambda);
            adam.step(net.store_mut());
        }
        let train_mse = total / train.len() as f64;
        let validation_mse = held_out(net, &train)?;
        report.curve.push(EpochStats { epoch, train_mse, validation_mse });
        let score = monitor(net, validation_mse);
        if score < best.0 {
            best = (score, epoch, net.store().flat_values());
        } else if epoch - best.1 >= config.patience {
            report.stopped_early = true;
            break;
        }
    }
    net.store_mut().set_flat_values(&best.2);
    report.best_epoch = best.1;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::{ConvGruNet, NetConfig, PolicyNetwork};

    #[test]
    fn targets_are_feasible_and_deterministic() {
        let a = generate_dataset(20, 3, 10, 0.002, 5).unwrap();
        for p in &a.pairs {
            assert!((p.target.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert!(p.target.iter().all(|&v| v >= -1e-10));
            assert!((p.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        let b = generate_dataset(20, 3, 10, 0.002, 5).unwrap();
        let bits = |d: &Dataset| d.pairs.iter().flat_map(|p| p.window.iter().chain(&p.target)).map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
    }

    #[test]
    fn pairs_do_not_depend_on_dataset_size() {
        let small = generate_dataset(3, 2, 5, 0.0, 1).unwrap();
        let large = generate_dataset(6, 2, 5, 0.0, 1).unwrap();
        assert_eq!(small.pairs[..], large.pairs[..3]);
    }

    #[test]
    fn save_load_round_trip() {
        let d = generate_dataset(4, 2, 5, 0.01, 3).unwrap();
        let dir = tempfile::tempdir().unwrap();
        d.save(dir.path().join("set")).unwrap();
        assert_eq!(Dataset::load(dir.path().join("set")).unwrap(), d);
    }

    #[test]
    fn memorizes_a_repeated_pair() {
        let one = generate_dataset(1, 2, 4, 0.0, 2).unwrap().pairs.remove(0);
        let data = Dataset { spec: DatasetSpec { n: 10, m: 2, t: 4, beta: 0.0, seed: 0, mean: 0.0 }, pairs: vec![one; 10] };
        let mut net = ConvGruNet::new(2, 4, NetConfig { filters: vec![2], hidden: 4, ..NetConfig::default() });
        let cfg = PretrainConfig { lambda: 0.0, epochs: 400, lr: 1e-2, batch_size: 8, ..PretrainConfig::default() };
        let report = pretrain(&mut net, &data, &cfg).unwrap();
        let last = report.curve.last().unwrap();
        assert!(last.train_mse < 1e-4, "{last:?}");
    }

    #[test]
    fn heavy_regularization_pushes_toward_uniform() {
        let data = generate_dataset(20, 3, 4, 0.0, 4).unwrap();
        let mut net = ConvGruNet::new(3, 4, NetConfig { filters: vec![2], hidden: 4, ..NetConfig::default() });
        let cfg = PretrainConfig { lambda: 1e3, epochs: 300, patience: 1000, lr: 3e-3, batch_size: 4, ..PretrainConfig::default() };
        pretrain(&mut net, &data, &cfg).unwrap();
        let (logits, _) = net.eval(&data.pairs[0].observation(3), &[0.0; 4]).unwrap();
        let p = crate::tensor::softmax(&logits).unwrap();
        assert!(p.iter().all(|v| (v - 1.0 / 3.0).abs() < 1e-2), "{p:?}");
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let data = generate_dataset(2, 2, 4, 0.0, 0).unwrap();
        let mut net = ConvGruNet::new(3, 4, NetConfig::default());
        assert!(pretrain(&mut net, &data, &PretrainConfig::default()).is_err());
    }
}
