use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::CliError;
use crate::agents::{DsrqnConfig, MsmConfig, NetConfig, PlannerConfig, ReinforceConfig, RnnConfig, VarModelConfig};
use crate::env::EnvConfig;
use crate::market_data::{PriceFrame, UniverseSpec};
use crate::pretrain::PretrainConfig;

/// Trading agent and its hyperparameters, tagged by `kind`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum AgentSpec {
    BuyAndHold {},
    Uniform {},
    /// One-step Sharpe-with-costs QP at every rebalance.
    Smm {
        #[serde(default)]
        beta: Option<f64>,
    },
    /// Hindsight one-hot on the best next return.
    Oracle {},
    Var {
        #[serde(default)]
        params: VarModelConfig,
        #[serde(default)]
        planner: PlannerConfig,
    },
    Rnn {
        #[serde(default)]
        params: RnnConfig,
        #[serde(default)]
        planner: PlannerConfig,
    },
    Dsrqn {
        #[serde(default)]
        params: DsrqnConfig,
    },
    Reinforce {
        #[serde(default)]
        net: NetConfig,
        #[serde(default)]
        params: ReinforceConfig,
        /// Initial policy parameters saved by `train` or `pretrain`.
        #[serde(default)]
        checkpoint: Option<PathBuf>,
    },
    Msm {
        #[serde(default)]
        net: MsmConfig,
        #[serde(default)]
        params: ReinforceConfig,
        #[serde(default)]
        checkpoint: Option<PathBuf>,
    },
}

impl AgentSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            AgentSpec::BuyAndHold {} => "buy_and_hold",
            AgentSpec::Uniform {} => "uniform",
            AgentSpec::Smm { .. } => "smm",
            AgentSpec::Oracle {} => "oracle",
            AgentSpec::Var { .. } => "var",
            AgentSpec::Rnn { .. } => "rnn",
            AgentSpec::Dsrqn { .. } => "dsrqn",
            AgentSpec::Reinforce { .. } => "reinforce",
            AgentSpec::Msm { .. } => "msm",
        }
    }
}

/// Train/test boundary, as a fraction of the price rows or a first test date.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Split {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_fraction: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_start: Option<NaiveDate>,
}

impl Default for Split {
    fn default() -> Self {
        Self { train_fraction: Some(0.7), test_start: None }
    }
}

impl Split {
    /// Price index of the first test decision.
    pub fn index(&self, prices: &PriceFrame) -> Result<usize, CliError> {
        match (self.train_fraction, self.test_start) {
            (Some(f), None) => {
                if !(f > 0.0 && f < 1.0) {
                    return Err(CliError::Usage(format!("split.train_fraction must be in (0, 1), got {f}")));
                }
                Ok((prices.len() as f64 * f).round() as usize)
            }
            (None, Some(d)) => prices
                .timestamps()
                .iter()
                .position(|ts| *ts >= d)
                .ok_or_else(|| CliError::Usage(format!("split.test_start {d} is after the last price"))),
            _ => Err(CliError::Usage("split needs exactly one of train_fraction and test_start".into())),
        }
    }
}

/// Supervised warm start for `reinforce` and `msm` policies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PretrainSpec {
    /// Number of generated pairs.
    #[serde(default = "default_pairs")]
    pub n: usize,
    /// Cost rate of the labelling QP; the environment's when absent.
    #[serde(default)]
    pub beta: Option<f64>,
    #[serde(default)]
    pub mean: f64,
    /// Dataset seed; the experiment seed when absent.
    #[serde(default)]
    pub dataset_seed: Option<u64>,
    /// Load a saved dataset instead of generating one.
    #[serde(default)]
    pub dataset: Option<PathBuf>,
    #[serde(default)]
    pub training: PretrainConfig,
}

fn default_pairs() -> usize {
    1000
}

impl Default for PretrainSpec {
    fn default() -> Self {
        Self { n: default_pairs(), beta: None, mean: 0.0, dataset_seed: None, dataset: None, training: PretrainConfig::default() }
    }
}

fn default_episodes() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub universe: UniverseSpec,
    pub agent: AgentSpec,
    #[serde(default)]
    pub env: EnvConfig,
    /// Training episodes over the train range.
    #[serde(default = "default_episodes")]
    pub episodes: usize,
    /// Seeds every agent-side random stream (weights, sampling, splits).
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub split: Split,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pretrain: Option<PretrainSpec>,
    /// Sharpe annualization factor; `sqrt(T)` of the test range when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub annualization: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), CliError> {
        self.universe.validate().map_err(|e| CliError::Usage(format!("universe: {e}")))?;
        if self.env.window == 0 {
            return Err(CliError::Usage("env.window must be at least 1".into()));
        }
        if self.env.window + 2 > self.universe.t {
            return Err(CliError::Usage(format!(
                "env.window {} leaves no decisions in a universe of {} prices",
                self.env.window, self.universe.t
            )));
        }
        if !(self.env.beta >= 0.0) {
            return Err(CliError::Usage(format!("env.beta must be >= 0, got {}", self.env.beta)));
        }
        if self.pretrain.is_some() && !matches!(self.agent, AgentSpec::Reinforce { .. } | AgentSpec::Msm { .. }) {
            return Err(CliError::Usage(format!("pretrain needs a reinforce or msm agent, not {}", self.agent.kind())));
        }
        Ok(())
    }
}

/// Command-line adjustments applied to a JSON document before it is parsed.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub episodes: Option<usize>,
    pub output: Option<PathBuf>,
    /// `dotted.key=value` pairs; values parse as JSON, else as strings.
    pub pairs: Vec<String>,
}

impl Overrides {
    pub fn apply(&self, doc: &mut Value) -> Result<(), CliError> {
        for pair in &self.pairs {
            let (key, raw) = pair
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("override {pair:?} is not key=value")))?;
            let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
            set_path(doc, key, value)?;
        }
        if let Some(seed) = self.seed {
            set_path(doc, "seed", seed.into())?;
        }
        if let Some(n) = self.episodes {
            set_path(doc, "episodes", n.into())?;
        }
        if let Some(out) = &self.output {
            set_path(doc, "output", out.display().to_string().into())?;
        }
        Ok(())
    }
}

/// Sets `doc[a][b][c] = value` for key `a.b.c`, creating missing objects.
pub fn set_path(doc: &mut Value, key: &str, value: Value) -> Result<(), CliError> {
    if key.is_empty() || key.split('.').any(str::is_empty) {
        return Err(CliError::Usage(format!("invalid override key {key:?}")));
    }
    let mut node = doc;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        if node.is_null() {
            *node = Value::Object(Default::default());
        }
        let obj = node
            .as_object_mut()
            .ok_or_else(|| CliError::Usage(format!("override {key}: {} is not an object", parts[..i].join("."))))?;
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        node = obj.entry(part.to_string()).or_insert(Value::Null);
    }
    unreachable!("key has at least one part")
}

pub fn read_json(path: &Path) -> Result<Value, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{} is not valid JSON: {e}", path.display())))
}

pub fn load_experiment(path: &Path, overrides: &Overrides) -> Result<ExperimentConfig, CliError> {
    let mut doc = read_json(path)?;
    overrides.apply(&mut doc)?;
    parse_experiment(doc, &path.display().to_string())
}

pub fn parse_experiment(doc: Value, origin: &str) -> Result<ExperimentConfig, CliError> {
    let config: ExperimentConfig =
        serde_json::from_value(doc).map_err(|e| CliError::Usage(format!("{origin}: invalid experiment config: {e}")))?;
    config.validate()?;
    Ok(config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn minimal() -> Value {
        json!({
            "universe": {"generator": "sine", "M": 2, "T": 100, "seed": 1},
            "agent": {"kind": "uniform"}
        })
    }

    #[test]
    fn minimal_config_gets_defaults() {
        let c = parse_experiment(minimal(), "test").unwrap();
        assert_eq!(c.episodes, 1);
        assert_eq!(c.env, EnvConfig { window: 60, ..EnvConfig::default() });
        assert_eq!(c.split, Split::default());
    }

    #[test]
    fn unknown_keys_rejected_at_every_level() {
        for (key, value) in [("colour", json!(1)), ("env.colour", json!(1)), ("agent.colour", json!(1)), ("universe.colour", json!(1))] {
            let mut doc = minimal();
            set_path(&mut doc, key, value).unwrap();
            let err = parse_experiment(doc, "test").unwrap_err();
            assert!(matches!(err, CliError::Usage(_)), "{key}");
        }
        let mut doc = minimal();
        doc["agent"] = json!({"kind": "reinforce", "params": {"gama": 0.9}});
        assert!(parse_experiment(doc, "test").is_err());
    }

    #[test]
    fn overrides_parse_json_then_strings() {
        let mut doc = minimal();
        let o = Overrides {
            seed: Some(9),
            episodes: Some(3),
            output: None,
            pairs: vec!["env.window=5".into(), "env.reward=dsr".into(), "agent.kind=smm".into(), "agent.beta=0.01".into()],
        };
        o.apply(&mut doc).unwrap();
        let c = parse_experiment(doc, "test").unwrap();
        assert_eq!((c.seed, c.episodes, c.env.window), (9, 3, 5));
        assert_eq!(c.agent, AgentSpec::Smm { beta: Some(0.01) });
        assert_eq!(c.env.reward, crate::env::RewardKind::Dsr);
    }

    #[test]
    fn override_through_a_scalar_fails() {
        let mut doc = minimal();
        assert!(set_path(&mut doc, "episodes", json!(2)).is_ok());
        assert!(set_path(&mut doc, "episodes.x", json!(2)).is_err());
        assert!(set_path(&mut doc, "a..b", json!(2)).is_err());
    }

    #[test]
    fn window_must_fit_the_universe() {
        let mut doc = minimal();
        set_path(&mut doc, "env.window", json!(99)).unwrap();
        assert!(parse_experiment(doc, "test").is_err());
    }

    #[test]
    fn split_needs_exactly_one_rule() {
        let prices = PriceFrame::from_rows(vec!["A".into()], &vec![vec![1.0]; 10]).unwrap();
        assert_eq!(Split::default().index(&prices).unwrap(), 7);
        let both = Split { train_fraction: Some(0.5), test_start: prices.timestamps().get(3).copied() };
        assert!(both.index(&prices).is_err());
        let by_date = Split { train_fraction: None, test_start: prices.timestamps().get(3).copied() };
        assert_eq!(by_date.index(&prices).unwrap(), 3);
    }

    #[test]
    fn pretrain_requires_a_policy_agent() {
        let mut doc = minimal();
        doc["pretrain"] = json!({"n": 10});
        assert!(parse_experiment(doc.clone(), "test").is_err());
        doc["agent"] = json!({"kind": "reinforce"});
        doc["env"] = json!({"window": 10});
        assert!(parse_experiment(doc, "test").is_ok());
    }
}
