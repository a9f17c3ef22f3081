use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::{AgentSpec, ExperimentConfig, PretrainSpec};
use super::CliError;
use crate::agents::{
    Agent, ArgmaxOracle, BuyAndHold, ConvGruNet, DsrqnAgent, FixedAgent, ModelBasedAgent, PolicyNetwork, Reinforce,
    RnnModel, ScoreMachines, SmmAgent, VarPredictor,
};
use crate::env::{run_episode, Episode, MarketEnv, RunOptions};
use crate::market_data::{to_returns, PriceFrame, ReturnsKind};
use crate::metrics::PerformanceReport;
use crate::pretrain::{self, Dataset, DatasetSpec, PretrainReport};
use crate::tensor::{load_params, save_params, ParamStore};
use crate::{Error, Result};

/// A constructed agent, keeping concrete types where parameters or
/// pre-training are needed.
pub enum BuiltAgent {
    Plain(Box<dyn Agent>),
    ModelBased(ModelBasedAgent),
    Dsrqn(DsrqnAgent),
    Reinforce(Reinforce<ConvGruNet>),
    Msm(Reinforce<ScoreMachines>),
}

impl BuiltAgent {
    pub fn agent(&mut self) -> &mut dyn Agent {
        match self {
            BuiltAgent::Plain(a) => a.as_mut(),
            BuiltAgent::ModelBased(a) => a,
            BuiltAgent::Dsrqn(a) => a,
            BuiltAgent::Reinforce(a) => a,
            BuiltAgent::Msm(a) => a,
        }
    }

    pub fn store(&self) -> Option<&ParamStore> {
        match self {
            BuiltAgent::Dsrqn(a) => Some(a.net.store()),
            BuiltAgent::Reinforce(a) => Some(a.net.store()),
            BuiltAgent::Msm(a) => Some(a.net.store()),
            _ => None,
        }
    }

    fn store_mut(&mut self) -> Option<&mut ParamStore> {
        match self {
            BuiltAgent::Dsrqn(a) => Some(a.net.store_mut()),
            BuiltAgent::Reinforce(a) => Some(a.net.store_mut()),
            BuiltAgent::Msm(a) => Some(a.net.store_mut()),
            _ => None,
        }
    }

    /// Whether repeated training episodes change the agent.
    pub fn learns(&self) -> bool {
        !matches!(self, BuiltAgent::Plain(_))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CurvePoint {
    pub episode: usize,
    /// Log wealth growth of the training episode.
    pub train_return: f64,
    /// Log wealth growth of a greedy pass over the test range.
    pub test_return: f64,
}

/// Contents of `report.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub agent: String,
    pub assets: Vec<String>,
    pub train_episodes: usize,
    /// Price index of the first test decision.
    pub test_start: usize,
    pub test_steps: usize,
    /// Log growth of wealth; absent after bankruptcy.
    pub log_return: Option<f64>,
    pub total_reward: Option<f64>,
    pub bankrupt: bool,
    pub performance: PerformanceReport,
}

/// A configured experiment: universe, split and agent, ready to train and
/// evaluate.
pub struct Experiment {
    pub config: ExperimentConfig,
    pub prices: PriceFrame,
    /// Price index where the test range starts.
    pub split: usize,
    pub agent: BuiltAgent,
    pub episodes_run: usize,
}

impl Experiment {
    pub fn prepare(config: ExperimentConfig) -> std::result::Result<Self, CliError> {
        config.validate()?;
        let prices = config.universe.build().map_err(|e| CliError::Usage(format!("cannot build universe: {e}")))?;
        let split = config.split.index(&prices)?;
        let w = config.env.window;
        if split < w + 2 || split + 2 > prices.len() {
            return Err(CliError::Usage(format!(
                "split at price {split} leaves an empty train or test range ({} prices, window {w})",
                prices.len()
            )));
        }
        let agent = build_agent(&config, &prices, split)?;
        Ok(Self { config, prices, split, agent, episodes_run: 0 })
    }

    pub fn train_env(&self) -> Result<MarketEnv> {
        Ok(MarketEnv::with_range(&self.prices, self.config.env.clone(), None, Some(self.split))?)
    }

    pub fn test_env(&self) -> Result<MarketEnv> {
        Ok(MarketEnv::with_range(&self.prices, self.config.env.clone(), Some(self.split), None)?)
    }

    fn options(&self) -> RunOptions {
        RunOptions { record_observations: false, annualization: self.config.annualization }
    }

    /// Supervised warm start with the given (or default) pre-training spec.
    pub fn pretrain(&mut self, spec: &PretrainSpec) -> Result<PretrainReport> {
        let data = match &spec.dataset {
            Some(path) => Dataset::load(path)?,
            None => pretrain::generate(&DatasetSpec {
                n: spec.n,
                m: self.prices.n_assets(),
                t: self.config.env.window,
                beta: spec.beta.unwrap_or(self.config.env.beta),
                seed: spec.dataset_seed.unwrap_or(self.config.seed),
                mean: spec.mean,
            })?,
        };
        let mut training = spec.training.clone();
        training.seed = self.config.seed;
        match &mut self.agent {
            BuiltAgent::Reinforce(a) => pretrain::pretrain(&mut a.net, &data, &training),
            BuiltAgent::Msm(a) => pretrain::pretrain(&mut a.net, &data, &training),
            _ => Err(Error::Config(format!("{} agents cannot be pre-trained", self.config.agent.kind()))),
        }
    }

    /// Greedy pass over the test range.
    pub fn evaluate(&mut self) -> Result<Episode> {
        let mut env = self.test_env()?;
        let options = self.options();
        let agent = self.agent.agent();
        agent.set_training(false);
        let ep = run_episode(&mut env, agent, options);
        agent.set_training(true);
        ep
    }

    /// `episodes` training passes over the train range, each followed by a
    /// test evaluation. Agents that do not learn are not trained.
    pub fn train(&mut self, episodes: usize) -> Result<Vec<CurvePoint>> {
        if !self.agent.learns() {
            return Ok(Vec::new());
        }
        let mut env = self.train_env()?;
        let options = self.options();
        let mut curve = Vec::with_capacity(episodes);
        for _ in 0..episodes {
            let agent = self.agent.agent();
            agent.set_training(true);
            let train = run_episode(&mut env, agent, options)?;
            let test = self.evaluate()?;
            self.episodes_run += 1;
            let point = CurvePoint { episode: self.episodes_run, train_return: train.log_wealth(), test_return: test.log_wealth() };
            log::info!("episode {}: train {:.6}, test {:.6}", point.episode, point.train_return, point.test_return);
            curve.push(point);
        }
        Ok(curve)
    }

    pub fn report(&mut self, test: &Episode) -> RunReport {
        let finite = |v: f64| v.is_finite().then_some(v);
        RunReport {
            agent: self.agent.agent().name().to_string(),
            assets: self.prices.assets().to_vec(),
            train_episodes: self.episodes_run,
            test_start: self.split,
            test_steps: test.infos.len(),
            log_return: finite(test.log_wealth()),
            total_reward: finite(test.total_reward()),
            bankrupt: test.bankrupt,
            performance: test.report.clone(),
        }
    }

    pub fn save_checkpoint(&self, base: &Path) -> Result<bool> {
        match self.agent.store() {
            Some(store) => {
                save_params(store, base)?;
                Ok(true)
            }
            None => Ok(false),
        }
    }
}

fn build_agent(config: &ExperimentConfig, prices: &PriceFrame, split: usize) -> std::result::Result<BuiltAgent, CliError> {
    let m = prices.n_assets();
    let window = config.env.window;
    let beta = config.env.beta;
    let seed = config.seed;
    let built = match &config.agent {
        AgentSpec::BuyAndHold {} => BuiltAgent::Plain(Box::new(BuyAndHold::uniform(m))),
        AgentSpec::Uniform {} => BuiltAgent::Plain(Box::new(FixedAgent::uniform(m))),
        AgentSpec::Smm { beta: b } => BuiltAgent::Plain(Box::new(SmmAgent::new(b.unwrap_or(beta)))),
        AgentSpec::Oracle {} => {
            let simple = to_returns(prices, ReturnsKind::Simple).map_err(Error::from)?;
            BuiltAgent::Plain(Box::new(ArgmaxOracle::new(simple)))
        }
        AgentSpec::Var { params, planner } => {
            let mut agent = ModelBasedAgent::new(Box::new(VarPredictor::new(params.clone())), planner.clone(), beta);
            fit_on_train(&mut agent, prices, split)?;
            BuiltAgent::ModelBased(agent)
        }
        AgentSpec::Rnn { params, planner } => {
            let mut params = params.clone();
            params.seed = seed;
            let mut agent = ModelBasedAgent::new(Box::new(RnnModel::new(m, params)), planner.clone(), beta);
            fit_on_train(&mut agent, prices, split)?;
            BuiltAgent::ModelBased(agent)
        }
        AgentSpec::Dsrqn { params } => {
            let mut params = params.clone();
            params.net.seed = seed;
            BuiltAgent::Dsrqn(DsrqnAgent::new(m, window, params))
        }
        AgentSpec::Reinforce { net, params, .. } => {
            let net = ConvGruNet::new(m, window, crate::agents::NetConfig { seed, ..net.clone() });
            let params = crate::agents::ReinforceConfig { seed: seed.wrapping_add(1), ..params.clone() };
            BuiltAgent::Reinforce(Reinforce::new("reinforce", net, params))
        }
        AgentSpec::Msm { net, params, .. } => {
            let net = ScoreMachines::new(m, window, crate::agents::MsmConfig { seed, ..net.clone() });
            let params = crate::agents::ReinforceConfig { seed: seed.wrapping_add(1), ..params.clone() };
            BuiltAgent::Msm(Reinforce::new("msm", net, params))
        }
    };
    let mut built = built;
    if let AgentSpec::Reinforce { checkpoint: Some(path), .. } | AgentSpec::Msm { checkpoint: Some(path), .. } = &config.agent {
        let store = built.store_mut().expect("policy agents have parameters");
        load_params(store, path).map_err(|e| CliError::Usage(format!("cannot load checkpoint {}: {e}", path.display())))?;
    }
    Ok(built)
}

/// Model identification on the log returns known before the test range.
fn fit_on_train(agent: &mut ModelBasedAgent, prices: &PriceFrame, split: usize) -> Result<()> {
    let log = to_returns(prices, ReturnsKind::Log)?;
    let m = log.n_assets();
    agent.fit(&log.values()[..split.min(log.len()) * m], m)
}
