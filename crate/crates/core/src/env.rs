//! Backtest environment: the market as an open-loop dynamical system.
//!
//! At clock `t` (a price index) the agent sees the last `T` log returns and
//! its current holdings, chooses a portfolio, and earns the price move from
//! `t` to `t + 1` net of proportional transaction costs. Holdings then drift
//! with prices until the next rebalance.

use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::Agent;
use crate::market_data::{to_returns, MarketDataError, PortfolioVector, PriceFrame, ReturnsFrame, ReturnsKind};
use crate::metrics::PerformanceReport;

/// Reward given on bankruptcy in place of `ln(0)`.
pub const BANKRUPTCY_REWARD: f64 = -10.0;
const VARIANCE_FLOOR: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("invalid action: {0}")]
    InvalidAction(String),
    #[error("episode is over")]
    Done,
    #[error("zero variance in differential Sharpe ratio (B - A^2 = {0})")]
    ZeroVariance(f64),
    #[error("invalid environment: {0}")]
    Config(String),
    #[error(transparent)]
    MarketData(#[from] MarketDataError),
}

pub type Result<T> = std::result::Result<T, EnvError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardKind {
    LogReturn,
    Dsr,
}

fn default_window() -> usize {
    60
}
fn default_beta() -> f64 {
    crate::optimizer::DEFAULT_BETA
}
fn default_eta() -> f64 {
    0.01
}
fn default_reward() -> RewardKind {
    RewardKind::LogReturn
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvConfig {
    /// Lookback length `T` of the observation window.
    #[serde(default = "default_window")]
    pub window: usize,
    #[serde(default = "default_beta")]
    pub beta: f64,
    #[serde(default = "default_reward")]
    pub reward: RewardKind,
    #[serde(default = "default_eta")]
    pub dsr_eta: f64,
    /// Holdings before the first rebalance; all cash when absent.
    #[serde(default)]
    pub initial_weights: Option<PortfolioVector>,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            window: default_window(),
            beta: default_beta(),
            reward: default_reward(),
            dsr_eta: default_eta(),
            initial_weights: None,
        }
    }
}

/// Exponential moving estimates of the first and second moments of returns.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DsrState {
    pub a: f64,
    pub b: f64,
    pub eta: f64,
}

impl DsrState {
    pub fn from_returns(returns: &[f64], eta: f64) -> Self {
        let n = returns.len().max(1) as f64;
        let a = returns.iter().sum::<f64>() / n;
        let b = returns.iter().map(|r| r * r).sum::<f64>() / n;
        Self { a, b, eta }
    }

    /// EMA Sharpe ratio `A / sqrt(B - A^2)`.
    pub fn sharpe(&self) -> f64 {
        self.a / (self.b - self.a * self.a).sqrt()
    }
}

/// Differential Sharpe ratio of return `r` and the updated moments:
/// `D = (B dA - A dB / 2) / (B - A^2)^(3/2)`, `dA = r - A`, `dB = r^2 - B`.
pub fn dsr_update(state: DsrState, r: f64) -> Result<(f64, DsrState)> {
    if r == state.a && r * r == state.b {
        // a return equal to both running moments carries no information
        return Ok((0.0, state));
    }
    let var = state.b - state.a * state.a;
    if !(var > VARIANCE_FLOOR) {
        return Err(EnvError::ZeroVariance(var));
    }
    let da = r - state.a;
    let db = r * r - state.b;
    let d = (state.b * da - 0.5 * state.a * db) / var.powf(1.5);
    let next = DsrState { a: state.a + state.eta * da, b: state.b + state.eta * db, eta: state.eta };
    Ok((d, next))
}

/// What the agent sees: `T x M` log returns (oldest row first) and holdings.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentObservation {
    pub t: usize,
    pub window: usize,
    pub n_assets: usize,
    /// Row-major `window x n_assets`.
    pub log_window: Vec<f64>,
    /// Holdings carried into this step (zeros while all in cash).
    pub current_weights: Vec<f64>,
}

impl AgentObservation {
    pub fn row(&self, k: usize) -> &[f64] {
        &self.log_window[k * self.n_assets..(k + 1) * self.n_assets]
    }

    pub fn last_row(&self) -> &[f64] {
        self.row(self.window - 1)
    }

    pub fn column(&self, i: usize) -> Vec<f64> {
        (0..self.window).map(|k| self.row(k)[i]).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepInfo {
    /// Price index at which the action was taken.
    pub t: usize,
    /// `w . r` before costs.
    pub portfolio_return: f64,
    pub cost: f64,
    /// `w . r - cost`.
    pub net_return: f64,
    pub bankrupt: bool,
}

#[derive(Debug, Clone)]
pub struct EnvStep {
    pub observation: AgentObservation,
    pub reward: f64,
    pub done: bool,
    pub info: StepInfo,
}

#[derive(Debug, Clone)]
pub struct MarketEnv {
    config: EnvConfig,
    simple: ReturnsFrame,
    log: ReturnsFrame,
    start: usize,
    end: usize,
    t: usize,
    weights: Vec<f64>,
    dsr: DsrState,
    done: bool,
}

impl MarketEnv {
    /// Episode over the whole frame: clock runs from `T` to the last price.
    pub fn new(prices: &PriceFrame, config: EnvConfig) -> Result<Self> {
        Self::with_range(prices, config, None, None)
    }

    /// Episode on price indices `[start, end)`; the window before `start`
    /// serves as warm-up history. Defaults are `T` and the frame length.
    pub fn with_range(prices: &PriceFrame, config: EnvConfig, start: Option<usize>, end: Option<usize>) -> Result<Self> {
        let n = prices.len();
        let w = config.window;
        let start = start.unwrap_or(w);
        let end = end.unwrap_or(n);
        if w == 0 {
            return Err(EnvError::Config("window must be at least 1".into()));
        }
        if start < w || end > n || start + 1 >= end {
            return Err(EnvError::Config(format!(
                "range {start}..{end} invalid for window {w} and {n} prices"
            )));
        }
        if !(config.beta >= 0.0) || !(config.dsr_eta > 0.0) {
            return Err(EnvError::Config("beta must be >= 0 and dsr_eta > 0".into()));
        }
        if let Some(w0) = &config.initial_weights {
            if w0.len() != prices.n_assets() {
                return Err(EnvError::Config("initial_weights has wrong length".into()));
            }
        }
        let simple = to_returns(prices, ReturnsKind::Simple)?;
        let log = to_returns(prices, ReturnsKind::Log)?;
        let mut env = Self {
            dsr: DsrState { a: 0.0, b: 0.0, eta: config.dsr_eta },
            config,
            simple,
            log,
            start,
            end,
            t: start,
            weights: Vec::new(),
            done: false,
        };
        env.reset();
        Ok(env)
    }

    pub fn reset(&mut self) -> AgentObservation {
        let m = self.n_assets();
        self.t = self.start;
        self.done = false;
        self.weights = match &self.config.initial_weights {
            Some(w) => w.weights().to_vec(),
            None => vec![0.0; m],
        };
        let uniform = PortfolioVector::uniform(m);
        let warm: Vec<f64> = (self.start - self.config.window..self.start)
            .map(|k| uniform.dot(self.simple.row(k)))
            .collect();
        self.dsr = DsrState::from_returns(&warm, self.config.dsr_eta);
        self.observation()
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn n_assets(&self) -> usize {
        self.simple.n_assets()
    }

    pub fn clock(&self) -> usize {
        self.t
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    /// Number of decisions in one episode.
    pub fn episode_len(&self) -> usize {
        self.end - 1 - self.start
    }

    pub fn simple_returns(&self) -> &ReturnsFrame {
        &self.simple
    }

    pub fn log_returns(&self) -> &ReturnsFrame {
        &self.log
    }

    pub fn dsr_state(&self) -> DsrState {
        self.dsr
    }

    pub fn observation(&self) -> AgentObservation {
        let (w, m) = (self.config.window, self.n_assets());
        let mut log_window = Vec::with_capacity(w * m);
        for k in self.t - w..self.t {
            log_window.extend_from_slice(self.log.row(k));
        }
        AgentObservation { t: self.t, window: w, n_assets: m, log_window, current_weights: self.weights.clone() }
    }

    pub fn step(&mut self, action: &PortfolioVector) -> Result<EnvStep> {
        if self.done {
            return Err(EnvError::Done);
        }
        let m = self.n_assets();
        if action.len() != m {
            return Err(EnvError::InvalidAction(format!("{} weights for {m} assets", action.len())));
        }
        let r = self.simple.row(self.t);
        let cost = self.config.beta * action.turnover(&self.weights);
        let portfolio_return = action.dot(r);
        let g = portfolio_return - cost;
        let bankrupt = 1.0 + g <= 0.0;
        let reward = if bankrupt {
            BANKRUPTCY_REWARD
        } else {
            match self.config.reward {
                RewardKind::LogReturn => g.ln_1p(),
                RewardKind::Dsr => {
                    let (d, next) = dsr_update(self.dsr, g)?;
                    self.dsr = next;
                    d
                }
            }
        };
        let info = StepInfo { t: self.t, portfolio_return, cost, net_return: g, bankrupt };
        self.weights = if bankrupt { vec![0.0; m] } else { action.drifted(r).into_weights() };
        self.t += 1;
        self.done = bankrupt || self.t + 1 >= self.end;
        Ok(EnvStep { observation: self.observation(), reward, done: self.done, info })
    }
}

#[derive(Debug, Clone)]
pub struct Episode {
    pub actions: Vec<PortfolioVector>,
    pub rewards: Vec<f64>,
    pub infos: Vec<StepInfo>,
    /// Observations fed to the agent (only when requested).
    pub observations: Vec<AgentObservation>,
    pub bankrupt: bool,
    pub report: PerformanceReport,
}

impl Episode {
    pub fn total_reward(&self) -> f64 {
        self.rewards.iter().sum()
    }

    pub fn net_returns(&self) -> Vec<f64> {
        self.infos.iter().map(|i| i.net_return).collect()
    }

    /// `sum ln(1 + g_t)`, the log growth of wealth over the episode.
    pub fn log_wealth(&self) -> f64 {
        self.infos.iter().map(|i| i.net_return.ln_1p()).sum()
    }

    /// Columns `t,reward,cost,w0..w{M-1}`.
    pub fn write_trajectory_csv(&self, path: impl AsRef<Path>) -> std::io::Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        let m = self.actions.first().map_or(0, |a| a.len());
        write!(f, "t,reward,cost")?;
        for i in 0..m {
            write!(f, ",w{i}")?;
        }
        writeln!(f)?;
        for ((a, r), info) in self.actions.iter().zip(&self.rewards).zip(&self.infos) {
            write!(f, "{},{},{}", info.t, r, info.cost)?;
            for w in a.weights() {
                write!(f, ",{w}")?;
            }
            writeln!(f)?;
        }
        f.flush()
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    pub record_observations: bool,
    /// Sharpe annualization factor for the report; `sqrt(T)` when `None`.
    pub annualization: Option<f64>,
}

/// One pass over the environment's range with `agent` choosing every
/// allocation. The agent sees each transition through [`Agent::observe`].
pub fn run_episode<A: Agent + ?Sized>(
    env: &mut MarketEnv,
    agent: &mut A,
    options: RunOptions,
) -> crate::Result<Episode> {
    let mut obs = env.reset();
    agent.reset();
    let mut actions = Vec::new();
    let mut rewards = Vec::new();
    let mut infos = Vec::new();
    let mut observations = Vec::new();
    let mut bankrupt = false;
    loop {
        let action = agent.act(&obs)?;
        let step = env.step(&action)?;
        agent.observe(&obs, &action, &step)?;
        if options.record_observations {
            observations.push(obs);
        }
        actions.push(action);
        rewards.push(step.reward);
        infos.push(step.info);
        bankrupt |= step.info.bankrupt;
        if step.done {
            break;
        }
        obs = step.observation;
    }
    if bankrupt {
        log::warn!("{}: bankrupt after {} steps", agent.name(), infos.len());
    }
    let net: Vec<f64> = infos.iter().map(|i| i.net_return).collect();
    let report = PerformanceReport::from_returns(&net, options.annualization);
    Ok(Episode { actions, rewards, infos, observations, bankrupt, report })
}
