//! Command-line front end: experiment configs, training, backtests, dataset
//! generation and run comparison.

mod config;
mod experiment;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

pub use config::{load_experiment, parse_experiment, read_json, set_path, AgentSpec, ExperimentConfig, Overrides, PretrainSpec, Split};
pub use experiment::{BuiltAgent, CurvePoint, Experiment, RunReport};

use crate::market_data::{write_csv, UniverseSpec};
use crate::metrics::PerformanceReport;
use crate::pretrain::{self, DatasetSpec};

pub const LOG_ENV: &str = "PORTFOLIO_RL_LOG";
const DEFAULT_OUT: &str = "output";

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad arguments, configuration or input data.
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Runtime(#[from] crate::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "portfolio-rl", version, about = "Portfolio optimization and trading-agent laboratory")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone)]
pub struct CommonArgs {
    /// JSON configuration file.
    #[arg(long, value_name = "PATH")]
    pub config: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory (default: the config's `output`, else ./output).
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub episodes: Option<usize>,
    /// Set a config value by dotted path, e.g. `env.beta=0.01`. Repeatable.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

impl CommonArgs {
    fn overrides(&self) -> Overrides {
        Overrides { seed: self.seed, episodes: self.episodes, output: self.out.clone(), pairs: self.overrides.clone() }
    }
}

#[derive(Debug, Args, Clone)]
pub struct CompareArgs {
    /// Run directories holding `report.json`, or experiment configs to run.
    #[arg(required = true, num_args = 2.., value_name = "RUN")]
    pub runs: Vec<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub episodes: Option<usize>,
    #[arg(long = "override", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train (if the agent learns), then evaluate on the test range and
    /// write report.json, trajectory.csv and learning_curve.csv.
    Backtest(CommonArgs),
    /// Write a universe (prices.csv) or a pre-training dataset.
    Generate(CommonArgs),
    /// Supervised warm start of a policy network; writes its checkpoint.
    Pretrain(CommonArgs),
    /// Train and write the learning curve and parameter checkpoint.
    Train(CommonArgs),
    /// One row per run: cumulative return, Sharpe ratio, max drawdown.
    Compare(CompareArgs),
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::new().filter_or(LOG_ENV, "warn")).try_init();
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(&cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(command: &Command) -> CliResult<()> {
    match command {
        Command::Backtest(a) => cmd_backtest(&load_experiment(&a.config, &a.overrides())?).map(|_| ()),
        Command::Train(a) => cmd_train(&load_experiment(&a.config, &a.overrides())?),
        Command::Pretrain(a) => cmd_pretrain(&load_experiment(&a.config, &a.overrides())?),
        Command::Generate(a) => cmd_generate(&a.config, &a.overrides()),
        Command::Compare(a) => {
            let overrides = Overrides { seed: a.seed, episodes: a.episodes, output: None, pairs: a.overrides.clone() };
            let out = a.out.clone().unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));
            cmd_compare(&a.runs, &overrides, &out)
        }
    }
}

fn output_dir(config: &ExperimentConfig) -> CliResult<PathBuf> {
    let dir = config.output.clone().unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));
    ensure_dir(&dir)?;
    Ok(dir)
}

fn ensure_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Runtime(crate::io_err(dir)(e)))
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    std::fs::write(path, text).map_err(|e| CliError::Runtime(crate::io_err(path)(e)))
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Runtime(crate::Error::Config(e.to_string())))?;
    write_text(path, &(text + "\n"))
}

fn write_curve(path: &Path, curve: &[CurvePoint]) -> CliResult<()> {
    let mut out = String::from("episode,train_return,test_return\n");
    for p in curve {
        out.push_str(&format!("{},{},{}\n", p.episode, p.train_return, p.test_return));
    }
    write_text(path, &out)
}

/// Pre-training (when configured) and training episodes; returns the
/// learning curve.
fn prepare_and_train(config: &ExperimentConfig, dir: &Path) -> CliResult<(Experiment, Vec<CurvePoint>)> {
    let mut exp = Experiment::prepare(config.clone())?;
    if let Some(spec) = &config.pretrain {
        let report = exp.pretrain(spec)?;
        report.write_curve_csv(dir.join("pretrain_curve.csv"))?;
    }
    let curve = exp.train(config.episodes)?;
    write_curve(&dir.join("learning_curve.csv"), &curve)?;
    Ok((exp, curve))
}

/// Runs the experiment and writes its artifacts into the output directory.
pub fn cmd_backtest(config: &ExperimentConfig) -> CliResult<RunReport> {
    let dir = output_dir(config)?;
    let (mut exp, _) = prepare_and_train(config, &dir)?;
    let test = exp.evaluate()?;
    let report = exp.report(&test);
    write_json(&dir.join("report.json"), &report)?;
    let traj = dir.join("trajectory.csv");
    test.write_trajectory_csv(&traj).map_err(|e| CliError::Runtime(crate::io_err(&traj)(e)))?;
    write_json(&dir.join("config.json"), config)?;
    println!(
        "{}: cumulative return {:.6}, sharpe {}, max drawdown {:.6} -> {}",
        report.agent,
        report.performance.cumulative_return,
        report.performance.sharpe.map_or("n/a".to_string(), |s| format!("{s:.4}")),
        report.performance.max_drawdown,
        dir.display()
    );
    Ok(report)
}

pub fn cmd_train(config: &ExperimentConfig) -> CliResult<()> {
    let dir = output_dir(config)?;
    let (exp, curve) = prepare_and_train(config, &dir)?;
    let saved = exp.save_checkpoint(&dir.join("policy"))?;
    write_json(&dir.join("config.json"), config)?;
    match curve.last() {
        Some(p) => println!("trained {} episodes, last test return {:.6} -> {}", p.episode, p.test_return, dir.display()),
        None => println!("{} agents do not learn; nothing trained", config.agent.kind()),
    }
    if saved {
        println!("checkpoint: {}", dir.join("policy.json").display());
    }
    Ok(())
}

pub fn cmd_pretrain(config: &ExperimentConfig) -> CliResult<()> {
    if !matches!(config.agent, AgentSpec::Reinforce { .. } | AgentSpec::Msm { .. }) {
        return Err(CliError::Usage(format!("pretrain needs a reinforce or msm agent, not {}", config.agent.kind())));
    }
    let dir = output_dir(config)?;
    let spec = config.pretrain.clone().unwrap_or_default();
    let mut exp = Experiment::prepare(config.clone())?;
    let report = exp.pretrain(&spec)?;
    report.write_curve_csv(dir.join("pretrain_curve.csv"))?;
    write_json(&dir.join("pretrain_report.json"), &report)?;
    exp.save_checkpoint(&dir.join("policy"))?;
    if let Some(msg) = &report.diverged {
        log::warn!("pre-training diverged ({msg}); kept epoch {}", report.best_epoch);
    }
    println!("pre-trained to epoch {} of {} -> {}", report.best_epoch, report.curve.len(), dir.display());
    Ok(())
}

/// `config` is a universe spec (has `generator`) or a dataset spec (has `n`).
pub fn cmd_generate(config: &Path, overrides: &Overrides) -> CliResult<()> {
    if overrides.episodes.is_some() {
        return Err(CliError::Usage("--episodes does not apply to generate".into()));
    }
    let mut doc = read_json(config)?;
    let out = overrides.output.clone().unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));
    let overrides = Overrides { output: None, ..overrides.clone() };
    overrides.apply(&mut doc)?;
    let origin = config.display();
    if doc.get("generator").is_some() {
        let spec: UniverseSpec =
            serde_json::from_value(doc).map_err(|e| CliError::Usage(format!("{origin}: invalid universe spec: {e}")))?;
        let prices = spec.build().map_err(|e| CliError::Usage(format!("cannot build universe: {e}")))?;
        ensure_dir(&out)?;
        let path = out.join("prices.csv");
        write_csv(&prices, &path).map_err(crate::Error::from)?;
        println!("{} x {} prices -> {}", prices.len(), prices.n_assets(), path.display());
    } else if doc.get("n").is_some() {
        let spec: DatasetSpec =
            serde_json::from_value(doc).map_err(|e| CliError::Usage(format!("{origin}: invalid dataset spec: {e}")))?;
        let data = pretrain::generate(&spec).map_err(|e| match e {
            crate::Error::Config(msg) => CliError::Usage(msg),
            other => CliError::Runtime(other),
        })?;
        ensure_dir(&out)?;
        data.save(out.join("dataset"))?;
        println!("{} pairs -> {}", data.pairs.len(), out.join("dataset.json").display());
    } else {
        return Err(CliError::Usage(format!("{origin}: expected a universe spec (generator) or a dataset spec (n)")));
    }
    Ok(())
}

pub const COMPARISON_HEADER: &str = "agent,cumulative_return,sharpe,max_drawdown";

fn comparison_row(r: &RunReport) -> String {
    let p: &PerformanceReport = &r.performance;
    format!("{},{},{},{}", r.agent, p.cumulative_return, p.sharpe.map(|s| s.to_string()).unwrap_or_default(), p.max_drawdown)
}

/// Trains and evaluates without writing any files.
pub fn run_in_memory(config: &ExperimentConfig) -> CliResult<RunReport> {
    let mut exp = Experiment::prepare(config.clone())?;
    if let Some(spec) = &config.pretrain {
        exp.pretrain(spec)?;
    }
    exp.train(config.episodes)?;
    let test = exp.evaluate()?;
    Ok(exp.report(&test))
}

/// Each input is a run directory with `report.json` or an experiment config
/// that is run in memory. Rows follow the input order.
pub fn cmd_compare(runs: &[PathBuf], overrides: &Overrides, out: &Path) -> CliResult<()> {
    if runs.len() < 2 {
        return Err(CliError::Usage("compare needs at least two runs".into()));
    }
    let mut table = format!("{COMPARISON_HEADER}\n");
    for run in runs {
        let report = if run.is_dir() {
            let path = run.join("report.json");
            let text = std::fs::read_to_string(&path)
                .map_err(|e| CliError::Usage(format!("missing run artifact {}: {e}", path.display())))?;
            serde_json::from_str::<RunReport>(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?
        } else {
            run_in_memory(&load_experiment(run, overrides)?)?
        };
        table.push_str(&comparison_row(&report));
        table.push('\n');
    }
    ensure_dir(out)?;
    write_text(&out.join("comparison.csv"), &table)?;
    print!("{table}");
    Ok(())
}
