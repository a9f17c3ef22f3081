//! Python bindings for the `portfolio_rl` crate.

use nalgebra::DMatrix;
use pyo3::exceptions::{PyIndexError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use portfolio_rl::env::{self, DsrState, EnvConfig};
use portfolio_rl::market_data::{self, PortfolioVector, ReturnsKind, UniverseSpec};
use portfolio_rl::metrics::PerformanceReport;
use portfolio_rl::optimizer::{self, Objective, ObjectiveSpec};
use portfolio_rl::{cli, pretrain};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn matrix(rows: &[Vec<f64>]) -> PyResult<DMatrix<f64>> {
    let n = rows.len();
    if rows.iter().any(|r| r.len() != n) {
        return Err(PyValueError::new_err("sigma must be a square list of rows"));
    }
    Ok(DMatrix::from_row_iterator(n, n, rows.iter().flatten().copied()))
}

fn from_json<'py>(py: Python<'py>, value: &impl serde::Serialize) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(value_err)?;
    py.import("json")?.call_method1("loads", (text,))
}

/// Price history: one row per date, one column per asset.
#[pyclass(name = "PriceFrame", module = "portfolio_rl")]
struct PyPriceFrame {
    inner: market_data::PriceFrame,
}

#[pymethods]
impl PyPriceFrame {
    #[new]
    fn new(assets: Vec<String>, rows: Vec<Vec<f64>>) -> PyResult<Self> {
        market_data::PriceFrame::from_rows(assets, &rows).map(|inner| Self { inner }).map_err(value_err)
    }

    #[staticmethod]
    fn from_csv(path: &str) -> PyResult<Self> {
        market_data::load_csv(path, &market_data::CsvConfig::default()).map(|inner| Self { inner }).map_err(value_err)
    }

    fn to_csv(&self, path: &str) -> PyResult<()> {
        market_data::write_csv(&self.inner, path).map_err(value_err)
    }

    #[getter]
    fn assets(&self) -> Vec<String> {
        self.inner.assets().to_vec()
    }

    fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.inner.len()).map(|t| self.inner.row(t).to_vec()).collect()
    }

    /// Log returns as a list of rows, one shorter than the prices.
    fn log_returns(&self) -> PyResult<Vec<Vec<f64>>> {
        let r = market_data::to_returns(&self.inner, ReturnsKind::Log).map_err(value_err)?;
        Ok((0..r.len()).map(|t| r.row(t).to_vec()).collect())
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!("PriceFrame({} x {})", self.inner.len(), self.inner.n_assets())
    }
}

/// Builds a universe from a JSON spec such as
/// `{"generator": "sine", "M": 2, "T": 200, "seed": 0}`.
#[pyfunction]
fn generate_universe(spec: &str) -> PyResult<PyPriceFrame> {
    let spec: UniverseSpec = serde_json::from_str(spec).map_err(value_err)?;
    spec.build().map(|inner| PyPriceFrame { inner }).map_err(value_err)
}

#[pyfunction]
fn aaft_surrogate(prices: &PyPriceFrame, seed: u64) -> PyResult<PyPriceFrame> {
    market_data::aaft_prices(&prices.inner, seed).map(|inner| PyPriceFrame { inner }).map_err(value_err)
}

/// Maximizes `objective` ("target_return", "risk_aversion" or "sharpe") net
/// of the cost `beta * |w - w0|_1`. Returns `(weights, objective value)`.
#[pyfunction]
#[pyo3(signature = (mu, sigma, objective="sharpe", target=None, alpha=1.0, beta=0.0, w0=None, short_allowed=false))]
#[allow(clippy::too_many_arguments)]
fn solve_qp(
    mu: Vec<f64>,
    sigma: Vec<Vec<f64>>,
    objective: &str,
    target: Option<f64>,
    alpha: f64,
    beta: f64,
    w0: Option<Vec<f64>>,
    short_allowed: bool,
) -> PyResult<(Vec<f64>, f64)> {
    let objective = match objective {
        "target_return" => Objective::TargetReturn {
            target: target.ok_or_else(|| PyValueError::new_err("target_return needs target"))?,
        },
        "risk_aversion" => Objective::RiskAversion { alpha },
        "sharpe" => Objective::Sharpe,
        other => return Err(PyValueError::new_err(format!("unknown objective {other:?}"))),
    };
    let mut spec = ObjectiveSpec::new(objective).with_beta(beta).with_shorts(short_allowed);
    if let Some(w0) = w0 {
        spec = spec.with_w0(PortfolioVector::new(w0, short_allowed).map_err(value_err)?);
    }
    let sol = optimizer::solve_qp(&mu, &matrix(&sigma)?, &spec).map_err(value_err)?;
    Ok((sol.weights.weights().to_vec(), sol.objective_value))
}

/// Minimum-variance weights with `mu'w = target` and shorting allowed.
#[pyfunction]
fn markowitz(mu: Vec<f64>, sigma: Vec<Vec<f64>>, target: f64) -> PyResult<Vec<f64>> {
    let sol = optimizer::markowitz_closed_form(&mu, &matrix(&sigma)?, target).map_err(value_err)?;
    Ok(sol.weights.weights().to_vec())
}

/// Performance statistics of a series of simple returns, as a dict.
#[pyfunction]
#[pyo3(signature = (returns, annualization=None))]
fn performance<'py>(py: Python<'py>, returns: Vec<f64>, annualization: Option<f64>) -> PyResult<Bound<'py, PyAny>> {
    from_json(py, &PerformanceReport::from_returns(&returns, annualization))
}

/// One differential Sharpe ratio step: returns `(D, A', B')`.
#[pyfunction]
fn dsr_update(a: f64, b: f64, eta: f64, r: f64) -> PyResult<(f64, f64, f64)> {
    let (d, next) = env::dsr_update(DsrState { a, b, eta }, r).map_err(value_err)?;
    Ok((d, next.a, next.b))
}

/// Trading environment over a price frame. Actions are lists of weights.
#[pyclass(name = "MarketEnv", module = "portfolio_rl")]
struct PyMarketEnv {
    inner: env::MarketEnv,
    total_reward: f64,
}

#[pymethods]
impl PyMarketEnv {
    #[new]
    #[pyo3(signature = (prices, window=20, beta=0.002, reward="log_return"))]
    fn new(prices: &PyPriceFrame, window: usize, beta: f64, reward: &str) -> PyResult<Self> {
        let reward = serde_json::from_value(serde_json::Value::String(reward.to_string())).map_err(value_err)?;
        let config = EnvConfig { window, beta, reward, ..EnvConfig::default() };
        env::MarketEnv::new(&prices.inner, config).map(|inner| Self { inner, total_reward: 0.0 }).map_err(value_err)
    }

    /// Restarts the episode and returns the first observation.
    fn reset<'py>(&mut self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        self.total_reward = 0.0;
        let obs = self.inner.reset();
        observation(py, &obs)
    }

    /// Applies `weights`; returns `(observation, reward, done, info)`.
    fn step<'py>(&mut self, py: Python<'py>, weights: Vec<f64>) -> PyResult<(Bound<'py, PyDict>, f64, bool, Bound<'py, PyDict>)> {
        let action = PortfolioVector::new(weights, false).map_err(value_err)?;
        let s = self.inner.step(&action).map_err(value_err)?;
        self.total_reward += s.reward;
        let info = PyDict::new(py);
        info.set_item("t", s.info.t)?;
        info.set_item("portfolio_return", s.info.portfolio_return)?;
        info.set_item("cost", s.info.cost)?;
        info.set_item("net_return", s.info.net_return)?;
        info.set_item("bankrupt", s.info.bankrupt)?;
        Ok((observation(py, &s.observation)?, s.reward, s.done, info))
    }

    /// Sum of rewards collected so far in the episode.
    #[getter]
    fn total_reward(&self) -> f64 {
        self.total_reward
    }

    #[getter]
    fn episode_len(&self) -> usize {
        self.inner.episode_len()
    }
}

fn observation<'py>(py: Python<'py>, obs: &env::AgentObservation) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("t", obs.t)?;
    let rows: Vec<Vec<f64>> = (0..obs.window).map(|k| obs.row(k).to_vec()).collect();
    d.set_item("log_window", rows)?;
    d.set_item("weights", obs.current_weights.clone())?;
    Ok(d)
}

/// Supervised pre-training pairs labelled by the cost-aware Sharpe optimum.
#[pyclass(name = "Dataset", module = "portfolio_rl")]
struct PyDataset {
    inner: pretrain::Dataset,
}

#[pymethods]
impl PyDataset {
    #[new]
    #[pyo3(signature = (n, m, t, beta=0.002, seed=0))]
    fn new(n: usize, m: usize, t: usize, beta: f64, seed: u64) -> PyResult<Self> {
        pretrain::generate_dataset(n, m, t, beta, seed).map(|inner| Self { inner }).map_err(value_err)
    }

    #[staticmethod]
    fn load(base: &str) -> PyResult<Self> {
        pretrain::Dataset::load(base).map(|inner| Self { inner }).map_err(value_err)
    }

    fn save(&self, base: &str) -> PyResult<()> {
        self.inner.save(base).map_err(value_err)
    }

    /// `(window, weights, target)` of pair `i`; the window is row-major `t x m`.
    fn pair(&self, i: usize) -> PyResult<(Vec<f64>, Vec<f64>, Vec<f64>)> {
        let p = self.inner.pairs.get(i).ok_or_else(|| PyIndexError::new_err(i))?;
        Ok((p.window.clone(), p.weights.clone(), p.target.clone()))
    }

    fn __len__(&self) -> usize {
        self.inner.pairs.len()
    }
}

/// Runs an experiment config (JSON text) in memory and returns its report.
#[pyfunction]
fn backtest<'py>(py: Python<'py>, config: &str) -> PyResult<Bound<'py, PyAny>> {
    let doc = serde_json::from_str(config).map_err(value_err)?;
    let config = cli::parse_experiment(doc, "<python>").map_err(value_err)?;
    let report = cli::run_in_memory(&config).map_err(value_err)?;
    from_json(py, &report)
}

/// Command-line entry point; returns the exit code.
#[pyfunction]
fn main(args: Vec<String>) -> i32 {
    cli::run(std::iter::once("portfolio-rl".to_string()).chain(args))
}

#[pymodule]
#[pyo3(name = "portfolio_rl")]
fn python_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyPriceFrame>()?;
    m.add_class::<PyMarketEnv>()?;
    m.add_class::<PyDataset>()?;
    m.add_function(wrap_pyfunction!(generate_universe, m)?)?;
    m.add_function(wrap_pyfunction!(aaft_surrogate, m)?)?;
    m.add_function(wrap_pyfunction!(solve_qp, m)?)?;
    m.add_function(wrap_pyfunction!(markowitz, m)?)?;
    m.add_function(wrap_pyfunction!(performance, m)?)?;
    m.add_function(wrap_pyfunction!(dsr_update, m)?)?;
    m.add_function(wrap_pyfunction!(backtest, m)?)?;
    m.add_function(wrap_pyfunction!(main, m)?)?;
    Ok(())
}
