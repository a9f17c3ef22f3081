use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use chrono::{Duration, NaiveDate};
use portfolio_rl::cli::RunReport;
use portfolio_rl::market_data::{load_csv, CsvConfig};
use tempfile::TempDir;

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_portfolio-rl")).args(args).output().expect("binary runs")
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path
}

fn constant_csv(dir: &Path, n: usize) -> PathBuf {
    let start = NaiveDate::from_ymd_opt(2020, 1, 1).unwrap();
    let mut text = String::from("date,A,B,C\n");
    for k in 0..n {
        text.push_str(&format!("{},10,20,30\n", start + Duration::days(k as i64)));
    }
    write(dir, "flat.csv", &text)
}

fn read_report(dir: &Path) -> RunReport {
    serde_json::from_str(&std::fs::read_to_string(dir.join("report.json")).unwrap()).unwrap()
}

fn sine_config(dir: &Path, name: &str, agent: &str) -> PathBuf {
    let text = format!(
        r#"{{"universe": {{"generator": "sine", "M": 2, "T": 120, "seed": 3}}, "agent": {agent}, "env": {{"window": 10, "beta": 0.002}}, "episodes": 2}}"#
    );
    write(dir, name, &text)
}

#[test]
fn buy_and_hold_on_flat_prices_loses_only_the_entry_cost() {
    let tmp = TempDir::new().unwrap();
    let csv = constant_csv(tmp.path(), 60);
    let config = write(
        tmp.path(),
        "bh.json",
        &format!(
            r#"{{"universe": {{"generator": "csv", "M": 3, "T": 60, "seed": 0, "params": {{"path": "{}"}}}}, "agent": {{"kind": "buy_and_hold"}}, "env": {{"window": 5, "beta": 0.003}}}}"#,
            path_str(&csv)
        ),
    );
    let out = tmp.path().join("run");
    let res = bin(&["backtest", "--config", path_str(&config), "--out", path_str(&out)]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let report = read_report(&out);
    approx::assert_abs_diff_eq!(report.performance.cumulative_return, -0.003, epsilon = 1e-12);
    assert!(!report.bankrupt);
    for name in ["trajectory.csv", "learning_curve.csv", "config.json"] {
        assert!(out.join(name).exists(), "{name} missing");
    }
}

#[test]
fn missing_csv_is_a_usage_error_naming_the_file() {
    let tmp = TempDir::new().unwrap();
    let config = write(
        tmp.path(),
        "c.json",
        r#"{"universe": {"generator": "csv", "M": 2, "T": 200, "seed": 0, "params": {"path": "/no/such/prices.csv"}}, "agent": {"kind": "uniform"}}"#,
    );
    let res = bin(&["backtest", "--config", path_str(&config), "--out", path_str(&tmp.path().join("o"))]);
    assert_eq!(res.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&res.stderr).contains("/no/such/prices.csv"));
}

#[test]
fn exit_codes_separate_usage_from_runtime_failures() {
    let tmp = TempDir::new().unwrap();
    assert_eq!(bin(&["backtest"]).status.code(), Some(2));
    assert_eq!(bin(&["backtest", "--config", "/no/such/config.json"]).status.code(), Some(2));
    let bad = write(tmp.path(), "bad.json", r#"{"universe": {"generator": "sine", "M": 2, "T": 100, "seed": 0}, "agent": {"kind": "nope"}}"#);
    assert_eq!(bin(&["backtest", "--config", path_str(&bad)]).status.code(), Some(2));

    let config = sine_config(tmp.path(), "u.json", r#"{"kind": "uniform"}"#);
    let blocker = write(tmp.path(), "not_a_dir", "");
    let res = bin(&["backtest", "--config", path_str(&config), "--out", path_str(&blocker.join("sub"))]);
    assert_eq!(res.status.code(), Some(1), "{}", String::from_utf8_lossy(&res.stderr));
}

#[test]
fn generate_writes_a_universe_with_one_column_per_asset() {
    let tmp = TempDir::new().unwrap();
    let spec = write(tmp.path(), "sine.json", r#"{"generator": "sine", "M": 2, "T": 80, "seed": 5}"#);
    let out = tmp.path().join("gen");
    let res = bin(&["generate", "--config", path_str(&spec), "--out", path_str(&out)]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let frame = load_csv(out.join("prices.csv"), &CsvConfig::default()).unwrap();
    assert_eq!((frame.len(), frame.n_assets()), (80, 2));
}

fn amplitudes(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    (0..n)
        .map(|k| {
            let (mut re, mut im) = (0.0, 0.0);
            for (t, v) in x.iter().enumerate() {
                let a = -2.0 * std::f64::consts::PI * ((k * t) % n) as f64 / n as f64;
                re += v * a.cos();
                im += v * a.sin();
            }
            re.hypot(im)
        })
        .collect()
}

fn log_returns(frame: &portfolio_rl::market_data::PriceFrame, i: usize) -> Vec<f64> {
    (1..frame.len()).map(|t| (frame.get(t, i) / frame.get(t - 1, i)).ln()).collect()
}

#[test]
fn aaft_surrogate_from_csv_keeps_amplitude_spectra() {
    let tmp = TempDir::new().unwrap();
    let spec = write(tmp.path(), "chirp.json", r#"{"generator": "chirp", "M": 2, "T": 128, "seed": 9}"#);
    let src = tmp.path().join("src");
    assert!(bin(&["generate", "--config", path_str(&spec), "--out", path_str(&src)]).status.success());
    let csv = src.join("prices.csv");
    let aaft = write(
        tmp.path(),
        "aaft.json",
        &format!(r#"{{"generator": "aaft", "M": 2, "T": 128, "seed": 1, "params": {{"path": "{}"}}}}"#, path_str(&csv)),
    );
    let out = tmp.path().join("sur");
    let res = bin(&["generate", "--config", path_str(&aaft), "--out", path_str(&out)]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let original = load_csv(&csv, &CsvConfig::default()).unwrap();
    let surrogate = load_csv(out.join("prices.csv"), &CsvConfig::default()).unwrap();
    assert_eq!(surrogate.n_assets(), 2);
    for i in 0..2 {
        let (a, b) = (log_returns(&original, i), log_returns(&surrogate, i));
        assert_ne!(a, b);
        for (x, y) in amplitudes(&a).iter().zip(amplitudes(&b)) {
            approx::assert_abs_diff_eq!(*x, y, epsilon = 1e-8);
        }
    }
}

#[test]
fn dataset_manifest_reports_its_size() {
    let tmp = TempDir::new().unwrap();
    let spec = write(tmp.path(), "d.json", r#"{"n": 100, "m": 2, "t": 8, "beta": 0.002, "seed": 3}"#);
    let out = tmp.path().join("data");
    let res = bin(&["generate", "--config", path_str(&spec), "--out", path_str(&out)]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let manifest: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("dataset.json")).unwrap()).unwrap();
    assert_eq!(manifest["n"], 100);
    let bytes = std::fs::metadata(out.join("dataset.bin")).unwrap().len();
    assert_eq!(bytes, 100 * (8 * 2 + 2 + 2) * 8);
}

#[test]
fn compare_keeps_input_order_and_leaves_inputs_untouched() {
    let tmp = TempDir::new().unwrap();
    let uniform = sine_config(tmp.path(), "uniform.json", r#"{"kind": "uniform"}"#);
    let smm = sine_config(tmp.path(), "smm.json", r#"{"kind": "smm"}"#);
    let run_dir = tmp.path().join("bh");
    let bh = sine_config(tmp.path(), "bh.json", r#"{"kind": "buy_and_hold"}"#);
    assert!(bin(&["backtest", "--config", path_str(&bh), "--out", path_str(&run_dir)]).status.success());
    let before = std::fs::read(run_dir.join("report.json")).unwrap();
    let config_before = std::fs::read(&uniform).unwrap();

    let out = tmp.path().join("cmp");
    let res = bin(&["compare", path_str(&smm), path_str(&run_dir), path_str(&uniform), "--out", path_str(&out)]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let table = std::fs::read_to_string(out.join("comparison.csv")).unwrap();
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines[0], "agent,cumulative_return,sharpe,max_drawdown");
    let agents: Vec<&str> = lines[1..].iter().map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(agents.len(), 3);
    assert!(agents[0].contains("smm") && agents[1].contains("buy") && agents[2].contains("uniform"), "{agents:?}");
    assert_eq!(std::fs::read(run_dir.join("report.json")).unwrap(), before);
    assert_eq!(std::fs::read(&uniform).unwrap(), config_before);
}

#[test]
fn comparing_a_run_with_itself_gives_identical_rows() {
    let tmp = TempDir::new().unwrap();
    let config = sine_config(tmp.path(), "pg.json", r#"{"kind": "reinforce", "net": {"filters": [2], "hidden": 4}}"#);
    let out = tmp.path().join("cmp");
    let res = bin(&["compare", path_str(&config), path_str(&config), "--seed", "4", "--out", path_str(&out)]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let table = std::fs::read_to_string(out.join("comparison.csv")).unwrap();
    let rows: Vec<&str> = table.lines().skip(1).collect();
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0], rows[1]);
}

#[test]
fn overrides_and_seed_change_the_run() {
    let tmp = TempDir::new().unwrap();
    let config = sine_config(tmp.path(), "pg.json", r#"{"kind": "reinforce", "net": {"filters": [2], "hidden": 4}}"#);
    let run = |seed: &str, name: &str, extra: &[&str]| {
        let out = tmp.path().join(name);
        let mut args = vec!["train", "--config", path_str(&config), "--seed", seed, "--out", path_str(&out)];
        args.extend_from_slice(extra);
        let res = bin(&args);
        assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
        out
    };
    let a = run("1", "a", &[]);
    let b = run("1", "b", &[]);
    let c = run("2", "c", &[]);
    let d = run("1", "d", &["--override", "agent.params.lr=0.05", "--episodes", "3"]);
    let curve = |d: &Path| std::fs::read_to_string(d.join("learning_curve.csv")).unwrap();
    assert_eq!(curve(&a), curve(&b));
    assert_eq!(std::fs::read(a.join("policy.bin")).unwrap(), std::fs::read(b.join("policy.bin")).unwrap());
    assert_ne!(curve(&a), curve(&c));
    assert_eq!(curve(&d).lines().count(), 4);
    let saved: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(d.join("config.json")).unwrap()).unwrap();
    assert_eq!(saved["agent"]["params"]["lr"], 0.05);
}

#[test]
fn pretrain_then_backtest_from_checkpoint() {
    let tmp = TempDir::new().unwrap();
    let config = write(
        tmp.path(),
        "pt.json",
        r#"{"universe": {"generator": "sine", "M": 2, "T": 120, "seed": 3}, "agent": {"kind": "reinforce", "net": {"filters": [2], "hidden": 4}}, "env": {"window": 10}, "pretrain": {"n": 40, "training": {"epochs": 3}}}"#,
    );
    let out = tmp.path().join("pt");
    let res = bin(&["pretrain", "--config", path_str(&config), "--out", path_str(&out)]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let curve = std::fs::read_to_string(out.join("pretrain_curve.csv")).unwrap();
    assert_eq!(curve.lines().next(), Some("epoch,train_mse,validation_mse"));
    assert_eq!(curve.lines().count(), 4);

    let checkpoint = out.join("policy");
    let with_ckpt = tmp.path().join("bt");
    let res = bin(&[
        "backtest",
        "--config",
        path_str(&config),
        "--override",
        &format!("agent.checkpoint={}", path_str(&checkpoint)),
        "--override",
        "pretrain=null",
        "--out",
        path_str(&with_ckpt),
    ]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    assert!(read_report(&with_ckpt).log_return.is_some());
}
