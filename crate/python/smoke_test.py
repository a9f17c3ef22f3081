"""Smoke test for the portfolio_rl extension module.

Build first with `cargo build --release -p portfolio-rl-python`, then run
`python3 python/smoke_test.py`. The shared library is copied next to a
temporary import path under the module name Python expects.
"""

import json
import math
import os
import shutil
import sys
import tempfile
from pathlib import Path

import numpy as np

ROOT = Path(__file__).resolve().parent.parent


def import_module():
    lib = Path(os.environ.get("PORTFOLIO_RL_LIB", ROOT / "target" / "release" / "libportfolio_rl.so"))
    if not lib.exists():
        sys.exit(f"extension not found at {lib}; run cargo build --release -p portfolio-rl-python")
    tmp = Path(tempfile.mkdtemp())
    shutil.copy(lib, tmp / "portfolio_rl.so")
    sys.path.insert(0, str(tmp))
    import portfolio_rl

    return portfolio_rl, tmp


def main():
    prl, tmp = import_module()

    prices = prl.generate_universe(json.dumps({"generator": "sine", "M": 2, "T": 200, "seed": 1}))
    assert len(prices) == 200 and len(prices.assets) == 2

    surrogate = prl.aaft_surrogate(prices, 3)
    a = np.abs(np.fft.fft(np.array(prices.log_returns()), axis=0))
    b = np.abs(np.fft.fft(np.array(surrogate.log_returns()), axis=0))
    assert np.allclose(a, b, atol=1e-9), "AAFT changed the amplitude spectrum"

    mu = [0.05, 0.02, 0.01]
    sigma = [[0.04, 0.01, 0.0], [0.01, 0.02, 0.0], [0.0, 0.0, 0.01]]
    w, value = prl.solve_qp(mu, sigma, objective="sharpe", beta=0.001)
    assert abs(sum(w) - 1) < 1e-9 and min(w) >= -1e-12 and math.isfinite(value)
    w = np.array(prl.markowitz(mu, sigma, 0.03))
    assert abs(w.sum() - 1) < 1e-9 and abs(np.dot(mu, w) - 0.03) < 1e-9

    perf = prl.performance([0.01, -0.02, 0.015, 0.0])
    assert abs(perf["cumulative_return"] - (1.01 * 0.98 * 1.015 - 1)) < 1e-12

    d, a_next, b_next = prl.dsr_update(0.001, 0.0002, 0.01, 0.004)
    assert math.isfinite(d) and abs(a_next - (0.001 + 0.01 * 0.003)) < 1e-15

    env = prl.MarketEnv(prices, window=10, beta=0.0)
    obs = env.reset()
    assert len(obs["log_window"]) == 10
    done, steps, wealth = False, 0, 1.0
    rows = prices.rows()
    while not done:
        t = obs["t"]
        obs, reward, done, info = env.step([0.5, 0.5])
        wealth *= 0.5 * rows[t + 1][0] / rows[t][0] + 0.5 * rows[t + 1][1] / rows[t][1]
        steps += 1
    assert steps == env.episode_len
    assert abs(env.total_reward - math.log(wealth)) < 1e-9

    data = prl.Dataset(20, 2, 8, seed=4)
    window, weights, target = data.pair(0)
    assert len(data) == 20 and len(window) == 16 and abs(sum(target) - 1) < 1e-9
    data.save(str(tmp / "pairs"))
    assert prl.Dataset.load(str(tmp / "pairs")).pair(0) == (window, weights, target)

    report = prl.backtest(
        json.dumps(
            {
                "universe": {"generator": "sine", "M": 2, "T": 200, "seed": 1},
                "agent": {"kind": "uniform"},
                "env": {"window": 10},
            }
        )
    )
    assert report["agent"] and report["test_steps"] > 0

    assert prl.main(["backtest"]) == 2

    print("python smoke test passed")


if __name__ == "__main__":
    main()
