"""Tests for the Monte Carlo estimators, rate fits and plotting helpers."""

from __future__ import annotations

import sys
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import numpy as np  # noqa: E402
import pandas as pd  # noqa: E402
import pytest  # noqa: E402

ROOT = Path(__file__).resolve().parents[1]
if str(ROOT) not in sys.path:
    sys.path.append(str(ROOT))

from src.analysis.measures import reflected_ou_stationary_cdf  # noqa: E402
from src.analysis.metrics import (  # noqa: E402
    fit_log_rate,
    fit_power_rate,
    mean_and_stderr,
    relative_error,
    spread_ratio,
    within_stderr,
)
from src.plots.plotting import (  # noqa: E402
    plot_convergence,
    plot_decay,
    plot_samples_histogram,
    plot_solution,
)


def test_mean_and_stderr_matches_sample_formula():
    x = np.array([1.0, 2.0, 3.0, 4.0])

    mean, se = mean_and_stderr(x)

    assert mean == pytest.approx(2.5)
    assert se == pytest.approx(np.std(x, ddof=1) / 2.0)


def test_mean_and_stderr_single_sample_and_axis():
    mean, se = mean_and_stderr(np.array([7.0]))
    assert mean == pytest.approx(7.0)
    assert se == 0.0

    block = np.array([[1.0, 10.0], [3.0, 10.0]])
    mean, se = mean_and_stderr(block, axis=0)
    assert np.allclose(mean, [2.0, 10.0])
    assert np.allclose(se, [1.0, 0.0])


def test_within_stderr_and_relative_error():
    assert within_stderr(1.05, 1.0, 0.02)
    assert not within_stderr(1.1, 1.0, 0.02)
    assert within_stderr(2.0, 2.0, 0.0)
    assert relative_error(0.95, 1.0) == pytest.approx(0.05)
    assert relative_error(0.3, 0.0) == pytest.approx(0.3)


def test_fit_log_rate_recovers_exponential():
    t = np.linspace(0.0, 5.0, 51)
    values = 3.0 * np.exp(-1.75 * t)

    fit = fit_log_rate(t, values)

    assert fit["rate"] == pytest.approx(1.75, rel=1e-10)
    assert fit["intercept"] == pytest.approx(np.log(3.0), rel=1e-10)
    assert fit["r2"] == pytest.approx(1.0)


def test_fit_log_rate_drops_nonpositive_values():
    fit = fit_log_rate(np.array([0.0, 1.0]), np.array([0.0, -1.0]))

    assert np.isnan(fit["rate"])
    assert fit["n_obs"] == 0


def test_fit_power_rate_recovers_order():
    h = np.array([0.1, 0.05, 0.025, 0.0125])

    fit = fit_power_rate(h, 2.0 * h**1.5)

    assert fit["slope"] == pytest.approx(1.5, rel=1e-10)
    assert fit["n_obs"] == 4


def test_spread_ratio_cases():
    assert spread_ratio(np.array([1.0, 2.0, 4.0])) == pytest.approx(4.0)
    assert spread_ratio(np.array([1.0, 1.0])) == pytest.approx(1.0)
    assert spread_ratio(np.array([0.0, 1.0])) == np.inf
    assert spread_ratio(np.array([0.0, 0.0])) == 1.0
    assert np.isnan(spread_ratio(np.array([np.nan])))


def test_plot_helpers_write_files(tmp_path):
    t = np.linspace(0.0, 2.0, 21)
    solution = pd.DataFrame({"t": t, "u0": np.maximum(1.0 - t, 0.0), "eta0": np.maximum(t - 1.0, 0.0)})
    decay = pd.DataFrame(
        {"t": t, "mean_sq_diff": np.exp(-1.75 * t), "stderr": 0.01 * np.exp(-1.75 * t), "bound": 1.1 * np.exp(-1.5 * t)}
    )
    table = pd.DataFrame({"eps": [0.1, 0.01, 0.001], "sup_err": [0.1, 0.01, 0.001]})
    samples = np.abs(np.random.default_rng(0).normal(scale=np.sqrt(0.5), size=(500, 1)))

    plot_solution(solution, out_path=tmp_path / "solution.png")
    plot_decay(decay, out_path=tmp_path / "decay.png")
    plot_convergence(table, "eps", "sup_err", out_path=tmp_path / "nested" / "convergence.png")
    plot_samples_histogram(
        samples,
        cdf=lambda x: reflected_ou_stationary_cdf(x, 1.0, 1.0),
        out_path=tmp_path / "law.png",
    )

    for name in ("solution.png", "decay.png", "nested/convergence.png", "law.png"):
        assert (tmp_path / name).stat().st_size > 0


def test_plot_solution_needs_time_column():
    with pytest.raises(ValueError):
        plot_solution(pd.DataFrame({"u0": [1.0, 0.0]}))


def test_histogram_rejects_empty_samples():
    with pytest.raises(ValueError):
        plot_samples_histogram(np.empty((0, 1)))
