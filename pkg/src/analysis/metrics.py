"""Monte Carlo estimators and rate fits used by the checks."""

from __future__ import annotations

from typing import Dict, Tuple

import numpy as np
import statsmodels.api as sm


def mean_and_stderr(samples: np.ndarray, axis: int = 0) -> Tuple[np.ndarray | float, np.ndarray | float]:
    """Sample mean and its standard error along `axis`."""
    arr = np.asarray(samples, dtype=float)
    n = arr.shape[axis] if arr.ndim else 1
    if n == 0:
        return np.nan, np.nan
    mean = arr.mean(axis=axis)
    if n < 2:
        return mean, np.zeros_like(mean) if np.ndim(mean) else 0.0
    se = arr.std(axis=axis, ddof=1) / np.sqrt(n)
    if np.ndim(mean) == 0:
        return float(mean), float(se)
    return mean, se


def within_stderr(estimate: float, target: float, stderr: float, k: float = 3.0) -> bool:
    """True when |estimate - target| <= k standard errors (exact match when stderr is 0)."""
    return abs(estimate - target) <= k * stderr + 1e-12 * (1.0 + abs(target))


def relative_error(estimate: float, target: float) -> float:
    if target == 0:
        return abs(estimate)
    return abs(estimate / target - 1.0)


def fit_log_rate(t: np.ndarray, values: np.ndarray) -> Dict[str, float]:
    """OLS fit of log(values) = c - rate * t; returns rate, its standard error and R^2."""
    t = np.asarray(t, dtype=float)
    v = np.asarray(values, dtype=float)
    keep = np.isfinite(v) & (v > 0)
    if keep.sum() < 2:
        return {"rate": np.nan, "rate_se": np.nan, "r2": np.nan, "n_obs": int(keep.sum())}
    X = sm.add_constant(t[keep], has_constant="add")
    model = sm.OLS(np.log(v[keep]), X).fit()
    return {
        "rate": float(-model.params[1]),
        "rate_se": float(model.bse[1]),
        "intercept": float(model.params[0]),
        "r2": float(model.rsquared),
        "n_obs": int(model.nobs),
    }


def fit_power_rate(x: np.ndarray, values: np.ndarray) -> Dict[str, float]:
    """OLS fit of log(values) = c + slope * log(x) (convergence orders)."""
    x = np.asarray(x, dtype=float)
    v = np.asarray(values, dtype=float)
    keep = np.isfinite(v) & (v > 0) & (x > 0)
    if keep.sum() < 2:
        return {"slope": np.nan, "slope_se": np.nan, "n_obs": int(keep.sum())}
    X = sm.add_constant(np.log(x[keep]), has_constant="add")
    model = sm.OLS(np.log(v[keep]), X).fit()
    return {"slope": float(model.params[1]), "slope_se": float(model.bse[1]), "n_obs": int(model.nobs)}


def spread_ratio(values: np.ndarray) -> float:
    """max/min of positive finite values (1 when they agree, inf when a zero sneaks in)."""
    v = np.asarray(values, dtype=float)
    v = v[np.isfinite(v)]
    if v.size == 0:
        return np.nan
    lo, hi = float(np.min(v)), float(np.max(v))
    if hi <= 0:
        return 1.0
    if lo <= 0:
        return np.inf
    return hi / lo
