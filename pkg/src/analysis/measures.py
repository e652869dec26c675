"""Weighted empirical laws, the energy distance between them and stationary-law oracles."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Any, Callable, Dict

import numpy as np
import pandas as pd
from scipy import stats
from scipy.spatial.distance import cdist

from src import config as project_config
from src.analysis.metrics import relative_error
from src.analysis.reports import CheckReport
from src.operators.monotone import MonotoneOperator
from src.spaces.hspace import HSpace

logger = logging.getLogger(__name__)
if not logger.handlers:
    logger.addHandler(logging.NullHandler())

PAIR_BLOCK = 2048


@dataclass(frozen=True, eq=False)
class EmpiricalMeasure:
    """Weighted point cloud in H. Weights are normalized to sum to 1."""

    samples: np.ndarray
    weights: np.ndarray | None = None
    space: HSpace | None = None

    def __post_init__(self) -> None:
        x = np.asarray(self.samples, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        if x.ndim != 2 or x.shape[0] == 0:
            raise ValueError(f"samples must have shape (n, dim) with n > 0, got {np.shape(self.samples)}")
        if self.weights is None:
            w = np.full(x.shape[0], 1.0 / x.shape[0])
        else:
            w = np.asarray(self.weights, dtype=float).reshape(-1)
            if w.size != x.shape[0]:
                raise ValueError(f"{w.size} weights for {x.shape[0]} samples")
            if np.any(w < 0) or not np.all(np.isfinite(w)) or w.sum() <= 0:
                raise ValueError("weights must be finite, >= 0 and not all zero")
            w = w / w.sum()
        space = self.space or HSpace(x.shape[1])
        if space.dim != x.shape[1]:
            raise ValueError(f"samples have dimension {x.shape[1]}, space has {space.dim}")
        object.__setattr__(self, "samples", x)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "space", space)

    @property
    def n(self) -> int:
        return int(self.samples.shape[0])

    @property
    def dim(self) -> int:
        return int(self.samples.shape[1])

    @property
    def effective_size(self) -> float:
        return float(1.0 / np.sum(self.weights**2))

    def mean(self) -> np.ndarray:
        return self.weights @ self.samples

    def second_moment(self) -> float:
        """E|X|^2 in the H-norm."""
        return float(self.weights @ np.asarray(self.space.inner(self.samples, self.samples)))

    def variance(self) -> float:
        """E|X - EX|^2 in the H-norm (trace of the covariance)."""
        centred = self.samples - self.mean()
        return float(self.weights @ np.asarray(self.space.inner(centred, centred)))

    def summary(self) -> Dict[str, Any]:
        return {
            "n": self.n,
            "effective_size": self.effective_size,
            "mean": self.mean().tolist(),
            "second_moment": self.second_moment(),
            "variance": self.variance(),
        }

    def ks_statistic(self, cdf: Callable[[np.ndarray], np.ndarray], component: int = 0) -> float:
        """Kolmogorov-Smirnov distance of one coordinate against a reference CDF."""
        x = self.samples[:, component]
        if np.allclose(self.weights, 1.0 / self.n):
            return float(stats.kstest(x, cdf).statistic)
        order = np.argsort(x)
        xs, ws = x[order], self.weights[order]
        upper = np.cumsum(ws)
        lower = upper - ws
        ref = cdf(xs)
        return float(max(np.max(np.abs(upper - ref)), np.max(np.abs(ref - lower))))

    def check_domain(self, A: MonotoneOperator, tol: float | None = None) -> CheckReport:
        """All samples within the resolvent tolerance of cl D(A)."""
        tol = project_config.RESOLVENT_TOL if tol is None else float(tol)
        gap = np.asarray(self.space.norm_h(self.samples - A.project_domain(self.samples)))
        worst = float(np.max(gap))
        scale = 1.0 + float(np.max(np.abs(self.samples)))
        return CheckReport("samples_in_domain", worst <= tol * scale + project_config.DOMAIN_PROJECTION_EPS * scale, worst, tol)

    def to_frame(self, prefix: str = "x") -> pd.DataFrame:
        frame = pd.DataFrame(self.samples, columns=[f"{prefix}{i}" for i in range(self.dim)])
        frame["weight"] = self.weights
        return frame


def _scaled(m: EmpiricalMeasure) -> np.ndarray:
    # weighted H-norm becomes Euclidean after scaling by sqrt(w)
    return m.samples * np.sqrt(m.space.weights)


def _pair_mean(x: np.ndarray, wx: np.ndarray, y: np.ndarray, wy: np.ndarray) -> float:
    total = 0.0
    for start in range(0, x.shape[0], PAIR_BLOCK):
        stop = start + PAIR_BLOCK
        total += float(wx[start:stop] @ cdist(x[start:stop], y) @ wy)
    return total


def _mean_abs_gap_1d(x: np.ndarray, w: np.ndarray) -> float:
    """E|X - X'| of a weighted 1-D sample as 2 * integral of F (1 - F)."""
    order = np.argsort(x)
    xs, cum = x[order], np.cumsum(w[order])[:-1]
    return float(2.0 * np.sum(cum * (1.0 - cum) * np.diff(xs)))


def mean_pair_distance(m1: EmpiricalMeasure, m2: EmpiricalMeasure | None = None) -> float:
    """E|X - Y| for X ~ m1 and Y ~ m2 drawn independently (m2 defaults to m1)."""
    if m2 is None or m2 is m1:
        if m1.dim == 1:
            return _mean_abs_gap_1d(_scaled(m1)[:, 0], m1.weights)
        x = _scaled(m1)
        return _pair_mean(x, m1.weights, x, m1.weights)
    return _pair_mean(_scaled(m1), m1.weights, _scaled(m2), m2.weights)


def measure_distance(m1: EmpiricalMeasure, m2: EmpiricalMeasure) -> float:
    """Energy distance 2E|X - Y| - E|X - X'| - E|Y - Y'| between two weighted samples."""
    if m1.dim != m2.dim:
        raise ValueError(f"Measures live in different dimensions: {m1.dim} vs {m2.dim}")
    if not np.allclose(m1.space.weights, m2.space.weights):
        raise ValueError("Measures live in spaces with different inner products")
    if m1.dim == 1:
        x, y = _scaled(m1)[:, 0], _scaled(m2)[:, 0]
        # scipy returns sqrt(2 * int (F - G)^2), whose square is the energy distance in 1-D
        return float(stats.energy_distance(x, y, m1.weights, m2.weights) ** 2)
    cross = _pair_mean(_scaled(m1), m1.weights, _scaled(m2), m2.weights)
    return float(max(2.0 * cross - mean_pair_distance(m1) - mean_pair_distance(m2), 0.0))


def distance_noise_floor(m1: EmpiricalMeasure, m2: EmpiricalMeasure) -> float:
    """Expected energy distance between independent samples of one law with these sizes.

    E|X - X'| is estimated from m1 alone.
    """
    return mean_pair_distance(m1) * (1.0 / m1.effective_size + 1.0 / m2.effective_size)


def ou_stationary_variance(a: float, sigma: float, trace_q: float = 1.0, h: float | None = None) -> float:
    """Stationary E|X|^2 of du = -a u dt + sigma dW; with h, that of the implicit Euler chain."""
    if a <= 0:
        raise ValueError(f"a must be > 0, got {a}")
    if h is None:
        return sigma**2 * trace_q / (2.0 * a)
    return sigma**2 * trace_q / (2.0 * a + a**2 * h)


def reflected_ou_stationary_cdf(x: np.ndarray | float, a: float, sigma: float) -> np.ndarray:
    """CDF of the law with density proportional to exp(-a x^2 / sigma^2) on [0, inf)."""
    if a <= 0 or sigma <= 0:
        raise ValueError("a and sigma must be > 0")
    return stats.halfnorm.cdf(np.asarray(x, dtype=float), scale=sigma / np.sqrt(2.0 * a))


def check_ou_variance(
    measure: EmpiricalMeasure,
    a: float,
    sigma: float,
    trace_q: float = 1.0,
    h: float | None = None,
    tol: float = 0.05,
) -> CheckReport:
    """Relative error of the empirical E|X|^2 against the OU stationary variance."""
    target = ou_stationary_variance(a, sigma, trace_q, h)
    err = relative_error(measure.second_moment(), target)
    return CheckReport("ou_variance", err <= tol, err, tol, {"target": target, "estimate": measure.second_moment()})


def check_ks(
    measure: EmpiricalMeasure,
    cdf: Callable[[np.ndarray], np.ndarray],
    tol: float = 0.02,
    component: int = 0,
) -> CheckReport:
    stat = measure.ks_statistic(cdf, component)
    return CheckReport("ks_oracle", stat <= tol, stat, tol, {"component": component, "n": measure.n})
