"""Large-time behaviour of strongly monotone stochastic inclusions.

Checks exponential forgetting of the initial condition on coupled pairs,
the supermartingale property of the weighted difference, the drift bound
around a graph point, and estimates the invariant law.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Any, Dict, List, Sequence, Tuple

import numpy as np
import pandas as pd
import statsmodels.api as sm

from src import config as project_config
from src.analysis.measures import EmpiricalMeasure, distance_noise_floor, measure_distance
from src.analysis.metrics import fit_log_rate, mean_and_stderr
from src.analysis.reports import CheckReport, EnsembleReport, to_builtin
from src.errors import DomainError
from src.operators.monotone import MonotoneOperator
from src.solvers.sde import SdeProblem, solve_sde_prox
from src.spaces.hspace import TimeGrid
from src.stochastic.rng import RngSeed

logger = logging.getLogger(__name__)
if not logger.handlers:
    logger.addHandler(logging.NullHandler())

DEFAULT_STEPS_PER_UNIT = 100


def beta0(a: float, L: float, L1: float) -> float:
    """Decay exponent 2a - 2L - L1 from the declared constants."""
    return 2.0 * a - 2.0 * L - L1


def beta0_half(a: float, L: float, L1: float) -> float:
    """The alternative convention a - L1 - L/2."""
    return a - L1 - 0.5 * L


def problem_beta0(problem: SdeProblem) -> float:
    return beta0(problem.A.modulus, problem.B.lipschitz, problem.f.lipschitz)


def drift_constant(b0: float, L: float) -> float:
    """C0 = (beta0 + 2 + L) / beta0^2."""
    return (b0 + 2.0 + L) / b0**2


@dataclass
class StabilityReport:
    """Outcome of a coupled decay experiment.

    `series` holds t, the ensemble E|u - v|^2 with its standard error and the
    bound slack * exp(-beta0 t) E|u0 - v0|^2.
    """

    beta0: float
    theta: float
    beta: float
    measured_rate: float
    rate_se: float
    bound_violations: int
    slack: float
    checks: List[CheckReport]
    series: pd.DataFrame
    sq_diff: np.ndarray = field(repr=False, default=None)
    grid: TimeGrid | None = field(repr=False, default=None)
    details: Dict[str, Any] = field(default_factory=dict)
    runtime: float = 0.0

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def delta_paths(self, beta: float | None = None) -> np.ndarray:
        """e^{beta t} |u(t) - v(t)|^2 per path; beta defaults to 2 a theta - 2L - L1."""
        b = self.beta if beta is None else float(beta)
        return np.exp(b * self.grid.t)[None, :] * self.sq_diff

    def to_dict(self) -> Dict[str, Any]:
        return to_builtin(
            {
                "beta0": self.beta0,
                "theta": self.theta,
                "beta": self.beta,
                "measured_rate": self.measured_rate,
                "rate_se": self.rate_se,
                "bound_violations": self.bound_violations,
                "slack": self.slack,
                "passed": self.passed,
                "checks": [c.to_dict() for c in self.checks],
                "details": self.details,
            }
        )


@dataclass
class DriftBoundReport:
    """E|u(t; x0) - x0|^2 against C0 M0, with C0 under both beta0 conventions."""

    x0: np.ndarray
    y0: np.ndarray
    M0: float
    C0: float
    C0_alt: float | None
    beta0: float
    checks: List[CheckReport]
    series: pd.DataFrame
    details: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.M0 < 0:
            raise ValueError(f"M0 must be >= 0, got {self.M0}")

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def to_dict(self) -> Dict[str, Any]:
        return to_builtin(
            {
                "x0": np.asarray(self.x0).tolist(),
                "y0": np.asarray(self.y0).tolist(),
                "M0": self.M0,
                "C0": self.C0,
                "C0_alt": self.C0_alt,
                "beta0": self.beta0,
                "passed": self.passed,
                "checks": [c.to_dict() for c in self.checks],
                "details": self.details,
            }
        )


def check_yosida_strong_monotone(
    A: MonotoneOperator,
    a: float,
    theta: float,
    eps: float,
    samples: np.ndarray,
    tol: float = 1e-10,
) -> CheckReport:
    """min over sample pairs of (A_eps u - A_eps v, u - v) - a theta |u - v|^2.

    A_eps is the Yosida approximation of A + alpha I, so `a` is the modulus of
    that shifted operator. Pairs are all (i, j) with i < j.
    """
    if a < 0 or not 0.0 <= theta < 1.0 or eps <= 0:
        raise ValueError(f"Need a >= 0, theta in [0, 1) and eps > 0, got a={a}, theta={theta}, eps={eps}")
    if eps * a * theta > 1.0 - theta + 1e-12:
        raise ValueError(f"eps * a * theta = {eps * a * theta:.4g} exceeds 1 - theta = {1.0 - theta:.4g}")
    x = A.space._check(np.asarray(samples, dtype=float)).reshape(-1, A.space.dim)
    if x.shape[0] < 2:
        raise ValueError("Need at least two sample points")
    y = A.yosida(eps, x)
    i, j = np.triu_indices(x.shape[0], k=1)
    dx = x[i] - x[j]
    dy = y[i] - y[j]
    gap = np.asarray(A.space.inner(dy, dx)) - a * theta * np.asarray(A.space.inner(dx, dx))
    worst = float(np.min(gap))
    return CheckReport(
        name="yosida_strong_monotone",
        passed=worst >= -tol,
        value=worst,
        threshold=-tol,
        details={"a": a, "theta": theta, "eps": eps, "n_pairs": int(i.size)},
    )


def _default_grid(horizon: float, steps_per_unit: int = DEFAULT_STEPS_PER_UNIT) -> TimeGrid:
    return TimeGrid.uniform(horizon, max(int(math.ceil(horizon * steps_per_unit)), 1))


def _node_indices(grid: TimeGrid, times: Sequence[float]) -> np.ndarray:
    return np.unique([int(np.argmin(np.abs(grid.t - s))) for s in times])


def decay_experiment(
    problem: SdeProblem,
    u0: np.ndarray,
    v0: np.ndarray,
    horizon: float,
    n_paths: int,
    seed: RngSeed,
    grid: TimeGrid | None = None,
    theta: float = 0.9,
    slack: float | None = None,
    check_times: Sequence[float] | None = None,
    gamma: float | None = None,
) -> StabilityReport:
    """Coupled pair u(.; u0), v(.; v0) on one noise path, E|u - v|^2 against exp(-beta0 t).

    Also reports the integrated bound E int |u - v|^2 <= E|u0 - v0|^2 / beta0
    over [0, horizon] and, per path, the last time tau with
    |u - v|^2(t) > exp(-gamma t) |u0 - v0|^2 (gamma = beta0 / 2 by default).
    """
    start = time.perf_counter()
    slack = project_config.DECAY_SLACK if slack is None else float(slack)
    grid = grid or _default_grid(horizon)
    space = problem.space
    a, L, L1 = problem.A.modulus, problem.B.lipschitz, problem.f.lipschitz
    b0 = beta0(a, L, L1)
    beta = 2.0 * a * theta - 2.0 * L - L1
    if b0 <= 0:
        logger.warning("beta0 = %.4g <= 0: the decay bound is not expected to hold", b0)
    logger.info("Decay experiment: beta0=%.4g, horizon=%.3g, paths=%d", b0, grid.T, n_paths)

    s1 = solve_sde_prox(problem.with_u0(u0), grid, seed, n_paths)
    s2 = solve_sde_prox(problem.with_u0(v0), grid, seed, n_paths)
    ok = s1.ok & s2.ok
    d = s1.u[ok] - s2.u[ok]
    sq = np.asarray(space.inner(d, d)).reshape(d.shape[0], len(grid))
    mean, se = mean_and_stderr(sq)
    mean = np.atleast_1d(mean)
    se = np.atleast_1d(se)
    start_sq = float(mean[0])
    bound = slack * np.exp(-b0 * grid.t) * start_sq
    series = pd.DataFrame({"t": grid.t, "mean_sq_diff": mean, "stderr": se, "bound": bound})

    if check_times is None:
        check_times = np.arange(0.5, grid.T + 1e-9, 0.5) if grid.T >= 0.5 else [grid.T]
    idx = _node_indices(grid, check_times)
    excess = mean[idx] - bound[idx]
    violations = int(np.sum(excess > 1e-12 * max(start_sq, 1.0)))

    fit = fit_log_rate(grid.t[1:], mean[1:])
    integral = float(np.sum(0.5 * (mean[1:] + mean[:-1]) * grid.steps))
    integral_bound = start_sq / b0 if b0 > 0 else np.inf

    gamma = 0.5 * b0 if gamma is None else float(gamma)
    start_path = sq[:, :1]
    above = sq > np.exp(-gamma * grid.t)[None, :] * start_path * (1.0 + 1e-12)
    last = np.where(above.any(axis=1), grid.t[len(grid) - 1 - np.argmax(above[:, ::-1], axis=1)], 0.0)
    dominated = float(np.mean(last < grid.T)) if last.size else 1.0

    checks = [
        CheckReport(
            "decay_bound",
            violations == 0,
            float(np.max(excess)) if excess.size else 0.0,
            0.0,
            {"check_times": grid.t[idx].tolist(), "slack": slack},
        ),
        CheckReport(
            "integrated_decay",
            integral <= slack * integral_bound + 1e-12,
            integral,
            float(slack * integral_bound),
            {"horizon": grid.T},
        ),
    ]
    if violations:
        logger.warning("Decay bound violated at %d of %d check times", violations, idx.size)
    return StabilityReport(
        beta0=b0,
        theta=theta,
        beta=beta,
        measured_rate=float(fit["rate"]),
        rate_se=float(fit["rate_se"]),
        bound_violations=violations,
        slack=slack,
        checks=checks,
        series=series,
        sq_diff=sq,
        grid=grid,
        details={
            "n_paths": int(d.shape[0]),
            "n_aborted": int(np.sum(~ok)),
            "gamma": gamma,
            "tau_median": float(np.median(last)) if last.size else 0.0,
            "tau_max": float(np.max(last)) if last.size else 0.0,
            "fraction_dominated": dominated,
            "rate_r2": fit.get("r2"),
        },
        runtime=time.perf_counter() - start,
    )


def supermartingale_test(
    delta_paths: np.ndarray,
    lags: Sequence[Tuple[int, int]],
    bins: int | None = None,
    k: float = 3.0,
    rel_tol: float = 1e-12,
) -> CheckReport:
    """Binned conditional-mean test of E[Delta(t) | Delta(s)] <= Delta(s).

    Paths are ranked by Delta(s) into `bins` groups; the increments
    Delta(t) - Delta(s) are regressed on the group indicators with
    heteroskedasticity-robust errors. Each lag (s_index, t_index) passes when
    every group mean is at most k standard errors above zero.
    """
    values = np.asarray(delta_paths, dtype=float)
    if values.ndim != 2:
        raise ValueError(f"delta_paths must have shape (n_paths, n_nodes), got {values.shape}")
    n_paths = values.shape[0]
    bins = int(bins or project_config.SUPERMARTINGALE_BINS)
    bins = max(1, min(bins, n_paths // 2 if n_paths >= 4 else 1))
    worst = -np.inf
    per_lag = []
    for s, t in lags:
        if not 0 <= s < t < values.shape[1]:
            raise ValueError(f"Lag pair ({s}, {t}) is not increasing within {values.shape[1]} nodes")
        base = values[:, s]
        incr = values[:, t] - base
        ranks = np.argsort(np.argsort(base, kind="stable"), kind="stable")
        group = ranks * bins // n_paths
        X = np.eye(bins)[group]
        fit = sm.OLS(incr, X).fit(cov_type="HC1")
        params, bse = np.asarray(fit.params), np.asarray(fit.bse)
        atol = rel_tol * (1.0 + float(np.mean(np.abs(base))))
        z = (params - atol) - k * np.nan_to_num(bse)
        worst = max(worst, float(np.max(z)))
        per_lag.append({"s": int(s), "t": int(t), "max_mean": float(np.max(params)), "max_se": float(np.max(np.nan_to_num(bse)))})
    return CheckReport(
        name="supermartingale",
        passed=bool(worst <= 0.0),
        value=float(worst),
        threshold=0.0,
        details={"bins": bins, "k": k, "lags": per_lag},
    )


def _graph_gap(A: MonotoneOperator, x0: np.ndarray, y0: np.ndarray, eps: float = 1.0) -> float:
    """|x0 - J_eps(x0 + eps (y0 + alpha x0))|, zero iff [x0, y0] lies on the graph of A."""
    probe = x0 + eps * (y0 + A.alpha * x0)
    return float(np.max(np.abs(A.resolvent(eps, probe) - x0)))


def check_drift_bound(
    problem: SdeProblem,
    x0: np.ndarray,
    y0: np.ndarray,
    grid: TimeGrid,
    n_paths: int,
    seed: RngSeed,
    k: float = 3.0,
    lags: Sequence[int] | None = None,
) -> DriftBoundReport:
    """E|u(t; x0) - x0|^2 <= C0 M0 and E|u(t) - u(s)|^2 <= C0 M0 beta0 (t - s), k-standard-error slack.

    f and B are taken as time-independent (evaluated at t = 0).
    """
    space = problem.space
    x0 = space._check(np.asarray(x0, dtype=float)).reshape(space.dim)
    y0 = space._check(np.asarray(y0, dtype=float)).reshape(space.dim)
    a, L, L1 = problem.A.modulus, problem.B.lipschitz, problem.f.lipschitz
    b0 = beta0(a, L, L1)
    if b0 <= 0:
        raise ValueError(f"Drift bound needs beta0 > 0, got {b0:.4g}")
    gap = _graph_gap(problem.A, x0, y0)
    if gap > 1e-8 * (1.0 + float(np.max(np.abs(x0))) + float(np.max(np.abs(y0)))):
        raise DomainError(f"[x0, y0] is not on the graph of A (resolvent gap {gap:.3e})")
    fx = problem.f(0.0, x0)
    M0 = float(space.inner(y0, y0) + space.inner(fx, fx) + problem.B.q_norm_sq(0.0, x0, problem.qwiener))
    C0 = drift_constant(b0, L)
    b_alt = beta0_half(a, L, L1)
    C0_alt = drift_constant(b_alt, L) if b_alt > 0 else None
    logger.info("Drift bound: M0=%.4g, C0=%.4g, beta0=%.4g", M0, C0, b0)

    sol = solve_sde_prox(problem.with_u0(x0), grid, seed, n_paths)
    u = sol.u[sol.ok]
    dist = np.asarray(space.inner(u - x0, u - x0)).reshape(u.shape[0], len(grid))
    lhs, lhs_se = mean_and_stderr(dist)
    lhs, lhs_se = np.atleast_1d(lhs), np.atleast_1d(lhs_se)
    level = C0 * M0
    margin_a = level + k * lhs_se - lhs
    series = pd.DataFrame({"t": grid.t, "lhs": lhs, "stderr": lhs_se, "bound": np.full(len(grid), level)})

    n = grid.n_steps
    lags = sorted({int(v) for v in (lags or (1, max(n // 10, 1), max(n // 2, 1))) if 0 < int(v) <= n})
    worst_b = np.inf
    lag_rows = []
    for lag in lags:
        inc = u[:, lag:] - u[:, :-lag]
        sq = np.asarray(space.inner(inc, inc)).reshape(u.shape[0], -1)
        m, s = mean_and_stderr(sq)
        m, s = np.atleast_1d(m), np.atleast_1d(s)
        span = grid.t[lag:] - grid.t[:-lag]
        margin = level * b0 * span + k * s - m
        worst_b = min(worst_b, float(np.min(margin)))
        lag_rows.append({"lag": lag, "worst_margin": float(np.min(margin)), "max_mean": float(np.max(m))})
    tol = 1e-12 * (1.0 + level)
    checks = [
        CheckReport("drift_bound_level", float(np.min(margin_a)) >= -tol, float(np.min(margin_a)), 0.0, {"C0M0": level}),
        CheckReport("drift_bound_increment", worst_b >= -tol, float(worst_b), 0.0, {"lags": lag_rows}),
    ]
    return DriftBoundReport(
        x0=x0,
        y0=y0,
        M0=M0,
        C0=C0,
        C0_alt=C0_alt,
        beta0=b0,
        checks=checks,
        series=series,
        details={"beta0_alt": b_alt, "n_paths": int(u.shape[0]), "n_aborted": sol.n_aborted},
    )


def estimate_invariant_measure(
    problem: SdeProblem,
    horizon: float,
    n_paths: int,
    seed: RngSeed,
    initials: Sequence[np.ndarray] | None = None,
    burn_in: float | None = None,
    h: float | None = None,
    delta: float | None = None,
    stationarity_tol: float = 0.02,
    noise_factor: float = 3.0,
) -> Tuple[EmpiricalMeasure, EnsembleReport]:
    """Empirical law of u(horizon) started from the first initial point.

    Every initial point is run on the same noise, so the laws at `horizon`
    agree up to the contracted initial gap; their energy distance is compared
    with `noise_factor` times the independent-sample noise floor. Stationarity
    compares the laws at `horizon` and `horizon + delta`.
    """
    start = time.perf_counter()
    space = problem.space
    b0 = problem_beta0(problem)
    if burn_in is None:
        if b0 <= 0:
            raise ValueError(f"Default burn-in needs beta0 > 0, got {b0:.4g}")
        burn_in = project_config.BURN_IN_FACTOR / b0
    if horizon < burn_in:
        raise ValueError(f"horizon {horizon} is shorter than the burn-in {burn_in:.4g}")
    h = 1.0 / DEFAULT_STEPS_PER_UNIT if h is None else float(h)
    delta = max(h, 0.2 * horizon) if delta is None else float(delta)
    n_first = max(int(round(horizon / h)), 1)
    n_total = max(int(round((horizon + delta) / h)), n_first + 1)
    grid = TimeGrid.uniform(n_total * h, n_total)
    stride = math.gcd(n_first, n_total)
    points = [problem.u0] if initials is None else list(initials)
    if not points:
        raise ValueError("Need at least one initial point")
    logger.info("Invariant measure: burn_in=%.3g, horizon=%.3g, delta=%.3g, h=%.1e, paths=%d", burn_in, horizon, delta, h, n_paths)

    laws: List[EmpiricalMeasure] = []
    later: EmpiricalMeasure | None = None
    aborted = 0
    for i, x in enumerate(points):
        sol = solve_sde_prox(problem.with_u0(x), grid, seed, n_paths, stride=stride)
        aborted += sol.n_aborted
        at = int(np.argmin(np.abs(sol.grid.t - grid.t[n_first])))
        laws.append(EmpiricalMeasure(sol.u[sol.ok, at], space=space))
        if i == 0:
            later = EmpiricalMeasure(sol.u[sol.ok, -1], space=space)

    measure = laws[0]
    stationarity = measure_distance(measure, later)
    cross = [measure_distance(measure, other) for other in laws[1:]]
    floor = distance_noise_floor(measure, measure)
    worst_cross = max(cross) if cross else 0.0
    second = np.asarray(space.inner(measure.samples, measure.samples))
    m2, m2_se = mean_and_stderr(second)
    checks = [
        CheckReport("stationarity", stationarity <= stationarity_tol, stationarity, stationarity_tol, {"delta": delta}),
        CheckReport(
            "initial_forgetting",
            worst_cross <= noise_factor * floor + 1e-12,
            worst_cross,
            noise_factor * floor,
            {"distances": cross, "noise_floor": floor, "n_initials": len(points)},
        ),
    ]
    if aborted:
        checks.append(CheckReport("no_aborted_paths", False, float(aborted), 0.0))
    report = EnsembleReport(
        name="invariant_measure",
        n_paths=n_paths,
        estimates={"second_moment": float(m2), "variance": measure.variance(), "mean": float(np.mean(measure.mean()))},
        std_errors={"second_moment": float(m2_se)},
        checks=checks,
        runtime=time.perf_counter() - start,
        details={"beta0": b0, "burn_in": burn_in, "horizon": horizon, "h": h, "summary": measure.summary()},
    )
    return measure, report
