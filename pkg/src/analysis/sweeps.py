"""Parameter sweeps: strong convergence in the step size and decay rates over coefficients."""

from __future__ import annotations

import itertools
import logging
from typing import Dict, List, Sequence, Tuple

import numpy as np
import pandas as pd

from src.analysis.asymptotics import decay_experiment
from src.analysis.metrics import fit_power_rate, mean_and_stderr
from src.analysis.reports import CheckReport
from src.operators.monotone import LinearSPD
from src.solvers.sde import Drift, SdeProblem, solve_sde_prox
from src.spaces.hspace import HSpace, TimeGrid
from src.stochastic.rng import RngSeed
from src.stochastic.wiener import DiffusionCoefficient, QWienerDriver, QWienerSpec

logger = logging.getLogger(__name__)
if not logger.handlers:
    logger.addHandler(logging.NullHandler())


def coarse_increments(dbeta: np.ndarray, factor: int) -> np.ndarray:
    """Sum consecutive blocks of `factor` fine steps: (n_paths, n_steps, m) -> (n_paths, n_steps // factor, m)."""
    n_paths, n_steps, n_modes = dbeta.shape
    if factor < 1 or n_steps % factor:
        raise ValueError(f"factor {factor} does not divide {n_steps} steps")
    return dbeta.reshape(n_paths, n_steps // factor, factor, n_modes).sum(axis=2)


def strong_convergence_sweep(
    problem: SdeProblem,
    base_steps: int,
    levels: int,
    n_paths: int,
    seed: RngSeed,
) -> Tuple[pd.DataFrame, Dict[str, float]]:
    """E sup_t |u_h - u_ref|^2 at the coarse nodes for h = T / (base_steps 2^j), j < levels.

    The reference uses base_steps 2^levels steps; coarser runs are driven by
    the same Brownian increments summed over blocks. Returns the table and
    a power fit of the error against h.
    """
    if base_steps < 1 or levels < 1:
        raise ValueError("base_steps and levels must be >= 1")
    fine_steps = base_steps * 2**levels
    fine = TimeGrid.uniform(problem.T, fine_steps)
    driver = QWienerDriver(problem.qwiener, seed, n_paths)
    dbeta = np.stack([driver.increment(k, float(h))[0] for k, h in enumerate(fine.steps)], axis=1)
    reference = solve_sde_prox(problem, fine, seed, n_paths, dbeta=dbeta)
    rows: List[Dict[str, float]] = []
    for j in range(levels):
        steps = base_steps * 2**j
        factor = fine_steps // steps
        grid = TimeGrid.uniform(problem.T, steps)
        sol = solve_sde_prox(problem, grid, seed, n_paths, dbeta=coarse_increments(dbeta, factor))
        gap = sol.u - reference.u[:, ::factor]
        err = np.max(np.asarray(problem.space.inner(gap, gap)), axis=1)
        mean, se = mean_and_stderr(err)
        rows.append({"steps": steps, "h": grid.h, "sup_sq_err": mean, "sup_sq_err_se": se})
        logger.info("Strong error at h=%.3e: %.3e", grid.h, mean)
    table = pd.DataFrame(rows)
    fit = fit_power_rate(table["h"].to_numpy(), table["sup_sq_err"].to_numpy())
    return table, fit


def linear_multiplicative_problem(a: float, sigma: float, T: float, u0: float = 1.0) -> SdeProblem:
    """Scalar du + a u dt = sigma u dW."""
    space = HSpace(1)
    spec = QWienerSpec.diagonal(space, [1.0])
    return SdeProblem(
        space,
        LinearSPD.scalar(a, space),
        np.array([u0]),
        Drift.zero(1),
        DiffusionCoefficient.multiplicative(sigma, spec),
        spec,
        T,
    )


def sweep_decay_parameters(
    a_values: Sequence[float],
    sigma_values: Sequence[float],
    horizon: float,
    n_paths: int,
    seed: RngSeed,
    gap: float = 1.0,
) -> pd.DataFrame:
    """Grid over (a, sigma) of the linear multiplicative problem: beta0, exact and measured rates."""
    results = []
    for a, sigma in itertools.product(a_values, sigma_values):
        problem = linear_multiplicative_problem(a, sigma, horizon)
        report = decay_experiment(problem, np.array([gap]), np.array([0.0]), horizon, n_paths, seed)
        results.append(
            {
                "a": a,
                "sigma": sigma,
                "beta0": report.beta0,
                "exact_rate": 2.0 * a - sigma**2,
                "measured_rate": report.measured_rate,
                "rate_se": report.rate_se,
                "bound_violations": report.bound_violations,
                "passed": report.passed,
            }
        )
    return pd.DataFrame(results)


def check_convergence_order(fit: Dict[str, float], min_slope: float, k: float = 2.0) -> CheckReport:
    """Fitted log-log slope of the error against h, at least `min_slope` within k standard errors."""
    slope = float(fit.get("slope", np.nan))
    se = float(np.nan_to_num(fit.get("slope_se", 0.0)))
    passed = bool(np.isfinite(slope) and slope + k * se >= min_slope)
    return CheckReport("strong_order", passed, slope, min_slope, {"slope_se": se, "k": k})
