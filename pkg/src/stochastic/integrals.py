"""Stochastic integrals, realized quadratic variation and martingale diagnostics.

All integrals use left-endpoint sums (Ito convention). Ensembles have a
leading path axis; deterministic inputs (HPath) broadcast over it.
"""

from __future__ import annotations

import logging
import time

import numpy as np
import statsmodels.api as sm

from src.analysis.metrics import mean_and_stderr
from src.analysis.reports import CheckReport, EnsembleReport
from src.spaces.hspace import HPath, HSpace, TimeGrid
from src.stochastic.rng import RngSeed
from src.stochastic.wiener import DiffusionCoefficient, PathKind, QWienerSpec, SamplePath, sample_qwiener

logger = logging.getLogger(__name__)
if not logger.handlers:
    logger.addHandler(logging.NullHandler())

ISOMETRY_TOL = 0.05
BDG_CONSTANT = 3.0
DOOB_CONSTANT = 4.0


def _grid_of(*items) -> TimeGrid:
    for item in items:
        if isinstance(item, (HPath, SamplePath)):
            return item.grid
    raise ValueError("At least one input must carry a time grid (HPath or SamplePath)")


def _ensemble_values(item, grid: TimeGrid) -> np.ndarray:
    """(n_paths, n_nodes, dim) view of an HPath, SamplePath or array."""
    if isinstance(item, (HPath, SamplePath)):
        if not item.grid.same_as(grid):
            raise ValueError("Inputs are defined on different time grids.")
        vals = item.values
    else:
        vals = np.asarray(item, dtype=float)
    if vals.ndim == 0:
        vals = np.full((1, len(grid), 1), float(vals))
    if vals.ndim == 1:
        vals = vals[:, None]
    if vals.ndim == 2:
        vals = vals[None, :, :]
    if vals.shape[1] != len(grid):
        raise ValueError(f"Expected {len(grid)} nodes, got {vals.shape[1]}")
    return vals


def _space_for(dim: int, space: HSpace | None, *paths) -> HSpace:
    if space is not None:
        return space
    for p in paths:
        if isinstance(p, SamplePath) and p.qwiener is not None and p.qwiener.space.dim == dim:
            return p.qwiener.space
    return HSpace(dim)


def _scalar_path(grid: TimeGrid, values: np.ndarray, seed: RngSeed | None, kind: PathKind) -> SamplePath:
    return SamplePath(grid, values[..., None], seed, kind)


def ito_integral(f, M: SamplePath, space: HSpace | None = None) -> SamplePath:
    """I(t_k) = sum_{j<k} (f(t_j), M(t_{j+1}) - M(t_j)) as a real-valued path ensemble."""
    grid = M.grid
    fv = _ensemble_values(f, grid)
    mv = M.values
    if fv.shape[-1] != mv.shape[-1]:
        raise ValueError(f"Integrand dimension {fv.shape[-1]} does not match integrator {mv.shape[-1]}")
    sp = _space_for(mv.shape[-1], space, M)
    pairs = np.asarray(sp.inner(fv[:, :-1, :], np.diff(mv, axis=1)))
    pairs = np.atleast_2d(pairs)
    values = np.concatenate([np.zeros((pairs.shape[0], 1)), np.cumsum(pairs, axis=1)], axis=1)
    kind = PathKind.MARTINGALE if M.kind is not PathKind.GENERAL else PathKind.GENERAL
    return _scalar_path(grid, values, M.seed, kind)


def quadratic_variation(M: SamplePath, space: HSpace | None = None) -> SamplePath:
    """Realized variation <M>(t_k) = sum_{j<k} |dM_j|_H^2; nondecreasing, starts at 0."""
    sp = _space_for(M.dim, space, M)
    dM = M.increments
    sq = np.atleast_2d(np.asarray(sp.inner(dM, dM)))
    values = np.concatenate([np.zeros((sq.shape[0], 1)), np.cumsum(sq, axis=1)], axis=1)
    return _scalar_path(M.grid, values, M.seed, PathKind.GENERAL)


def project_martingale(
    M: SamplePath,
    k: int,
    basis: np.ndarray | None = None,
    space: HSpace | None = None,
) -> SamplePath:
    """Spectral truncation sum_{i<k} (M, h_i) h_i over orthonormal rows h_i of `basis`."""
    sp = _space_for(M.dim, space, M)
    if basis is None:
        basis = np.diag(1.0 / np.sqrt(sp.weights))
    basis = np.atleast_2d(np.asarray(basis, dtype=float))
    if basis.shape[1] != M.dim:
        raise ValueError(f"Basis vectors must have length {M.dim}, got {basis.shape[1]}")
    if not 0 <= int(k) <= basis.shape[0]:
        raise ValueError(f"k must lie in [0, {basis.shape[0]}], got {k}")
    k = int(k)
    head = basis[:k]
    gram = (head * sp.weights) @ head.T
    if not np.allclose(gram, np.eye(k), atol=1e-10):
        raise ValueError("Projection basis is not orthonormal")
    coeffs = (M.values * sp.weights) @ head.T
    return M.with_values(coeffs @ head)


def integrate_diffusion(
    B: DiffusionCoefficient,
    W: SamplePath,
    u: np.ndarray | SamplePath | None = None,
) -> SamplePath:
    """M(t_k) = sum_{j<k} B(t_j, u_j) dW_j from the mode increments of a Wiener ensemble."""
    if W.mode_increments is None or W.qwiener is None:
        raise ValueError("integrate_diffusion needs a Wiener SamplePath with mode increments")
    spec = W.qwiener
    if u is None:
        if not B.state_independent:
            raise ValueError("State-dependent diffusion needs the state path u")
        u_vals = np.zeros_like(W.values)
    else:
        u_vals = _ensemble_values(u, W.grid)
        u_vals = np.broadcast_to(u_vals, W.values.shape)
    t = W.grid.t
    dM = np.empty((W.n_paths, W.grid.n_steps, spec.space.dim))
    for j in range(W.grid.n_steps):
        dM[:, j, :] = B.apply(float(t[j]), u_vals[:, j, :], W.mode_increments[:, j, :], spec)
    values = np.concatenate([np.zeros((W.n_paths, 1, spec.space.dim)), np.cumsum(dM, axis=1)], axis=1)
    return SamplePath(W.grid, values, W.seed, PathKind.MARTINGALE, qwiener=spec)


def check_isometry_bdg(
    B: DiffusionCoefficient,
    spec: QWienerSpec,
    grid: TimeGrid,
    n_paths: int,
    seed: RngSeed,
) -> EnsembleReport:
    """Monte Carlo Ito isometry, BDG (r = 1, constant 3) and Doob (r = 2, constant 4) checks."""
    if not B.state_independent:
        raise ValueError("check_isometry_bdg needs a state-independent diffusion coefficient")
    start = time.perf_counter()
    W = sample_qwiener(spec, grid, seed, n_paths)
    I = integrate_diffusion(B, W)
    sp = spec.space
    zero = np.zeros(sp.dim)
    q_sq = np.array([B.q_norm_sq(float(s), zero, spec) for s in grid.t[:-1]])
    energy = float(np.sum(q_sq * grid.steps))

    norms = np.asarray(sp.norm_h(I.values))
    terminal_sq = norms[:, -1] ** 2
    sup_norm = np.max(norms, axis=1)
    sup_sq = sup_norm**2
    mean_t, se_t = mean_and_stderr(terminal_sq)
    mean_sup, se_sup = mean_and_stderr(sup_norm)
    mean_sup_sq, se_sup_sq = mean_and_stderr(sup_sq)

    if energy > 0:
        ratio = mean_t / energy
        iso_ok = abs(ratio - 1.0) <= ISOMETRY_TOL
    else:
        ratio = 1.0 if mean_t == 0 else float("inf")
        iso_ok = mean_t == 0
    bdg_bound = BDG_CONSTANT * np.sqrt(energy)
    doob_bound = DOOB_CONSTANT * energy
    checks = [
        CheckReport("ito_isometry", bool(iso_ok), float(ratio), ISOMETRY_TOL, {"degenerate": energy == 0}),
        CheckReport("bdg_r1", bool(mean_sup <= bdg_bound), float(mean_sup), float(bdg_bound), {"constant": BDG_CONSTANT}),
        CheckReport("doob_r2", bool(mean_sup_sq <= doob_bound), float(mean_sup_sq), float(doob_bound), {"constant": DOOB_CONSTANT}),
    ]
    report = EnsembleReport(
        name="isometry_bdg",
        n_paths=n_paths,
        estimates={"E_terminal_sq": mean_t, "integrated_q_norm": energy, "E_sup": mean_sup, "E_sup_sq": mean_sup_sq},
        std_errors={"E_terminal_sq": se_t, "E_sup": se_sup, "E_sup_sq": se_sup_sq},
        checks=checks,
        runtime=time.perf_counter() - start,
        details={"seed": seed.to_dict(), "n_steps": grid.n_steps},
    )
    logger.info("Isometry ratio %.4f over %d paths", ratio, n_paths)
    return report


def check_martingale_increments(
    M: SamplePath,
    s_index: int,
    t_index: int,
    direction: np.ndarray | None = None,
    window: int | None = None,
    k: float = 3.0,
) -> CheckReport:
    """Regress (M(t) - M(s), e) on [1, window mean of (M, e) up to s]; both coefficients ~ 0.

    A martingale has no predictable drift, so neither the intercept nor the
    slope on the past-window statistic may differ from 0 by more than k SE.
    """
    if not 0 < s_index < t_index < len(M.grid):
        raise ValueError(f"Need 0 < s_index < t_index < {len(M.grid)}, got {s_index}, {t_index}")
    sp = _space_for(M.dim, None, M)
    e = np.zeros(M.dim) if direction is None else np.asarray(direction, dtype=float)
    if direction is None:
        e[0] = 1.0 / np.sqrt(sp.weights[0])
    proj = np.asarray(sp.inner(M.values, e))
    proj = np.atleast_2d(proj)
    lo = 0 if window is None else max(0, s_index - int(window))
    stat = proj[:, lo : s_index + 1].mean(axis=1)
    y = proj[:, t_index] - proj[:, s_index]
    X = sm.add_constant(stat, has_constant="add")
    model = sm.OLS(y, X).fit()
    z = np.abs(model.params) / np.where(model.bse > 0, model.bse, np.inf)
    worst = float(np.max(z))
    return CheckReport(
        name="martingale_increments",
        passed=worst <= k,
        value=worst,
        threshold=k,
        details={
            "intercept": float(model.params[0]),
            "slope": float(model.params[1]),
            "intercept_se": float(model.bse[0]),
            "slope_se": float(model.bse[1]),
            "s": float(M.grid.t[s_index]),
            "t": float(M.grid.t[t_index]),
        },
    )


def ibp_defect(
    u,
    eta,
    m,
    f,
    space: HSpace | None = None,
    tol: float = 1e-8,
) -> np.ndarray:
    """Pathwise defect of the integration-by-parts identity at every node, shape (n_paths, n_nodes).

    D = |u - m|^2 - |u|^2 + 2 sum (u, dm) + 2 sum (m, f) h - 2 sum (m, d eta) + sum |dm|^2,
    all sums left-endpoint. Raises ValueError when u + eta != u(0) + int f + m.
    """
    grid = _grid_of(u, m, eta, f)
    uv = _ensemble_values(u, grid)
    ev = _ensemble_values(eta, grid)
    mv = _ensemble_values(m, grid)
    fv = _ensemble_values(f, grid)
    n = max(uv.shape[0], ev.shape[0], mv.shape[0], fv.shape[0])
    shape = (n, len(grid), uv.shape[-1])
    uv, ev, mv, fv = (np.broadcast_to(v, shape) for v in (uv, ev, mv, fv))
    sp = space or HSpace(shape[-1])
    steps = grid.steps

    F = np.concatenate([np.zeros((n, 1, shape[-1])), np.cumsum(fv[:, :-1, :] * steps[None, :, None], axis=1)], axis=1)
    residual = uv + ev - (uv[:, :1, :] + F + mv)
    scale = 1.0 + float(np.max(np.abs(uv)))
    worst = float(np.max(np.abs(residual))) if residual.size else 0.0
    if worst > tol * scale or np.max(np.abs(ev[:, 0, :])) > tol or np.max(np.abs(mv[:, 0, :])) > tol:
        raise ValueError(f"Inputs violate u + eta = u0 + int f + m (max residual {worst:.3e})")

    dm = np.diff(mv, axis=1)
    deta = np.diff(ev, axis=1)
    left_u, left_m = uv[:, :-1, :], mv[:, :-1, :]
    terms = (
        2.0 * np.asarray(sp.inner(left_u, dm))
        + 2.0 * steps[None, :] * np.asarray(sp.inner(left_m, fv[:, :-1, :]))
        - 2.0 * np.asarray(sp.inner(left_m, deta))
        + np.asarray(sp.inner(dm, dm))
    )
    cum = np.concatenate([np.zeros((n, 1)), np.cumsum(np.atleast_2d(terms), axis=1)], axis=1)
    diff = uv - mv
    return np.asarray(sp.inner(diff, diff)) - np.asarray(sp.inner(uv, uv)) + cum


def check_ibp(u, eta, m, f, space: HSpace | None = None, tol: float = 1e-8) -> float:
    """Mean over paths of the sup over the grid of |integration-by-parts defect|."""
    defect = ibp_defect(u, eta, m, f, space=space, tol=tol)
    return float(np.mean(np.max(np.abs(defect), axis=1)))
