"""Generalized stochastic solutions of du + A(u)dt ∋ f(t,u)dt + B(t,u)dW.

Every solver works on a whole ensemble at once (leading path axis) and
draws its noise from a QWienerDriver, so a run is reproducible from its
seed regardless of how paths are batched.
"""

from __future__ import annotations

import dataclasses
import logging
import time
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Sequence, Tuple

import numpy as np
import pandas as pd

from src import config as project_config
from src.analysis.metrics import mean_and_stderr, spread_ratio
from src.analysis.reports import CheckReport, EnsembleReport
from src.errors import ConvergenceError
from src.operators.monotone import MonotoneOperator
from src.solvers.deterministic import (
    PROX,
    PENALIZED,
    GenSolution,
    check_penalized_step,
    check_prox_step,
    default_mollify_levels,
    gd_levels,
    penalized_drift,
    prox_recursion,
)
from src.spaces.hspace import HPath, HSpace, NormKind, TimeGrid, variation_values
from src.stochastic.integrals import project_martingale
from src.stochastic.rng import RngSeed
from src.stochastic.wiener import DiffusionCoefficient, QWienerDriver, QWienerSpec, SamplePath

logger = logging.getLogger(__name__)
if not logger.handlers:
    logger.addHandler(logging.NullHandler())

GD = "gd"
PICARD = "picard"
LIPSCHITZ_SLACK = 1.01


@dataclass
class Drift:
    """(t, u) -> f(t, u) with |f(u) - f(v)| <= L1 |u - v| and |f(u)|^2 <= b1 (1 + |u|^2)."""

    fn: Callable[[float, np.ndarray], np.ndarray]
    lipschitz: float = 0.0
    growth: float = 0.0
    state_independent: bool = False
    name: str = "custom"
    params: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.lipschitz < 0 or self.growth < 0:
            raise ValueError("Declared drift constants must be >= 0")

    @classmethod
    def constant(cls, value: np.ndarray | float, dim: int) -> "Drift":
        c = np.broadcast_to(np.asarray(value, dtype=float), (dim,)).copy()

        def _fn(t: float, u: np.ndarray) -> np.ndarray:
            return np.broadcast_to(c, np.shape(u)).copy()

        return cls(_fn, 0.0, float(c @ c), True, "constant", {"value": c.tolist()})

    @classmethod
    def zero(cls, dim: int) -> "Drift":
        return cls.constant(0.0, dim)

    @classmethod
    def linear(cls, matrix: np.ndarray, offset: np.ndarray | float = 0.0) -> "Drift":
        """f(u) = K u + c."""
        K = np.atleast_2d(np.asarray(matrix, dtype=float))
        c = np.broadcast_to(np.asarray(offset, dtype=float), (K.shape[0],)).copy()
        lip = float(np.linalg.norm(K, 2))

        def _fn(t: float, u: np.ndarray) -> np.ndarray:
            return u @ K.T + c

        growth = 2.0 * max(lip**2, float(c @ c))
        return cls(_fn, lip, growth, False, "linear", {"matrix": K.tolist(), "offset": c.tolist()})

    def __call__(self, t: float, u: np.ndarray) -> np.ndarray:
        return self.fn(t, np.asarray(u, dtype=float))

    def describe(self) -> Dict[str, Any]:
        return {"kind": self.name, "L1": self.lipschitz, "b1": self.growth, **self.params}


@dataclass
class SdeProblem:
    """Operator, initial law, drift, diffusion and noise of the stochastic inclusion.

    `u0` is a point (dim,), an ensemble (n_paths, dim) or a callable n -> (n, dim).
    """

    space: HSpace
    A: MonotoneOperator
    u0: Any
    f: Drift
    B: DiffusionCoefficient
    qwiener: QWienerSpec
    T: float

    def __post_init__(self) -> None:
        if self.A.space.dim != self.space.dim or self.qwiener.space.dim != self.space.dim:
            raise ValueError("Operator, noise and problem spaces differ in dimension")
        if self.B.n_modes != self.qwiener.n_modes:
            raise ValueError(f"Diffusion has {self.B.n_modes} modes, noise has {self.qwiener.n_modes}")
        if self.T <= 0:
            raise ValueError(f"Horizon T must be > 0, got {self.T}")
        if not callable(self.u0):
            self.u0 = self.space._check(np.asarray(self.u0, dtype=float))

    def with_u0(self, u0: Any) -> "SdeProblem":
        return dataclasses.replace(self, u0=u0)

    def initial(self, n_paths: int) -> np.ndarray:
        if callable(self.u0):
            x = np.asarray(self.u0(n_paths), dtype=float)
        else:
            x = self.u0
        x = np.broadcast_to(x, (n_paths, self.space.dim)).copy()
        return np.asarray(self.A.project_domain(x), dtype=float).reshape(n_paths, self.space.dim)

    @property
    def additive(self) -> bool:
        return self.f.state_independent and self.B.state_independent

    def validate_constants(self, n: int = 200, seed: int = 0, scale: float = 2.0) -> CheckReport:
        """Empirical Lipschitz ratios of f and B on random point pairs versus the declared L1, L."""
        rng = np.random.default_rng(seed)
        x = rng.normal(scale=scale, size=(n, self.space.dim))
        y = rng.normal(scale=scale, size=(n, self.space.dim))
        gap_sq = np.asarray(self.space.inner(x - y, x - y))
        keep = gap_sq > 1e-14
        f_gap = np.asarray(self.space.inner(self.f(0.0, x) - self.f(0.0, y), self.f(0.0, x) - self.f(0.0, y)))
        bx, by = self.B(0.0, x), self.B(0.0, y)
        diff = bx - by
        b_gap = np.sum(self.qwiener.eigenvalues * np.sum(self.space.weights[:, None] * diff**2, axis=-2), axis=-1)
        f_ratio = float(np.max(np.sqrt(f_gap[keep] / gap_sq[keep]))) if np.any(keep) else 0.0
        b_ratio = float(np.max(b_gap[keep] / gap_sq[keep])) if np.any(keep) else 0.0
        excess = max(f_ratio - LIPSCHITZ_SLACK * self.f.lipschitz, b_ratio - LIPSCHITZ_SLACK * self.B.lipschitz)
        return CheckReport(
            name="declared_constants",
            passed=excess <= 1e-12,
            value=excess,
            threshold=0.0,
            details={"f_ratio": f_ratio, "L1": self.f.lipschitz, "B_ratio": b_ratio, "L": self.B.lipschitz},
        )


@dataclass
class GenSolutionStoch:
    """Ensemble of generalized solutions (u, eta) sharing one grid.

    Arrays have shape (n_paths, n_nodes, dim); `F` and `M` are the drift and
    martingale parts so that u + eta = u(0) + F + M on every path.
    """

    grid: TimeGrid
    u: np.ndarray
    eta: np.ndarray
    F: np.ndarray
    M: np.ndarray
    seed: RngSeed
    scheme: str
    space: HSpace
    picard_iters: int = 0
    eps: float | None = None
    aborted: np.ndarray | None = None
    diagnostics: Dict[str, Any] = field(default_factory=dict)

    @property
    def n_paths(self) -> int:
        return int(self.u.shape[0])

    @property
    def ok(self) -> np.ndarray:
        return np.ones(self.n_paths, dtype=bool) if self.aborted is None else ~self.aborted

    @property
    def n_aborted(self) -> int:
        return int(np.sum(~self.ok))

    @property
    def residual_identity(self) -> float:
        ok = self.ok
        if not np.any(ok):
            return float("nan")
        defect = self.u + self.eta - (self.u[:, :1, :] + self.F + self.M)
        return float(np.max(np.abs(defect[ok]))) if defect.size else 0.0

    def bv_eta(self) -> np.ndarray:
        """Per-path variation of eta in the dual norm."""
        return variation_values(self.eta, NormKind.XSTAR, self.space)[:, -1]

    def path(self, i: int) -> GenSolution:
        return GenSolution(
            u=HPath(self.grid, self.u[i]),
            eta=HPath(self.grid, self.eta[i]),
            bv_eta_xstar=float(self.bv_eta()[i]),
            residual_identity=float(np.max(np.abs(self.u[i] + self.eta[i] - (self.u[i, :1] + self.F[i] + self.M[i])))),
            scheme=self.scheme,
            eps=self.eps,
            diagnostics={"path": i, **self.diagnostics},
        )

    def martingale(self) -> SamplePath:
        return SamplePath(self.grid, self.M, self.seed)

    def mean_frame(self) -> pd.DataFrame:
        """t, ensemble mean of u per component, ensemble mean of |u|^2 (healthy paths only)."""
        ok = self.ok
        mean = self.u[ok].mean(axis=0) if np.any(ok) else np.full(self.u.shape[1:], np.nan)
        frame = HPath(self.grid, mean).to_frame("u")
        frame["second_moment"] = np.asarray(self.space.inner(self.u[ok], self.u[ok])).reshape(-1, len(self.grid)).mean(axis=0)
        return frame


def _blowup_limit(u0: np.ndarray, space: HSpace) -> np.ndarray:
    return project_config.BLOWUP_FACTOR * (1.0 + np.asarray(space.norm_h(u0)).reshape(-1))


def _recorded(grid: TimeGrid, stride: int) -> np.ndarray:
    idx = np.arange(0, len(grid), max(int(stride), 1))
    if idx[-1] != len(grid) - 1:
        idx = np.append(idx, len(grid) - 1)
    return idx


def _simulate(
    problem: SdeProblem,
    grid: TimeGrid,
    seed: RngSeed,
    n_paths: int,
    advance: Callable[[float, np.ndarray, np.ndarray], Tuple[np.ndarray, np.ndarray]],
    scheme: str,
    eps: float | None,
    stride: int = 1,
    dbeta: np.ndarray | None = None,
) -> GenSolutionStoch:
    """Shared Euler-Maruyama driver; `advance(h, u, v)` maps the explicit predictor v to (u_next, d_eta).

    Pre-drawn mode increments `dbeta` (n_paths, n_steps, n_modes) replace the seeded driver.
    """
    space = problem.space
    if dbeta is not None:
        dbeta = np.asarray(dbeta, dtype=float)
        if dbeta.shape != (n_paths, grid.n_steps, problem.qwiener.n_modes):
            raise ValueError(
                f"dbeta must have shape ({n_paths}, {grid.n_steps}, {problem.qwiener.n_modes}), got {dbeta.shape}"
            )
    driver = QWienerDriver(problem.qwiener, seed, n_paths)
    keep = _recorded(grid, stride)
    slot = {int(k): i for i, k in enumerate(keep)}
    shape = (n_paths, keep.size, space.dim)
    U, ETA, FF, MM = (np.zeros(shape) for _ in range(4))

    u = problem.initial(n_paths)
    eta = np.zeros_like(u)
    F = np.zeros_like(u)
    M = np.zeros_like(u)
    U[:, 0] = u
    limit = _blowup_limit(u, space)
    aborted = np.zeros(n_paths, dtype=bool)
    abort_step = np.full(n_paths, -1)
    t = grid.t
    for k, h in enumerate(grid.steps):
        h = float(h)
        db = driver.increment(k, h)[0] if dbeta is None else dbeta[:, k]
        dF = h * problem.f(float(t[k]), u)
        dM = problem.B.apply(float(t[k]), u, db, problem.qwiener)
        v = u + dF + dM
        u_next, d_eta = advance(h, u, v)
        size = np.asarray(space.norm_h(np.where(np.isfinite(u_next), u_next, np.inf))).reshape(-1)
        bad = ~(size <= limit) & ~aborted
        if np.any(bad):
            abort_step[bad] = k + 1
            aborted |= bad
            logger.warning("Blow-up guard tripped on %d path(s) at t=%.4g", int(bad.sum()), t[k + 1])
        if np.any(aborted):
            u_next = np.where(aborted[:, None], u, u_next)
            d_eta = np.where(aborted[:, None], 0.0, d_eta)
            dF = np.where(aborted[:, None], 0.0, dF)
            dM = np.where(aborted[:, None], 0.0, dM)
        u, eta, F, M = u_next, eta + d_eta, F + dF, M + dM
        i = slot.get(k + 1)
        if i is not None:
            U[:, i], ETA[:, i], FF[:, i], MM[:, i] = u, eta, F, M
    diagnostics = {
        "h": grid.h,
        "n_steps": grid.n_steps,
        "stride": int(max(stride, 1)),
        "alpha": problem.A.alpha,
        "n_aborted": int(aborted.sum()),
        "abort_steps": abort_step[aborted].tolist(),
    }
    return GenSolutionStoch(
        grid=TimeGrid(t[keep]),
        u=U,
        eta=ETA,
        F=FF,
        M=MM,
        seed=seed,
        scheme=scheme,
        space=space,
        eps=eps,
        aborted=aborted,
        diagnostics=diagnostics,
    )


def solve_sde_prox(
    problem: SdeProblem,
    grid: TimeGrid,
    seed: RngSeed,
    n_paths: int = 1,
    stride: int = 1,
    dbeta: np.ndarray | None = None,
) -> GenSolutionStoch:
    """Semi-implicit Euler-Maruyama: u_{k+1} = J_h(u_k + h f + B dW + h alpha u_k).

    `dbeta` feeds externally drawn mode increments, e.g. fine-grid noise summed
    onto a coarse grid for strong-convergence studies.
    """
    A = problem.A
    check_prox_step(grid, A.alpha)
    logger.info("Solving SDE (prox): operator=%s, h=%.3e, paths=%d", A.kind, grid.h, n_paths)

    def advance(h: float, u: np.ndarray, v: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        u_next = A.resolvent(h, v + h * A.alpha * u)
        return u_next, v - u_next

    return _simulate(problem, grid, seed, n_paths, advance, PROX, None, stride, dbeta)


def check_sde_penalized_step(grid: TimeGrid, alpha: float, eps: float) -> None:
    """The eps range binds only for shifted operators; h <= eps/4 binds always."""
    check_penalized_step(grid, alpha, eps, bounded_eps=alpha != 0.0)


def solve_sde_penalized(
    problem: SdeProblem,
    eps: float,
    grid: TimeGrid,
    seed: RngSeed,
    n_paths: int = 1,
    stride: int = 1,
) -> GenSolutionStoch:
    """Explicit Euler-Maruyama on the Yosida-penalized drift; eta by the trapezoid rule.

    Reports the p = 1 moment ratio (E sup|u|^2 + E||eta||_BV) / (1 + E|u0|^2).
    """
    A = problem.A
    check_sde_penalized_step(grid, A.alpha, eps)
    logger.info("Solving SDE (penalized): operator=%s, eps=%.3e, h=%.3e, paths=%d", A.kind, eps, grid.h, n_paths)
    cache: Dict[str, np.ndarray] = {}

    def advance(h: float, u: np.ndarray, v: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        g = cache.get("g")
        if g is None or g.shape != u.shape:
            g = penalized_drift(A, eps, u)
        u_next = v - h * g
        finite = np.all(np.isfinite(u_next), axis=-1, keepdims=True)
        g_next = penalized_drift(A, eps, np.where(finite, u_next, u))
        cache["g"] = g_next
        return u_next, 0.5 * h * (g + g_next)

    sol = _simulate(problem, grid, seed, n_paths, advance, PENALIZED, eps, stride)
    ok = sol.ok
    if np.any(ok):
        sup_sq = np.max(np.asarray(sol.space.inner(sol.u, sol.u)), axis=1)[ok]
        u0_sq = np.asarray(sol.space.inner(sol.u[:, 0], sol.u[:, 0]))[ok]
        sol.diagnostics["moment_ratio_p1"] = float((sup_sq.mean() + sol.bv_eta()[ok].mean()) / (1.0 + u0_sq.mean()))
    return sol


def _f_nodes(problem: SdeProblem, grid: TimeGrid) -> np.ndarray:
    zero = np.zeros(problem.space.dim)
    return np.stack([problem.f(float(s), zero) for s in grid.t[:-1]]) if grid.n_steps else np.zeros((0, problem.space.dim))


def solve_gs_additive(
    problem: SdeProblem,
    M: SamplePath,
    grid: TimeGrid,
    k: int | None = None,
    basis: np.ndarray | None = None,
    projection_tol: float = 1e-6,
    mollify_levels: Sequence[float] | None = None,
    cauchy_tol: float = 1e-2,
) -> GenSolutionStoch:
    """Additive-noise generalized solution driven by a given martingale ensemble.

    With `k` fixed, M is replaced by its projection on the first k basis
    vectors. Otherwise k grows until the ensemble gap E sup|u_k - u_{k-1}|^2
    drops below `projection_tol` (k = dim reproduces M exactly).
    """
    if not problem.f.state_independent:
        raise ValueError("solve_gs_additive needs a drift independent of u")
    if not M.grid.same_as(grid):
        raise ValueError("Martingale and solver grids differ.")
    check_prox_step(grid, problem.A.alpha)
    space = problem.space
    n_paths = M.n_paths
    u0 = problem.initial(n_paths)
    dF = _f_nodes(problem, grid) * grid.steps[:, None]
    levels = list(mollify_levels) if mollify_levels is not None else default_mollify_levels(grid)
    dim = M.dim if basis is None else int(np.atleast_2d(basis).shape[0])
    ks = [int(k)] if k is not None else list(range(1, dim + 1))

    gaps: List[float] = []
    previous = None
    u = eta = None
    diag: Dict[str, Any] = {}
    used_k = ks[0]
    M_bar = M
    for kk in ks:
        M_bar = project_martingale(M, kk, basis, space)
        u, eta, diag = gd_levels(problem.A, space, u0, dF, M_bar.values, grid, levels, PROX, None, cauchy_tol)
        used_k = kk
        if previous is not None:
            gap = float(np.mean(np.max(np.asarray(space.inner(u - previous, u - previous)), axis=1)))
            gaps.append(gap)
            if gap <= projection_tol:
                break
        previous = u
    F = np.concatenate([np.zeros((1, space.dim)), np.cumsum(dF, axis=0)])
    F = np.broadcast_to(F, u.shape).copy()
    logger.info("Additive GS solved with k=%d of %d, %d paths", used_k, dim, n_paths)
    return GenSolutionStoch(
        grid=grid,
        u=u,
        eta=eta,
        F=F,
        M=M_bar.values.copy(),
        seed=M.seed if M.seed is not None else RngSeed(0),
        scheme=GD,
        space=space,
        diagnostics={**diag, "k": used_k, "projection_gaps": gaps, "h": grid.h, "n_steps": grid.n_steps},
    )


def picard_norm(
    paths: SamplePath | np.ndarray,
    a_weight: float,
    grid: TimeGrid | None = None,
    space: HSpace | None = None,
) -> float:
    """|||v|||_a = sup_t e^{-a t} (E sup_{s<=t} |v(s)|^2)^{1/2} over the grid nodes."""
    if a_weight < 0:
        raise ValueError(f"a_weight must be >= 0, got {a_weight}")
    if isinstance(paths, SamplePath):
        grid = paths.grid if grid is None else grid
        values = paths.values
    else:
        values = np.asarray(paths, dtype=float)
        if values.ndim == 2:
            values = values[None]
    if grid is None:
        raise ValueError("picard_norm needs the time grid")
    if values.size == 0 or values.shape[0] == 0:
        raise ValueError("picard_norm of an empty ensemble")
    sp = space or HSpace(values.shape[-1])
    sq = np.asarray(sp.inner(values, values)).reshape(values.shape[0], -1)
    running = np.maximum.accumulate(sq, axis=1).mean(axis=0)
    return float(np.max(np.exp(-a_weight * grid.t) * np.sqrt(running)))


def contraction_weight(
    alpha: float,
    T: float,
    L1: float,
    L: float,
    stability_constant: float | None = None,
) -> float:
    """a = 2(C1 + 1) with C1 = C (L1^2 + L), or e^{2|alpha|T}(L1^2 T + L) 8 without a calibrated C."""
    if stability_constant is not None:
        c1 = float(stability_constant) * (L1**2 + L)
    else:
        c1 = np.exp(2.0 * abs(alpha) * T) * (L1**2 * T + L) * 8.0
    return 2.0 * (float(c1) + 1.0)


def solve_msde(
    problem: SdeProblem,
    grid: TimeGrid,
    seed: RngSeed,
    n_paths: int = 1,
    picard_tol: float = 1e-6,
    a_weight: float | None = None,
    max_iter: int | None = None,
) -> GenSolutionStoch:
    """Picard iteration v -> GS(A; u0, f(., v), int B(., v) dW) on frozen noise.

    Each iterate is a prox solve with drift and diffusion frozen at the
    previous iterate. Stops when |||v_new - v|||_a <= picard_tol.
    """
    A = problem.A
    check_prox_step(grid, A.alpha)
    space = problem.space
    spec = problem.qwiener
    if a_weight is None:
        a_weight = contraction_weight(A.alpha, grid.T, problem.f.lipschitz, problem.B.lipschitz)
    max_iter = int(max_iter or project_config.PICARD_MAX_ITER)
    driver = QWienerDriver(spec, seed, n_paths)
    steps = grid.steps
    dbeta = np.stack([driver.increment(k, float(h))[0] for k, h in enumerate(steps)], axis=1)
    u0 = problem.initial(n_paths)
    t = grid.t
    logger.info("Solving MSDE by Picard: a_weight=%.3g, tol=%.1e, paths=%d", a_weight, picard_tol, n_paths)

    v = np.repeat(u0[:, None, :], len(grid), axis=1)
    diffs: List[float] = []
    ratios: List[float] = []
    alarm = False
    dF = dM = eta = None
    for it in range(1, max_iter + 1):
        dF = np.stack([float(h) * problem.f(float(t[j]), v[:, j]) for j, h in enumerate(steps)], axis=1)
        dM = np.stack([problem.B.apply(float(t[j]), v[:, j], dbeta[:, j], spec) for j in range(steps.size)], axis=1)
        v_new, eta = prox_recursion(A, u0, dF, dM, steps)
        diff = picard_norm(v_new - v, a_weight, grid, space)
        if diffs and diffs[-1] > 0:
            ratio = diff / diffs[-1]
            ratios.append(ratio)
            if ratio > project_config.CONTRACTION_ALARM and diff > picard_tol:
                alarm = True
                logger.warning("Picard contraction ratio %.3f exceeds %.2f at iteration %d", ratio, project_config.CONTRACTION_ALARM, it)
        diffs.append(diff)
        v = v_new
        if diff <= picard_tol:
            break
    else:
        raise ConvergenceError(
            f"Picard iteration did not reach tol={picard_tol:.1e} in {max_iter} iterations",
            {"picard_diffs": diffs, "picard_ratios": ratios},
        )
    zeros = np.zeros((n_paths, 1, space.dim))
    return GenSolutionStoch(
        grid=grid,
        u=v,
        eta=eta,
        F=np.concatenate([zeros, np.cumsum(dF, axis=1)], axis=1),
        M=np.concatenate([zeros, np.cumsum(dM, axis=1)], axis=1),
        seed=seed,
        scheme=PICARD,
        space=space,
        picard_iters=len(diffs),
        diagnostics={
            "a_weight": a_weight,
            "picard_diffs": diffs,
            "picard_ratios": ratios,
            "max_ratio": max(ratios) if ratios else 0.0,
            "contraction_alarm": alarm,
            "h": grid.h,
            "n_steps": grid.n_steps,
        },
    )


def check_picard_contraction(sol: GenSolutionStoch, bound: float = 0.55, floor: float = 1e-12) -> CheckReport:
    """Worst ratio of successive Picard differences above the round-off floor."""
    diffs = sol.diagnostics.get("picard_diffs", [])
    ratios = [b / a for a, b in zip(diffs, diffs[1:]) if a > 0 and b > floor]
    worst = max(ratios) if ratios else 0.0
    return CheckReport(
        name="picard_contraction",
        passed=worst <= bound and not sol.diagnostics.get("contraction_alarm", False),
        value=worst,
        threshold=bound,
        details={"iterations": sol.picard_iters, "a_weight": sol.diagnostics.get("a_weight")},
    )


def _moment(values: np.ndarray, space: HSpace, p: int) -> np.ndarray:
    return np.asarray(space.inner(values, values)) ** p


def check_moment_bounds(
    problem: SdeProblem,
    grid: TimeGrid,
    n_paths: int,
    seed: RngSeed,
    p: int = 1,
    scales: Sequence[float] = (1.0, 2.0, 4.0),
    u0_second: np.ndarray | None = None,
    max_spread: float = 4.0,
) -> EnsembleReport:
    """Moment ratios E sup|u|^{2p} / (1 + E|u0|^{2p}) and E sup|u1 - u2|^{2p} / E|u01 - u02|^{2p}.

    The initial points are scaled by each entry of `scales`; both solutions
    share the noise. Passes when all ratios are finite and each family varies
    by at most `max_spread` across scales. Equal initial data give a
    degenerate 0/0 difference ratio, reported as None.
    """
    if p not in (1, 2):
        raise ValueError(f"p must be 1 or 2, got {p}")
    start = time.perf_counter()
    space = problem.space
    first = problem.initial(1)[0] if not callable(problem.u0) else None
    if first is None:
        raise ValueError("check_moment_bounds needs a deterministic initial point")
    second = first if u0_second is None else space._check(np.asarray(u0_second, dtype=float))
    bound_ratios: List[float] = []
    diff_ratios: List[float | None] = []
    estimates: Dict[str, float] = {}
    std_errors: Dict[str, float] = {}
    for s in scales:
        s1 = solve_sde_prox(problem.with_u0(s * first), grid, seed, n_paths)
        s2 = solve_sde_prox(problem.with_u0(s * second), grid, seed, n_paths)
        sup_u = np.max(_moment(s1.u, space, p), axis=1)
        m, se = mean_and_stderr(sup_u)
        u0_mom = float(np.mean(_moment(s1.u[:, 0], space, p)))
        ratio = m / (1.0 + u0_mom)
        bound_ratios.append(ratio)
        estimates[f"bound_ratio_s{s:g}"] = ratio
        std_errors[f"bound_ratio_s{s:g}"] = se / (1.0 + u0_mom)
        gap0 = float(np.mean(_moment(s1.u[:, 0] - s2.u[:, 0], space, p)))
        sup_gap = np.max(_moment(s1.u - s2.u, space, p), axis=1)
        if gap0 > 0:
            diff_ratios.append(float(sup_gap.mean() / gap0))
            estimates[f"diff_ratio_s{s:g}"] = diff_ratios[-1]
        else:
            diff_ratios.append(None)
    finite_bounds = all(np.isfinite(bound_ratios))
    bound_spread = spread_ratio(np.asarray(bound_ratios))
    defined = [r for r in diff_ratios if r is not None]
    diff_spread = spread_ratio(np.asarray(defined)) if defined else 1.0
    checks = [
        CheckReport(
            "moment_bound",
            bool(finite_bounds and bound_spread <= max_spread),
            float(bound_spread),
            max_spread,
            {"ratios": bound_ratios, "p": p},
        ),
        CheckReport(
            "moment_difference",
            bool(all(np.isfinite(defined)) and diff_spread <= max_spread),
            float(diff_spread),
            max_spread,
            {"ratios": diff_ratios, "degenerate": not defined},
        ),
    ]
    return EnsembleReport(
        name="moment_bounds",
        n_paths=n_paths,
        estimates=estimates,
        std_errors=std_errors,
        checks=checks,
        runtime=time.perf_counter() - start,
        details={"scales": list(scales), "p": p},
    )


def comparison_excess(s1: GenSolutionStoch, s2: GenSolutionStoch, alpha: float = 0.0) -> np.ndarray:
    """Per-path sup over t of the discrete comparison defect (positive part allowed to be negative).

    |d(t)|^2 - |d(0)|^2 - 2 alpha sum |d|^2 h - 2 sum (d, dF1 - dF2) - 2 sum (d, dM1 - dM2)
    - sum |dM1 - dM2|^2, with d = u1 - u2 and left-endpoint sums.
    """
    if not s1.grid.same_as(s2.grid):
        raise ValueError("Solutions are defined on different time grids.")
    space = s1.space
    d = s1.u - s2.u
    dF = np.diff(s1.F - s2.F, axis=1)
    dM = np.diff(s1.M - s2.M, axis=1)
    left = d[:, :-1]
    steps = s1.grid.steps[None, :]
    incr = (
        2.0 * alpha * steps * np.asarray(space.inner(left, left))
        + 2.0 * np.asarray(space.inner(left, dF))
        + 2.0 * np.asarray(space.inner(left, dM))
        + np.asarray(space.inner(dM, dM))
    )
    rhs = np.asarray(space.inner(d[:, 0], d[:, 0]))[:, None] + np.concatenate(
        [np.zeros((d.shape[0], 1)), np.cumsum(incr, axis=1)], axis=1
    )
    lhs = np.asarray(space.inner(d, d))
    return np.max(lhs - rhs, axis=1)


def check_coupled_comparison(
    s1: GenSolutionStoch,
    s2: GenSolutionStoch,
    alpha: float | None = None,
    slack: float = 5.0,
) -> CheckReport:
    """Pathwise comparison inequality for two solutions on the same noise, slack O(sqrt(h))."""
    alpha = float(s1.diagnostics.get("alpha", 0.0)) if alpha is None else float(alpha)
    excess = comparison_excess(s1, s2, alpha)
    scale = 1.0 + float(np.max(np.asarray(s1.space.inner(s1.u - s2.u, s1.u - s2.u))))
    tol = slack * np.sqrt(s1.grid.h) * scale
    worst = float(np.max(excess))
    return CheckReport(
        name="coupled_comparison",
        passed=worst <= tol,
        value=worst,
        threshold=float(tol),
        details={"mean_excess": float(np.mean(excess)), "alpha": alpha},
    )


def penalization_sweep_sde(
    problem: SdeProblem,
    grid: TimeGrid,
    eps_values: Sequence[float],
    seed: RngSeed,
    n_paths: int,
) -> pd.DataFrame:
    """Ensemble E sup|u_eps - u| of penalized versus prox solutions on shared noise."""
    reference = solve_sde_prox(problem, grid, seed, n_paths)
    rows = []
    for eps in eps_values:
        pen = solve_sde_penalized(problem, float(eps), grid, seed, n_paths)
        gap = np.max(np.asarray(problem.space.norm_h(pen.u - reference.u)), axis=1)
        mean, se = mean_and_stderr(gap)
        rows.append({"eps": float(eps), "sup_gap": mean, "sup_gap_se": se, "n_aborted": pen.n_aborted})
    return pd.DataFrame(rows)


def check_penalization_gaps(table: pd.DataFrame) -> CheckReport:
    """Sup-gaps from `penalization_sweep_sde` shrink as eps decreases."""
    ordered = table.sort_values("eps", ascending=False)
    gaps = ordered["sup_gap"].to_numpy()
    shrinking = bool(np.all(np.diff(gaps) < 0)) if gaps.size > 1 else True
    return CheckReport(
        name="penalization_convergence",
        passed=shrinking,
        value=float(gaps[-1]),
        threshold=float(gaps[0]),
        details={"eps": ordered["eps"].tolist(), "sup_gap": gaps.tolist()},
    )
