"""Generalized deterministic Skorokhod solver for du + Au(dt) ∋ f dt + dM.

Two time steppers are provided: the semi-implicit prox scheme (resolvent of
A + alpha*I, explicit -alpha*I) and the explicit Yosida-penalized scheme.
`solve_gd` drives either one through a sequence of mollified inputs.
All recursions run on arrays with optional leading path axes so the
stochastic solvers reuse them for whole ensembles.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Sequence, Tuple

import numpy as np
import pandas as pd

from src import config as project_config
from src.analysis.metrics import spread_ratio
from src.analysis.reports import CheckReport
from src.errors import ConvergenceError, StepSizeError
from src.operators.audit import H1Audit
from src.operators.monotone import MonotoneOperator
from src.spaces.hspace import (
    HPath,
    HSpace,
    NormKind,
    TimeGrid,
    interpolate_values,
    variation_values,
)

logger = logging.getLogger(__name__)
if not logger.handlers:
    logger.addHandler(logging.NullHandler())

PROX = "prox"
PENALIZED = "penalized"


@dataclass
class DetProblem:
    """Inputs of the inclusion: operator, initial point, forcing f and singular input M."""

    space: HSpace
    A: MonotoneOperator
    u0: np.ndarray
    f: HPath
    M: HPath

    def __post_init__(self) -> None:
        self.u0 = self.space._check(np.asarray(self.u0, dtype=float)).reshape(self.space.dim)
        for name, path in (("f", self.f), ("M", self.M)):
            if path.dim != self.space.dim:
                raise ValueError(f"{name} has dimension {path.dim}, expected {self.space.dim}")
        if np.max(np.abs(self.M.values[0])) > 1e-12:
            raise ValueError("M must start at 0")
        if self.A.space.dim != self.space.dim:
            raise ValueError("Operator and problem spaces differ in dimension")

    @classmethod
    def simple(
        cls,
        A: MonotoneOperator,
        u0: np.ndarray | float,
        grid: TimeGrid,
        f: float | np.ndarray = 0.0,
        M: HPath | None = None,
    ) -> "DetProblem":
        """Constant forcing on `grid`; M defaults to zero."""
        space = A.space
        f_path = HPath.constant(grid, np.broadcast_to(np.asarray(f, dtype=float), (space.dim,)))
        m_path = M if M is not None else HPath.zeros(grid, space.dim)
        return cls(space, A, np.broadcast_to(np.asarray(u0, dtype=float), (space.dim,)), f_path, m_path)

    def with_inputs(self, u0: np.ndarray | None = None, f: HPath | None = None, M: HPath | None = None) -> "DetProblem":
        return DetProblem(
            self.space,
            self.A,
            self.u0 if u0 is None else u0,
            self.f if f is None else f,
            self.M if M is None else M,
        )


@dataclass
class GenSolution:
    """Generalized solution (u, eta) on a grid with its diagnostics."""

    u: HPath
    eta: HPath
    bv_eta_xstar: float
    residual_identity: float
    scheme: str
    eps: float | None = None
    diagnostics: Dict[str, Any] = field(default_factory=dict)

    @property
    def grid(self) -> TimeGrid:
        return self.u.grid

    def to_frame(self) -> pd.DataFrame:
        frame = self.u.to_frame("u")
        eta = self.eta.to_frame("eta").drop(columns="t")
        return pd.concat([frame, eta], axis=1)


def _validate_alignment(a: TimeGrid, b: TimeGrid) -> None:
    """Ensure two solutions live on the same grid before comparing them."""
    if not a.same_as(b):
        raise ValueError("Solutions are defined on different time grids.")


def check_prox_step(grid: TimeGrid, alpha: float) -> None:
    if grid.h * abs(alpha) > 0.5 + 1e-12:
        raise StepSizeError(f"Prox scheme needs h*|alpha| <= 1/2, got h={grid.h:.3e}, alpha={alpha}")


def check_penalized_step(grid: TimeGrid, alpha: float, eps: float, bounded_eps: bool = True) -> None:
    """h <= eps/4 always; eps < 1/(|alpha|+1) only when `bounded_eps`."""
    if not eps > 0.0:
        raise StepSizeError(f"eps must be > 0, got {eps}")
    if bounded_eps and not eps < 1.0 / (abs(alpha) + 1.0):
        raise StepSizeError(f"eps must lie in (0, 1/(|alpha|+1)) = (0, {1.0 / (abs(alpha) + 1.0):.4g}), got {eps}")
    if grid.h > eps / 4.0 * (1.0 + 1e-9):
        raise StepSizeError(f"Penalized scheme needs h <= eps/4, got h={grid.h:.3e}, eps={eps}")


def prox_recursion(
    A: MonotoneOperator,
    u0: np.ndarray,
    dF: np.ndarray,
    dM: np.ndarray,
    steps: np.ndarray,
) -> Tuple[np.ndarray, np.ndarray]:
    """u_{k+1} = J_h(u_k + dF_k + dM_k + h alpha u_k), eta_{k+1} = eta_k + (u_k + dF_k + dM_k - u_{k+1}).

    `u0` has shape (..., dim); `dF`, `dM` have shape (..., n_steps, dim).
    Returns (u, eta) with shape (..., n_steps + 1, dim).
    """
    n_steps = steps.size
    shape = u0.shape[:-1] + (n_steps + 1, u0.shape[-1])
    u = np.empty(shape)
    eta = np.zeros(shape)
    u[..., 0, :] = u0
    for k in range(n_steps):
        h = float(steps[k])
        uk = u[..., k, :]
        v = uk + dF[..., k, :] + dM[..., k, :]
        u[..., k + 1, :] = A.resolvent(h, v + h * A.alpha * uk)
        eta[..., k + 1, :] = eta[..., k, :] + (v - u[..., k + 1, :])
    return u, eta


def penalized_drift(A: MonotoneOperator, eps: float, u: np.ndarray) -> np.ndarray:
    """A_eps^alpha u - alpha u, the Lipschitz surrogate of A."""
    return A.yosida(eps, u) - A.alpha * u


def penalized_recursion(
    A: MonotoneOperator,
    eps: float,
    u0: np.ndarray,
    dF: np.ndarray,
    dM: np.ndarray,
    steps: np.ndarray,
) -> Tuple[np.ndarray, np.ndarray]:
    """Explicit Euler on the penalized field; eta accumulated by the trapezoid rule."""
    n_steps = steps.size
    shape = u0.shape[:-1] + (n_steps + 1, u0.shape[-1])
    u = np.empty(shape)
    eta = np.zeros(shape)
    u[..., 0, :] = u0
    g = penalized_drift(A, eps, u0)
    for k in range(n_steps):
        h = float(steps[k])
        u[..., k + 1, :] = u[..., k, :] + dF[..., k, :] + dM[..., k, :] - h * g
        g_next = penalized_drift(A, eps, u[..., k + 1, :])
        eta[..., k + 1, :] = eta[..., k, :] + 0.5 * h * (g + g_next)
        g = g_next
    return u, eta


def _kernel_nodes(points: int | None = None) -> Tuple[np.ndarray, np.ndarray]:
    """Composite Simpson nodes on [-1, 1] with weights rho(r) dr normalized to 1."""
    q = int(points or project_config.MOLLIFY_QUADRATURE_POINTS)
    if q < 3:
        q = 3
    if q % 2 == 0:
        q += 1
    r = np.linspace(-1.0, 1.0, q)
    simpson = np.ones(q)
    simpson[1:-1:2] = 4.0
    simpson[2:-1:2] = 2.0
    rho = np.zeros(q)
    inside = np.abs(r) < 1.0
    rho[inside] = np.exp(-1.0 / (1.0 - r[inside] ** 2))
    w = simpson * rho
    return r, w / w.sum()


def mollify_values(t_nodes: np.ndarray, values: np.ndarray, n: float, t_eval: np.ndarray | None = None) -> np.ndarray:
    """M_n(t) = ∫ rho(r) M~(t - (1 + r)/n) dr with M~ the constant extension of M.

    `values` has shape (..., n_nodes, dim); the result has the node axis of `t_eval`.
    """
    if n < 1:
        raise ValueError(f"Mollification level must be >= 1, got {n}")
    t_eval = np.asarray(t_nodes if t_eval is None else t_eval, dtype=float)
    r, w = _kernel_nodes()
    shifted = (t_eval[:, None] - (1.0 + r[None, :]) / n).reshape(-1)
    sampled = interpolate_values(t_nodes, values, shifted)
    sampled = sampled.reshape(values.shape[:-2] + (t_eval.size, r.size, values.shape[-1]))
    return np.einsum("...tqd,q->...td", sampled, w)


def mollify(M: HPath, n: float) -> HPath:
    """Smooth a continuous path; M_n(0) = M(0) and M_n -> M uniformly as n grows."""
    return HPath(M.grid, mollify_values(M.grid.t, M.values, n))


def _inputs_on_grid(problem: DetProblem, grid: TimeGrid) -> Tuple[np.ndarray, np.ndarray]:
    """Left-endpoint forcing increments and M sampled at the grid nodes."""
    f_left = problem.f.at(grid.t[:-1]) if len(grid) > 1 else np.zeros((0, problem.space.dim))
    dF = f_left * grid.steps[:, None]
    return dF, problem.M.at(grid.t)


def _project_u0(problem: DetProblem) -> Tuple[np.ndarray, float]:
    u0p = np.asarray(problem.A.project_domain(problem.u0), dtype=float).reshape(problem.space.dim)
    dist = float(problem.space.norm_h(problem.u0 - u0p))
    if dist > 1e-8:
        logger.warning("Initial point projected onto cl D(A); distance %.3e", dist)
    return u0p, dist


def _assemble(
    problem: DetProblem,
    grid: TimeGrid,
    u0p: np.ndarray,
    u: np.ndarray,
    eta: np.ndarray,
    dF: np.ndarray,
    M_nodes: np.ndarray,
    scheme: str,
    eps: float | None,
    diagnostics: Dict[str, Any],
) -> GenSolution:
    F = np.vstack([np.zeros((1, problem.space.dim)), np.cumsum(dF, axis=0)])
    defect = u + eta - (u0p + F + M_nodes)
    residual = float(np.max(np.atleast_1d(problem.space.norm_h(defect))))
    bv = float(variation_values(eta, NormKind.XSTAR, problem.space)[-1])
    diagnostics = {**diagnostics, "alpha": problem.A.alpha, "h": grid.h, "n_steps": grid.n_steps}
    return GenSolution(
        u=HPath(grid, u),
        eta=HPath(grid, eta),
        bv_eta_xstar=bv,
        residual_identity=residual,
        scheme=scheme,
        eps=eps,
        diagnostics=diagnostics,
    )


def solve_prox(problem: DetProblem, grid: TimeGrid) -> GenSolution:
    """Semi-implicit (implicit Euler) scheme; identity u + eta = u0 + F + M holds by construction."""
    check_prox_step(grid, problem.A.alpha)
    logger.info("Solving prox scheme: operator=%s, h=%.3e, steps=%d", problem.A.kind, grid.h, grid.n_steps)
    u0p, dist = _project_u0(problem)
    dF, M_nodes = _inputs_on_grid(problem, grid)
    u, eta = prox_recursion(problem.A, u0p, dF, np.diff(M_nodes, axis=0), grid.steps)
    return _assemble(problem, grid, u0p, u, eta, dF, M_nodes, PROX, None, {"u0_projection_distance": dist})


def solve_penalized(problem: DetProblem, eps: float, grid: TimeGrid) -> GenSolution:
    """Explicit Euler on du + (A_eps^alpha u - alpha u) dt = f dt + dM."""
    check_penalized_step(grid, problem.A.alpha, eps)
    logger.info("Solving penalized scheme: operator=%s, eps=%.3e, h=%.3e", problem.A.kind, eps, grid.h)
    u0p, dist = _project_u0(problem)
    dF, M_nodes = _inputs_on_grid(problem, grid)
    u, eta = penalized_recursion(problem.A, eps, u0p, dF, np.diff(M_nodes, axis=0), grid.steps)
    return _assemble(problem, grid, u0p, u, eta, dF, M_nodes, PENALIZED, eps, {"u0_projection_distance": dist})


def default_mollify_levels(grid: TimeGrid, count: int = 4) -> List[float]:
    """n_k = 16^k / h, so the kernel shift 1/n_k drops below the grid step."""
    h = grid.h if grid.h > 0 else 1.0
    return [16.0**k / h for k in range(count)]


def run_scheme(
    A: MonotoneOperator,
    u0: np.ndarray,
    dF: np.ndarray,
    dM: np.ndarray,
    steps: np.ndarray,
    scheme: str,
    eps: float | None,
) -> Tuple[np.ndarray, np.ndarray]:
    if scheme == PROX:
        return prox_recursion(A, u0, dF, dM, steps)
    if scheme == PENALIZED:
        if eps is None:
            raise ValueError("Penalized scheme needs eps")
        return penalized_recursion(A, eps, u0, dF, dM, steps)
    raise ValueError(f"Unknown scheme {scheme!r}; expected '{PROX}' or '{PENALIZED}'")


def gd_levels(
    A: MonotoneOperator,
    space: HSpace,
    u0: np.ndarray,
    dF: np.ndarray,
    M_nodes: np.ndarray,
    grid: TimeGrid,
    levels: Sequence[float],
    scheme: str,
    eps: float | None,
    cauchy_tol: float,
) -> Tuple[np.ndarray, np.ndarray, Dict[str, Any]]:
    """Solve with M_n for increasing n until successive solutions are within cauchy_tol.

    Refinement stops at the first level whose sup-distance to the previous one
    drops below cauchy_tol; the grid-resolved M is then solved as the
    n -> infinity member of the sequence on this grid and returned.
    Raises ConvergenceError when the last gap stays above cauchy_tol.
    `M_nodes` has shape (..., n_nodes, dim); the sup is also taken over leading axes.
    """
    gaps: List[float] = []
    bvs: List[float] = []
    used: List[float] = []
    previous: np.ndarray | None = None

    def solve(M_level: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        nonlocal previous
        u, eta = run_scheme(A, u0, dF, np.diff(M_level, axis=-2), grid.steps, scheme, eps)
        bvs.append(float(np.max(variation_values(eta, NormKind.XSTAR, space)[..., -1])))
        if previous is not None:
            gaps.append(float(np.max(np.atleast_1d(space.norm_h(u - previous)))))
        previous = u
        return u, eta

    for n in sorted(float(n) for n in levels):
        solve(mollify_values(grid.t, M_nodes, n))
        used.append(n)
        if gaps and gaps[-1] < cauchy_tol:
            break
    u, eta = solve(M_nodes)
    diagnostics = {
        "mollify_levels": used,
        "skipped_levels": len(levels) - len(used),
        "cauchy_gaps": gaps,
        "bv_eta_levels": bvs,
        "sup_bv_eta": max(bvs),
    }
    if gaps and gaps[-1] > cauchy_tol:
        raise ConvergenceError(
            f"Mollified solutions not Cauchy: last gap {gaps[-1]:.3e} > {cauchy_tol:.1e}",
            diagnostics,
        )
    return u, eta, diagnostics


def solve_gd(
    problem: DetProblem,
    grid: TimeGrid,
    mollify_levels: Sequence[float] | None = None,
    scheme: str = PROX,
    eps: float | None = None,
    cauchy_tol: float = 1e-2,
    audit: H1Audit | None = None,
) -> GenSolution:
    """Generalized solution as the limit of solutions driven by mollified M."""
    if audit is not None and not audit.feasible:
        logger.warning("Coercivity audit infeasible (worst violation %.3e); solving anyway", audit.worst_violation)
    if scheme == PROX:
        check_prox_step(grid, problem.A.alpha)
    else:
        check_penalized_step(grid, problem.A.alpha, float(eps or 0.0))
    levels = list(mollify_levels) if mollify_levels is not None else default_mollify_levels(grid)
    logger.info("Solving GD: scheme=%s, levels=%d, h=%.3e", scheme, len(levels), grid.h)
    u0p, dist = _project_u0(problem)
    dF, M_nodes = _inputs_on_grid(problem, grid)
    u, eta, diag = gd_levels(problem.A, problem.space, u0p, dF, M_nodes, grid, levels, scheme, eps, cauchy_tol)
    diag["u0_projection_distance"] = dist
    return _assemble(problem, grid, u0p, u, eta, dF, M_nodes, scheme, eps, diag)


def discrete_reflection(x: np.ndarray) -> np.ndarray:
    """Skorokhod map at 0 along the last axis: x(t) + max(0, max_{s<=t} -x(s))."""
    xa = np.asarray(x, dtype=float)
    push = np.maximum(np.maximum.accumulate(-xa, axis=-1), 0.0)
    return xa + push


def check_reflection(sol: GenSolution, problem: DetProblem, tol: float = 1e-10) -> CheckReport:
    """Compare u with the Skorokhod map of u0 + F + M at 0, componentwise.

    Only meaningful for the normal cone of [0, inf) per coordinate.
    """
    grid = sol.grid
    drift = np.concatenate([np.zeros((1, problem.space.dim)), np.cumsum(problem.f.at(grid.t[:-1]) * grid.steps[:, None], axis=0)])
    free = sol.u.values[0] + drift + problem.M.at(grid.t) - problem.M.at(grid.t[:1])
    oracle = discrete_reflection(free.T).T
    gap = float(np.max(np.abs(sol.u.values - oracle)))
    return CheckReport("reflection_oracle", gap <= tol, gap, tol, {"n_nodes": len(grid)})


def _net_increments(sol: GenSolution, alpha: float) -> np.ndarray:
    """eta increments net of the explicit -alpha*I split of the prox scheme."""
    d_eta = np.diff(sol.eta.values, axis=0)
    if sol.scheme == PROX and alpha != 0.0:
        d_eta = d_eta - alpha * sol.grid.steps[:, None] * np.diff(sol.u.values, axis=0)
    return d_eta


def penalized_section(sol: GenSolution, A: MonotoneOperator) -> Tuple[np.ndarray, np.ndarray, float]:
    """Resolvent path z = J_eps u, the section A_eps^alpha u - alpha z of A at z, and the eta defect.

    The defect is the sup gap between the stored eta increments and the
    trapezoid sums of A_eps^alpha u - alpha u they were built from.
    """
    if sol.eps is None:
        raise ValueError("Penalized solution carries no eps")
    u = sol.u.values
    z = A.resolvent(sol.eps, u)
    yosida = (u - z) / sol.eps
    drift = yosida - A.alpha * u
    expected = 0.5 * sol.grid.steps[:, None] * (drift[:-1] + drift[1:])
    defect = float(np.max(np.abs(np.diff(sol.eta.values, axis=0) - expected))) if len(sol.grid) > 1 else 0.0
    return z, yosida - A.alpha * z, defect


def verify_vi(
    sol: GenSolution,
    A: MonotoneOperator,
    alpha: float | None = None,
    pairs: Tuple[np.ndarray, np.ndarray] | None = None,
    tol: float = 1e-8,
    n_intervals: int = 64,
    n_graph: int = 128,
    seed: int = 0,
) -> CheckReport:
    """Discrete Stieltjes form of the variational inequality for (u, eta).

    For graph points [x, y] and grid times s < t the right-endpoint sum of
    (u - x, d eta - y dt) + alpha |u - x|^2 dt must be nonnegative.

    Penalized solutions satisfy the inclusion at J_eps u rather than at u, so
    there the sum runs over the resolvent path with the trapezoid halves of
    each step, and the stored eta must match the penalized field to `tol`.
    """
    alpha = A.alpha if alpha is None else float(alpha)
    space = A.space
    rng = np.random.default_rng(seed)
    if pairs is None:
        scale = 1.0 + float(np.max(np.abs(sol.u.values)))
        pairs = A.sample_graph(rng, n_graph, scale=scale)
    x, y = (np.asarray(p, dtype=float).reshape(-1, space.dim) for p in pairs)
    steps = sol.grid.steps

    def pairing(points: np.ndarray, d_eta: np.ndarray, weights: np.ndarray) -> np.ndarray:
        gap = points[:, None, :] - x[None, :, :]
        terms = np.asarray(space.inner(gap, d_eta[:, None, :] - weights[:, None, None] * y[None, :, :]))
        return terms + alpha * weights[:, None] * np.asarray(space.inner(gap, gap))

    defect = 0.0
    if sol.scheme == PENALIZED:
        form = "resolvent_path"
        z, section, defect = penalized_section(sol, A)
        half = 0.5 * steps
        terms = pairing(z[:-1], half[:, None] * section[:-1], half) + pairing(z[1:], half[:, None] * section[1:], half)
    else:
        form = "solution_path"
        terms = pairing(sol.u.values[1:], _net_increments(sol, alpha), steps)
    cum = np.vstack([np.zeros((1, x.shape[0])), np.cumsum(terms, axis=0)])
    n_nodes = len(sol.grid)
    s_idx = rng.integers(0, n_nodes - 1, size=n_intervals)
    t_idx = np.minimum(s_idx + 1 + rng.integers(0, n_nodes - 1, size=n_intervals), n_nodes - 1)
    s_idx = np.append(s_idx, 0)
    t_idx = np.append(t_idx, n_nodes - 1)
    lhs = cum[t_idx] - cum[s_idx]
    worst = float(np.min(lhs))
    value = worst if defect <= tol else min(worst, -defect)
    return CheckReport(
        name="variational_inequality",
        passed=bool(worst >= -tol and defect <= tol),
        value=value,
        threshold=-tol,
        details={
            "form": form,
            "eta_defect": defect,
            "n_intervals": int(s_idx.size),
            "n_graph": int(x.shape[0]),
            "alpha": alpha,
        },
    )


def stability_components(p1: DetProblem, p2: DetProblem, s1: GenSolution, s2: GenSolution) -> Dict[str, float]:
    """Left side and the four input-difference terms of the continuous-dependence estimate."""
    _validate_alignment(s1.grid, s2.grid)
    space = p1.space
    grid = s1.grid
    lhs = float(np.max(np.atleast_1d(space.norm_h(s1.u.values - s2.u.values))) ** 2)
    du0 = float(space.norm_h(p1.u0 - p2.u0)) ** 2
    df = p1.f.at(grid.t[:-1]) - p2.f.at(grid.t[:-1])
    df_l1 = float(np.sum(np.atleast_1d(space.norm_h(df)) * grid.steps)) ** 2 if grid.n_steps else 0.0
    dM = p1.M.at(grid.t) - p2.M.at(grid.t)
    dM_h = float(np.max(np.atleast_1d(space.norm_h(dM)))) ** 2
    dM_x = float(np.max(np.atleast_1d(space.norm_x(dM))))
    deta_bv = float(variation_values(s1.eta.values - s2.eta.values, NormKind.XSTAR, space)[-1])
    return {
        "lhs": lhs,
        "u0": du0,
        "f_l1_sq": df_l1,
        "M_sup_sq": dM_h,
        "M_eta_cross": dM_x * deta_bv,
    }


def check_stability_pair(s1: GenSolution, s2: GenSolution, inputs1: DetProblem, inputs2: DetProblem) -> CheckReport:
    """Fit C_hat = LHS / RHS for one perturbation; identical inputs give LHS = 0."""
    comps = stability_components(inputs1, inputs2, s1, s2)
    rhs = comps["u0"] + comps["f_l1_sq"] + comps["M_sup_sq"] + comps["M_eta_cross"]
    if rhs > 0:
        c_hat = comps["lhs"] / rhs
    else:
        c_hat = 0.0 if comps["lhs"] <= 1e-24 else float("inf")
    return CheckReport(
        name="stability_pair",
        passed=bool(np.isfinite(c_hat)),
        value=c_hat,
        threshold=float("inf"),
        details={**comps, "rhs": rhs},
    )


def check_apriori(sol: GenSolution, audit: H1Audit, problem: DetProblem, tol: float = 1e-8) -> CheckReport:
    """Energy inequality implied by the coercivity constants, evaluated at every grid time.

    |u - M - h0|^2 + 2 r0 ||eta||_BV[0,t] <= |u0 - h0|^2 + 2|a2| t + 2|a1| ∫|u|^2
    + 2 ∫(f, u - M - h0) + 2 ∫(M, d eta), right-endpoint sums.
    Also reports the ratio of ||u||_C^2 + ||eta||_BV to 1 + |u0|^2 + ||f||_L1^2 + ||M||_C^2.
    """
    if not audit.feasible:
        raise ValueError(f"Coercivity audit is infeasible (worst violation {audit.worst_violation:.3e})")
    space = problem.space
    grid = sol.grid
    steps = grid.steps
    h0 = np.broadcast_to(np.asarray(audit.h0, dtype=float), (space.dim,))
    u = sol.u.values
    M = problem.M.at(grid.t)
    f_left = problem.f.at(grid.t[:-1])
    d_eta = _net_increments(sol, problem.A.alpha)
    w = u - M - h0
    bv = np.concatenate([[0.0], np.cumsum(np.atleast_1d(space.norm_xstar(d_eta)))])
    lhs = np.atleast_1d(space.inner(w, w)) + 2.0 * audit.r0 * bv
    increments = (
        2.0 * abs(audit.a2) * steps
        + 2.0 * abs(audit.a1) * steps * np.atleast_1d(space.inner(u[1:], u[1:]))
        + 2.0 * steps * np.atleast_1d(space.inner(f_left, w[1:]))
        + 2.0 * np.atleast_1d(space.inner(M[1:], d_eta))
    )
    rhs = float(space.inner(u[0] - h0, u[0] - h0)) + np.concatenate([[0.0], np.cumsum(increments)])
    scale = 1.0 + float(np.max(np.abs(rhs)))
    worst = float(np.max(lhs - rhs))
    u_sup_sq = float(np.max(np.atleast_1d(space.inner(u, u))))
    f_l1 = float(np.sum(np.atleast_1d(space.norm_h(f_left)) * steps))
    m_sup_sq = float(np.max(np.atleast_1d(space.inner(M, M))))
    ratio = (u_sup_sq + sol.bv_eta_xstar) / (1.0 + float(space.inner(u[0], u[0])) + f_l1**2 + m_sup_sq)
    return CheckReport(
        name="apriori_energy",
        passed=worst <= tol * scale,
        value=worst,
        threshold=tol * scale,
        details={"bound_ratio": ratio, "bv_eta": float(bv[-1]), "min_slack": float(np.min(rhs - lhs))},
    )


def stability_sweep(
    problem: DetProblem,
    grid: TimeGrid,
    deltas: Sequence[float] = (0.1, 0.05, 0.025),
    direction: np.ndarray | None = None,
    max_spread: float = 4.0,
) -> Tuple[pd.DataFrame, CheckReport]:
    """Perturb u0 by delta * direction, fit C_hat for each delta and compare the fits.

    Passes when every C_hat is finite and max/min stays within `max_spread`.
    """
    if not deltas:
        raise ValueError("deltas must not be empty")
    space = problem.space
    e = np.zeros(space.dim) if direction is None else np.asarray(direction, dtype=float).reshape(space.dim)
    if direction is None:
        e[0] = 1.0
    base = solve_prox(problem, grid)
    rows = []
    for delta in deltas:
        other = problem.with_inputs(u0=problem.u0 + float(delta) * e)
        report = check_stability_pair(base, solve_prox(other, grid), problem, other)
        rows.append({"delta": float(delta), "lhs": report.details["lhs"], "rhs": report.details["rhs"], "c_hat": report.value})
    table = pd.DataFrame(rows)
    spread = spread_ratio(table["c_hat"].to_numpy())
    finite = bool(np.all(np.isfinite(table["c_hat"].to_numpy())))
    logger.info("Stability sweep over %d perturbations: C_hat spread %.3f", len(rows), spread)
    check = CheckReport(
        name="stability_constant",
        passed=finite and bool(spread <= max_spread),
        value=spread,
        threshold=max_spread,
        details={"c_hat": table["c_hat"].tolist(), "deltas": [float(d) for d in deltas]},
    )
    return table, check


def penalization_sweep(
    problem: DetProblem,
    T: float,
    eps_values: Sequence[float] = (1e-1, 1e-2, 1e-3),
    min_steps: int = 1,
) -> Tuple[pd.DataFrame, CheckReport]:
    """sup_t |u_eps - u| of penalized against prox solutions, each eps on a grid with h <= eps/4.

    The check passes when the sup-errors strictly decrease as eps decreases.
    """
    rows = []
    for eps in sorted((float(e) for e in eps_values), reverse=True):
        steps = max(int(min_steps), int(np.ceil(4.0 * T / eps - 1e-9)))
        grid = TimeGrid.uniform(T, steps)
        pen = solve_penalized(problem, eps, grid)
        ref = solve_prox(problem, grid)
        gap = float(np.max(np.atleast_1d(problem.space.norm_h(pen.u.values - ref.u.values))))
        rows.append({"eps": eps, "steps": steps, "sup_err": gap})
        logger.info("Penalization gap at eps=%.1e: %.3e", eps, gap)
    table = pd.DataFrame(rows)
    errors = table["sup_err"].to_numpy()
    decreasing = bool(np.all(np.diff(errors) < 0)) if errors.size > 1 else True
    check = CheckReport(
        name="penalization_convergence",
        passed=decreasing,
        value=float(errors[-1]),
        threshold=float(errors[0]),
        details={"sup_err": errors.tolist(), "eps": table["eps"].tolist()},
    )
    return table, check
