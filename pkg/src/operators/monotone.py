"""(alpha-)maximal monotone operators defined through exact resolvents.

Only the resolvent of the maximal monotone part ``A + alpha*I`` is ever
computed; time steppers add the ``-alpha*I`` correction explicitly.
"""

from __future__ import annotations

import logging
from abc import ABC, abstractmethod
from typing import Any, Callable, Dict, Tuple

import numpy as np
import scipy.sparse as sp
from scipy.linalg import lu_factor, lu_solve
from scipy.sparse.linalg import splu

from src import config as project_config
from src.errors import ConvergenceError, DomainError
from src.operators.convex_sets import ConvexSetSpec
from src.operators.graphs import Graph1D
from src.spaces.hspace import HSpace

logger = logging.getLogger(__name__)
if not logger.handlers:
    logger.addHandler(logging.NullHandler())

SAMPLE_EPS = (0.05, 0.1, 0.5, 1.0)


class MonotoneOperator(ABC):
    """Operator A on a discretized space such that A + alpha*I is maximal monotone.

    Parameters
    ----------
    space:
        The HSpace the operator acts on.
    alpha:
        Shift making ``A + alpha*I`` maximal monotone.
    modulus:
        Declared strong-monotonicity constant a >= 0 of A,
        ``(y1 - y2, x1 - x2) >= a |x1 - x2|^2``.
    """

    kind: str = "abstract"
    iterative: bool = False

    def __init__(self, space: HSpace, alpha: float = 0.0, modulus: float = 0.0) -> None:
        if modulus < 0:
            raise ValueError(f"modulus must be >= 0, got {modulus}")
        if alpha + modulus < 0:
            raise ValueError(f"alpha={alpha} with modulus={modulus} leaves A + alpha*I non-monotone")
        self.space = space
        self.alpha = float(alpha)
        self.modulus = float(modulus)

    @abstractmethod
    def _resolve(self, eps: float, x: np.ndarray) -> np.ndarray:
        """Resolvent of A + alpha*I at step eps (x has trailing axis dim)."""

    def params(self) -> Dict[str, Any]:
        return {}

    def describe(self) -> Dict[str, Any]:
        return {"kind": self.kind, "alpha": self.alpha, "modulus": self.modulus, **self.params()}

    def _validate_eps(self, eps: float) -> float:
        eps = float(eps)
        if not eps > 0:
            raise ValueError(f"eps must be > 0, got {eps}")
        if 1.0 + eps * self.alpha <= 0:
            raise ValueError(f"eps={eps} too large for alpha={self.alpha}: need 1 + eps*alpha > 0")
        return eps

    def resolvent(self, eps: float, x: np.ndarray) -> np.ndarray:
        """J_eps x = (I + eps(A + alpha I))^{-1} x."""
        eps = self._validate_eps(eps)
        xa = np.asarray(x, dtype=float)
        squeeze = xa.ndim == 0
        xa = self.space._check(xa)
        out = self._resolve(eps, xa)
        return out[0] if squeeze else out

    def yosida(self, eps: float, x: np.ndarray) -> np.ndarray:
        """A_eps x = (x - J_eps x) / eps, Lipschitz with constant 1/eps."""
        xa = self.space._check(np.asarray(x, dtype=float))
        return (xa - self.resolvent(eps, xa)) / float(eps)

    def project_domain(self, x: np.ndarray) -> np.ndarray:
        """Approximate projection onto the closure of D(A) via J_eps with tiny eps."""
        return self.resolvent(project_config.DOMAIN_PROJECTION_EPS, x)

    def sample_graph(
        self,
        rng: np.random.Generator,
        n: int,
        scale: float = 2.0,
        eps_values: Tuple[float, ...] = SAMPLE_EPS,
    ) -> Tuple[np.ndarray, np.ndarray]:
        """Graph points [x, y] in A as (J_eps z, A_eps z - alpha J_eps z) over random z, eps."""
        z = rng.normal(scale=scale, size=(n, self.space.dim))
        which = rng.integers(0, len(eps_values), size=n)
        xs = np.empty_like(z)
        ys = np.empty_like(z)
        for k, eps in enumerate(eps_values):
            mask = which == k
            if not np.any(mask):
                continue
            if 1.0 + eps * self.alpha <= 0:
                eps = 0.5 / abs(self.alpha)
            j = self.resolvent(eps, z[mask])
            xs[mask] = j
            ys[mask] = (z[mask] - j) / eps - self.alpha * j
        return xs, ys

    def minimal_section(self, x: np.ndarray, tol: float = 1e-8, max_levels: int = 40) -> np.ndarray:
        """Least-norm element of Ax, extrapolated from A_eps x as eps = 2^-k shrinks."""
        xa = self.space._check(np.asarray(x, dtype=float))
        scale = 1.0 + float(np.max(np.abs(xa)))
        prev_value: np.ndarray | None = None
        prev_extrap: np.ndarray | None = None
        eps = 1.0
        for level in range(max_levels):
            eps = 2.0 ** (-level)
            if 1.0 + eps * self.alpha <= 0:
                continue
            j = self.resolvent(eps, xa)
            value = (xa - j) / eps - self.alpha * xa
            if prev_value is not None:
                # first-order Richardson step removes the O(eps) bias
                extrap = 2.0 * value - prev_value
                if prev_extrap is not None and np.max(np.abs(extrap - prev_extrap)) < tol:
                    return extrap
                prev_extrap = extrap
            prev_value = value
        gap = float(np.max(np.abs(xa - self.resolvent(eps, xa))))
        if gap > 1e-6 * scale:
            raise DomainError(f"Point lies outside D(A): |x - J_eps x| = {gap:.3e} at eps={eps:.1e}")
        raise ConvergenceError(
            f"Minimal section did not settle to tol={tol} within {max_levels} levels",
            {"eps": eps},
        )


class ZeroOperator(MonotoneOperator):
    kind = "zero"

    def _resolve(self, eps: float, x: np.ndarray) -> np.ndarray:
        return x / (1.0 + eps * self.alpha)


class LinearSPD(MonotoneOperator):
    """Linear monotone operator x -> M x (monotone in the weighted product)."""

    kind = "linear"

    def __init__(self, space: HSpace, matrix: np.ndarray, alpha: float = 0.0, modulus: float | None = None) -> None:
        M = np.atleast_2d(np.asarray(matrix, dtype=float))
        if M.shape != (space.dim, space.dim):
            raise ValueError(f"matrix must be {space.dim}x{space.dim}, got {M.shape}")
        w_sqrt = np.sqrt(space.weights)
        WM = space.weights[:, None] * M
        sym = 0.5 * (WM + WM.T) / np.outer(w_sqrt, w_sqrt)
        lowest = float(np.min(np.linalg.eigvalsh(sym)))
        if lowest + alpha < -1e-10:
            raise ValueError(f"matrix + alpha*I is not monotone: smallest eigenvalue {lowest + alpha:.3e}")
        super().__init__(space, alpha, max(lowest, 0.0) if modulus is None else modulus)
        self.matrix = M
        self._factors: Dict[float, tuple] = {}

    @classmethod
    def scalar(cls, lam: float, space: HSpace | None = None, alpha: float = 0.0) -> "LinearSPD":
        space = space or HSpace(1)
        return cls(space, lam * np.eye(space.dim), alpha=alpha)

    def params(self) -> Dict[str, Any]:
        return {"matrix": self.matrix.tolist()}

    def apply(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(x, dtype=float) @ self.matrix.T

    def _resolve(self, eps: float, x: np.ndarray) -> np.ndarray:
        if eps not in self._factors:
            K = np.eye(self.space.dim) + eps * (self.matrix + self.alpha * np.eye(self.space.dim))
            self._factors[eps] = lu_factor(K)
        flat = x.reshape(-1, self.space.dim)
        return lu_solve(self._factors[eps], flat.T).T.reshape(x.shape)


class ScalarGraphOperator(MonotoneOperator):
    """A graph beta applied componentwise."""

    kind = "graph"

    def __init__(self, space: HSpace, graph: Graph1D, alpha: float = 0.0, modulus: float = 0.0) -> None:
        super().__init__(space, alpha, modulus)
        self.graph = graph
        self.iterative = graph.iterative

    def params(self) -> Dict[str, Any]:
        return {"graph": self.graph.name, **self.graph.params}

    def _resolve(self, eps: float, x: np.ndarray) -> np.ndarray:
        shrink = 1.0 + eps * self.alpha
        return self.graph.resolvent(eps / shrink, x / shrink)


class ConvexIndicator(MonotoneOperator):
    """Normal cone of a closed convex set C."""

    kind = "indicator"

    def __init__(self, space: HSpace, convex_set: ConvexSetSpec, alpha: float = 0.0) -> None:
        super().__init__(space, alpha, 0.0)
        self.convex_set = convex_set

    def params(self) -> Dict[str, Any]:
        return {"set": type(self.convex_set).__name__.lower()}

    def _resolve(self, eps: float, x: np.ndarray) -> np.ndarray:
        return self.convex_set.project(x / (1.0 + eps * self.alpha), self.space)


def damped_fixed_point(
    step: Callable[[np.ndarray], np.ndarray],
    y0: np.ndarray,
    scale: float,
    label: str,
) -> np.ndarray:
    """Iterate y <- (1 - theta) y + theta step(y), halving theta when the residual grows."""
    tol = project_config.RESOLVENT_TOL * max(1.0, scale)
    y = y0
    theta = 1.0
    residual_prev = np.inf
    for it in range(project_config.FIXED_POINT_MAX_ITER):
        target = step(y)
        residual = float(np.max(np.abs(target - y))) if target.size else 0.0
        if residual <= tol:
            return target
        if residual > residual_prev:
            theta *= 0.5
        residual_prev = residual
        y = (1.0 - theta) * y + theta * target
    raise ConvergenceError(
        f"{label} resolvent did not converge: residual {residual_prev:.3e} > {tol:.1e}",
        {"iterations": project_config.FIXED_POINT_MAX_ITER, "theta": theta},
    )


class CompositeOperator(MonotoneOperator):
    """A = A0 + dphi with A0 Lipschitz and dphi a graph or normal cone.

    ``a0_scale`` marks the linear case A0 = c*I, which has a closed-form resolvent.
    """

    kind = "composite"

    def __init__(
        self,
        space: HSpace,
        phi: MonotoneOperator,
        a0: Callable[[np.ndarray], np.ndarray] | None = None,
        a0_lipschitz: float = 0.0,
        a0_scale: float | None = None,
        alpha: float = 0.0,
        modulus: float = 0.0,
    ) -> None:
        if a0 is None and a0_scale is None:
            raise ValueError("CompositeOperator needs a0 or a0_scale")
        if phi.alpha != 0.0:
            raise ValueError("phi must be maximal monotone on its own (alpha = 0)")
        if a0_scale is not None and a0_scale + alpha < 0:
            raise ValueError(f"a0_scale + alpha must be >= 0, got {a0_scale + alpha}")
        super().__init__(space, alpha, modulus if a0_scale is None else max(modulus, a0_scale))
        self.phi = phi
        self.a0_scale = a0_scale
        self.a0 = a0 if a0 is not None else (lambda x: a0_scale * x)
        self.a0_lipschitz = abs(a0_scale) if a0_scale is not None else float(a0_lipschitz)
        self.iterative = a0_scale is None or phi.iterative

    def params(self) -> Dict[str, Any]:
        return {"phi": self.phi.describe(), "a0_scale": self.a0_scale, "a0_lipschitz": self.a0_lipschitz}

    def _resolve(self, eps: float, x: np.ndarray) -> np.ndarray:
        if self.a0_scale is not None:
            shrink = 1.0 + eps * (self.alpha + self.a0_scale)
            return self.phi.resolvent(eps / shrink, x / shrink)
        shrink = 1.0 + eps * self.alpha
        inner_eps = eps / shrink
        if inner_eps * self.a0_lipschitz >= 1.0:
            logger.warning("Composite resolvent at eps=%s may not contract (eps*L0=%.3f)", eps, inner_eps * self.a0_lipschitz)

        def step(y: np.ndarray) -> np.ndarray:
            return self.phi.resolvent(inner_eps, (x - eps * self.a0(y)) / shrink)

        return damped_fixed_point(step, self.phi.resolvent(inner_eps, x / shrink), float(np.max(np.abs(x), initial=0.0)), "Composite")


def neumann_stiffness(n_cells: int) -> sp.csc_matrix:
    """Tridiagonal (-1, 2, -1) matrix with Neumann end rows (1, -1)."""
    main = np.full(n_cells, 2.0)
    main[0] = main[-1] = 1.0
    off = -np.ones(n_cells - 1)
    return sp.diags([off, main, off], [-1, 0, 1], format="csc")


def laplacian_space(n_cells: int, smoothing: float = 0.0) -> HSpace:
    """Cell-centred grid on (0, 1) with weights h and the Neumann Laplacian as X-smoother."""
    if n_cells < 2:
        raise ValueError(f"n_cells must be >= 2, got {n_cells}")
    h = 1.0 / n_cells
    smoother = neumann_stiffness(n_cells).toarray() / h**2
    return HSpace(n_cells, weights=np.full(n_cells, h), smoother=smoother, smoothing=smoothing)


class LaplacianBoundary(MonotoneOperator):
    """-u'' + g(u) on (0, 1) with the boundary inclusion du/dn + beta(u) ∋ 0.

    Cell-centred finite volumes; beta acts on the two end cells through the
    boundary flux. ``reaction`` is a Lipschitz map with constant
    ``reaction_lipschitz`` and ``reaction + alpha*I`` monotone.
    """

    kind = "laplacian"

    def __init__(
        self,
        space: HSpace,
        boundary: Graph1D,
        reaction: Callable[[np.ndarray], np.ndarray] | None = None,
        reaction_lipschitz: float = 0.0,
        alpha: float = 0.0,
    ) -> None:
        if space.dim < 2:
            raise ValueError("LaplacianBoundary needs at least 2 cells")
        h = 1.0 / space.dim
        if not np.allclose(space.weights, h):
            raise ValueError("LaplacianBoundary expects uniform weights 1/n_cells (see laplacian_space)")
        super().__init__(space, alpha, 0.0)
        self.h = h
        self.boundary = boundary
        self.reaction = reaction
        self.reaction_lipschitz = float(reaction_lipschitz)
        # the boundary inclusion is always solved by coordinate descent
        self.iterative = True
        self._stiffness = neumann_stiffness(space.dim)
        self._cache: Dict[float, tuple] = {}

    def params(self) -> Dict[str, Any]:
        return {
            "n_cells": self.space.dim,
            "boundary": self.boundary.name,
            **{f"boundary_{k}": v for k, v in self.boundary.params.items()},
            "reaction_lipschitz": self.reaction_lipschitz,
        }

    def _factor(self, eps: float) -> tuple:
        if eps not in self._cache:
            n = self.space.dim
            K = (sp.identity(n, format="csc") + (eps / self.h**2) * self._stiffness).tocsc()
            lu = splu(K)
            ends = np.zeros((n, 2))
            ends[0, 0] = ends[-1, 1] = 1.0
            cols = lu.solve(ends)
            G = cols[[0, -1], :]
            self._cache[eps] = (lu, cols, np.linalg.inv(G))
        return self._cache[eps]

    def _boundary_solve(self, eps: float, z: np.ndarray) -> np.ndarray:
        """Solve y + eps((1/h^2) T y + (1/h) beta at the end cells) ∋ z for rows of z."""
        lu, cols, P = self._factor(eps)
        c = eps / self.h
        w = lu.solve(z.T).T
        w0, wn = w[:, 0], w[:, -1]
        y0, yn = w0.copy(), wn.copy()
        tol = project_config.RESOLVENT_TOL * max(1.0, float(np.max(np.abs(z), initial=0.0)))
        for _ in range(project_config.FIXED_POINT_MAX_ITER):
            y0_new = self.boundary.resolvent(c / P[0, 0], w0 + (P[0, 1] / P[0, 0]) * (wn - yn))
            yn_new = self.boundary.resolvent(c / P[1, 1], wn + (P[1, 0] / P[1, 1]) * (w0 - y0_new))
            change = max(float(np.max(np.abs(y0_new - y0))), float(np.max(np.abs(yn_new - yn))))
            y0, yn = y0_new, yn_new
            if change <= tol:
                break
        else:
            raise ConvergenceError("Boundary inclusion did not converge", {"eps": eps})
        b = np.stack([w0 - y0, wn - yn], axis=1) @ P.T / c
        return w - c * (b @ cols.T)

    def _resolve(self, eps: float, x: np.ndarray) -> np.ndarray:
        shrink = 1.0 + eps * self.alpha
        inner_eps = eps / shrink
        flat = x.reshape(-1, self.space.dim) / shrink
        if self.reaction is None:
            return self._boundary_solve(inner_eps, flat).reshape(x.shape)

        def step(y: np.ndarray) -> np.ndarray:
            return self._boundary_solve(inner_eps, flat - inner_eps * self.reaction(y))

        y = damped_fixed_point(step, self._boundary_solve(inner_eps, flat), float(np.max(np.abs(flat), initial=0.0)), "Laplacian")
        return y.reshape(x.shape)

    def apply_smooth(self, u: np.ndarray) -> np.ndarray:
        """Single-valued part (1/h^2) T u + g(u) for points with boundary values in the graph interior."""
        ua = np.asarray(u, dtype=float)
        out = (self._stiffness @ ua.reshape(-1, self.space.dim).T).T.reshape(ua.shape) / self.h**2
        if self.reaction is not None:
            out = out + self.reaction(ua)
        return out
