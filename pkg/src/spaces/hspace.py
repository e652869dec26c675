"""Finite-dimensional stand-in for the triple X ⊂ H ⊂ X*.

Points are numpy arrays whose trailing axis has length `space.dim`; every
function accepts leading batch axes (paths, samples) and reduces only the
trailing one.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Callable

import numpy as np
import pandas as pd
from scipy.linalg import cho_factor, cho_solve


class NormKind(str, Enum):
    """Which norm to measure with."""

    H = "H"
    X = "X"
    XSTAR = "Xstar"


@dataclass(frozen=True, eq=False)
class HSpace:
    """Weighted Euclidean space with an optional smoothing X-norm.

    Parameters
    ----------
    dim:
        Number of coordinates.
    weights:
        Positive quadrature weights, ``<x, y> = sum(w * x * y)``. Defaults to ones.
    smoother:
        Symmetric positive semi-definite matrix S. When given together with
        ``smoothing > 0`` the X-norm is ``|(I + s S) x|_H`` and the dual norm is
        ``|(I + s S)^{-1} xi|_H``; otherwise both coincide with the H-norm.
    smoothing:
        The scale s >= 0.
    gamma0:
        Declared embedding constant, ``|x|_H <= gamma0 * ||x||_X``.
    """

    dim: int
    weights: np.ndarray | None = None
    smoother: np.ndarray | None = None
    smoothing: float = 0.0
    gamma0: float = 1.0
    _transform: np.ndarray | None = field(init=False, repr=False, default=None)
    _chol: tuple | None = field(init=False, repr=False, default=None)

    def __post_init__(self) -> None:
        if int(self.dim) <= 0:
            raise ValueError(f"dim must be positive, got {self.dim}")
        object.__setattr__(self, "dim", int(self.dim))
        w = np.ones(self.dim) if self.weights is None else np.asarray(self.weights, dtype=float).reshape(-1)
        if w.shape != (self.dim,):
            raise ValueError(f"weights must have length {self.dim}, got {w.shape[0]}")
        if not np.all(w > 0):
            raise ValueError("weights must be strictly positive")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)
        if self.smoothing < 0:
            raise ValueError(f"smoothing must be >= 0, got {self.smoothing}")
        if self.gamma0 <= 0:
            raise ValueError(f"gamma0 must be > 0, got {self.gamma0}")
        if self.smoother is not None:
            S = np.asarray(self.smoother, dtype=float)
            if S.shape != (self.dim, self.dim):
                raise ValueError(f"smoother must be {self.dim}x{self.dim}, got {S.shape}")
            if not np.allclose(S, S.T, atol=1e-12):
                raise ValueError("smoother must be symmetric")
            S.setflags(write=False)
            object.__setattr__(self, "smoother", S)
            if self.smoothing > 0:
                T = np.eye(self.dim) + self.smoothing * S
                object.__setattr__(self, "_transform", T)
                object.__setattr__(self, "_chol", cho_factor(T))

    @classmethod
    def euclidean(cls, dim: int) -> "HSpace":
        return cls(dim=dim)

    @property
    def xnorm_kind(self) -> str:
        return "SpectralSmooth" if self._transform is not None else "SameAsH"

    def _check(self, x: np.ndarray) -> np.ndarray:
        arr = np.asarray(x, dtype=float)
        if arr.ndim == 0 and self.dim == 1:
            arr = arr.reshape(1)
        if arr.shape[-1] != self.dim:
            raise ValueError(f"Point dimension {arr.shape[-1]} does not match space dim {self.dim}")
        return arr

    def inner(self, x: np.ndarray, y: np.ndarray) -> np.ndarray | float:
        """Weighted scalar product over the trailing axis."""
        xa, ya = self._check(x), self._check(y)
        out = np.sum(self.weights * xa * ya, axis=-1)
        return float(out) if np.ndim(out) == 0 else out

    def norm_h(self, x: np.ndarray) -> np.ndarray | float:
        xa = self._check(x)
        out = np.sqrt(np.sum(self.weights * xa * xa, axis=-1))
        return float(out) if np.ndim(out) == 0 else out

    def norm_x(self, x: np.ndarray) -> np.ndarray | float:
        if self._transform is None:
            return self.norm_h(x)
        xa = self._check(x)
        return self.norm_h(xa @ self._transform.T)

    def norm_xstar(self, xi: np.ndarray) -> np.ndarray | float:
        if self._chol is None:
            return self.norm_h(xi)
        xa = self._check(xi)
        flat = xa.reshape(-1, self.dim)
        z = cho_solve(self._chol, flat.T).T
        return self.norm_h(z.reshape(xa.shape))

    def norm(self, x: np.ndarray, kind: NormKind | str = NormKind.H) -> np.ndarray | float:
        kind = NormKind(kind)
        if kind is NormKind.H:
            return self.norm_h(x)
        if kind is NormKind.X:
            return self.norm_x(x)
        return self.norm_xstar(x)

    def embedding_ratio(self, samples: np.ndarray) -> float:
        """Largest observed |x|_H / ||x||_X over nonzero samples."""
        xs = self._check(samples).reshape(-1, self.dim)
        nx = np.atleast_1d(self.norm_x(xs))
        keep = nx > 0
        if not np.any(keep):
            return 0.0
        return float(np.max(np.atleast_1d(self.norm_h(xs))[keep] / nx[keep]))


def inner(space: HSpace, x: np.ndarray, y: np.ndarray) -> np.ndarray | float:
    """Weighted scalar product ``sum(w * x * y)``."""
    return space.inner(x, y)


@dataclass(frozen=True, eq=False)
class TimeGrid:
    """Strictly increasing time nodes starting at 0."""

    t: np.ndarray

    def __post_init__(self) -> None:
        t = np.asarray(self.t, dtype=float).reshape(-1)
        if t.size == 0:
            raise ValueError("TimeGrid needs at least one node")
        if t[0] != 0.0:
            raise ValueError(f"TimeGrid must start at 0, got {t[0]}")
        if t.size > 1 and not np.all(np.diff(t) > 0):
            raise ValueError("TimeGrid nodes must be strictly increasing")
        t.setflags(write=False)
        object.__setattr__(self, "t", t)

    @classmethod
    def uniform(cls, T: float, steps: int) -> "TimeGrid":
        if T <= 0 or steps <= 0:
            raise ValueError(f"Need T > 0 and steps > 0, got T={T}, steps={steps}")
        return cls(np.linspace(0.0, float(T), int(steps) + 1))

    def __len__(self) -> int:
        return int(self.t.size)

    @property
    def T(self) -> float:
        return float(self.t[-1])

    @property
    def steps(self) -> np.ndarray:
        return np.diff(self.t)

    @property
    def h(self) -> float:
        """Largest step."""
        return float(np.max(self.steps)) if len(self) > 1 else 0.0

    @property
    def n_steps(self) -> int:
        return len(self) - 1

    def refine(self, factor: int) -> "TimeGrid":
        """Split every interval into `factor` equal pieces."""
        factor = int(factor)
        if factor < 1:
            raise ValueError(f"factor must be >= 1, got {factor}")
        if len(self) == 1 or factor == 1:
            return self
        frac = np.arange(factor) / factor
        inner_nodes = (self.t[:-1, None] + frac[None, :] * self.steps[:, None]).reshape(-1)
        return TimeGrid(np.append(inner_nodes, self.t[-1]))

    def same_as(self, other: "TimeGrid", tol: float = 1e-12) -> bool:
        return len(self) == len(other) and bool(np.allclose(self.t, other.t, atol=tol, rtol=0.0))


def interpolate_values(t_nodes: np.ndarray, values: np.ndarray, t: np.ndarray) -> np.ndarray:
    """Piecewise-linear interpolation along axis -2 (node axis) of `values`.

    Times outside the node range are clamped to the end values.
    """
    t_nodes = np.asarray(t_nodes, dtype=float)
    tq = np.clip(np.asarray(t, dtype=float), t_nodes[0], t_nodes[-1])
    if t_nodes.size == 1:
        return np.repeat(values[..., :1, :], tq.size, axis=-2)
    idx = np.clip(np.searchsorted(t_nodes, tq, side="right") - 1, 0, t_nodes.size - 2)
    left, right = t_nodes[idx], t_nodes[idx + 1]
    lam = ((tq - left) / (right - left))[:, None]
    return values[..., idx, :] * (1.0 - lam) + values[..., idx + 1, :] * lam


@dataclass(frozen=True, eq=False)
class HPath:
    """One H-point per grid node, piecewise linear in between."""

    grid: TimeGrid
    values: np.ndarray

    def __post_init__(self) -> None:
        vals = np.asarray(self.values, dtype=float)
        if vals.ndim == 1:
            vals = vals[:, None]
        if vals.ndim != 2 or vals.shape[0] != len(self.grid):
            raise ValueError(
                f"HPath values must have shape (n_nodes={len(self.grid)}, dim), got {np.shape(self.values)}"
            )
        object.__setattr__(self, "values", vals)

    @property
    def dim(self) -> int:
        return int(self.values.shape[1])

    @property
    def t(self) -> np.ndarray:
        return self.grid.t

    @classmethod
    def constant(cls, grid: TimeGrid, value: np.ndarray | float) -> "HPath":
        v = np.atleast_1d(np.asarray(value, dtype=float))
        return cls(grid, np.tile(v, (len(grid), 1)))

    @classmethod
    def zeros(cls, grid: TimeGrid, dim: int) -> "HPath":
        return cls(grid, np.zeros((len(grid), dim)))

    @classmethod
    def from_function(cls, grid: TimeGrid, fn: Callable[[float], np.ndarray | float]) -> "HPath":
        return cls(grid, np.array([np.atleast_1d(fn(float(s))) for s in grid.t], dtype=float))

    def at(self, t: np.ndarray | float) -> np.ndarray:
        """Evaluate at one time (returns a point) or many (returns (n, dim))."""
        scalar = np.ndim(t) == 0
        out = interpolate_values(self.grid.t, self.values, np.atleast_1d(t))
        return out[0] if scalar else out

    def resample(self, grid: TimeGrid) -> "HPath":
        if grid.same_as(self.grid):
            return self
        return HPath(grid, self.at(grid.t))

    def to_frame(self, prefix: str = "u") -> pd.DataFrame:
        cols = [f"{prefix}{i}" for i in range(self.dim)]
        df = pd.DataFrame(self.values, columns=cols)
        df.insert(0, "t", self.grid.t)
        return df


def _space_for(dim: int, space: HSpace | None) -> HSpace:
    if space is None:
        return HSpace(dim)
    if space.dim != dim:
        raise ValueError(f"Path dimension {dim} does not match space dim {space.dim}")
    return space


def variation_values(values: np.ndarray, norm: NormKind | str = NormKind.H, space: HSpace | None = None) -> np.ndarray:
    """Running partition-sum variation along the node axis of `values` (..., n_nodes, dim)."""
    vals = np.asarray(values, dtype=float)
    sp = _space_for(vals.shape[-1], space)
    jumps = np.asarray(sp.norm(np.diff(vals, axis=-2), norm))
    zero = np.zeros(jumps.shape[:-1] + (1,))
    return np.concatenate([zero, np.cumsum(jumps, axis=-1)], axis=-1)


def bv_norm(path: HPath, norm: NormKind | str = NormKind.H, space: HSpace | None = None) -> float:
    """Partition sum of jumps over the path's own grid (a lower bound of the true BV norm)."""
    if len(path.grid) < 2:
        return 0.0
    return float(variation_values(path.values, norm, space)[-1])


def modulus_of_continuity(
    path: HPath,
    delta: float,
    norm: NormKind | str = NormKind.H,
    space: HSpace | None = None,
) -> float:
    """sup of ||path(t) - path(s)|| over grid pairs with |t - s| <= delta."""
    if delta <= 0:
        raise ValueError(f"delta must be > 0, got {delta}")
    t = path.grid.t
    sp = _space_for(path.dim, space)
    reach = delta * (1.0 + 1e-12) + 1e-12
    best = 0.0
    for lag in range(1, t.size):
        mask = (t[lag:] - t[:-lag]) <= reach
        if not np.any(mask):
            break
        diffs = path.values[lag:][mask] - path.values[:-lag][mask]
        best = max(best, float(np.max(np.atleast_1d(sp.norm(diffs, norm)))))
    return best
