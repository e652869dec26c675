"""Q-Wiener processes, sampled paths and diffusion coefficients.

W(t) = sum_i sqrt(lambda_i) beta_i(t) e_i over finitely many modes, with
beta_i independent scalar Brownian motions. Ensembles carry a leading path
axis: values have shape (n_paths, n_nodes, dim).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable, Dict, Tuple

import numpy as np
import pandas as pd
from scipy.linalg import eigh

from src.spaces.hspace import HPath, HSpace, TimeGrid
from src.stochastic.rng import GaussianStream, RngSeed

logger = logging.getLogger(__name__)
if not logger.handlers:
    logger.addHandler(logging.NullHandler())


class PathKind(str, Enum):
    WIENER = "Wiener"
    MARTINGALE = "Martingale"
    GENERAL = "General"


@dataclass(frozen=True, eq=False)
class QWienerSpec:
    """Eigenvalues lambda_i >= 0 and H-orthonormal basis rows e_i of Q."""

    space: HSpace
    eigenvalues: np.ndarray
    basis: np.ndarray

    def __post_init__(self) -> None:
        lam = np.atleast_1d(np.asarray(self.eigenvalues, dtype=float))
        basis = np.atleast_2d(np.asarray(self.basis, dtype=float))
        if lam.ndim != 1 or lam.size == 0:
            raise ValueError("eigenvalues must be a non-empty 1-D sequence")
        if np.any(lam < 0) or not np.all(np.isfinite(lam)):
            raise ValueError(f"eigenvalues must be finite and >= 0, got {lam}")
        if basis.shape != (lam.size, self.space.dim):
            raise ValueError(f"basis must have shape ({lam.size}, {self.space.dim}), got {basis.shape}")
        gram = (basis * self.space.weights) @ basis.T
        if not np.allclose(gram, np.eye(lam.size), atol=1e-10, rtol=0.0):
            raise ValueError("basis vectors are not orthonormal in the space inner product")
        lam.setflags(write=False)
        basis.setflags(write=False)
        object.__setattr__(self, "eigenvalues", lam)
        object.__setattr__(self, "basis", basis)

    @classmethod
    def diagonal(cls, space: HSpace, eigenvalues) -> "QWienerSpec":
        """Coordinate eigenvectors e_i = delta_i / sqrt(w_i) for the first len(eigenvalues) axes."""
        lam = np.atleast_1d(np.asarray(eigenvalues, dtype=float))
        if lam.size > space.dim:
            raise ValueError(f"At most {space.dim} modes fit in the space, got {lam.size}")
        basis = np.zeros((lam.size, space.dim))
        idx = np.arange(lam.size)
        basis[idx, idx] = 1.0 / np.sqrt(space.weights[idx])
        return cls(space, lam, basis)

    @classmethod
    def from_covariance(cls, space: HSpace, covariance: np.ndarray, rel_tol: float = 1e-12) -> "QWienerSpec":
        """Karhunen-Loeve modes of a covariance operator Q self-adjoint in the weighted product.

        Modes with eigenvalue below rel_tol * max eigenvalue are dropped.
        """
        Q = np.asarray(covariance, dtype=float)
        if Q.shape != (space.dim, space.dim):
            raise ValueError(f"covariance must be {space.dim}x{space.dim}, got {Q.shape}")
        root = np.sqrt(space.weights)
        sym = root[:, None] * Q / root[None, :]
        if not np.allclose(sym, sym.T, atol=1e-10):
            raise ValueError("covariance is not self-adjoint in the space inner product")
        vals, vecs = eigh(0.5 * (sym + sym.T))
        order = np.argsort(vals)[::-1]
        vals, vecs = vals[order], vecs[:, order]
        if vals[0] < -1e-12 or np.min(vals) < -1e-10 * max(vals[0], 1.0):
            raise ValueError("covariance must be positive semi-definite")
        keep = vals > rel_tol * max(vals[0], 0.0)
        if not np.any(keep):
            keep[0] = True
        basis = (vecs[:, keep] / root[:, None]).T
        return cls(space, np.clip(vals[keep], 0.0, None), basis)

    @property
    def n_modes(self) -> int:
        return int(self.eigenvalues.size)

    @property
    def trace(self) -> float:
        return float(np.sum(self.eigenvalues))

    def covariance(self) -> np.ndarray:
        """Matrix of Q acting on coordinates: Q x = sum lambda_i (x, e_i) e_i."""
        return (self.basis.T * self.eigenvalues) @ (self.basis * self.space.weights)

    def to_dict(self) -> Dict[str, Any]:
        return {"eigenvalues": self.eigenvalues.tolist(), "n_modes": self.n_modes, "trace": self.trace}


@dataclass(frozen=True, eq=False)
class SamplePath:
    """Ensemble of paths on a grid.

    `mode_increments` keeps the scalar Brownian increments d beta of Wiener
    paths (n_paths, n_steps, n_modes) so diffusion integrals can be formed.
    """

    grid: TimeGrid
    values: np.ndarray
    seed: RngSeed | None = None
    kind: PathKind = PathKind.GENERAL
    mode_increments: np.ndarray | None = None
    qwiener: QWienerSpec | None = None

    def __post_init__(self) -> None:
        vals = np.asarray(self.values, dtype=float)
        if vals.ndim == 2:
            vals = vals[None, :, :]
        if vals.ndim != 3 or vals.shape[1] != len(self.grid):
            raise ValueError(
                f"SamplePath values must have shape (n_paths, {len(self.grid)}, dim), got {np.shape(self.values)}"
            )
        kind = PathKind(self.kind)
        if kind is PathKind.WIENER and np.max(np.abs(vals[:, 0, :])) > 0.0:
            raise ValueError("Wiener paths must start at 0")
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "kind", kind)

    @classmethod
    def from_hpath(cls, path: HPath, kind: PathKind = PathKind.GENERAL) -> "SamplePath":
        return cls(path.grid, path.values[None, :, :], kind=kind)

    @property
    def n_paths(self) -> int:
        return int(self.values.shape[0])

    @property
    def dim(self) -> int:
        return int(self.values.shape[2])

    @property
    def t(self) -> np.ndarray:
        return self.grid.t

    @property
    def increments(self) -> np.ndarray:
        return np.diff(self.values, axis=1)

    @property
    def terminal(self) -> np.ndarray:
        return self.values[:, -1, :]

    def path(self, i: int) -> HPath:
        return HPath(self.grid, self.values[i])

    def with_values(self, values: np.ndarray, kind: PathKind | None = None) -> "SamplePath":
        return SamplePath(self.grid, values, self.seed, self.kind if kind is None else kind)

    def to_frame(self, path_index: int = 0, prefix: str = "w") -> pd.DataFrame:
        return self.path(path_index).to_frame(prefix)


class QWienerDriver:
    """Step-wise increments (d beta, dW) for an ensemble, regenerated from the seed."""

    def __init__(self, spec: QWienerSpec, seed: RngSeed, n_paths: int) -> None:
        if int(n_paths) <= 0:
            raise ValueError(f"n_paths must be positive, got {n_paths}")
        self.spec = spec
        self.seed = seed
        self.n_paths = int(n_paths)
        self._stream = GaussianStream(seed, spec.n_modes)
        self._root = np.sqrt(spec.eigenvalues)

    def increment(self, step: int, h: float) -> Tuple[np.ndarray, np.ndarray]:
        """d beta (n_paths, n_modes) and dW = sum sqrt(lambda_i) d beta_i e_i (n_paths, dim)."""
        dbeta = self._stream.normals(step, self.n_paths) * np.sqrt(h)
        return dbeta, (dbeta * self._root) @ self.spec.basis


def sample_qwiener(spec: QWienerSpec, grid: TimeGrid, seed: RngSeed, n_paths: int = 1) -> SamplePath:
    """Simulate n_paths Q-Wiener paths on `grid`, bitwise reproducible from `seed`."""
    driver = QWienerDriver(spec, seed, n_paths)
    steps = grid.steps
    dbeta = np.empty((n_paths, steps.size, spec.n_modes))
    dW = np.empty((n_paths, steps.size, spec.space.dim))
    for k, h in enumerate(steps):
        dbeta[:, k, :], dW[:, k, :] = driver.increment(k, float(h))
    values = np.concatenate([np.zeros((n_paths, 1, spec.space.dim)), np.cumsum(dW, axis=1)], axis=1)
    logger.debug("Sampled %d Q-Wiener paths, %d modes, %d steps", n_paths, spec.n_modes, steps.size)
    return SamplePath(grid, values, seed, PathKind.WIENER, dbeta, spec)


@dataclass
class DiffusionCoefficient:
    """u -> B(t, u) as a (..., dim, n_modes) matrix whose column i is B e_i.

    `lipschitz` is L with |B(u) - B(v)|_Q^2 <= L |u - v|^2 and `growth` is b
    with |B(u)|_Q^2 <= b (1 + |u|^2).
    """

    fn: Callable[[float, np.ndarray], np.ndarray]
    n_modes: int
    lipschitz: float = 0.0
    growth: float = 0.0
    state_independent: bool = False
    name: str = "custom"
    params: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.lipschitz < 0 or self.growth < 0:
            raise ValueError("Declared diffusion constants must be >= 0")

    @classmethod
    def constant(cls, matrix: np.ndarray, spec: QWienerSpec) -> "DiffusionCoefficient":
        """State-independent B given in basis columns (dim, n_modes)."""
        B = np.asarray(matrix, dtype=float).reshape(spec.space.dim, spec.n_modes)
        q_sq = float(np.sum(spec.eigenvalues * np.sum(spec.space.weights[:, None] * B**2, axis=0)))

        def _fn(t: float, u: np.ndarray) -> np.ndarray:
            return np.broadcast_to(B, u.shape[:-1] + B.shape)

        return cls(_fn, spec.n_modes, 0.0, q_sq, True, "constant", {"matrix": B.tolist()})

    @classmethod
    def scaled_identity(cls, sigma: float, spec: QWienerSpec) -> "DiffusionCoefficient":
        """B = sigma * I restricted to the noise modes (column i is sigma e_i)."""
        return cls.constant(float(sigma) * spec.basis.T, spec)

    @classmethod
    def multiplicative(cls, sigma: float, spec: QWienerSpec) -> "DiffusionCoefficient":
        """B(u) e_i = sigma * u_i-component along e_i: column i is sigma (u, e_i) e_i."""
        sigma = float(sigma)
        basis = spec.basis
        weights = spec.space.weights
        lam_max = float(np.max(spec.eigenvalues))

        def _fn(t: float, u: np.ndarray) -> np.ndarray:
            coeff = (u * weights) @ basis.T
            return sigma * coeff[..., None, :] * basis.T

        lip = sigma**2 * lam_max
        return cls(_fn, spec.n_modes, lip, lip, False, "multiplicative", {"sigma": sigma})

    def __call__(self, t: float, u: np.ndarray) -> np.ndarray:
        return self.fn(t, np.asarray(u, dtype=float))

    def apply(self, t: float, u: np.ndarray, dbeta: np.ndarray, spec: QWienerSpec) -> np.ndarray:
        """B(t, u) dW with dW = sum sqrt(lambda_i) d beta_i e_i."""
        scaled = dbeta * np.sqrt(spec.eigenvalues)
        return np.einsum("...dm,...m->...d", self(t, u), scaled)

    def q_norm_sq(self, t: float, u: np.ndarray, spec: QWienerSpec) -> np.ndarray | float:
        """|B(t, u)|_Q^2 = sum_i lambda_i |B e_i|_H^2."""
        cols = self(t, u)
        col_sq = np.sum(spec.space.weights[:, None] * cols**2, axis=-2)
        out = np.sum(spec.eigenvalues * col_sq, axis=-1)
        return float(out) if np.ndim(out) == 0 else out

    def describe(self) -> Dict[str, Any]:
        return {"kind": self.name, "L": self.lipschitz, "b": self.growth, **self.params}
