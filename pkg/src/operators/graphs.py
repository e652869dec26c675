"""Scalar maximal monotone graphs beta ⊂ R x R and their resolvents.

Each graph is applied componentwise. Closed-form resolvents are used where
available; the rest solve ``y + eps * beta(y) = x`` by vectorized bisection.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable, Dict

import numpy as np

from src import config as project_config

ResolventFn = Callable[[float, np.ndarray], np.ndarray]


@dataclass(frozen=True)
class Graph1D:
    """Scalar graph defined through its resolvent ``(eps, x) -> y``."""

    name: str
    resolvent_fn: ResolventFn
    ymax: float | None = None
    iterative: bool = False
    params: Dict[str, Any] = field(default_factory=dict)

    def resolvent(self, eps: float, x: np.ndarray | float) -> np.ndarray:
        if eps <= 0:
            raise ValueError(f"eps must be > 0, got {eps}")
        return self.resolvent_fn(float(eps), np.asarray(x, dtype=float))

    def yosida(self, eps: float, x: np.ndarray | float) -> np.ndarray:
        xa = np.asarray(x, dtype=float)
        return (xa - self.resolvent(eps, xa)) / eps


def bisect_increasing(
    fn: Callable[[np.ndarray], np.ndarray],
    lo: np.ndarray,
    hi: np.ndarray,
    tol: float | None = None,
    max_iter: int = 200,
) -> np.ndarray:
    """Vectorized bisection for the root of an increasing function on [lo, hi]."""
    tol = project_config.BISECTION_TOL if tol is None else tol
    lo = np.array(lo, dtype=float, copy=True)
    hi = np.array(hi, dtype=float, copy=True)
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        below = fn(mid) < 0.0
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
        if np.all(hi - lo <= tol * (1.0 + np.abs(mid))):
            break
    return 0.5 * (lo + hi)


def sign_graph(scale: float = 1.0) -> Graph1D:
    """Subdifferential of scale*|y|; resolvent is soft thresholding."""
    if scale < 0:
        raise ValueError(f"scale must be >= 0, got {scale}")

    def _res(eps: float, x: np.ndarray) -> np.ndarray:
        return np.sign(x) * np.maximum(np.abs(x) - eps * scale, 0.0)

    return Graph1D("sign", _res, ymax=scale, params={"scale": scale})


def power_graph(p: float = 3.0, scale: float = 1.0) -> Graph1D:
    """beta(y) = scale*|y|^(p-1)*y for p >= 1."""
    if p < 1 or scale < 0:
        raise ValueError(f"power graph needs p >= 1 and scale >= 0, got p={p}, scale={scale}")

    def _res(eps: float, x: np.ndarray) -> np.ndarray:
        # root lies between 0 and x since beta(y) has the sign of y
        return bisect_increasing(
            lambda y: y + eps * scale * np.abs(y) ** (p - 1.0) * y - x,
            np.minimum(x, 0.0),
            np.maximum(x, 0.0),
        )

    return Graph1D("power", _res, ymax=None, iterative=True, params={"p": p, "scale": scale})


def arctan_graph(scale: float = 1.0) -> Graph1D:
    """Bounded graph beta(y) = scale*arctan(y)."""
    ymax = scale * np.pi / 2.0

    def _res(eps: float, x: np.ndarray) -> np.ndarray:
        return bisect_increasing(
            lambda y: y + eps * scale * np.arctan(y) - x,
            x - eps * ymax,
            x + eps * ymax,
        )

    return Graph1D("arctan", _res, ymax=ymax, iterative=True, params={"scale": scale})


def stefan_graph(latent: float = 1.0) -> Graph1D:
    """Enthalpy graph: beta(y) = y (y < 0), [0, latent] (y = 0), y + latent (y > 0)."""
    if latent < 0:
        raise ValueError(f"latent must be >= 0, got {latent}")

    def _res(eps: float, x: np.ndarray) -> np.ndarray:
        return np.where(
            x < 0.0,
            x / (1.0 + eps),
            np.where(x <= eps * latent, 0.0, (x - eps * latent) / (1.0 + eps)),
        )

    return Graph1D("stefan", _res, params={"latent": latent})


def interval_graph(lo: float = 0.0, hi: float = np.inf) -> Graph1D:
    """Normal cone of [lo, hi]; resolvent is clipping."""
    if lo > hi:
        raise ValueError(f"Empty interval [{lo}, {hi}]")

    def _res(eps: float, x: np.ndarray) -> np.ndarray:
        return np.clip(x, lo, hi)

    return Graph1D("interval", _res, params={"lo": lo, "hi": hi})


GRAPHS: Dict[str, Callable[..., Graph1D]] = {
    "sign": sign_graph,
    "power": power_graph,
    "arctan": arctan_graph,
    "stefan": stefan_graph,
    "interval": interval_graph,
}


def build_graph(name: str, **params: Any) -> Graph1D:
    if name not in GRAPHS:
        raise ValueError(f"Unknown graph {name!r}; expected one of {sorted(GRAPHS)}")
    return GRAPHS[name](**params)
