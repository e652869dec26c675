"""Closed convex sets with projections in the weighted inner product."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from src.spaces.hspace import HSpace


@dataclass(frozen=True, eq=False)
class Box:
    lo: np.ndarray | float
    hi: np.ndarray | float

    def __post_init__(self) -> None:
        if np.any(np.asarray(self.lo) > np.asarray(self.hi)):
            raise ValueError("Box needs lo <= hi in every coordinate")

    def project(self, x: np.ndarray, space: HSpace) -> np.ndarray:
        # diagonal weights keep the projection separable
        return np.clip(x, self.lo, self.hi)


@dataclass(frozen=True, eq=False)
class Ball:
    center: np.ndarray | float
    radius: float

    def __post_init__(self) -> None:
        if self.radius < 0:
            raise ValueError(f"Ball radius must be >= 0, got {self.radius}")

    def project(self, x: np.ndarray, space: HSpace) -> np.ndarray:
        c = np.broadcast_to(np.asarray(self.center, dtype=float), (space.dim,))
        d = x - c
        dist = np.asarray(space.norm_h(d))
        scale = np.where(dist > self.radius, self.radius / np.maximum(dist, 1e-300), 1.0)
        return c + d * scale[..., None]


@dataclass(frozen=True, eq=False)
class HalfSpace:
    """{x : <normal, x> <= offset}."""

    normal: np.ndarray
    offset: float

    def project(self, x: np.ndarray, space: HSpace) -> np.ndarray:
        n = np.broadcast_to(np.asarray(self.normal, dtype=float), (space.dim,))
        nn = space.inner(n, n)
        if nn <= 0:
            raise ValueError("HalfSpace normal must be nonzero")
        excess = np.maximum(np.asarray(space.inner(x, n)) - self.offset, 0.0)
        return x - (excess / nn)[..., None] * n


ConvexSetSpec = Box | Ball | HalfSpace


def build_convex_set(kind: str, **params) -> ConvexSetSpec:
    kinds = {"box": Box, "ball": Ball, "halfspace": HalfSpace}
    if kind not in kinds:
        raise ValueError(f"Unknown convex set {kind!r}; expected one of {sorted(kinds)}")
    return kinds[kind](**params)
