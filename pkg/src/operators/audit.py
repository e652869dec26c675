"""Numerical audits: the coercivity hypothesis and the resolvent-calculus suite."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, List, Tuple

import numpy as np

from src.analysis.reports import CheckReport
from src.operators.monotone import MonotoneOperator
from src.spaces.hspace import HSpace

logger = logging.getLogger(__name__)
if not logger.handlers:
    logger.addHandler(logging.NullHandler())

GraphSampler = Callable[[np.random.Generator, int], Tuple[np.ndarray, np.ndarray]]


@dataclass
class H1Audit:
    """Candidate constants for r0 ||y||_X* <= (y, x - h0) + a1 |x|^2 + a2 on the graph of A."""

    h0: np.ndarray
    r0: float
    a1: float
    a2: float
    sample_count: int = 0
    worst_violation: float = float("nan")
    details: dict = field(default_factory=dict)

    @property
    def feasible(self) -> bool:
        return bool(np.isfinite(self.worst_violation) and self.worst_violation <= 0.0)

    def to_dict(self) -> dict:
        return {
            "h0": np.atleast_1d(self.h0).tolist(),
            "r0": self.r0,
            "a1": self.a1,
            "a2": self.a2,
            "sample_count": self.sample_count,
            "worst_violation": self.worst_violation,
            "feasible": self.feasible,
        }

    def to_check(self) -> CheckReport:
        return CheckReport(
            name="h1_audit",
            passed=self.feasible,
            value=self.worst_violation,
            threshold=0.0,
            details=self.to_dict(),
        )


def audit_h1(
    A: MonotoneOperator,
    space: HSpace,
    candidate: H1Audit,
    sampler: GraphSampler | None = None,
    n_samples: int = 1000,
    seed: int = 0,
) -> H1Audit:
    """Evaluate the worst violation of the coercivity inequality over sampled graph points."""
    rng = np.random.default_rng(seed)
    draw = sampler or A.sample_graph
    x, y = draw(rng, n_samples)
    h0 = np.broadcast_to(np.asarray(candidate.h0, dtype=float), (space.dim,))
    slack = (
        candidate.r0 * np.atleast_1d(space.norm_xstar(y))
        - np.atleast_1d(space.inner(y, x - h0))
        - candidate.a1 * np.atleast_1d(space.inner(x, x))
        - candidate.a2
    )
    worst = float(np.max(slack)) if slack.size else float("-inf")
    result = H1Audit(
        h0=h0.copy(),
        r0=candidate.r0,
        a1=candidate.a1,
        a2=candidate.a2,
        sample_count=int(slack.size),
        worst_violation=worst,
        details={"worst_index": int(np.argmax(slack)) if slack.size else -1},
    )
    if not result.feasible:
        logger.warning("Coercivity audit infeasible for %s: worst violation %.3e", A.kind, worst)
    return result


def check_yosida_properties(
    A: MonotoneOperator,
    n: int = 1000,
    seed: int = 0,
    eps: float = 0.3,
    delta: float = 0.1,
    scale: float = 2.0,
) -> List[CheckReport]:
    """Resolvent-calculus property suite on random inputs.

    Covers nonexpansiveness of J_eps, the 1/eps Lipschitz bound and monotonicity
    of A_eps, the eps-continuity bound |J_eps x - J_delta x| <= |eps - delta| |A_delta x|
    and |A_eps x| <= |y| for graph points [x, y].
    """
    space = A.space
    slack = 1e-8 if A.iterative else 1e-12
    rng = np.random.default_rng(seed)
    x = rng.normal(scale=scale, size=(n, space.dim))
    y = rng.normal(scale=scale, size=(n, space.dim))
    dist = np.atleast_1d(space.norm_h(x - y))

    jx, jy = A.resolvent(eps, x), A.resolvent(eps, y)
    ax, ay = (x - jx) / eps, (y - jy) / eps

    nonexpansive = np.atleast_1d(space.norm_h(jx - jy)) - dist
    lipschitz = np.atleast_1d(space.norm_h(ax - ay)) - dist / eps
    monotone = -np.atleast_1d(space.inner(ax - ay, x - y))

    j_delta = A.resolvent(delta, x)
    a_delta = (x - j_delta) / delta
    continuity = np.atleast_1d(space.norm_h(jx - j_delta)) - abs(eps - delta) * np.atleast_1d(space.norm_h(a_delta))

    gx, gy = A.sample_graph(rng, n, scale=scale)
    shifted = gy + A.alpha * gx
    bounded = np.atleast_1d(space.norm_h(A.yosida(eps, gx))) - np.atleast_1d(space.norm_h(shifted))

    reports = []
    for name, excess, rel in (
        ("resolvent_nonexpansive", nonexpansive, dist),
        ("yosida_lipschitz", lipschitz, dist / eps),
        ("yosida_monotone", monotone, dist**2 / eps),
        ("resolvent_eps_continuity", continuity, np.atleast_1d(space.norm_h(a_delta))),
        ("yosida_below_graph_norm", bounded, np.atleast_1d(space.norm_h(shifted))),
    ):
        scaled = excess / (1.0 + rel)
        worst = float(np.max(scaled))
        reports.append(
            CheckReport(
                name=name,
                passed=worst <= slack,
                value=worst,
                threshold=slack,
                details={"n": n, "operator": A.kind},
            )
        )
    return reports
