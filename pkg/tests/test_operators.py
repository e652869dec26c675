"""Tests for the resolvent-defined operator library and the coercivity audit."""

from __future__ import annotations

import sys
from pathlib import Path

import numpy as np
import pytest

ROOT = Path(__file__).resolve().parents[1]
if str(ROOT) not in sys.path:
    sys.path.append(str(ROOT))

from src.errors import DomainError  # noqa: E402
from src.operators.audit import H1Audit, audit_h1, check_yosida_properties  # noqa: E402
from src.operators.convex_sets import Ball, Box, HalfSpace  # noqa: E402
from src.operators.graphs import (  # noqa: E402
    arctan_graph,
    interval_graph,
    power_graph,
    sign_graph,
    stefan_graph,
)
from src.operators.monotone import (  # noqa: E402
    CompositeOperator,
    ConvexIndicator,
    LaplacianBoundary,
    LinearSPD,
    ScalarGraphOperator,
    ZeroOperator,
    laplacian_space,
)
from src.spaces.hspace import HSpace  # noqa: E402

SCALAR = HSpace(1)


def _half_line() -> ScalarGraphOperator:
    return ScalarGraphOperator(SCALAR, interval_graph(0.0, np.inf))


def test_resolvent_examples():
    assert float(LinearSPD.scalar(1.0).resolvent(1.0, 2.0)) == pytest.approx(1.0)
    assert float(_half_line().resolvent(0.7, -3.0)) == pytest.approx(0.0)
    assert float(ScalarGraphOperator(SCALAR, sign_graph()).resolvent(0.5, 2.0)) == pytest.approx(1.5)


def test_soft_threshold_matches_grid_minimization():
    grid = np.linspace(-5.0, 5.0, 200001)
    for x in (-2.3, -0.2, 0.0, 0.4, 2.0):
        objective = (grid - x) ** 2 / (2 * 0.5) + np.abs(grid)
        expected = grid[np.argmin(objective)]
        got = float(ScalarGraphOperator(SCALAR, sign_graph()).resolvent(0.5, x))
        assert got == pytest.approx(expected, abs=1e-4)


def test_yosida_examples():
    assert float(ScalarGraphOperator(SCALAR, sign_graph()).yosida(0.5, 2.0)[0]) == pytest.approx(1.0)
    assert float(LinearSPD.scalar(1.0).yosida(1.0, 2.0)[0]) == pytest.approx(1.0)
    for eps in (0.01, 1.0, 10.0):
        assert float(_half_line().yosida(eps, 5.0)[0]) == pytest.approx(0.0)


def test_minimal_section_examples():
    assert float(ScalarGraphOperator(SCALAR, sign_graph()).minimal_section(0.0)[0]) == pytest.approx(0.0)
    assert float(_half_line().minimal_section(0.0)[0]) == pytest.approx(0.0)
    space = HSpace(2)
    M = np.array([[2.0, 0.5], [0.5, 1.0]])
    x = np.array([1.0, -2.0])
    assert np.allclose(LinearSPD(space, M).minimal_section(x), M @ x, atol=1e-6)
    assert float(ScalarGraphOperator(SCALAR, sign_graph()).minimal_section(0.5)[0]) == pytest.approx(1.0)


def test_minimal_section_outside_domain_raises():
    with pytest.raises(DomainError):
        _half_line().minimal_section(-1.0)


def test_resolvent_rejects_nonpositive_eps():
    with pytest.raises(ValueError):
        ZeroOperator(SCALAR).resolvent(0.0, 1.0)


def test_scalar_graphs_are_monotone_and_nonexpansive():
    x = np.linspace(-6.0, 6.0, 301)
    for graph in (sign_graph(), power_graph(3.0), arctan_graph(2.0), stefan_graph(1.5), interval_graph(-1.0, 2.0)):
        y = graph.resolvent(0.4, x)
        assert np.all(np.diff(y) >= -1e-10), graph.name
        assert np.all(np.abs(np.diff(y)) <= np.abs(np.diff(x)) + 1e-10), graph.name


def test_power_and_stefan_resolvents_solve_inclusion():
    x = np.array([-3.0, -0.1, 0.0, 0.7, 4.0])
    y = power_graph(3.0).resolvent(0.5, x)
    assert np.allclose(y + 0.5 * y**3, x, atol=1e-10)
    ys = stefan_graph(2.0).resolvent(0.5, np.array([-1.0, 0.5, 3.0]))
    assert np.allclose(ys, [-1.0 / 1.5, 0.0, (3.0 - 1.0) / 1.5])


def test_convex_projections_are_idempotent_and_nonexpansive():
    space = HSpace(3, weights=[1.0, 2.0, 0.5])
    rng = np.random.default_rng(4)
    x = rng.normal(scale=3.0, size=(500, 3))
    y = rng.normal(scale=3.0, size=(500, 3))
    for cset in (Box(-1.0, 1.0), Ball(np.zeros(3), 1.5), HalfSpace(np.array([1.0, -1.0, 0.5]), 0.3)):
        px, py = cset.project(x, space), cset.project(y, space)
        assert np.allclose(cset.project(px, space), px)
        assert np.all(space.norm_h(px - py) <= space.norm_h(x - y) + 1e-12)


@pytest.mark.parametrize(
    "operator",
    [
        ZeroOperator(HSpace(2), alpha=0.5),
        LinearSPD(HSpace(2, weights=[1.0, 3.0]), np.array([[2.0, 0.3], [0.1, 1.0]])),
        ScalarGraphOperator(HSpace(2), sign_graph(), alpha=0.5),
        ScalarGraphOperator(HSpace(2), power_graph(3.0)),
        ScalarGraphOperator(HSpace(2), arctan_graph()),
        ScalarGraphOperator(HSpace(2), stefan_graph(1.0)),
        ConvexIndicator(HSpace(2), Ball(np.zeros(2), 1.0)),
        CompositeOperator(HSpace(1), _half_line(), a0_scale=1.0),
        CompositeOperator(HSpace(2), ScalarGraphOperator(HSpace(2), sign_graph()), a0=lambda y: 0.5 * np.tanh(y), a0_lipschitz=0.5),
        LaplacianBoundary(laplacian_space(8), sign_graph(), alpha=0.0),
        LaplacianBoundary(laplacian_space(8), power_graph(3.0), reaction=np.sin, reaction_lipschitz=1.0, alpha=1.0),
    ],
    ids=lambda op: op.kind,
)
def test_resolvent_calculus_suite(operator):
    for report in check_yosida_properties(operator, n=1000, seed=5):
        assert report.passed, (report.name, report.value)


def test_composite_closed_form_matches_iteration():
    half = _half_line()
    exact = CompositeOperator(SCALAR, half, a0_scale=1.0)
    iterated = CompositeOperator(SCALAR, half, a0=lambda y: 1.0 * y, a0_lipschitz=1.0)
    x = np.linspace(-3.0, 3.0, 13)[:, None]
    assert np.allclose(exact.resolvent(0.5, x), iterated.resolvent(0.5, x), atol=1e-9)


def test_laplacian_resolvent_solves_discrete_inclusion():
    space = laplacian_space(10)
    op = LaplacianBoundary(space, interval_graph(-0.5, 0.5))
    rng = np.random.default_rng(6)
    x = rng.normal(size=10)
    y = op.resolvent(0.2, x)
    interior = (y + 0.2 * op.apply_smooth(y) - x)[1:-1]
    assert np.allclose(interior, 0.0, atol=1e-9)
    assert np.all(np.abs(y[[0, -1]]) <= 0.5 + 1e-12)


def test_sample_graph_points_lie_on_graph():
    op = ScalarGraphOperator(SCALAR, sign_graph())
    x, y = op.sample_graph(np.random.default_rng(7), 200)
    nonzero = np.abs(x[:, 0]) > 1e-12
    assert np.allclose(y[nonzero, 0], np.sign(x[nonzero, 0]))
    assert np.all(np.abs(y[~nonzero, 0]) <= 1.0 + 1e-12)


def test_audit_zero_operator_feasible():
    audit = audit_h1(ZeroOperator(SCALAR), SCALAR, H1Audit(h0=np.zeros(1), r0=1.0, a1=0.1, a2=0.1))
    assert audit.feasible
    assert audit.sample_count == 1000


def test_audit_interval_indicator_feasible():
    op = ScalarGraphOperator(SCALAR, interval_graph(-1.0, 1.0))
    audit = audit_h1(op, SCALAR, H1Audit(h0=np.zeros(1), r0=0.5, a1=1.0, a2=1.0))
    assert audit.feasible
    assert audit.worst_violation < 0


def test_audit_reports_infeasible_constants():
    op = ScalarGraphOperator(SCALAR, interval_graph(-1.0, 1.0))
    audit = audit_h1(op, SCALAR, H1Audit(h0=np.zeros(1), r0=5.0, a1=0.0, a2=0.0))
    assert not audit.feasible


def test_audit_laplacian_records_constants():
    space = laplacian_space(8, smoothing=0.01)
    op = LaplacianBoundary(space, interval_graph(-1.0, 1.0))
    audit = audit_h1(op, space, H1Audit(h0=np.zeros(8), r0=0.05, a1=1.0, a2=1.0), n_samples=200)
    assert audit.sample_count == 200
    assert np.isfinite(audit.worst_violation)
