"""Tests for the stochastic generalized-solution solvers."""

from __future__ import annotations

import dataclasses
import sys
from pathlib import Path

import numpy as np
import pandas as pd
import pytest

ROOT = Path(__file__).resolve().parents[1]
if str(ROOT) not in sys.path:
    sys.path.append(str(ROOT))

from src.analysis.metrics import relative_error  # noqa: E402
from src.errors import StepSizeError  # noqa: E402
from src.operators.convex_sets import Box  # noqa: E402
from src.operators.graphs import interval_graph  # noqa: E402
from src.operators.monotone import (  # noqa: E402
    CompositeOperator,
    ConvexIndicator,
    LinearSPD,
    ScalarGraphOperator,
    ZeroOperator,
)
from src.solvers.deterministic import DetProblem, discrete_reflection, solve_penalized  # noqa: E402
from src.solvers.sde import (  # noqa: E402
    Drift,
    SdeProblem,
    check_coupled_comparison,
    check_moment_bounds,
    check_penalization_gaps,
    check_picard_contraction,
    contraction_weight,
    penalization_sweep_sde,
    picard_norm,
    solve_gs_additive,
    solve_msde,
    solve_sde_penalized,
    solve_sde_prox,
)
from src.spaces.hspace import HSpace, TimeGrid  # noqa: E402
from src.stochastic.integrals import integrate_diffusion  # noqa: E402
from src.stochastic.rng import RngSeed  # noqa: E402
from src.stochastic.wiener import DiffusionCoefficient, QWienerDriver, QWienerSpec, sample_qwiener  # noqa: E402

SCALAR = HSpace(1)
SPEC = QWienerSpec.diagonal(SCALAR, [1.0])


def _half_line() -> ScalarGraphOperator:
    return ScalarGraphOperator(SCALAR, interval_graph(0.0, np.inf))


def _problem(A, sigma: float = 0.5, u0: float = 1.0, T: float = 1.0, multiplicative: bool = False, f=None) -> SdeProblem:
    B = DiffusionCoefficient.multiplicative(sigma, SPEC) if multiplicative else DiffusionCoefficient.scaled_identity(sigma, SPEC)
    return SdeProblem(SCALAR, A, np.array([u0]), f or Drift.zero(1), B, SPEC, T)


def _reflected_ou(u0: float = 1.0) -> SdeProblem:
    return _problem(CompositeOperator(SCALAR, _half_line(), a0_scale=1.0), u0=u0)


def test_gs_additive_matches_reflection_oracle():
    grid = TimeGrid.uniform(1.0, 500)
    W = sample_qwiener(SPEC, grid, RngSeed(1), 100)
    problem = _problem(_half_line(), sigma=1.0, u0=0.0)
    sol = solve_gs_additive(problem, W, grid)
    oracle = discrete_reflection(W.values[..., 0])
    assert np.max(np.abs(sol.u[..., 0] - oracle)) <= 1e-10
    assert sol.residual_identity <= 1e-10
    assert np.all(sol.u >= -1e-12)


def test_gs_additive_zero_operator_is_free_motion():
    grid = TimeGrid.uniform(1.0, 100)
    W = sample_qwiener(SPEC, grid, RngSeed(2), 20)
    sol = solve_gs_additive(_problem(ZeroOperator(SCALAR), u0=0.3), W, grid)
    assert np.allclose(sol.u, 0.3 + W.values, atol=1e-12)


def test_gs_additive_projection_sweep_decreases():
    space = HSpace(4)
    spec = QWienerSpec.diagonal(space, [1.0, 0.5, 0.25, 0.125])
    A = ConvexIndicator(space, Box(-1.0, 1.0))
    B = DiffusionCoefficient.scaled_identity(1.0, spec)
    problem = SdeProblem(space, A, np.zeros(4), Drift.zero(4), B, spec, 1.0)
    grid = TimeGrid.uniform(1.0, 100)
    M = integrate_diffusion(B, sample_qwiener(spec, grid, RngSeed(3), 200))
    full = solve_gs_additive(problem, M, grid, k=4)
    gaps = [float(np.mean(np.max(np.sum((solve_gs_additive(problem, M, grid, k=k).u - full.u) ** 2, axis=2), axis=1))) for k in range(1, 5)]
    assert all(b < a for a, b in zip(gaps, gaps[1:-1]))
    assert gaps[-1] == 0.0
    auto = solve_gs_additive(problem, M, grid, projection_tol=0.0)
    assert auto.diagnostics["k"] == 4
    assert len(auto.diagnostics["projection_gaps"]) == 3


def test_gs_additive_rejects_state_dependent_drift():
    grid = TimeGrid.uniform(1.0, 10)
    W = sample_qwiener(SPEC, grid, RngSeed(4), 2)
    problem = _problem(ZeroOperator(SCALAR), f=Drift.linear(np.array([[-1.0]])))
    with pytest.raises(ValueError):
        solve_gs_additive(problem, W, grid)


def test_penalized_ou_against_exact_transition():
    a, sigma, n = 1.0, 0.5, 1000
    grid = TimeGrid.uniform(1.0, 100)
    h = grid.h
    problem = _problem(LinearSPD.scalar(a), sigma=sigma)
    seed = RngSeed(5)
    driver = QWienerDriver(SPEC, seed, n)
    exact = np.empty((n, len(grid)))
    exact[:, 0] = 1.0
    for k in range(grid.n_steps):
        xi = driver.increment(k, h)[0][:, 0] / np.sqrt(h)
        exact[:, k + 1] = np.exp(-a * h) * exact[:, k] + sigma * np.sqrt((1 - np.exp(-2 * a * h)) / (2 * a)) * xi
    gaps = []
    for eps in (0.08, 0.04):
        sol = solve_sde_penalized(problem, eps, grid, seed, n)
        gap = float(np.mean(np.max((sol.u[..., 0] - exact) ** 2, axis=1)))
        assert gap <= h + eps
        gaps.append(gap)
        assert np.isfinite(sol.diagnostics["moment_ratio_p1"])
    assert gaps[1] < gaps[0]


def test_penalized_without_noise_matches_deterministic_solver():
    grid = TimeGrid.uniform(2.0, 800)
    eps = 0.01
    B = DiffusionCoefficient.constant(np.zeros((1, 1)), SPEC)
    problem = SdeProblem(SCALAR, _half_line(), np.array([1.0]), Drift.constant(-1.0, 1), B, SPEC, 2.0)
    sol = solve_sde_penalized(problem, eps, grid, RngSeed(6), 3)
    det = solve_penalized(DetProblem.simple(_half_line(), 1.0, grid, f=-1.0), eps, grid)
    for i in range(3):
        assert np.allclose(sol.u[i], det.u.values, atol=1e-12)
        assert np.allclose(sol.eta[i], det.eta.values, atol=1e-12)


def test_penalization_sweep_on_reflected_ou():
    grid = TimeGrid.uniform(1.0, 80)
    table = penalization_sweep_sde(_reflected_ou(), grid, [0.2, 0.1, 0.05], RngSeed(7), 300)
    assert list(table.columns[:3]) == ["eps", "sup_gap", "sup_gap_se"]
    gaps = table["sup_gap"].to_numpy()
    assert np.all(np.diff(gaps) < 0)


def test_prox_sde_identity_domain_and_determinism():
    grid = TimeGrid.uniform(1.0, 200)
    problem = _reflected_ou(0.2)
    a = solve_sde_prox(problem, grid, RngSeed(8), 50)
    b = solve_sde_prox(problem, grid, RngSeed(8), 50)
    assert np.array_equal(a.u, b.u)
    assert a.residual_identity <= 1e-12
    assert np.all(a.u >= 0.0)
    assert a.path(3).u.values.shape == (len(grid), 1)
    frame = a.mean_frame()
    assert list(frame.columns) == ["t", "u0", "second_moment"]


def test_prox_sde_stride_records_subset():
    grid = TimeGrid.uniform(1.0, 100)
    problem = _problem(LinearSPD.scalar(1.0))
    full = solve_sde_prox(problem, grid, RngSeed(9), 10)
    thin = solve_sde_prox(problem, grid, RngSeed(9), 10, stride=10)
    assert len(thin.grid) == 11
    assert np.array_equal(thin.u, full.u[:, ::10])
    assert thin.residual_identity <= 1e-12


def test_blowup_guard_aborts_paths():
    grid = TimeGrid.uniform(1.0, 10)
    B = DiffusionCoefficient.constant(np.zeros((1, 1)), SPEC)
    problem = SdeProblem(SCALAR, ZeroOperator(SCALAR), np.array([1.0]), Drift.linear(np.array([[50.0]])), B, SPEC, 1.0)
    sol = solve_sde_prox(problem, grid, RngSeed(10), 2)
    assert sol.n_aborted == 2
    assert sol.diagnostics["abort_steps"] == [9, 9]
    assert np.all(np.isfinite(sol.u))


def test_msde_multiplicative_second_moment_and_contraction():
    grid = TimeGrid.uniform(2.0, 200)
    problem = _problem(LinearSPD.scalar(1.0), multiplicative=True)
    assert problem.B.lipschitz == pytest.approx(0.25)
    sol = solve_msde(problem, grid, RngSeed(11), 10000)
    assert sol.diagnostics["a_weight"] == pytest.approx(6.0)
    assert sol.picard_iters <= 12
    second = float(np.mean(sol.u[:, -1, 0] ** 2))
    assert relative_error(second, np.exp(-3.5)) <= 0.10
    report = check_picard_contraction(sol)
    assert report.passed, report.to_dict()


def test_msde_additive_is_gs_after_one_more_iteration():
    grid = TimeGrid.uniform(1.0, 100)
    problem = _reflected_ou(0.5)
    seed = RngSeed(12)
    sol = solve_msde(problem, grid, seed, 30)
    assert sol.picard_iters == 2
    M = integrate_diffusion(problem.B, sample_qwiener(SPEC, grid, seed, 30))
    gs = solve_gs_additive(problem, M, grid)
    assert np.allclose(sol.u, gs.u, atol=1e-10)


def test_msde_fixed_point_is_prox_scheme():
    grid = TimeGrid.uniform(1.0, 50)
    problem = _problem(LinearSPD.scalar(1.0), multiplicative=True)
    fixed = solve_msde(problem, grid, RngSeed(13), 20, picard_tol=1e-12)
    direct = solve_sde_prox(problem, grid, RngSeed(13), 20)
    assert np.allclose(fixed.u, direct.u, atol=1e-9)
    assert fixed.residual_identity <= 1e-12


def test_picard_norm_examples():
    grid = TimeGrid.uniform(1.0, 100)
    rng = np.random.default_rng(0)
    v = rng.normal(size=(50, len(grid), 1))
    plain = np.sqrt(np.mean(np.max(v[..., 0] ** 2, axis=1)))
    assert picard_norm(v, 0.0, grid) == pytest.approx(plain)
    assert picard_norm(np.full((len(grid), 1), -3.0), 2.0, grid) == pytest.approx(3.0)
    assert picard_norm(np.exp(1.5 * grid.t)[:, None], 1.5, grid) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        picard_norm(np.zeros((0, len(grid), 1)), 1.0, grid)
    with pytest.raises(ValueError):
        picard_norm(v, -1.0, grid)


def test_contraction_weight_rule():
    assert contraction_weight(0.0, 2.0, 0.0, 0.25) == pytest.approx(6.0)
    assert contraction_weight(0.5, 1.0, 1.0, 0.0) == pytest.approx(2.0 * (np.e * 8.0 + 1.0))
    assert contraction_weight(0.0, 1.0, 2.0, 1.0, stability_constant=3.0) == pytest.approx(2.0 * (15.0 + 1.0))


def test_moment_bounds_degenerate_and_linear():
    grid = TimeGrid.uniform(1.0, 100)
    problem = _problem(LinearSPD.scalar(1.0))
    same = check_moment_bounds(problem, grid, 300, RngSeed(14))
    assert same.passed
    assert same.check("moment_difference").details["degenerate"]
    coupled = check_moment_bounds(problem, grid, 300, RngSeed(14), u0_second=np.array([0.5]))
    assert coupled.passed, coupled.to_dict()
    assert coupled.estimates["diff_ratio_s1"] == pytest.approx(1.0)


def test_moment_bounds_reflected_ou_p2():
    grid = TimeGrid.uniform(1.0, 100)
    report = check_moment_bounds(_reflected_ou(), grid, 300, RngSeed(15), p=2, u0_second=np.array([0.0]))
    assert all(np.isfinite(v) for v in report.estimates.values())
    with pytest.raises(ValueError):
        check_moment_bounds(_reflected_ou(), grid, 10, RngSeed(15), p=3)


def test_coupled_comparison_holds_and_detects_corruption():
    grid = TimeGrid.uniform(1.0, 200)
    seed = RngSeed(16)
    s1 = solve_sde_prox(_reflected_ou(0.5), grid, seed, 100)
    s2 = solve_sde_prox(_reflected_ou(0.0), grid, seed, 100)
    assert check_coupled_comparison(s1, s2).passed
    gbm = _problem(LinearSPD.scalar(1.0), multiplicative=True)
    m1 = solve_sde_prox(gbm.with_u0(np.array([1.0])), grid, seed, 100)
    m2 = solve_sde_prox(gbm.with_u0(np.array([-0.5])), grid, seed, 100)
    assert check_coupled_comparison(m1, m2).passed
    corrupted = dataclasses.replace(s2, u=s2.u - 2.0 * grid.t[None, :, None])
    assert not check_coupled_comparison(s1, corrupted).passed


def test_declared_constants_validation():
    problem = _problem(LinearSPD.scalar(1.0), multiplicative=True)
    assert problem.validate_constants().passed
    understated = dataclasses.replace(problem, B=dataclasses.replace(problem.B, lipschitz=0.01))
    assert not understated.validate_constants().passed


def test_penalization_gaps_must_shrink_with_eps():
    shrinking = pd.DataFrame({"eps": [1e-3, 1e-1, 1e-2], "sup_gap": [0.001, 0.08, 0.01]})
    stalled = pd.DataFrame({"eps": [1e-1, 1e-2], "sup_gap": [0.05, 0.06]})

    report = check_penalization_gaps(shrinking)
    assert report.passed
    assert report.details["eps"] == [1e-1, 1e-2, 1e-3]
    assert report.value == pytest.approx(0.001)
    assert not check_penalization_gaps(stalled).passed


def test_penalized_eps_range_applies_only_to_shifted_operators():
    grid = TimeGrid.uniform(1.0, 10)

    sol = solve_sde_penalized(_problem(_half_line()), 2.0, grid, RngSeed(8), 4)
    assert sol.eps == 2.0
    assert np.all(sol.ok)

    with pytest.raises(StepSizeError):
        solve_sde_penalized(_problem(ZeroOperator(SCALAR, alpha=0.5)), 2.0, grid, RngSeed(8), 4)
    with pytest.raises(StepSizeError):
        solve_sde_penalized(_problem(_half_line()), 0.2, grid, RngSeed(8), 4)
