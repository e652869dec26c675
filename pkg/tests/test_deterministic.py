"""Tests for the deterministic prox/penalized solvers and their verifiers."""

from __future__ import annotations

import sys
from pathlib import Path

import numpy as np
import pytest

ROOT = Path(__file__).resolve().parents[1]
if str(ROOT) not in sys.path:
    sys.path.append(str(ROOT))

from src.errors import ConvergenceError, StepSizeError  # noqa: E402
from src.operators.audit import H1Audit, audit_h1  # noqa: E402
from src.operators.graphs import interval_graph  # noqa: E402
from src.operators.monotone import LinearSPD, ScalarGraphOperator, ZeroOperator  # noqa: E402
from src.solvers.deterministic import (  # noqa: E402
    DetProblem,
    check_apriori,
    check_stability_pair,
    discrete_reflection,
    gd_levels,
    penalization_sweep,
    mollify,
    solve_gd,
    solve_penalized,
    solve_prox,
    stability_sweep,
    verify_vi,
)
from src.spaces.hspace import HPath, HSpace, TimeGrid, modulus_of_continuity  # noqa: E402

SCALAR = HSpace(1)


def _half_line() -> ScalarGraphOperator:
    return ScalarGraphOperator(SCALAR, interval_graph(0.0, np.inf))


def _brownian(grid: TimeGrid, rng: np.random.Generator, n_paths: int | None = None) -> np.ndarray:
    shape = (grid.n_steps,) if n_paths is None else (n_paths, grid.n_steps)
    incr = rng.normal(size=shape) * np.sqrt(grid.steps)
    zero = np.zeros(shape[:-1] + (1,))
    return np.concatenate([zero, np.cumsum(incr, axis=-1)], axis=-1)


def _obstacle_problem(grid: TimeGrid, u0: float = 1.0) -> DetProblem:
    return DetProblem.simple(_half_line(), u0, grid, f=-1.0)


def test_prox_obstacle_matches_closed_form():
    grid = TimeGrid.uniform(2.0, 2000)
    sol = solve_prox(_obstacle_problem(grid), grid)
    t = grid.t
    assert np.allclose(sol.u.values[:, 0], np.maximum(1.0 - t, 0.0), atol=1e-10)
    assert np.allclose(sol.eta.values[:, 0], np.minimum(0.0, 1.0 - t), atol=1e-10)
    assert sol.residual_identity <= 1e-12
    assert sol.bv_eta_xstar == pytest.approx(1.0, abs=1e-9)


def test_prox_zero_operator_is_free_motion():
    rng = np.random.default_rng(0)
    grid = TimeGrid.uniform(1.0, 200)
    M = HPath(grid, _brownian(grid, rng))
    sol = solve_prox(DetProblem.simple(ZeroOperator(SCALAR), 0.5, grid, f=2.0, M=M), grid)
    expected = 0.5 + 2.0 * grid.t + M.values[:, 0]
    assert np.allclose(sol.u.values[:, 0], expected, atol=1e-12)
    assert np.allclose(sol.eta.values, 0.0)


def test_prox_linear_decay_error_below_step():
    grid = TimeGrid.uniform(1.0, 1000)
    sol = solve_prox(DetProblem.simple(LinearSPD.scalar(1.0), 1.0, grid), grid)
    h = grid.h
    assert sol.u.values[-1, 0] == pytest.approx((1.0 + h) ** (-1.0 / h), rel=1e-9)
    assert abs(sol.u.values[-1, 0] - np.exp(-1.0)) <= h


def test_prox_step_size_violation():
    grid = TimeGrid.uniform(1.0, 1)
    with pytest.raises(StepSizeError):
        solve_prox(DetProblem.simple(ZeroOperator(SCALAR, alpha=1.0), 1.0, grid), grid)


def test_prox_projects_initial_point():
    grid = TimeGrid.uniform(1.0, 10)
    sol = solve_prox(DetProblem.simple(_half_line(), -2.0, grid), grid)
    assert sol.u.values[0, 0] == pytest.approx(0.0)
    assert sol.diagnostics["u0_projection_distance"] == pytest.approx(2.0)


def test_penalized_obstacle_from_zero():
    eps = 0.05
    grid = TimeGrid.uniform(1.0, 80)
    sol = solve_penalized(DetProblem.simple(_half_line(), 0.0, grid, f=-1.0), eps, grid)
    u = sol.u.values[:, 0]
    assert np.all(np.abs(u) <= eps + 1e-12)
    assert u[-1] == pytest.approx(-eps, rel=1e-6)
    assert sol.eta.values[-1, 0] == pytest.approx(-(1.0 - eps), abs=grid.h)


def test_penalized_obstacle_sup_error():
    eps = 1e-2
    grid = TimeGrid.uniform(2.0, 800)
    sol = solve_penalized(_obstacle_problem(grid), eps, grid)
    err = np.max(np.abs(sol.u.values[:, 0] - np.maximum(1.0 - grid.t, 0.0)))
    assert err <= 1.1e-2


def test_penalized_errors_decrease_as_eps_halves():
    errors = []
    for eps in (1e-1, 1e-2, 1e-3):
        grid = TimeGrid.uniform(2.0, int(round(2.0 / (eps / 4.0))))
        sol = solve_penalized(_obstacle_problem(grid), eps, grid)
        errors.append(np.max(np.abs(sol.u.values[:, 0] - np.maximum(1.0 - grid.t, 0.0))))
    assert errors[0] > errors[1] > errors[2]


def test_penalized_zero_operator_equals_prox():
    rng = np.random.default_rng(1)
    grid = TimeGrid.uniform(1.0, 100)
    problem = DetProblem.simple(ZeroOperator(SCALAR), 0.3, grid, f=-0.5, M=HPath(grid, _brownian(grid, rng)))
    assert np.array_equal(solve_penalized(problem, 0.5, grid).u.values, solve_prox(problem, grid).u.values)


def test_penalized_step_constraints():
    grid = TimeGrid.uniform(1.0, 10)
    problem = _obstacle_problem(grid)
    with pytest.raises(StepSizeError):
        solve_penalized(problem, 0.1, grid)
    with pytest.raises(StepSizeError):
        solve_penalized(problem, 1.5, TimeGrid.uniform(1.0, 1000))


def test_mollify_examples():
    grid = TimeGrid.uniform(1.0, 100)
    assert np.allclose(mollify(HPath.constant(grid, 2.5), 10).values, 2.5)
    linear = mollify(HPath(grid, grid.t), 10)
    late = grid.t >= 0.2 - 1e-12
    assert np.allclose(linear.values[late, 0], grid.t[late] - 0.1, atol=1e-12)
    assert linear.values[0, 0] == pytest.approx(0.0)


def test_mollify_preserves_modulus_and_converges():
    rng = np.random.default_rng(2)
    grid = TimeGrid.uniform(1.0, 100)
    M = HPath(grid, _brownian(grid, rng))
    gaps = []
    for n in (5, 20, 80, 320):
        Mn = mollify(M, n)
        assert Mn.values[0, 0] == pytest.approx(0.0)
        for delta in (0.02, 0.05, 0.1):
            assert modulus_of_continuity(Mn, delta) <= modulus_of_continuity(M, delta) + 1e-12
        gaps.append(np.max(np.abs(Mn.values - M.values)))
    assert gaps[-1] < gaps[0]
    assert gaps[-1] <= np.max(np.abs(np.diff(M.values[:, 0])))


def test_discrete_reflection_formula():
    x = np.array([0.0, -1.0, 0.5, -2.0, 1.0])
    assert np.allclose(discrete_reflection(x), [0.0, 0.0, 1.5, 0.0, 3.0])


def test_gd_matches_reflection_on_brownian_paths():
    rng = np.random.default_rng(3)
    grid = TimeGrid.uniform(1.0, 500)
    paths = _brownian(grid, rng, n_paths=100)
    A = _half_line()
    u, eta, diag = gd_levels(
        A,
        SCALAR,
        np.zeros((100, 1)),
        np.zeros((100, grid.n_steps, 1)),
        paths[..., None],
        grid,
        [16.0**k / grid.h for k in range(4)],
        "prox",
        None,
        1e-2,
    )
    assert np.max(np.abs(u[..., 0] - discrete_reflection(paths))) <= 1e-10
    assert diag["sup_bv_eta"] >= 0.0


def test_solve_gd_single_path_reflection_and_certificate():
    rng = np.random.default_rng(4)
    grid = TimeGrid.uniform(1.0, 400)
    M = HPath(grid, _brownian(grid, rng))
    sol = solve_gd(DetProblem.simple(_half_line(), 0.0, grid, M=M), grid)
    assert np.max(np.abs(sol.u.values[:, 0] - discrete_reflection(M.values[:, 0]))) <= 1e-10
    assert sol.diagnostics["sup_bv_eta"] >= sol.bv_eta_xstar - 1e-12
    assert sol.residual_identity <= 1e-12


def test_solve_gd_zero_operator_and_obstacle():
    rng = np.random.default_rng(5)
    grid = TimeGrid.uniform(1.0, 200)
    M = HPath(grid, _brownian(grid, rng))
    free = solve_gd(DetProblem.simple(ZeroOperator(SCALAR), 1.0, grid, M=M), grid)
    assert np.allclose(free.u.values[:, 0], 1.0 + M.values[:, 0], atol=1e-12)
    assert free.bv_eta_xstar == pytest.approx(0.0)

    grid2 = TimeGrid.uniform(2.0, 1000)
    obstacle = solve_gd(_obstacle_problem(grid2), grid2)
    assert np.allclose(obstacle.u.values[:, 0], np.maximum(1.0 - grid2.t, 0.0), atol=1e-10)


def test_solve_gd_reports_non_cauchy_sequence():
    rng = np.random.default_rng(6)
    grid = TimeGrid.uniform(1.0, 200)
    M = HPath(grid, _brownian(grid, rng))
    with pytest.raises(ConvergenceError) as info:
        solve_gd(DetProblem.simple(_half_line(), 0.0, grid, M=M), grid, mollify_levels=[1.0], cauchy_tol=1e-9)
    assert "cauchy_gaps" in info.value.diagnostics


def test_verify_vi_passes_and_detects_sign_flip():
    rng = np.random.default_rng(7)
    grid = TimeGrid.uniform(1.0, 500)
    M = HPath(grid, _brownian(grid, rng))
    A = _half_line()
    sol = solve_gd(DetProblem.simple(A, 0.0, grid, M=M), grid)
    assert verify_vi(sol, A, tol=1e-8).passed

    flipped = type(sol)(
        u=sol.u,
        eta=HPath(grid, -sol.eta.values),
        bv_eta_xstar=sol.bv_eta_xstar,
        residual_identity=sol.residual_identity,
        scheme=sol.scheme,
    )
    report = verify_vi(flipped, A, tol=1e-8)
    assert not report.passed
    assert report.value < 0


def test_verify_vi_zero_operator_with_shift():
    grid = TimeGrid.uniform(1.0, 100)
    A = ZeroOperator(SCALAR, alpha=0.5)
    sol = solve_prox(DetProblem.simple(A, 1.0, grid, f=0.3), grid)
    assert verify_vi(sol, A, tol=1e-8).passed


def test_eta_increments_are_admissible():
    grid = TimeGrid.uniform(2.0, 400)
    sol = solve_prox(_obstacle_problem(grid), grid)
    d_eta = np.diff(sol.eta.values[:, 0]) / grid.steps
    u_next = sol.u.values[1:, 0]
    assert np.all(d_eta[u_next > 0] == 0.0)
    assert np.all(d_eta <= 1e-12)


def test_stability_pair_identical_and_obstacle_sweep():
    grid = TimeGrid.uniform(2.0, 1000)
    base = _obstacle_problem(grid)
    s = solve_prox(base, grid)
    same = check_stability_pair(s, s, base, base)
    assert same.details["lhs"] == 0.0
    c_hats = []
    for delta in (0.1, 0.05, 0.025):
        other = _obstacle_problem(grid, u0=1.0 + delta)
        report = check_stability_pair(s, solve_prox(other, grid), base, other)
        assert report.details["lhs"] == pytest.approx(delta**2, rel=1e-6)
        c_hats.append(report.value)
    assert max(c_hats) / min(c_hats) <= 4.0


def test_stability_pair_zero_operator_direct_formula():
    rng = np.random.default_rng(8)
    grid = TimeGrid.uniform(1.0, 100)
    M1 = HPath(grid, _brownian(grid, rng))
    M2 = HPath(grid, _brownian(grid, rng))
    p1 = DetProblem.simple(ZeroOperator(SCALAR), 0.0, grid, f=1.0, M=M1)
    p2 = DetProblem.simple(ZeroOperator(SCALAR), 0.2, grid, f=0.5, M=M2)
    report = check_stability_pair(solve_prox(p1, grid), solve_prox(p2, grid), p1, p2)
    direct = np.max((-0.2 + 0.5 * grid.t + M1.values[:, 0] - M2.values[:, 0]) ** 2)
    assert report.details["lhs"] == pytest.approx(direct, rel=1e-10)


def test_stability_pair_rejects_grid_mismatch():
    g1, g2 = TimeGrid.uniform(1.0, 10), TimeGrid.uniform(1.0, 20)
    p1, p2 = _obstacle_problem(g1), _obstacle_problem(g2)
    with pytest.raises(ValueError):
        check_stability_pair(solve_prox(p1, g1), solve_prox(p2, g2), p1, p2)


def test_apriori_obstacle_holds_with_closed_form_bv():
    grid = TimeGrid.uniform(2.0, 1000)
    problem = _obstacle_problem(grid)
    audit = audit_h1(problem.A, SCALAR, H1Audit(h0=np.ones(1), r0=1.0, a1=0.01, a2=0.01))
    assert audit.feasible
    report = check_apriori(solve_prox(problem, grid), audit, problem)
    assert report.passed
    assert report.details["bv_eta"] == pytest.approx(1.0, abs=1e-9)
    assert np.isfinite(report.details["bound_ratio"])


def test_apriori_zero_operator_trivial_and_infeasible_audit():
    grid = TimeGrid.uniform(1.0, 50)
    problem = DetProblem.simple(ZeroOperator(SCALAR), 1.0, grid)
    sol = solve_prox(problem, grid)
    ok = H1Audit(h0=np.zeros(1), r0=1.0, a1=0.1, a2=0.1, worst_violation=-0.1)
    assert check_apriori(sol, ok, problem).passed
    with pytest.raises(ValueError):
        check_apriori(sol, H1Audit(h0=np.zeros(1), r0=1.0, a1=0.1, a2=0.1, worst_violation=1.0), problem)


def test_grid_refinement_agrees_within_step_bounds():
    coarse, fine = TimeGrid.uniform(1.0, 500), TimeGrid.uniform(1.0, 1000)
    A = LinearSPD.scalar(1.0)
    u_coarse = solve_prox(DetProblem.simple(A, 1.0, coarse), coarse).u.values[-1, 0]
    u_fine = solve_prox(DetProblem.simple(A, 1.0, fine), fine).u.values[-1, 0]
    assert abs(u_coarse - u_fine) <= coarse.h + fine.h


def test_stability_sweep_on_obstacle():
    grid = TimeGrid.uniform(2.0, 1000)
    table, check = stability_sweep(_obstacle_problem(grid), grid)
    assert list(table["delta"]) == [0.1, 0.05, 0.025]
    assert np.allclose(table["lhs"], table["delta"] ** 2, rtol=1e-6)
    assert check.passed
    assert check.value == pytest.approx(1.0, rel=1e-6)


def test_penalization_sweep_errors_decrease():
    grid = TimeGrid.uniform(2.0, 100)
    table, check = penalization_sweep(_obstacle_problem(grid), 2.0, eps_values=[1e-3, 1e-1, 1e-2])
    assert table["eps"].tolist() == [1e-1, 1e-2, 1e-3]
    assert table["steps"].tolist() == [80, 800, 8000]
    assert check.passed
    assert table["sup_err"].iloc[-1] <= 1.1e-3


def test_verify_vi_certifies_penalized_solutions_on_resolvent_path():
    grid = TimeGrid.uniform(2.0, 800)
    A = _half_line()
    sol = solve_penalized(_obstacle_problem(grid), 1e-2, grid)
    assert np.min(sol.u.values) < -1e-3

    report = verify_vi(sol, A, tol=1e-8)
    assert report.passed
    assert report.details["form"] == "resolvent_path"
    assert report.details["eta_defect"] <= 1e-12
    assert verify_vi(solve_prox(_obstacle_problem(grid), grid), A).details["form"] == "solution_path"

    flipped = type(sol)(
        u=sol.u,
        eta=HPath(grid, -sol.eta.values),
        bv_eta_xstar=sol.bv_eta_xstar,
        residual_identity=sol.residual_identity,
        scheme=sol.scheme,
        eps=sol.eps,
    )
    corrupted = verify_vi(flipped, A, tol=1e-8)
    assert not corrupted.passed
    assert corrupted.value < 0


def test_verify_vi_penalized_with_shifted_operator():
    grid = TimeGrid.uniform(1.0, 400)
    A = LinearSPD.scalar(1.0, SCALAR, alpha=0.5)
    sol = solve_penalized(DetProblem.simple(A, 1.0, grid, f=0.3), 0.5, grid)
    assert verify_vi(sol, A, tol=1e-8).passed


def test_gd_stops_refining_once_levels_agree():
    grid = TimeGrid.uniform(2.0, 200)
    levels = [16.0**k / grid.h for k in range(4)]

    sol = solve_gd(_obstacle_problem(grid), grid, mollify_levels=levels)

    diag = sol.diagnostics
    assert diag["mollify_levels"] == levels[:2]
    assert diag["skipped_levels"] == 2
    assert diag["cauchy_gaps"] == [0.0, 0.0]
    assert np.allclose(sol.u.values[:, 0], np.maximum(1.0 - grid.t, 0.0), atol=1e-10)
