"""Scenario runner: build the problem, dispatch the experiment, write artifacts.

Exit codes follow the driver contract: 0 when every declared check passes,
1 when a check fails, 2 on configuration errors and 3 on numerical aborts
(blow-up guard, non-convergent inner iterations or aborted ensemble paths).
"""

from __future__ import annotations

import inspect
import logging
from dataclasses import dataclass, field
from functools import partial
from pathlib import Path
from typing import Any, Callable, Dict, List, Tuple

import numpy as np
import pandas as pd

from src import config as project_config
from src.analysis.asymptotics import check_drift_bound, decay_experiment, estimate_invariant_measure, supermartingale_test
from src.analysis.measures import check_ks, check_ou_variance, reflected_ou_stationary_cdf
from src.analysis.metrics import fit_power_rate
from src.analysis.reports import CheckReport, EnsembleReport
from src.analysis.sweeps import check_convergence_order, strong_convergence_sweep
from src.errors import BlowupError, ConfigError, ConvergenceError
from src.operators.audit import H1Audit, audit_h1, check_yosida_properties
from src.operators.graphs import GRAPHS
from src.plots import plotting
from src.scenarios import builders
from src.scenarios.artifacts import write_artifacts
from src.scenarios.schema import EXPERIMENTS, Scenario, load_scenario
from src.solvers.deterministic import (
    PENALIZED,
    PROX,
    check_apriori,
    check_reflection,
    penalization_sweep,
    solve_gd,
    solve_penalized,
    solve_prox,
    stability_sweep,
    verify_vi,
)
from src.solvers.sde import (
    GenSolutionStoch,
    check_coupled_comparison,
    check_moment_bounds,
    check_penalization_gaps,
    check_picard_contraction,
    penalization_sweep_sde,
    solve_gs_additive,
    solve_msde,
    solve_sde_penalized,
    solve_sde_prox,
)
from src.stochastic.integrals import check_isometry_bdg, integrate_diffusion
from src.stochastic.wiener import sample_qwiener

logger = logging.getLogger(__name__)
if not logger.handlers:
    logger.addHandler(logging.NullHandler())

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3

PlotJob = Tuple[str, Callable[..., Any]]


@dataclass
class Outcome:
    """What one experiment produced, before it is turned into artifacts."""

    checks: List[CheckReport] = field(default_factory=list)
    estimates: Dict[str, Any] = field(default_factory=dict)
    std_errors: Dict[str, Any] = field(default_factory=dict)
    fitted: Dict[str, Any] = field(default_factory=dict)
    details: Dict[str, Any] = field(default_factory=dict)
    series: pd.DataFrame | None = None
    tables: Dict[str, pd.DataFrame] = field(default_factory=dict)
    n_aborted: int = 0
    plots: List[PlotJob] = field(default_factory=list)

    def add_report(self, report: EnsembleReport, prefix: str = "") -> None:
        self.checks.extend(report.checks)
        self.estimates.update({f"{prefix}{k}": v for k, v in report.estimates.items()})
        self.std_errors.update({f"{prefix}{k}": v for k, v in report.std_errors.items()})
        self.details[report.name] = report.details

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)


@dataclass
class RunResult:
    exit_code: int
    scenario: Scenario | None = None
    summary: Dict[str, Any] | None = None
    artifacts: Dict[str, Path] = field(default_factory=dict)
    error: Exception | None = None


def _params(scenario: Scenario) -> Dict[str, Any]:
    return scenario.config["params"]


def _vector(value: Any, dim: int) -> np.ndarray:
    return np.broadcast_to(np.asarray(value, dtype=float), (dim,)).copy()


def _floats(value: Any) -> List[float]:
    return [float(v) for v in (value if isinstance(value, list) else [value])]


def _require_deterministic(scenario: Scenario) -> None:
    if scenario.stochastic:
        raise scenario.error(f"{scenario.experiment} on a deterministic problem takes no noise section", "noise")


def _solution_estimates(sol: GenSolutionStoch) -> Dict[str, Any]:
    ok = sol.ok
    terminal = sol.u[ok, -1].mean(axis=0) if np.any(ok) else np.full(sol.space.dim, np.nan)
    return {"E_u_T": terminal.tolist(), "residual_identity": sol.residual_identity}


def _run_h1_audit(scenario: Scenario, A, space) -> H1Audit:
    spec = scenario.config["audit"]
    if spec is None:
        raise scenario.error("this scenario has no audit section", "audit")
    candidate = H1Audit(h0=np.asarray(spec["h0"], dtype=float), r0=spec["r0"], a1=spec["a1"], a2=spec["a2"])
    seed = builders.build_seed(scenario.config).master
    return audit_h1(A, space, candidate, n_samples=int(spec["n_samples"]), seed=seed)


def run_solve_det(scenario: Scenario) -> Outcome:
    _require_deterministic(scenario)
    cfg = scenario.config
    params = _params(scenario)
    solver = cfg["solver"]
    grid = builders.build_grid(cfg)
    problem = builders.build_det_problem(cfg, grid)
    out = Outcome()

    audit = None
    if cfg["audit"] is not None:
        audit = _run_h1_audit(scenario, problem.A, problem.space)
        out.checks.append(audit.to_check())

    scheme = solver["scheme"]
    if scheme == PROX:
        sol = solve_prox(problem, grid)
    elif scheme == PENALIZED:
        sol = solve_penalized(problem, solver["eps"], grid)
    else:
        backbone = PENALIZED if "eps" in solver else PROX
        sol = solve_gd(
            problem,
            grid,
            mollify_levels=solver.get("mollify_levels"),
            scheme=backbone,
            eps=solver.get("eps"),
            cauchy_tol=solver["cauchy_tol"],
            audit=audit,
        )

    out.checks.append(verify_vi(sol, problem.A, tol=cfg["tolerances"]["vi"]))
    if audit is not None and audit.feasible:
        out.checks.append(check_apriori(sol, audit, problem, tol=cfg["tolerances"]["apriori"]))
    if params.get("oracle") == "reflection":
        out.checks.append(check_reflection(sol, problem, tol=float(params.get("oracle_tol", 1e-10))))
    elif params.get("oracle") is not None:
        raise scenario.error(f"unknown oracle {params['oracle']!r}; expected 'reflection'", "params.oracle")

    out.series = sol.to_frame()
    out.estimates = {
        "u_T": sol.u.values[-1].tolist(),
        "bv_eta_xstar": sol.bv_eta_xstar,
        "residual_identity": sol.residual_identity,
    }
    out.details = {"scheme": sol.scheme, "eps": sol.eps, "diagnostics": sol.diagnostics}
    out.plots.append(("solution", partial(plotting.plot_solution, out.series, title=scenario.name)))
    return out


def run_solve_sde(scenario: Scenario) -> Outcome:
    cfg = scenario.config
    params = _params(scenario)
    solver = cfg["solver"]
    grid = builders.build_grid(cfg)
    problem = builders.build_sde_problem(cfg)
    seed = builders.build_seed(cfg)
    n_paths = cfg["ensemble"]["n_paths"]
    stride = int(params.get("stride", 1))
    out = Outcome(checks=[problem.validate_constants()])

    scheme = solver["scheme"]
    if scheme == "prox":
        sol = solve_sde_prox(problem, grid, seed, n_paths, stride=stride)
    elif scheme == "penalized":
        sol = solve_sde_penalized(problem, solver["eps"], grid, seed, n_paths, stride=stride)
    elif scheme == "msde":
        sol = solve_msde(problem, grid, seed, n_paths, picard_tol=solver["picard_tol"], a_weight=solver.get("a_weight"))
        out.checks.append(check_picard_contraction(sol))
        out.estimates["picard_iters"] = sol.picard_iters
    else:
        M = integrate_diffusion(problem.B, sample_qwiener(problem.qwiener, grid, seed, n_paths))
        sol = solve_gs_additive(
            problem,
            M,
            grid,
            k=solver.get("k"),
            mollify_levels=solver.get("mollify_levels"),
            cauchy_tol=solver["cauchy_tol"],
        )
    out.n_aborted = sol.n_aborted
    out.estimates.update(_solution_estimates(sol))
    out.details["solver"] = sol.diagnostics

    if "v0" in cfg["input"] and scheme == "prox":
        other = solve_sde_prox(problem.with_u0(_vector(cfg["input"]["v0"], problem.space.dim)), grid, seed, n_paths, stride=stride)
        out.n_aborted += other.n_aborted
        out.checks.append(check_coupled_comparison(sol, other))
    if params.get("moment_bounds"):
        out.add_report(check_moment_bounds(problem, grid, n_paths, seed, p=int(params.get("p", 1))))
    if params.get("isometry"):
        out.add_report(check_isometry_bdg(problem.B, problem.qwiener, grid, n_paths, seed))

    out.series = sol.mean_frame()
    out.tables["path0"] = sol.path(0).to_frame()
    out.plots.append(("mean", partial(plotting.plot_solution, out.series, title=f"{scenario.name}: ensemble mean")))
    return out


def run_convergence(scenario: Scenario) -> Outcome:
    cfg = scenario.config
    params = _params(scenario)
    grid = builders.build_grid(cfg)
    out = Outcome()
    if not scenario.stochastic:
        problem = builders.build_det_problem(cfg, grid)
        eps_values = _floats(params.get("eps_values", [1e-1, 1e-2, 1e-3]))
        table, check = penalization_sweep(problem, grid.T, eps_values, min_steps=grid.n_steps)
        out.checks.append(check)
        out.fitted = fit_power_rate(table["eps"].to_numpy(), table["sup_err"].to_numpy())
        out.tables["table"] = table
        out.plots.append(("convergence", partial(plotting.plot_convergence, table, "eps", "sup_err")))
        return out

    problem = builders.build_sde_problem(cfg)
    seed = builders.build_seed(cfg)
    n_paths = cfg["ensemble"]["n_paths"]
    base_steps = int(params.get("base_steps", grid.n_steps))
    table, fit = strong_convergence_sweep(problem, base_steps, int(params.get("levels", 3)), n_paths, seed)
    out.checks.append(check_convergence_order(fit, float(params.get("min_slope", 0.8))))
    out.fitted = fit
    out.tables["table"] = table
    out.plots.append(("convergence", partial(plotting.plot_convergence, table, "h", "sup_sq_err")))
    if params.get("eps_values") is not None:
        pen = penalization_sweep_sde(problem, grid, _floats(params["eps_values"]), seed, n_paths)
        out.checks.append(check_penalization_gaps(pen))
        out.n_aborted += int(pen["n_aborted"].sum())
        out.tables["penalization"] = pen
    return out


def default_lags(n_nodes: int) -> List[Tuple[int, int]]:
    """Consecutive quarter/half/end node pairs of a grid."""
    last = n_nodes - 1
    marks = sorted({0, last // 4, last // 2, last})
    return [(s, t) for s, t in zip(marks, marks[1:]) if s < t]


def run_stability(scenario: Scenario) -> Outcome:
    cfg = scenario.config
    params = _params(scenario)
    grid = builders.build_grid(cfg)
    out = Outcome()
    if not scenario.stochastic:
        problem = builders.build_det_problem(cfg, grid)
        deltas = _floats(params.get("deltas", [0.1, 0.05, 0.025]))
        direction = params.get("direction")
        table, check = stability_sweep(
            problem,
            grid,
            deltas,
            direction=None if direction is None else _vector(direction, problem.space.dim),
            max_spread=float(params.get("max_spread", 4.0)),
        )
        out.checks.append(check)
        out.fitted = {"c_hat_max": float(table["c_hat"].max())}
        out.tables["table"] = table
        return out

    if "v0" not in cfg["input"]:
        raise scenario.error("stochastic Stability needs a second initial point", "input.v0")
    problem = builders.build_sde_problem(cfg)
    seed = builders.build_seed(cfg)
    n_paths = cfg["ensemble"]["n_paths"]
    dim = problem.space.dim
    check_times = params.get("check_times")
    report = decay_experiment(
        problem,
        _vector(cfg["input"]["u0"], dim),
        _vector(cfg["input"]["v0"], dim),
        grid.T,
        n_paths,
        seed,
        grid=grid,
        theta=float(params.get("theta", 0.9)),
        check_times=None if check_times is None else _floats(check_times),
    )
    out.checks.extend(report.checks)
    out.n_aborted = int(report.details["n_aborted"])
    out.estimates = {"beta0": report.beta0, "measured_rate": report.measured_rate}
    out.std_errors = {"measured_rate": report.rate_se}
    out.fitted = {"rate": report.measured_rate, "beta": report.beta, "theta": report.theta}
    out.details["decay"] = report.details
    out.series = report.series
    out.plots.append(("decay", partial(plotting.plot_decay, report.series, title=scenario.name)))

    if params.get("supermartingale"):
        lags = params.get("lags")
        pairs = default_lags(len(grid)) if lags is None else [(int(s), int(t)) for s, t in lags]
        out.checks.append(supermartingale_test(report.delta_paths(), pairs))
    if params.get("drift_bound"):
        if "x0" not in params or "y0" not in params:
            raise scenario.error("drift_bound needs a graph point params.x0, params.y0", "params.drift_bound")
        drift = check_drift_bound(problem, _vector(params["x0"], dim), _vector(params["y0"], dim), grid, n_paths, seed)
        out.checks.extend(drift.checks)
        out.n_aborted += int(drift.details["n_aborted"])
        out.estimates.update({"M0": drift.M0, "C0": drift.C0})
        out.tables["drift"] = drift.series
    return out


def run_invariant(scenario: Scenario) -> Outcome:
    cfg = scenario.config
    params = _params(scenario)
    grid = builders.build_grid(cfg)
    problem = builders.build_sde_problem(cfg)
    seed = builders.build_seed(cfg)
    n_paths = cfg["ensemble"]["n_paths"]
    dim = problem.space.dim
    if params.get("initials") is not None:
        initials = [_vector(x, dim) for x in params["initials"]]
    else:
        initials = [_vector(cfg["input"]["u0"], dim)]
        if "v0" in cfg["input"]:
            initials.append(_vector(cfg["input"]["v0"], dim))
    burn_in = params.get("burn_in")
    delta = params.get("delta")
    measure, report = estimate_invariant_measure(
        problem,
        grid.T,
        n_paths,
        seed,
        initials=initials,
        burn_in=None if burn_in is None else float(burn_in),
        h=grid.h,
        delta=None if delta is None else float(delta),
    )
    out = Outcome()
    out.add_report(report)
    out.n_aborted = sum(int(c.value) for c in report.checks if c.name == "no_aborted_paths")
    out.checks.append(measure.check_domain(problem.A))

    oracle = params.get("oracle")
    if oracle is not None:
        a = float(params.get("a", problem.A.modulus))
        diffusion = cfg["noise"]["diffusion"]
        if "sigma" not in params and "sigma" not in diffusion:
            raise scenario.error("oracles need params.sigma for a matrix diffusion", "params.sigma")
        sigma = float(params.get("sigma", diffusion.get("sigma", 0.0)))
        if oracle == "ou":
            tol = float(params.get("variance_tol", 0.05))
            out.checks.append(check_ou_variance(measure, a, sigma, problem.qwiener.trace, h=grid.h, tol=tol))
        elif oracle == "reflected_ou":
            cdf = partial(reflected_ou_stationary_cdf, a=a, sigma=sigma)
            out.checks.append(check_ks(measure, cdf, tol=float(params.get("ks_tol", 0.02))))
            out.plots.append(("law", partial(plotting.plot_samples_histogram, measure.samples, cdf=cdf)))
        else:
            raise scenario.error(f"unknown oracle {oracle!r}; expected 'ou' or 'reflected_ou'", "params.oracle")
    if oracle != "reflected_ou":
        out.plots.append(("law", partial(plotting.plot_samples_histogram, measure.samples)))
    out.tables["samples"] = measure.to_frame()
    return out


def run_audit(scenario: Scenario, h1_only: bool = False) -> Outcome:
    cfg = scenario.config
    params = _params(scenario)
    space = builders.build_space(cfg["space"])
    A = builders.build_operator(cfg["operator"], space, cfg["constants"])
    audit = _run_h1_audit(scenario, A, space)
    out = Outcome(checks=[audit.to_check()], estimates={"worst_violation": audit.worst_violation})
    out.details["h1_audit"] = audit.to_dict()
    if not h1_only:
        out.checks.extend(
            check_yosida_properties(
                A,
                n=int(params.get("n", 1000)),
                seed=builders.build_seed(cfg).master,
                eps=float(params.get("eps", 0.3)),
                delta=float(params.get("delta", 0.1)),
            )
        )
    return out


EXPERIMENT_RUNNERS: Dict[str, Callable[[Scenario], Outcome]] = {
    "SolveDet": run_solve_det,
    "SolveSde": run_solve_sde,
    "Convergence": run_convergence,
    "Stability": run_stability,
    "Invariant": run_invariant,
    "Audit": run_audit,
}


def list_kinds() -> Dict[str, Any]:
    """Registered scenario kinds, with the parameters each scalar graph accepts."""
    return {
        "experiments": list(EXPERIMENTS),
        "spaces": list(builders.SPACES),
        "operators": list(builders.OPERATORS),
        "graphs": {name: list(inspect.signature(fn).parameters) for name, fn in sorted(GRAPHS.items())},
        "sets": {name: list(keys) for name, keys in builders.SETS.items()},
        "input_paths": list(builders.INPUT_PATHS),
        "drifts": list(builders.DRIFTS),
        "diffusions": list(builders.DIFFUSIONS),
        "schemes": {"deterministic": list(builders.DET_SCHEMES), "stochastic": list(builders.SDE_SCHEMES)},
    }


def exit_code_for(outcome: Outcome) -> int:
    if outcome.n_aborted:
        return EXIT_NUMERICAL
    return EXIT_OK if outcome.passed else EXIT_CHECK_FAILED


def build_summary(scenario: Scenario, outcome: Outcome, exit_code: int) -> Dict[str, Any]:
    return {
        "name": scenario.name,
        "experiment": scenario.experiment,
        "config": scenario.portable_config,
        "passed": outcome.passed and not outcome.n_aborted,
        "exit_code": exit_code,
        "checks": [c.to_dict() for c in outcome.checks],
        "estimates": outcome.estimates,
        "std_errors": outcome.std_errors,
        "fitted": outcome.fitted,
        "n_aborted": outcome.n_aborted,
        "details": outcome.details,
    }


def _write_plots(scenario: Scenario, outcome: Outcome, out_dir: Path) -> Dict[str, Path]:
    written = {}
    for key, job in outcome.plots:
        path = out_dir / f"{scenario.name}.{key}.png"
        job(out_path=path)
        written[f"plot_{key}"] = path
    return written


def _numerical_abort(scenario: Scenario, exc: Exception) -> RunResult:
    logger.error("Numerical abort in %s: %s", scenario.name, exc)
    summary = {
        "name": scenario.name,
        "experiment": scenario.experiment,
        "config": scenario.portable_config,
        "passed": False,
        "exit_code": EXIT_NUMERICAL,
        "checks": [],
        "error": {"type": type(exc).__name__, "message": str(exc), "diagnostics": getattr(exc, "diagnostics", {})},
    }
    artifacts = write_artifacts(scenario, summary)
    return RunResult(EXIT_NUMERICAL, scenario, summary, artifacts, exc)


def execute(scenario: Scenario, plots: bool | None = None, audit_only: bool = False) -> RunResult:
    """Run a validated scenario and write its artifacts."""
    logger.info("Running scenario %s (%s)", scenario.name, "H1 audit" if audit_only else scenario.experiment)
    try:
        if audit_only:
            outcome = run_audit(scenario, h1_only=True)
        else:
            outcome = EXPERIMENT_RUNNERS[scenario.experiment](scenario)
    except (BlowupError, ConvergenceError) as exc:
        return _numerical_abort(scenario, exc)
    except ConfigError:
        raise
    except ValueError as exc:
        # step-size, domain and shape violations surface as configuration problems
        raise ConfigError(str(exc)) from exc

    code = exit_code_for(outcome)
    summary = build_summary(scenario, outcome, code)
    artifacts = write_artifacts(scenario, summary, series=outcome.series, tables=outcome.tables)
    plots = project_config.WRITE_PLOTS if plots is None else plots
    if plots:
        artifacts.update(_write_plots(scenario, outcome, scenario.output_dir))
    for check in outcome.checks:
        if not check.passed:
            logger.warning("Check %s failed: value %.6g vs threshold %.6g", check.name, check.value, check.threshold)
    if outcome.n_aborted:
        logger.error("%d ensemble paths aborted by the blow-up guard", outcome.n_aborted)
    logger.info("Scenario %s finished with exit code %d", scenario.name, code)
    return RunResult(code, scenario, summary, artifacts)


def run_scenario(
    path: str | Path,
    out: str | Path | None = None,
    seed: str | int | None = None,
    paths: int | None = None,
    steps: int | None = None,
    plots: bool | None = None,
    audit_only: bool = False,
) -> RunResult:
    """Load, validate and run one scenario file. Configuration errors give exit code 2."""
    try:
        scenario = load_scenario(path, out=out, seed=seed, paths=paths, steps=steps)
        return execute(scenario, plots=plots, audit_only=audit_only)
    except ConfigError as exc:
        logger.error("Configuration error: %s", exc)
        return RunResult(EXIT_CONFIG, error=exc)
