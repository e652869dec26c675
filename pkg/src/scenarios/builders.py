"""Kind registries turning validated scenario sections into spaces, operators and problems."""

from __future__ import annotations

import dataclasses
import inspect
import logging
from typing import Any, Callable, Dict

import numpy as np

from src.operators.convex_sets import build_convex_set
from src.operators.graphs import GRAPHS, build_graph
from src.operators.monotone import (
    CompositeOperator,
    ConvexIndicator,
    LaplacianBoundary,
    LinearSPD,
    MonotoneOperator,
    ScalarGraphOperator,
    ZeroOperator,
    laplacian_space,
)
from src.solvers.deterministic import DetProblem
from src.solvers.sde import Drift, SdeProblem
from src.spaces.hspace import HPath, HSpace, TimeGrid
from src.stochastic.rng import RngSeed
from src.stochastic.wiener import DiffusionCoefficient, QWienerSpec, sample_qwiener

logger = logging.getLogger(__name__)
if not logger.handlers:
    logger.addHandler(logging.NullHandler())

SPACES = ("euclidean", "laplacian")
OPERATORS = ("zero", "linear", "graph", "indicator", "composite", "laplacian")
SETS = {"box": ("lo", "hi"), "ball": ("center", "radius"), "halfspace": ("normal", "offset")}
DIFFUSIONS = ("scaled_identity", "constant", "multiplicative")
DRIFTS = ("zero", "constant", "linear")
INPUT_PATHS = ("zero", "linear", "wiener")
DET_SCHEMES = ("prox", "penalized", "gd")
SDE_SCHEMES = ("prox", "penalized", "msde", "additive")


def _check_keys(spec: Dict[str, Any], allowed: tuple, v: Any, path: str) -> None:
    for key in spec:
        if key not in allowed:
            raise v.fail(f"unknown key {key!r}; expected one of {sorted(allowed)}", f"{path}.{key}")


def _graph_spec(spec: Dict[str, Any], v: Any, path: str) -> Dict[str, Any]:
    spec = v.mapping(spec, path, required=True)
    name = v.choice(spec.get("name"), GRAPHS, f"{path}.name")
    allowed = tuple(inspect.signature(GRAPHS[name]).parameters)
    _check_keys(spec, ("name",) + allowed, v, path)
    return {"name": name, **{k: v.number(val, f"{path}.{k}") for k, val in spec.items() if k != "name"}}


def _set_spec(spec: Dict[str, Any], v: Any, path: str) -> Dict[str, Any]:
    spec = v.mapping(spec, path, required=True)
    kind = v.choice(spec.get("kind"), SETS, f"{path}.kind")
    _check_keys(spec, ("kind",) + SETS[kind], v, path)
    out: Dict[str, Any] = {"kind": kind}
    for key in SETS[kind]:
        if key not in spec:
            raise v.fail(f"{kind} needs {key!r}", f"{path}.{key}")
        out[key] = v.vector(spec[key], f"{path}.{key}")
    return out


def validate_operator(spec: Dict[str, Any], v: Any, path: str) -> Dict[str, Any]:
    kind = v.choice(spec.get("kind"), OPERATORS, f"{path}.kind")
    out: Dict[str, Any] = {"kind": kind, "alpha": v.number(spec.get("alpha", 0.0), f"{path}.alpha")}
    if kind in ("zero", "linear", "graph", "composite"):
        out["modulus"] = v.number(spec.get("modulus", 0.0), f"{path}.modulus", minimum=0.0)
    if kind == "zero":
        _check_keys(spec, ("kind", "alpha", "modulus"), v, path)
    elif kind == "linear":
        _check_keys(spec, ("kind", "alpha", "modulus", "matrix", "scale"), v, path)
        if "matrix" in spec:
            out["matrix"] = v.vector(spec["matrix"], f"{path}.matrix")
        else:
            out["scale"] = v.number(spec.get("scale", 1.0), f"{path}.scale")
    elif kind == "graph":
        _check_keys(spec, ("kind", "alpha", "modulus", "graph"), v, path)
        out["graph"] = _graph_spec(spec.get("graph"), v, f"{path}.graph")
    elif kind == "indicator":
        _check_keys(spec, ("kind", "alpha", "set"), v, path)
        out["set"] = _set_spec(spec.get("set"), v, f"{path}.set")
    elif kind == "composite":
        _check_keys(spec, ("kind", "alpha", "modulus", "phi", "a0_scale"), v, path)
        phi = v.mapping(spec.get("phi"), f"{path}.phi", required=True)
        out["phi"] = validate_operator(phi, v, f"{path}.phi")
        if out["phi"]["kind"] not in ("graph", "indicator"):
            raise v.fail("phi must be a graph or indicator operator", f"{path}.phi.kind")
        out["a0_scale"] = v.number(spec.get("a0_scale", 0.0), f"{path}.a0_scale")
    else:
        _check_keys(spec, ("kind", "alpha", "boundary", "reaction_slope"), v, path)
        out["boundary"] = _graph_spec(spec.get("boundary"), v, f"{path}.boundary")
        out["reaction_slope"] = v.number(spec.get("reaction_slope", 0.0), f"{path}.reaction_slope")
    return out


def validate_input_path(spec: Dict[str, Any], v: Any, path: str) -> Dict[str, Any]:
    kind = v.choice(spec.get("kind", "zero"), INPUT_PATHS, f"{path}.kind")
    if kind == "zero":
        _check_keys(spec, ("kind",), v, path)
        return {"kind": kind}
    if kind == "linear":
        _check_keys(spec, ("kind", "rate"), v, path)
        return {"kind": kind, "rate": v.vector(spec.get("rate", 1.0), f"{path}.rate")}
    _check_keys(spec, ("kind", "scale"), v, path)
    return {"kind": kind, "scale": v.number(spec.get("scale", 1.0), f"{path}.scale", minimum=0.0)}


def validate_drift(spec: Dict[str, Any], v: Any, path: str) -> Dict[str, Any]:
    kind = v.choice(spec.get("kind", "zero"), DRIFTS, f"{path}.kind")
    if kind == "zero":
        _check_keys(spec, ("kind",), v, path)
        return {"kind": kind}
    if kind == "constant":
        _check_keys(spec, ("kind", "value"), v, path)
        return {"kind": kind, "value": v.vector(spec.get("value", 0.0), f"{path}.value")}
    _check_keys(spec, ("kind", "matrix", "offset"), v, path)
    if "matrix" not in spec:
        raise v.fail("linear drift needs 'matrix'", f"{path}.matrix")
    return {
        "kind": kind,
        "matrix": v.vector(spec["matrix"], f"{path}.matrix"),
        "offset": v.vector(spec.get("offset", 0.0), f"{path}.offset"),
    }


def validate_noise(spec: Dict[str, Any], v: Any, path: str) -> Dict[str, Any]:
    _check_keys(spec, ("eigenvalues", "covariance", "diffusion"), v, path)
    out: Dict[str, Any] = {}
    if "covariance" in spec:
        out["covariance"] = v.vector(spec["covariance"], f"{path}.covariance")
    else:
        eig = spec.get("eigenvalues", [1.0])
        eig = eig if isinstance(eig, list) else [eig]
        out["eigenvalues"] = [v.number(e, f"{path}.eigenvalues[{i}]", minimum=0.0) for i, e in enumerate(eig)]
    diffusion = v.mapping(spec.get("diffusion"), f"{path}.diffusion", required=True)
    kind = v.choice(diffusion.get("kind"), DIFFUSIONS, f"{path}.diffusion.kind")
    if kind == "constant":
        _check_keys(diffusion, ("kind", "matrix"), v, f"{path}.diffusion")
        if "matrix" not in diffusion:
            raise v.fail("constant diffusion needs 'matrix'", f"{path}.diffusion.matrix")
        out["diffusion"] = {"kind": kind, "matrix": v.vector(diffusion["matrix"], f"{path}.diffusion.matrix")}
    else:
        _check_keys(diffusion, ("kind", "sigma"), v, f"{path}.diffusion")
        out["diffusion"] = {"kind": kind, "sigma": v.number(diffusion.get("sigma", 1.0), f"{path}.diffusion.sigma")}
    return out


def validate_solver(spec: Dict[str, Any], v: Any, path: str, stochastic: bool) -> Dict[str, Any]:
    _check_keys(spec, ("scheme", "eps", "cauchy_tol", "picard_tol", "a_weight", "mollify_levels", "k"), v, path)
    schemes = SDE_SCHEMES if stochastic else DET_SCHEMES
    out: Dict[str, Any] = {
        "scheme": v.choice(spec.get("scheme", "prox"), schemes, f"{path}.scheme"),
        "cauchy_tol": v.number(spec.get("cauchy_tol", 1e-2), f"{path}.cauchy_tol", positive=True),
        "picard_tol": v.number(spec.get("picard_tol", 1e-6), f"{path}.picard_tol", positive=True),
    }
    if spec.get("eps") is not None:
        out["eps"] = v.number(spec["eps"], f"{path}.eps", positive=True)
    elif out["scheme"] == "penalized":
        raise v.fail("penalized scheme needs eps", f"{path}.eps")
    if spec.get("a_weight") is not None:
        out["a_weight"] = v.number(spec["a_weight"], f"{path}.a_weight", minimum=0.0)
    if spec.get("mollify_levels") is not None:
        levels = spec["mollify_levels"]
        levels = levels if isinstance(levels, list) else [levels]
        out["mollify_levels"] = [v.number(n, f"{path}.mollify_levels[{i}]", positive=True) for i, n in enumerate(levels)]
    if spec.get("k") is not None:
        out["k"] = v.integer(spec["k"], f"{path}.k", 1)
    return out


def build_space(cfg: Dict[str, Any]) -> HSpace:
    if cfg["kind"] == "laplacian":
        return laplacian_space(int(cfg["n_cells"]), float(cfg["smoothing"]))
    weights = cfg.get("weights")
    return HSpace(int(cfg["dim"]), weights=None if weights is None else np.asarray(weights, dtype=float))


def _graph(cfg: Dict[str, Any]):
    return build_graph(cfg["name"], **{k: float(val) for k, val in cfg.items() if k != "name"})


def _linear(cfg: Dict[str, Any], space: HSpace, alpha: float) -> MonotoneOperator:
    matrix = np.asarray(cfg["matrix"], dtype=float) if "matrix" in cfg else float(cfg["scale"]) * np.eye(space.dim)
    modulus = float(cfg["modulus"])
    # modulus 0 means: take the smallest eigenvalue of the symmetric part
    return LinearSPD(space, matrix, alpha=alpha, modulus=modulus if modulus > 0 else None)


def _laplacian(cfg: Dict[str, Any], space: HSpace, alpha: float) -> MonotoneOperator:
    slope = float(cfg["reaction_slope"])
    reaction: Callable[[np.ndarray], np.ndarray] | None = (lambda u: slope * u) if slope else None
    return LaplacianBoundary(space, _graph(cfg["boundary"]), reaction, abs(slope), alpha=alpha)


def _convex_set(cfg: Dict[str, Any]):
    params = {k: np.asarray(val, dtype=float) for k, val in cfg.items() if k != "kind"}
    for key in ("radius", "offset"):
        if key in params:
            params[key] = float(params[key])
    return build_convex_set(cfg["kind"], **params)


OPERATOR_BUILDERS: Dict[str, Callable[[Dict[str, Any], HSpace, float], MonotoneOperator]] = {
    "zero": lambda cfg, space, alpha: ZeroOperator(space, alpha, float(cfg["modulus"])),
    "linear": _linear,
    "graph": lambda cfg, space, alpha: ScalarGraphOperator(space, _graph(cfg["graph"]), alpha, float(cfg["modulus"])),
    "indicator": lambda cfg, space, alpha: ConvexIndicator(space, _convex_set(cfg["set"]), alpha),
    "composite": lambda cfg, space, alpha: CompositeOperator(
        space,
        build_operator(cfg["phi"], space),
        a0_scale=float(cfg["a0_scale"]),
        alpha=alpha,
        modulus=float(cfg["modulus"]),
    ),
    "laplacian": _laplacian,
}


def build_operator(cfg: Dict[str, Any], space: HSpace, constants: Dict[str, float] | None = None) -> MonotoneOperator:
    """Operator from its resolved section; declared constants a and alpha override the section."""
    constants = constants or {}
    alpha = float(constants.get("alpha", cfg["alpha"]))
    A = OPERATOR_BUILDERS[cfg["kind"]](cfg, space, alpha)
    if "a" in constants:
        A.modulus = float(constants["a"])
    return A


def _vector(value: Any, dim: int) -> np.ndarray:
    return np.broadcast_to(np.asarray(value, dtype=float), (dim,)).copy()


def build_grid(cfg: Dict[str, Any]) -> TimeGrid:
    return TimeGrid.uniform(float(cfg["grid"]["T"]), int(cfg["grid"]["steps"]))


def build_seed(cfg: Dict[str, Any], stream: int = 0) -> RngSeed:
    seed = cfg["ensemble"].get("seed")
    return RngSeed.default(stream) if seed is None else RngSeed(seed, stream)


def build_input_path(cfg: Dict[str, Any], space: HSpace, grid: TimeGrid) -> HPath:
    spec = cfg["input"]["M"]
    if spec["kind"] == "zero":
        return HPath.zeros(grid, space.dim)
    if spec["kind"] == "linear":
        rate = _vector(spec["rate"], space.dim)
        return HPath(grid, grid.t[:, None] * rate[None, :])
    qwiener = QWienerSpec.diagonal(space, [float(spec["scale"]) ** 2] * space.dim)
    return sample_qwiener(qwiener, grid, build_seed(cfg), 1).path(0)


def build_det_problem(cfg: Dict[str, Any], grid: TimeGrid | None = None) -> DetProblem:
    space = build_space(cfg["space"])
    grid = grid or build_grid(cfg)
    A = build_operator(cfg["operator"], space, cfg["constants"])
    f = HPath.constant(grid, _vector(cfg["input"]["f"], space.dim))
    return DetProblem(space, A, _vector(cfg["input"]["u0"], space.dim), f, build_input_path(cfg, space, grid))


def build_qwiener(cfg: Dict[str, Any], space: HSpace) -> QWienerSpec:
    noise = cfg["noise"]
    if "covariance" in noise:
        return QWienerSpec.from_covariance(space, np.asarray(noise["covariance"], dtype=float))
    return QWienerSpec.diagonal(space, noise["eigenvalues"])


def build_diffusion(spec: Dict[str, Any], qwiener: QWienerSpec) -> DiffusionCoefficient:
    if spec["kind"] == "constant":
        return DiffusionCoefficient.constant(np.asarray(spec["matrix"], dtype=float), qwiener)
    if spec["kind"] == "multiplicative":
        return DiffusionCoefficient.multiplicative(float(spec["sigma"]), qwiener)
    return DiffusionCoefficient.scaled_identity(float(spec["sigma"]), qwiener)


def build_drift(cfg: Dict[str, Any], dim: int) -> Drift:
    spec = cfg["input"].get("drift")
    if spec is None:
        return Drift.constant(_vector(cfg["input"]["f"], dim), dim)
    if spec["kind"] == "zero":
        return Drift.zero(dim)
    if spec["kind"] == "constant":
        return Drift.constant(_vector(spec["value"], dim), dim)
    matrix = np.asarray(spec["matrix"], dtype=float).reshape(dim, dim)
    return Drift.linear(matrix, _vector(spec["offset"], dim))


def build_sde_problem(cfg: Dict[str, Any]) -> SdeProblem:
    """Stochastic problem; declared L1, b1, L, b replace the built-in constants."""
    space = build_space(cfg["space"])
    constants = cfg["constants"]
    A = build_operator(cfg["operator"], space, constants)
    qwiener = build_qwiener(cfg, space)
    drift = build_drift(cfg, space.dim)
    B = build_diffusion(cfg["noise"]["diffusion"], qwiener)
    drift = dataclasses.replace(
        drift, lipschitz=constants.get("L1", drift.lipschitz), growth=constants.get("b1", drift.growth)
    )
    B = dataclasses.replace(B, lipschitz=constants.get("L", B.lipschitz), growth=constants.get("b", B.growth))
    return SdeProblem(space, A, _vector(cfg["input"]["u0"], space.dim), drift, B, qwiener, float(cfg["grid"]["T"]))
