"""Scenario JSON ingestion and validation.

See ``docs/scenario_schema.md`` for the file format. Validation collects
every violation it can find before giving up, so a broken file reports all
of its problems at once.
"""
from __future__ import annotations

import ast
import json
import math
from pathlib import Path
from typing import Any, Callable

import numpy as np

from .config import IntegratorSettings, Monitoring, ScenarioConfig
from .errors import FormationError, GraphError, ParseError, ValidationError
from .formation import EPS_COL, BearingSpec, spec_from_bearings, spec_from_target_config
from .geom import bearings_batch, min_eigenvalues_sym, projection_matrices
from .graph import build_acyclic_lf_graph
from .laws import LAWS, LeaderProfile, Obstacle, Segment, gamma_eig_bound, gamma_norm_bound

_FUNCS = {name: getattr(math, name) for name in ("sin", "cos", "tan", "exp", "sqrt", "log", "tanh", "atan")}
_CONSTS = {"pi": math.pi, "e": math.e}
_ALLOWED = (
    ast.Expression,
    ast.BinOp,
    ast.UnaryOp,
    ast.Constant,
    ast.Name,
    ast.Load,
    ast.Call,
    ast.Add,
    ast.Sub,
    ast.Mult,
    ast.Div,
    ast.Pow,
    ast.USub,
    ast.UAdd,
)


def compile_expression(text) -> Callable[[float], float]:
    """Compile an arithmetic expression in ``t`` (absolute time) to a function.

    Only numbers, ``t``, ``pi``, ``e``, + - * / ** and a few math functions are accepted.
    """
    if isinstance(text, (int, float)) and not isinstance(text, bool):
        value = float(text)
        return lambda t: value
    if not isinstance(text, str):
        raise ParseError(f"expression must be a number or string, got {text!r}")
    try:
        tree = ast.parse(text, mode="eval")
    except SyntaxError as exc:
        raise ParseError(f"cannot parse expression {text!r}: {exc.msg}") from None
    for node in ast.walk(tree):
        if not isinstance(node, _ALLOWED):
            raise ParseError(f"expression {text!r} uses unsupported syntax {type(node).__name__}")
        if isinstance(node, ast.Name) and node.id != "t" and node.id not in _FUNCS and node.id not in _CONSTS:
            raise ParseError(f"expression {text!r} uses unknown name {node.id!r}")
        if isinstance(node, ast.Call) and not (isinstance(node.func, ast.Name) and node.func.id in _FUNCS):
            raise ParseError(f"expression {text!r} calls an unsupported function")
        if isinstance(node, ast.Constant) and not isinstance(node.value, (int, float)):
            raise ParseError(f"expression {text!r} contains a non-numeric literal")
    code = compile(tree, "<expression>", "eval")
    env = {"__builtins__": {}, **_FUNCS, **_CONSTS}
    return lambda t: float(eval(code, env, {"t": float(t)}))


def _vector_fn(exprs, d: int) -> Callable[[float], np.ndarray]:
    if len(exprs) != d:
        raise ParseError(f"velocity needs {d} components, got {len(exprs)}")
    fns = [compile_expression(x) for x in exprs]
    return lambda t: np.array([fn(t) for fn in fns])


def build_profile(raw: dict, d: int) -> LeaderProfile:
    segs = []
    for s in raw.get("segments", []):
        k_raw = s.get("k_scale", 0.0)
        k_fn = compile_expression(k_raw)
        scaling = not (isinstance(k_raw, (int, float)) and float(k_raw) == 0.0)
        segs.append(
            Segment(
                t0=float(s["start"]),
                t1=float(s["end"]),
                velocity=_vector_fn(s["velocity"], d),
                k_scale=k_fn,
                scaling=scaling,
            )
        )
    if not segs:
        raise ParseError("leader profile needs at least one segment")
    return LeaderProfile(tuple(segs))


def _profile_problems(profile: LeaderProfile, end_time: float) -> list[str]:
    out = []
    segs = profile.segments
    if segs[0].t0 != 0.0:
        out.append(f"leader profile must start at t = 0, starts at {segs[0].t0}")
    for a, b in zip(segs, segs[1:]):
        if abs(a.t1 - b.t0) > 1e-12:
            out.append(f"leader profile has a gap or overlap between t = {a.t1} and t = {b.t0}")
    for s in segs:
        if not s.t1 > s.t0:
            out.append(f"segment [{s.t0}, {s.t1}] is empty")
    if end_time > profile.horizon + 1e-9:
        out.append(f"ProfileExhausted: end time {end_time} exceeds the leader profile horizon {profile.horizon}")
    return out


def _err(exc: FormationError) -> str:
    return f"{exc.code}: {exc}"


def build_scenario(raw: dict, base_dir: Path | None = None) -> ScenarioConfig:
    """Validate a parsed scenario document and assemble the run description."""
    problems: list[str] = []
    try:
        d = int(raw["dimension"])
        graph_raw = raw["graph"]
        ctrl = raw["controller"]
        lead_raw = raw["leaders"]
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"scenario is missing a required block: {exc}") from None
    if d not in (2, 3):
        raise ValidationError([f"dimension must be 2 or 3, got {d}"])

    try:
        graph = build_acyclic_lf_graph(int(graph_raw["leaders"]), graph_raw["followers"])
    except GraphError as exc:
        raise ValidationError([_err(exc)]) from None
    n, l = graph.n, graph.l

    integ = raw.get("integrator", {})
    settings = IntegratorSettings(
        step=float(integ.get("step", 1e-3)),
        end_time=float(integ.get("end_time", 1.0)),
        mode=str(integ.get("mode", "raw_sign")),
        layer_width=float(integ.get("layer_width", 1e-4)),
        stride=int(integ.get("stride", 1)),
    )
    problems += settings.problems()
    mon_raw = raw.get("monitoring", {})
    monitoring = Monitoring(
        convergence_threshold=float(mon_raw.get("convergence_threshold", 1e-3)),
        dwell_steps=int(mon_raw.get("dwell_steps", 50)),
        collision_threshold=float(mon_raw.get("collision_threshold", 1e-6)),
        bound_slack=float(mon_raw.get("bound_slack", 0.05)),
    )

    init = raw.get("initial", {})
    seed = init.get("seed")
    rng = np.random.default_rng(seed)

    bear = raw.get("bearings", {})
    spec: BearingSpec | None = None
    try:
        if "target_configuration" in bear:
            spec = spec_from_target_config(graph, _array(bear["target_configuration"], (n, d), "target_configuration"))
        elif "desired" in bear:
            leader_pos = init.get("positions")
            if leader_pos is None:
                raise ParseError("explicit desired bearings need initial.positions to anchor the leaders")
            table = {tuple(item["edge"]): item["bearing"] for item in bear["desired"]}
            missing = [e for e in graph.edges if e not in table]
            if missing:
                raise ParseError(f"no desired bearing given for edges {missing}")
            spec = spec_from_bearings(
                graph, [table[e] for e in graph.edges], _array(leader_pos, (n, d), "initial.positions")[:l]
            )
        else:
            raise ParseError("bearings block needs target_configuration or desired")
    except ParseError:
        raise
    except FormationError as exc:
        problems.append(_err(exc))
    if spec is None:
        raise ValidationError(problems)
    p_star = np.asarray(spec.target_config)

    if "positions" in init:
        p0 = _array(init["positions"], (n, d), "initial.positions")
    else:
        p0 = p_star.copy()
    if "follower_offset_box" in init:
        lo, hi = (float(x) for x in init["follower_offset_box"])
        p0[l:] = p0[l:] + rng.uniform(lo, hi, size=(n - l, d))

    law = str(ctrl.get("law", "bearing_only"))
    if law not in LAWS:
        problems.append(f"unknown law {law!r}; expected one of {', '.join(LAWS)}")
    alpha = float(ctrl.get("alpha", 0.5))
    beta = float(ctrl.get("beta", 1.0))
    if not 0.0 < alpha < 1.0:
        problems.append(f"alpha must lie in (0, 1), got {alpha}")
    if not beta > 0.0:
        problems.append(f"beta must be positive, got {beta}")

    try:
        profile = build_profile(lead_raw, d)
    except (KeyError, TypeError) as exc:
        raise ParseError(f"malformed leader segment: {exc}") from None
    problems += _profile_problems(profile, settings.end_time)
    vmax = profile.max_speed(dt=min(settings.step, 1e-2))
    if not beta > vmax:
        problems.append(f"Assumption 1: beta must exceed sup|v*| ({beta:g} <= {vmax:.6g})")

    estimates = gamma = rho = obstacle = None
    if law != "bearing_only" and law in LAWS:
        if "estimates" in init:
            estimates = _array(init["estimates"], (n, d), "initial.estimates")
        else:
            estimates = p_star.copy()
            if "estimate_box" in init:
                lo, hi = (float(x) for x in init["estimate_box"])
                estimates[l:] = estimates[l:] + rng.uniform(lo, hi, size=(n - l, d))
        estimates[:l] = p0[:l]
        bounds = np.array([gamma_eig_bound(spec.desired(i), beta) for i in graph.followers])
        g_raw = ctrl.get("gamma", "auto")
        if g_raw == "auto" or g_raw is None:
            gamma = bounds * float(ctrl.get("gamma_scale", 1.0))
        elif isinstance(g_raw, (int, float)):
            gamma = np.full(n - l, float(g_raw))
        else:
            gamma = np.asarray(g_raw, dtype=float)
            if gamma.shape != (n - l,):
                problems.append(f"gamma must be a scalar or one value per follower ({n - l}), got {len(gamma)}")
                gamma = None
        if gamma is not None:
            for k, i in enumerate(graph.followers):
                if gamma[k] < bounds[k] * (1.0 - 1e-12):
                    problems.append(
                        f"gamma condition: follower {i} has gamma = {gamma[k]:.6g} < beta*lambda_1^-1/2 = {bounds[k]:.6g}"
                        f" (norm-based bound {gamma_norm_bound(spec.desired(i), beta):.6g})"
                    )
        if law == "fixed_time_estimator":
            rho = float(ctrl.get("rho", 1.5))
            if not rho > 1.0:
                problems.append(f"rho must exceed 1, got {rho}")
        if law == "estimator_tracking_obstacle":
            ob = ctrl.get("obstacle")
            if ob is None:
                problems.append("estimator_tracking_obstacle needs an obstacle block")
            elif d != 2:
                problems.append("obstacle avoidance is defined for d = 2 only")
            else:
                try:
                    obstacle = Obstacle(
                        position=np.asarray(ob["position"], dtype=float),
                        radius=float(ob["radius"]),
                        sensing_range=float(ob.get("sensing_range", 2.0 * float(ob["radius"]))),
                        gain=float(ob["gain"]),
                    )
                except ValidationError as exc:
                    problems += exc.violations

    dist_ok = True
    diff = p0[:, None, :] - p0[None, :, :]
    dist = np.linalg.norm(diff, axis=2)
    np.fill_diagonal(dist, np.inf)
    if np.min(dist) <= monitoring.collision_threshold:
        i, j = np.unravel_index(np.argmin(dist), dist.shape)
        problems.append(f"Assumption 1: agents {i + 1} and {j + 1} start in collision")
        dist_ok = False
    if law == "bearing_only" and dist_ok:
        gb, _ = bearings_batch(p0[graph.tails], p0[graph.heads])
        lam = min_eigenvalues_sym(np.einsum("fe,eab->fab", graph.follower_edge_matrix, projection_matrices(gb)))
        for k in np.flatnonzero(~(lam > EPS_COL)):
            problems.append(f"CollinearNeighbors: follower {k + l + 1} starts collinear with its neighbors")

    if problems:
        raise ValidationError(problems)

    out = raw.get("output", {}).get("dir")
    output_dir = None
    if out is not None:
        output_dir = Path(out)
        if base_dir is not None and not output_dir.is_absolute():
            output_dir = base_dir / output_dir
    return ScenarioConfig(
        name=str(raw.get("name", "scenario")),
        spec=spec,
        law=law,
        alpha=alpha,
        beta=beta,
        profile=profile,
        initial_positions=p0,
        settings=settings,
        initial_estimates=estimates,
        gamma=gamma,
        rho=rho,
        obstacle=obstacle,
        monitoring=monitoring,
        seed=seed,
        output_dir=output_dir,
        source=raw,
    )


def _array(value: Any, shape: tuple[int, int], what: str) -> np.ndarray:
    try:
        arr = np.array(value, dtype=float)
    except (TypeError, ValueError):
        raise ParseError(f"{what} is not a numeric array") from None
    if arr.shape != shape:
        raise ParseError(f"{what} must have shape {shape}, got {arr.shape}")
    return arr


def load_scenario(path) -> ScenarioConfig:
    """Read and validate a scenario file. Relative output paths resolve against the file's directory."""
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except FileNotFoundError:
        raise ParseError(f"scenario file {path} not found") from None
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from None
    if not isinstance(raw, dict):
        raise ParseError(f"{path}: top level must be an object")
    return build_scenario(raw, base_dir=path.parent)
