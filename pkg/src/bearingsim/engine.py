"""Fixed-step forward-Euler integration of leader, follower and estimator dynamics."""
from __future__ import annotations

import logging
import weakref
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import pdist

from .config import IntegratorSettings, ScenarioConfig
from .errors import (
    AgentCollision,
    CollinearNeighbors,
    FormationError,
    NonFiniteState,
    ProfileExhausted,
    ValidationError,
)
from .formation import EPS_COL
from .geom import bearings_batch, min_eigenvalues_sym, projection_matrices
from .graph import validate_acyclic
from .laws import (
    bearing_only_batch,
    estimator_batch,
    leader_velocity,
    obstacle_avoid_control,
    tracking_rhs,
)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class WorldState:
    t: float
    k: int
    positions: np.ndarray
    estimates: np.ndarray | None = None


@dataclass
class SimTrace:
    """Sampled time series of one run. Follower arrays have one column per follower (ids l+1..n)."""

    n: int
    l: int
    d: int
    edges: list[tuple[int, int]]
    step: float
    stride: int
    times: np.ndarray
    positions: np.ndarray
    estimates: np.ndarray | None
    bearing_errors: np.ndarray
    position_errors: np.ndarray
    estimate_errors: np.ndarray | None
    lambda1: np.ndarray
    control_norms: np.ndarray
    events: list[dict] = field(default_factory=list)
    scaling_windows: list[tuple[float, float]] = field(default_factory=list)

    @property
    def followers(self) -> list[int]:
        return list(range(self.l + 1, self.n + 1))

    @property
    def aborted(self) -> dict | None:
        for ev in self.events:
            if ev["kind"] == "abort":
                return ev
        return None

    def convergence_times(self, kind: str = "converged") -> dict[int, float]:
        return {ev["agent"]: ev["t"] for ev in self.events if ev["kind"] == kind}


class Dynamics:
    """Precomputed arrays for one scenario plus the right-hand-side evaluation."""

    def __init__(self, sc: ScenarioConfig, settings: IntegratorSettings | None = None):
        self.sc = sc
        self.settings = settings or sc.settings
        g = sc.graph
        self.n, self.l, self.d = g.n, g.l, sc.d
        self.tails, self.heads = g.tails, g.heads
        self.S = g.follower_edge_matrix
        self.g_star = sc.spec.desired_bearings
        self.P_star = projection_matrices(self.g_star)
        self.target_map = sc.spec.target_map
        self.sign = self.settings.sign_fn()
        self.gamma = None if sc.gamma is None else np.asarray(sc.gamma, dtype=float)
        self.rho = sc.rho if sc.law == "fixed_time_estimator" else None
        self.pairs_i, self.pairs_j = np.triu_indices(self.n, 1)

    def targets(self, positions: np.ndarray) -> np.ndarray:
        return (self.target_map @ positions[: self.l].reshape(-1)).reshape(self.n, self.d)

    def rates(self, state: WorldState) -> tuple[np.ndarray, np.ndarray | None, np.ndarray | None]:
        """(position rates (n, d), estimate rates (n, d) or None, measured lambda_1 or None)."""
        sc = self.sc
        p = state.positions
        v = np.empty_like(p)
        v[: self.l] = leader_velocity(sc.profile, p[: self.l], state.t)
        if sc.law == "bearing_only":
            u, lam = bearing_only_batch(
                p, self.tails, self.heads, self.g_star, self.S, sc.alpha, sc.beta, self.sign, self.l + 1
            )
            v[self.l :] = u
            return v, None, lam
        phat = state.estimates.copy()
        phat[: self.l] = p[: self.l]
        w = np.zeros_like(p)
        w[: self.l] = v[: self.l]
        w[self.l :] = estimator_batch(
            phat, self.tails, self.heads, self.P_star, self.S, sc.alpha, self.gamma, self.sign, self.rho
        )
        if sc.law == "estimator_tracking_obstacle":
            v[self.l :] = obstacle_avoid_control(p[self.l :], phat[self.l :], sc.obstacle, sc.alpha, sc.beta, self.sign)
        else:
            v[self.l :] = tracking_rhs(p[self.l :], phat[self.l :], sc.alpha, sc.beta, self.sign)
        return v, w, None

    def measured_lambda1(self, p: np.ndarray) -> np.ndarray:
        g, _ = bearings_batch(p[self.tails], p[self.heads])
        M = np.einsum("fe,eab->fab", self.S, projection_matrices(g))
        return min_eigenvalues_sym(M)

    def bearing_errors(self, p: np.ndarray) -> np.ndarray:
        g, _ = bearings_batch(p[self.tails], p[self.heads])
        return np.linalg.norm(g - self.g_star, axis=1)


_DYNAMICS: "weakref.WeakKeyDictionary[ScenarioConfig, dict]" = weakref.WeakKeyDictionary()


def _dynamics(sc: ScenarioConfig, settings: IntegratorSettings) -> Dynamics:
    per = _DYNAMICS.setdefault(sc, {})
    key = (settings.mode, settings.layer_width)
    if key not in per:
        per[key] = Dynamics(sc, settings)
    return per[key]


def monitor_hypotheses(state: WorldState, sc: ScenarioConfig, lambda1: np.ndarray | None = None) -> list[dict]:
    """Check the standing hypotheses (no collision, non-collinear neighbourhoods, |v*| < beta).

    Returns structured diagnostics; entries with severity "error" abort a run.
    """
    out: list[dict] = []
    p = state.positions
    if not np.all(np.isfinite(p)) or (state.estimates is not None and not np.all(np.isfinite(state.estimates))):
        out.append({"kind": "NonFiniteState", "severity": "error", "message": "non-finite state"})
        return out
    thr = sc.monitoring.collision_threshold
    dist = pdist(p)
    close = np.flatnonzero(dist <= thr)
    if close.size:
        iu, ju = np.triu_indices(p.shape[0], 1)
        for c in close:
            out.append(
                {
                    "kind": "AgentCollision",
                    "severity": "error",
                    "agents": [int(iu[c]) + 1, int(ju[c]) + 1],
                    "value": float(dist[c]),
                    "message": f"agents {iu[c] + 1} and {ju[c] + 1} within {dist[c]:.3e} m",
                }
            )
        return out
    if sc.law == "bearing_only":
        if lambda1 is None:
            g = sc.graph
            gb, _ = bearings_batch(p[g.tails], p[g.heads])
            lambda1 = min_eigenvalues_sym(np.einsum("fe,eab->fab", g.follower_edge_matrix, projection_matrices(gb)))
        for k in np.flatnonzero(~(np.asarray(lambda1) > EPS_COL)):
            out.append(
                {
                    "kind": "CollinearNeighbors",
                    "severity": "error",
                    "agents": [int(k) + sc.graph.l + 1],
                    "value": float(lambda1[k]),
                    "message": f"follower {k + sc.graph.l + 1} has lambda_1 = {lambda1[k]:.3e}",
                }
            )
    speed = float(np.linalg.norm(sc.profile.reference_velocity(state.t)))
    if not speed < sc.beta:
        out.append(
            {
                "kind": "SpeedBound",
                "severity": "warning",
                "value": speed,
                "message": f"|v*(t)| = {speed:.4g} is not below beta = {sc.beta:g}",
            }
        )
    return out


_ERRORS = {"AgentCollision": AgentCollision, "CollinearNeighbors": CollinearNeighbors, "NonFiniteState": NonFiniteState}


def _raise_first_error(diags: list[dict]) -> None:
    for dg in diags:
        if dg["severity"] == "error":
            raise _ERRORS[dg["kind"]](dg["message"])


def step(state: WorldState, sc: ScenarioConfig, settings: IntegratorSettings | None = None) -> WorldState:
    """Advance every agent and estimator by one Euler step from the frozen state."""
    settings = settings or sc.settings
    dyn = _dynamics(sc, settings)
    v, w, lam = dyn.rates(state)
    _raise_first_error(monitor_hypotheses(state, sc, lam))
    return _advance(state, v, w, settings.step, dyn.l)


def _advance(state: WorldState, v, w, h: float, l: int) -> WorldState:
    k = state.k + 1
    p = state.positions + h * v
    est = None
    if w is not None:
        est = state.estimates + h * w
        est[:l] = p[:l]
    if not np.all(np.isfinite(p)) or (est is not None and not np.all(np.isfinite(est))):
        raise NonFiniteState(f"non-finite state after step {k}")
    return WorldState(t=k * h, k=k, positions=p, estimates=est)


def initial_state(sc: ScenarioConfig) -> WorldState:
    p = np.array(sc.initial_positions, dtype=float)
    est = None
    if sc.uses_estimator:
        est = np.array(sc.initial_estimates, dtype=float)
        est[: sc.graph.l] = p[: sc.graph.l]
    return WorldState(t=0.0, k=0, positions=p, estimates=est)


def _first_dwell(below: np.ndarray, start: int, dwell: int) -> int | None:
    """First index k >= start with below[k : k + dwell] all true."""
    n = below.size
    if start >= n or n - start < dwell:
        return None
    above = np.concatenate([[0], np.cumsum(~below)])
    ks = np.arange(start, n - dwell + 1)
    ok = (above[ks + dwell] - above[ks]) == 0
    hit = np.flatnonzero(ok)
    return int(ks[hit[0]]) if hit.size else None


def convergence_steps(sc: ScenarioConfig, errors: np.ndarray, threshold: float, dwell: int) -> dict[int, int]:
    """Step index at which each follower converges, searched only after all its neighbours converged."""
    g = sc.graph
    found: dict[int, int] = {i: 0 for i in g.leaders}
    for i in validate_acyclic(g):
        if i <= g.l:
            continue
        nb = [found.get(j) for j in g.neighbors(i)]
        if any(s is None for s in nb):
            found[i] = None
            continue
        k = _first_dwell(errors[:, i - g.l - 1] < threshold, max(nb), dwell)
        found[i] = k
    return {i: k for i, k in found.items() if i > g.l and k is not None}


def run(sc: ScenarioConfig, settings: IntegratorSettings | None = None) -> SimTrace:
    """Integrate from t = 0 to the end time; runtime hypothesis violations end the run early.

    An aborted run still returns its trace, with an ``abort`` event naming the step.
    """
    settings = settings or sc.settings
    problems = settings.problems()
    if problems:
        raise ValidationError(problems)
    if settings.end_time > sc.profile.horizon + 1e-9:
        raise ProfileExhausted(f"end time {settings.end_time} exceeds the leader profile horizon {sc.profile.horizon}")
    dyn = _dynamics(sc, settings)
    n, l, d, f, m = dyn.n, dyn.l, dyn.d, dyn.n - dyn.l, sc.graph.m
    N, stride, h = settings.n_steps, settings.stride, settings.step
    K = N // stride + 1
    est_on = sc.uses_estimator

    times = np.full(K, np.nan)
    pos = np.full((K, n, d), np.nan)
    est = np.full((K, n, d), np.nan) if est_on else None
    berr = np.full((K, m), np.nan)
    perr = np.full((K, f), np.nan)
    eerr = np.full((K, f), np.nan) if est_on else None
    lam1 = np.full((K, f), np.nan)
    unorm = np.full((K, f), np.nan)
    step_perr = np.full((N + 1, f), np.nan)
    step_eerr = np.full((N + 1, f), np.nan) if est_on else None
    events: list[dict] = []
    warned: set[str] = set()

    seg_prev = None
    state = initial_state(sc)
    kk = 0
    last_good = -1
    try:
        while True:
            k = state.k
            p = state.positions
            targets = dyn.targets(p)
            step_perr[k] = np.linalg.norm(p[l:] - targets[l:], axis=1)
            if est_on:
                step_eerr[k] = np.linalg.norm(state.estimates[l:] - targets[l:], axis=1)
            seg = sc.profile.segment_at(state.t)
            if seg is not seg_prev:
                events.append({"t": state.t, "kind": "phase", "agent": None, "detail": f"[{seg.t0:g}, {seg.t1:g}]"})
                seg_prev = seg
            v, w, lam = dyn.rates(state)
            diags = monitor_hypotheses(state, sc, lam)
            for dg in diags:
                if dg["severity"] == "warning" and dg["kind"] not in warned:
                    warned.add(dg["kind"])
                    events.append({"t": state.t, "kind": "warning", "agent": None, "detail": dg["message"]})
            _raise_first_error(diags)
            if k % stride == 0:
                times[kk] = state.t
                pos[kk] = p
                if est_on:
                    est[kk] = state.estimates
                    est[kk, :l] = p[:l]
                    eerr[kk] = step_eerr[k]
                berr[kk] = dyn.bearing_errors(p)
                perr[kk] = step_perr[k]
                lam1[kk] = lam if lam is not None else dyn.measured_lambda1(p)
                unorm[kk] = np.linalg.norm(v[l:], axis=1)
                kk += 1
            last_good = k
            if k >= N:
                break
            state = _advance(state, v, w, h, l)
    except FormationError as exc:
        events.append(
            {"t": state.t, "kind": "abort", "agent": None, "detail": f"{exc.code}: {exc}", "step": int(state.k)}
        )
        log.warning("run %s aborted at step %d: %s", sc.name, state.k, exc)

    thr, dwell = sc.monitoring.convergence_threshold, sc.monitoring.dwell_steps
    valid = slice(0, last_good + 1)
    if est_on:
        for i, k in convergence_steps(sc, step_eerr[valid], thr, dwell).items():
            events.append({"t": k * h, "kind": "estimate_converged", "agent": i, "detail": f"|p_hat - p*| < {thr:g}"})
    for i, k in convergence_steps(sc, step_perr[valid], thr, dwell).items():
        events.append({"t": k * h, "kind": "converged", "agent": i, "detail": f"|p - p*| < {thr:g}"})
    events.sort(key=lambda ev: (ev["t"], ev["kind"], ev["agent"] or 0))

    keep = slice(0, kk)
    return SimTrace(
        n=n,
        l=l,
        d=d,
        edges=list(sc.graph.edges),
        step=h,
        stride=stride,
        times=times[keep],
        positions=pos[keep],
        estimates=None if est is None else est[keep],
        bearing_errors=berr[keep],
        position_errors=perr[keep],
        estimate_errors=None if eerr is None else eerr[keep],
        lambda1=lam1[keep],
        control_norms=unorm[keep],
        events=events,
        scaling_windows=sc.profile.scaling_windows(),
    )
