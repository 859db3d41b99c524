"""Convergence metrics, finite-time bounds and the per-run report."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .config import BOUND_SLACK, ScenarioConfig
from .engine import SimTrace
from .formation import BearingSpec


def eta(alpha: float, max_edge_length: float) -> float:
    """Decay rate 2^((alpha+1)/2) / max_j |z*_ij|^alpha of the follower Lyapunov function."""
    return 2.0 ** ((alpha + 1.0) / 2.0) / max_edge_length**alpha


def bound_increment(V: float, alpha: float, max_edge_length: float) -> float:
    """Time for V = |p_i - p*_i|^2 / 2 to reach zero under the worst-case decay rate."""
    if alpha >= 1.0:
        return float("inf")
    if V <= 0.0:
        return 0.0
    return 2.0 * V ** ((1.0 - alpha) / 2.0) / (eta(alpha, max_edge_length) * (1.0 - alpha))


def max_desired_lengths(spec: BearingSpec, targets: np.ndarray) -> np.ndarray:
    """max_j |p*_j - p*_i| over each follower's neighbours, in follower order."""
    g = spec.graph
    lengths = np.linalg.norm(targets[g.heads] - targets[g.tails], axis=1)
    return np.array([lengths[g.edge_ids(i)].max() for i in g.followers])


def theoretical_bounds(spec: BearingSpec, initial_positions, alpha: float) -> dict[int, float]:
    """A priori cumulative bounds T_i, follower by follower.

    Each V_i is taken at t = 0 against the targets attached to the initial
    leader positions, standing in for the unknown V_i(T_{i-1}).
    """
    g = spec.graph
    p = np.asarray(initial_positions, dtype=float)
    targets = spec.targets_from_leaders(p[: g.l])
    zmax = max_desired_lengths(spec, targets)
    V = 0.5 * np.sum((p[g.l :] - targets[g.l :]) ** 2, axis=1)
    out, T = {}, 0.0
    for k, i in enumerate(g.followers):
        T = T + bound_increment(float(V[k]), alpha, float(zmax[k]))
        out[i] = T
    return out


@dataclass
class PosterioriBound:
    T: float
    V_at_start: float
    extrapolated: bool


def posteriori_bounds(trace: SimTrace, spec: BearingSpec, alpha: float) -> dict[int, PosterioriBound]:
    """Cumulative bounds with V_i read off the trace at T_{i-1}.

    The latest sample at or before T_{i-1} is used, which over-estimates V_i
    since it is non-increasing once the neighbours have settled. When T_{i-1}
    lies beyond the trace the last sample is used and the entry is flagged.
    """
    g = spec.graph
    times = trace.times
    out: dict[int, PosterioriBound] = {}
    T = 0.0
    for k, i in enumerate(g.followers):
        if not np.isfinite(T):
            out[i] = PosterioriBound(float("inf"), float("nan"), True)
            continue
        idx = int(np.searchsorted(times, T + 1e-12, side="right")) - 1
        extrapolated = idx >= times.size - 1 and T > times[-1]
        idx = min(max(idx, 0), times.size - 1)
        p = trace.positions[idx]
        targets = spec.targets_from_leaders(p[: g.l])
        zmax = max_desired_lengths(spec, targets)[k]
        V = 0.5 * float(trace.position_errors[idx, k]) ** 2
        T = T + bound_increment(V, alpha, float(zmax))
        out[i] = PosterioriBound(T, V, bool(extrapolated))
    return out


def bound_satisfied(measured: float | None, bound: float, slack: float, horizon: float) -> bool | None:
    """True/False when decidable, None when the run ended before the slackened bound without converging."""
    limit = bound * (1.0 + slack)
    if measured is not None:
        return measured <= limit
    return False if limit <= horizon else None


def outside_windows(times: np.ndarray, windows) -> np.ndarray:
    mask = np.ones(times.shape, dtype=bool)
    for a, b in windows:
        mask &= ~((times >= a) & (times <= b))
    return mask


@dataclass
class FollowerReport:
    agent: int
    converged_at: float | None
    estimate_converged_at: float | None
    bound_a_priori: float | None
    bound_a_posteriori: float | None
    bound_extrapolated: bool | None
    bound_satisfied: bool | None
    max_bearing_error_after: float | None
    max_bearing_error_after_in_windows: float | None


@dataclass
class RunReport:
    scenario: str
    law: str
    step: float
    end_time: float
    followers: list[FollowerReport]
    max_bearing_error_after: float | None
    warnings: list[str]
    abort: dict | None
    bound_slack: float = BOUND_SLACK
    files: dict[str, str] = field(default_factory=dict)

    @property
    def all_converged(self) -> bool:
        return all(f.converged_at is not None for f in self.followers)

    @property
    def bounds_ok(self) -> bool:
        return all(f.bound_satisfied is not False for f in self.followers)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["all_converged"] = self.all_converged
        out["bounds_ok"] = self.bounds_ok
        return out


def _nanmax(x) -> float | None:
    x = np.asarray(x, dtype=float)
    x = x[np.isfinite(x)]
    return float(x.max()) if x.size else None


def compute_metrics(trace: SimTrace, sc: ScenarioConfig) -> RunReport:
    spec, g = sc.spec, sc.graph
    slack = sc.monitoring.bound_slack
    conv = trace.convergence_times("converged")
    econv = trace.convergence_times("estimate_converged")
    # the finite-time bound is a property of the bearing-only law
    with_bounds = sc.law == "bearing_only"
    prior = theoretical_bounds(spec, sc.initial_positions, sc.alpha) if with_bounds else {}
    post = posteriori_bounds(trace, spec, sc.alpha) if with_bounds and trace.times.size else {}
    horizon = float(trace.times[-1]) if trace.times.size else 0.0
    quiet = outside_windows(trace.times, trace.scaling_windows)

    rows = []
    for k, i in enumerate(g.followers):
        eids = g.edge_ids(i)
        t_c = conv.get(i)
        after = after_in = None
        if t_c is not None:
            late = trace.times >= t_c
            after = _nanmax(trace.bearing_errors[late & quiet][:, eids])
            after_in = _nanmax(trace.bearing_errors[late & ~quiet][:, eids])
        pb = post.get(i)
        rows.append(
            FollowerReport(
                agent=i,
                converged_at=t_c,
                estimate_converged_at=econv.get(i),
                bound_a_priori=prior.get(i),
                bound_a_posteriori=None if pb is None else pb.T,
                bound_extrapolated=None if pb is None else pb.extrapolated,
                bound_satisfied=None if pb is None else bound_satisfied(t_c, pb.T, slack, horizon),
                max_bearing_error_after=after,
                max_bearing_error_after_in_windows=after_in,
            )
        )
    if conv and len(conv) == len(g.followers):
        t_all = max(conv.values())
        overall = _nanmax(trace.bearing_errors[(trace.times >= t_all) & quiet])
    else:
        overall = None
    return RunReport(
        scenario=sc.name,
        law=sc.law,
        step=trace.step,
        end_time=horizon,
        followers=rows,
        max_bearing_error_after=overall,
        warnings=[ev["detail"] for ev in trace.events if ev["kind"] == "warning"],
        abort=trace.aborted,
        bound_slack=slack,
    )
