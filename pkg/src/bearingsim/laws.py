"""Follower control laws, position estimators and leader reference velocities.

The ``*_batch`` kernels evaluate a law for every follower at once from
per-edge arrays; they return the raw (discontinuous) right-hand side and
leave discretisation to the integrator. The per-agent functions wrap the
same kernels for a single follower and its neighbours.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import AgentCollision, CollinearNeighbors, DegenerateScaling, ObstacleCoincidence, ProfileExhausted, ValidationError
from .formation import EPS_COL
from .geom import EPS_ZERO, bearings_batch, min_eigenvalues_sym, projection_matrices, sig_pow, sign_vec

SignFn = Callable[[np.ndarray], np.ndarray]

LAWS = ("bearing_only", "estimator_tracking", "estimator_tracking_obstacle", "fixed_time_estimator")

# rotates the inward obstacle bearing by -90 degrees
J_ROT = np.array([[0.0, 1.0], [-1.0, 0.0]])


@dataclass(frozen=True)
class BearingOnlyGains:
    alpha: float
    beta: float

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ValidationError([f"alpha must lie in (0, 1), got {self.alpha}"])
        if not self.beta > 0.0:
            raise ValidationError([f"beta must be positive, got {self.beta}"])


@dataclass(frozen=True)
class EstimatorGains:
    alpha: float
    beta: float
    gamma: np.ndarray
    rho: float | None = None

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ValidationError([f"alpha must lie in (0, 1), got {self.alpha}"])
        if not self.beta > 0.0:
            raise ValidationError([f"beta must be positive, got {self.beta}"])
        if self.rho is not None and not self.rho > 1.0:
            raise ValidationError([f"rho must exceed 1 for the fixed-time estimator, got {self.rho}"])


def state_gains(lambda1, alpha: float) -> tuple[np.ndarray, np.ndarray]:
    """k1 = lambda_1^-(alpha+1)/2 and k2 = lambda_1^-1/2."""
    lam = np.asarray(lambda1, dtype=float)
    return lam ** (-(alpha + 1.0) / 2.0), lam ** -0.5


def gamma_norm_bound(desired_bearings, beta: float) -> float:
    """beta / |sum_j P_{g*_ij}| (spectral norm), the condition stated alongside the estimator."""
    M = projection_matrices(np.asarray(desired_bearings, dtype=float)).sum(axis=0)
    return beta / float(np.linalg.eigvalsh(M)[-1])


def gamma_eig_bound(desired_bearings, beta: float) -> float:
    """beta / sqrt(lambda_1(sum_j P_{g*_ij})), the condition the descent argument actually needs."""
    M = projection_matrices(np.asarray(desired_bearings, dtype=float)).sum(axis=0)
    return beta / float(np.sqrt(min_eigenvalues_sym(M)))


# --- leader motion ---------------------------------------------------------


@dataclass(frozen=True)
class Segment:
    t0: float
    t1: float
    velocity: Callable[[float], np.ndarray]
    k_scale: Callable[[float], float] = field(default=lambda t: 0.0)
    scaling: bool = False


@dataclass(frozen=True)
class LeaderProfile:
    """Piecewise reference motion: common translation f(t) plus optional scaling.

    Segments are half-open [t0, t1) except the last, which is closed.
    """

    segments: tuple[Segment, ...]

    @property
    def horizon(self) -> float:
        return self.segments[-1].t1

    def segment_at(self, t: float) -> Segment:
        for seg in self.segments:
            if seg.t0 <= t < seg.t1:
                return seg
        last = self.segments[-1]
        if abs(t - last.t1) <= 1e-9 * max(1.0, abs(last.t1)):
            return last
        raise ProfileExhausted(f"t = {t} lies outside the leader profile [{self.segments[0].t0}, {last.t1}]")

    def reference_velocity(self, t: float) -> np.ndarray:
        return np.asarray(self.segment_at(t).velocity(t), dtype=float)

    def scaling_windows(self) -> list[tuple[float, float]]:
        return [(s.t0, s.t1) for s in self.segments if s.scaling]

    def max_speed(self, dt: float = 1e-3) -> float:
        """sup |f(t)| sampled on a grid of spacing dt plus every segment endpoint."""
        best = 0.0
        for seg in self.segments:
            n = max(2, int(np.ceil((seg.t1 - seg.t0) / dt)) + 1)
            for t in np.linspace(seg.t0, seg.t1, n):
                best = max(best, float(np.linalg.norm(seg.velocity(float(t)))))
        return best


def leader_velocity(profile: LeaderProfile, leader_positions, t: float) -> np.ndarray:
    """Per-leader velocity f(t) + k_scale(t) h_i / |h|, with h the stacked offsets from the centroid."""
    pl = np.asarray(leader_positions, dtype=float)
    seg = profile.segment_at(t)
    v = np.broadcast_to(np.asarray(seg.velocity(t), dtype=float), pl.shape).copy()
    k = float(seg.k_scale(t))
    if k != 0.0:
        h = pl - pl.mean(axis=0)
        nrm = np.linalg.norm(h)
        if not nrm > EPS_ZERO:
            raise DegenerateScaling(f"leaders coincide at t = {t}; scaling direction undefined")
        v += k * h / nrm
    return v


# --- bearing-only law ------------------------------------------------------


def bearing_only_batch(
    p: np.ndarray,
    tails: np.ndarray,
    heads: np.ndarray,
    g_star: np.ndarray,
    S: np.ndarray,
    alpha: float,
    beta: float,
    sign: SignFn = sign_vec,
    first_follower: int = 1,
) -> tuple[np.ndarray, np.ndarray]:
    """Bearing-only law for every follower. Returns (u, lambda_1(M_i)), shapes (f, d) and (f,).

    ``first_follower`` is the 1-based id of follower row 0, used in error messages.
    """
    try:
        g, _ = bearings_batch(p[tails], p[heads])
    except AgentCollision:
        dist = np.linalg.norm(p[heads] - p[tails], axis=1)
        e = int(np.argmin(dist))
        raise AgentCollision(
            f"agents {tails[e] + 1} and {heads[e] + 1} collide (distance {dist[e]:.3e})",
            agents=(int(tails[e]) + 1, int(heads[e]) + 1),
        ) from None
    P = projection_matrices(g)
    r = np.einsum("eab,eb->ea", P, g_star)
    fine = np.einsum("eab,eb->ea", P, sig_pow(r, alpha))
    coarse = np.einsum("eab,eb->ea", P, sign(r))
    M = np.einsum("fe,eab->fab", S, P)
    lam = min_eigenvalues_sym(M)
    bad = np.flatnonzero(~(lam > EPS_COL))
    if bad.size:
        k = int(bad[0])
        raise CollinearNeighbors(
            f"follower {first_follower + k} and its neighbors are collinear (lambda_1 = {lam[k]:.3e})",
            follower=first_follower + k,
            lambda1=float(lam[k]),
        )
    k1, k2 = state_gains(lam, alpha)
    u = -k1[:, None] * (S @ fine) - (k2 * beta)[:, None] * (S @ coarse)
    return u, lam


def _single(p_i, neighbor_positions) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    pj = np.atleast_2d(np.asarray(neighbor_positions, dtype=float))
    r = pj.shape[0]
    p = np.vstack([np.asarray(p_i, dtype=float)[None], pj])
    tails = np.zeros(r, dtype=int)
    heads = np.arange(1, r + 1)
    return p, tails, heads, np.ones((1, r))


def bearing_only_control(p_i, neighbor_positions, desired_bearings, alpha: float, beta: float, sign: SignFn = sign_vec):
    """Bearing-only velocity command for one follower from measured bearings."""
    p, tails, heads, S = _single(p_i, neighbor_positions)
    u, _ = bearing_only_batch(p, tails, heads, np.asarray(desired_bearings, dtype=float), S, alpha, beta, sign)
    return u[0]


def lyapunov_chain(p_i, neighbor_positions, desired_bearings, target, alpha: float, beta: float) -> dict:
    """Terms of the descent inequalities for a follower whose neighbours sit at their targets.

    With e = p_i - p*_i the law satisfies
      e . sum_j P sig(P g*)^a  >= l1^((a+1)/2) |e|^(a+1) / max|z*|^a
      e . sum_j P sign(P g*)   >= l1^(1/2) |e|
    and therefore e . u <= -|e|^(a+1)/max|z*|^a - beta |e|.
    """
    pj = np.atleast_2d(np.asarray(neighbor_positions, dtype=float))
    gs = np.asarray(desired_bearings, dtype=float)
    p_i = np.asarray(p_i, dtype=float)
    e = p_i - np.asarray(target, dtype=float)
    g, _ = bearings_batch(np.broadcast_to(p_i, pj.shape), pj)
    P = projection_matrices(g)
    r = np.einsum("eab,eb->ea", P, gs)
    lam = float(min_eigenvalues_sym(P.sum(axis=0)))
    zmax = float(np.max(np.linalg.norm(pj - np.asarray(target, dtype=float), axis=1)))
    en = float(np.linalg.norm(e))
    fine = float(e @ np.einsum("eab,eb->a", P, sig_pow(r, alpha)))
    coarse = float(e @ np.einsum("eab,eb->a", P, sign_vec(r)))
    u = bearing_only_control(p_i, pj, gs, alpha, beta)
    return {
        "error": en,
        "lambda1": lam,
        "fine_term": fine,
        "fine_bound": lam ** ((alpha + 1) / 2) * en ** (alpha + 1) / zmax**alpha,
        "sign_term": coarse,
        "sign_bound": lam**0.5 * en,
        "descent": float(e @ u),
        "descent_bound": -(en ** (alpha + 1)) / zmax**alpha - beta * en,
    }


# --- estimator / tracking laws --------------------------------------------


def estimator_batch(
    phat: np.ndarray,
    tails: np.ndarray,
    heads: np.ndarray,
    P_star: np.ndarray,
    S: np.ndarray,
    alpha: float,
    gamma: np.ndarray,
    sign: SignFn = sign_vec,
    rho: float | None = None,
) -> np.ndarray:
    """Target-point estimator rates for every follower, shape (f, d).

    With ``rho`` set, adds the super-linear sig(.)^rho term of the fixed-time variant.
    """
    x = np.einsum("eab,eb->ea", P_star, phat[heads] - phat[tails])
    drive = sig_pow(x, alpha)
    if rho is not None:
        drive = drive + sig_pow(x, rho)
    fine = np.einsum("eab,eb->ea", P_star, drive)
    coarse = np.einsum("eab,eb->ea", P_star, sign(x))
    return S @ fine + np.asarray(gamma, dtype=float)[:, None] * (S @ coarse)


def estimator_rhs(phat_i, neighbor_estimates, desired_bearings, gamma: float, alpha: float, sign: SignFn = sign_vec):
    """Estimator rate for one follower; uses desired bearings only."""
    p, tails, heads, S = _single(phat_i, neighbor_estimates)
    P_star = projection_matrices(np.asarray(desired_bearings, dtype=float))
    return estimator_batch(p, tails, heads, P_star, S, alpha, np.array([gamma]), sign)[0]


def fixed_time_estimator_rhs(
    phat_i, neighbor_estimates, desired_bearings, gamma: float, alpha: float, rho: float, sign: SignFn = sign_vec
):
    if not rho > 1.0:
        raise ValueError(f"rho must exceed 1, got {rho}")
    p, tails, heads, S = _single(phat_i, neighbor_estimates)
    P_star = projection_matrices(np.asarray(desired_bearings, dtype=float))
    return estimator_batch(p, tails, heads, P_star, S, alpha, np.array([gamma]), sign, rho=rho)[0]


def tracking_rhs(p_i, phat_i, alpha: float, beta: float, sign: SignFn = sign_vec):
    """-sig(p - p_hat)^alpha - beta sign(p - p_hat); works on single points or stacks."""
    e = np.asarray(p_i, dtype=float) - np.asarray(phat_i, dtype=float)
    return -sig_pow(e, alpha) - beta * sign(e)


@dataclass(frozen=True)
class Obstacle:
    position: np.ndarray
    radius: float
    sensing_range: float
    gain: float

    def __post_init__(self):
        problems = []
        if np.asarray(self.position).shape != (2,):
            problems.append("obstacle avoidance is defined for d = 2 only")
        if not 0.0 < self.radius < self.sensing_range:
            problems.append(f"obstacle needs 0 < d < d_max, got d={self.radius}, d_max={self.sensing_range}")
        if not self.gain > 1.0:
            problems.append(f"obstacle gain k must exceed 1, got {self.gain}")
        if problems:
            raise ValidationError(problems)


def obstacle_avoid_control(p_i, phat_i, obstacle: Obstacle, alpha: float, beta: float, sign: SignFn = sign_vec):
    """Tracking law blended with radial repulsion and a tangential push inside the activation disc.

    Accepts a single 2-vector or a stack of shape (f, 2).
    """
    p = np.asarray(p_i, dtype=float)
    phat = np.asarray(phat_i, dtype=float)
    if p.shape[-1] != 2:
        raise ValueError("obstacle avoidance is defined for d = 2 only")
    track = tracking_rhs(p, phat, alpha, beta, sign)
    rel = p - obstacle.position
    dist = np.linalg.norm(rel, axis=-1, keepdims=True)
    inside = dist < obstacle.radius
    if not np.any(inside):
        return track
    if np.any(inside & ~(dist > EPS_ZERO)):
        raise ObstacleCoincidence("agent sits on the obstacle centre; avoidance direction undefined")
    safe = np.where(dist > EPS_ZERO, dist, 1.0)
    tangent = (-rel / safe) @ J_ROT.T
    avoid = obstacle.gain * rel + tangent
    return np.where(inside, avoid, track)

