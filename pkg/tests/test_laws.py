from __future__ import annotations

import numpy as np
import pytest

from bearingsim.errors import (
    AgentCollision,
    CollinearNeighbors,
    DegenerateScaling,
    ObstacleCoincidence,
    ProfileExhausted,
    ValidationError,
)
from bearingsim.geom import projection_matrix, sig_pow
from bearingsim.laws import (
    BearingOnlyGains,
    EstimatorGains,
    Obstacle,
    bearing_only_control,
    estimator_rhs,
    fixed_time_estimator_rhs,
    gamma_eig_bound,
    gamma_norm_bound,
    leader_velocity,
    lyapunov_chain,
    obstacle_avoid_control,
    state_gains,
    tracking_rhs,
)
from bearingsim.scenario import build_profile
from oracles import random_lf_instance

SIM1_SEGMENTS = {
    "segments": [
        {"start": 0, "end": 10, "velocity": ["1.9 - 0.14*t", "0"]},
        {"start": 10, "end": 15, "velocity": ["0.5", "0"], "k_scale": -0.2},
        {"start": 15, "end": 25, "velocity": ["0.5 + 0.05*(t - 15)", "0"]},
        {"start": 25, "end": 30, "velocity": ["1", "0"], "k_scale": 0.2},
        {"start": 30, "end": 35, "velocity": ["1 + 0.1*(t - 30)", "0"]},
    ]
}
LEADERS = np.array([[6.0, 2.0], [6.0, -2.0], [2.0, 3.0], [2.0, -3.0]])


def test_gain_validation():
    with pytest.raises(ValidationError):
        BearingOnlyGains(alpha=1.0, beta=1.0)
    with pytest.raises(ValidationError):
        BearingOnlyGains(alpha=0.5, beta=0.0)
    with pytest.raises(ValidationError):
        EstimatorGains(alpha=0.5, beta=1.0, gamma=np.ones(2), rho=1.0)
    EstimatorGains(alpha=0.5, beta=1.0, gamma=np.ones(2), rho=1.5)


def test_bearing_only_zero_at_target(minimal_spec):
    u = bearing_only_control([1, 1], minimal_spec.target_config[:3], minimal_spec.desired(4), 0.5, 2.0)
    np.testing.assert_allclose(u, [0.0, 0.0], atol=1e-12)


def test_bearing_only_points_towards_target(minimal_spec):
    p = np.array([1.3, 1.3])
    u = bearing_only_control(p, minimal_spec.target_config[:3], minimal_spec.desired(4), 0.5, 2.0)
    assert u @ (np.array([1.0, 1.0]) - p) > 0


def test_bearing_only_errors(minimal_spec):
    with pytest.raises(AgentCollision):
        bearing_only_control([0, 0], minimal_spec.target_config[:3], minimal_spec.desired(4), 0.5, 2.0)
    with pytest.raises(CollinearNeighbors) as info:
        bearing_only_control([1, 0], [[0, 0], [2, 0], [3, 0]], minimal_spec.desired(4), 0.5, 2.0)
    assert info.value.lambda1 is not None and info.value.lambda1 < 1e-6


def test_lyapunov_inequality_chain(rng):
    """Descent inequalities of the bearing-only law on random displacements and formations."""
    checked = 0
    while checked < 100:
        d = int(rng.integers(2, 4))
        _, p, spec = random_lf_instance(rng, 3, 4, d)
        target = p[3]
        e = rng.normal(size=d) * rng.uniform(0.01, 1.5)
        nb = p[:3]
        try:
            c = lyapunov_chain(target + e, nb, spec.desired(4), target, 0.5, 2.0)
        except (AgentCollision, CollinearNeighbors):
            continue
        if c["lambda1"] < 1e-3:
            continue
        assert c["fine_term"] >= c["fine_bound"] * (1 - 1e-9)
        assert c["sign_term"] >= c["sign_bound"] * (1 - 1e-9)
        assert c["descent"] <= c["descent_bound"] * (1 - 1e-9)
        u = bearing_only_control(target + e, nb, spec.desired(4), 0.5, 2.0)
        # e.u <= -beta |e| forces |u| >= beta
        assert np.linalg.norm(u) >= 2.0 * (1 - 1e-9)
        checked += 1


def test_projection_identity_along_random_states(rng):
    # P_{g_ij}(p_j - p*_i) = P_{g_ij}(p_i - p*_i)
    for _ in range(200):
        pi, pj, ps = rng.normal(size=(3, 2))
        P = projection_matrix(pj - pi)
        np.testing.assert_allclose(P @ (pj - ps), P @ (pi - ps), atol=1e-10)


def test_gain_bounds(rng):
    for _ in range(500):
        d = int(rng.integers(2, 4))
        k = int(rng.integers(3, 7))
        gs = rng.normal(size=(k, d))
        M = sum(projection_matrix(g) for g in gs)
        lam = np.linalg.eigvalsh(M)[0]
        k1, k2 = state_gains(lam, 0.5)
        assert k1 > k ** (-(1.5) / 2) and k2 > k**-0.5


def test_gamma_bounds(minimal_spec):
    g = minimal_spec.desired(4)
    assert gamma_eig_bound(g, 2.0) >= gamma_norm_bound(g, 2.0)
    M = sum(projection_matrix(x) for x in g)
    ev = np.linalg.eigvalsh(M)
    assert gamma_norm_bound(g, 2.0) == pytest.approx(2.0 / ev[-1])
    assert gamma_eig_bound(g, 2.0) == pytest.approx(2.0 / np.sqrt(ev[0]))


# --- estimator and tracking -------------------------------------------------


def test_estimator_equilibrium(minimal_spec):
    r = estimator_rhs([1, 1], minimal_spec.target_config[:3], minimal_spec.desired(4), 1.0, 0.5)
    np.testing.assert_allclose(r, [0.0, 0.0], atol=1e-12)


def test_estimator_descent(minimal_spec):
    phat = np.array([2.0, 1.0])
    r = estimator_rhs(phat, minimal_spec.target_config[:3], minimal_spec.desired(4), 2.0, 0.5)
    assert r @ (np.array([1.0, 1.0]) - phat) > 0


def test_estimator_linear_in_gamma(minimal_spec):
    args = ([1.7, 0.6], minimal_spec.target_config[:3], minimal_spec.desired(4))
    base = estimator_rhs(*args, 0.0, 0.5)
    one = estimator_rhs(*args, 1.3, 0.5) - base
    ten = estimator_rhs(*args, 13.0, 0.5) - base
    np.testing.assert_allclose(ten, 10 * one, rtol=1e-12, atol=1e-12)


def test_fixed_time_estimator(minimal_spec):
    nb, g = minimal_spec.target_config[:3], minimal_spec.desired(4)
    np.testing.assert_allclose(fixed_time_estimator_rhs([1, 1], nb, g, 1.0, 0.5, 2.0), [0, 0], atol=1e-12)
    with pytest.raises(ValueError):
        fixed_time_estimator_rhs([1, 1], nb, g, 1.0, 0.5, 1.0)
    for scale, alpha_wins in ((1e-3, True), (1e3, False)):
        x = np.array([scale, -scale / 2])
        a, r = np.abs(sig_pow(x, 0.5)), np.abs(sig_pow(x, 2.0))
        assert np.all(a > r) if alpha_wins else np.all(r > a)
        phat = np.array([1, 1]) + x
        ft = fixed_time_estimator_rhs(phat, nb, g, 0.0, 0.5, 2.0)
        plain = estimator_rhs(phat, nb, g, 0.0, 0.5)
        extra = ft - plain
        assert (np.linalg.norm(plain) > np.linalg.norm(extra)) == alpha_wins


@pytest.mark.parametrize(
    "e, expected",
    [([0.0, 0.0], [0.0, 0.0]), ([1.0, 0.0], [-3.0, 0.0]), ([-0.25, 0.0], [2.5, 0.0])],
)
def test_tracking_examples(e, expected):
    np.testing.assert_allclose(tracking_rhs(np.array(e), np.zeros(2), 0.5, 2.0), expected, atol=1e-15)


# --- obstacle ---------------------------------------------------------------

OBS = Obstacle(position=np.array([0.5, 2.0]), radius=0.5, sensing_range=1.0, gain=5.0)


def test_obstacle_validation():
    with pytest.raises(ValidationError):
        Obstacle(position=np.zeros(2), radius=1.0, sensing_range=0.5, gain=5.0)
    with pytest.raises(ValidationError):
        Obstacle(position=np.zeros(2), radius=0.5, sensing_range=1.0, gain=1.0)
    with pytest.raises(ValidationError):
        Obstacle(position=np.zeros(3), radius=0.5, sensing_range=1.0, gain=5.0)


def test_obstacle_outside_is_tracking():
    p, ph = np.array([0.5, 2.6]), np.array([0.0, 0.0])
    np.testing.assert_array_equal(obstacle_avoid_control(p, ph, OBS, 0.5, 1.0), tracking_rhs(p, ph, 0.5, 1.0))
    # exactly on the boundary counts as outside
    p = np.array([1.0, 2.0])
    np.testing.assert_array_equal(obstacle_avoid_control(p, ph, OBS, 0.5, 1.0), tracking_rhs(p, ph, 0.5, 1.0))


def test_obstacle_inside_example():
    u = obstacle_avoid_control(OBS.position + [0.1, 0.0], np.zeros(2), OBS, 0.5, 1.0)
    np.testing.assert_allclose(u, [0.5, 1.0], atol=1e-15)


def test_obstacle_radial_growth(rng):
    for _ in range(200):
        rel = rng.normal(size=2)
        rel *= rng.uniform(0.01, 0.49) / np.linalg.norm(rel)
        u = obstacle_avoid_control(OBS.position + rel, rng.normal(size=2), OBS, 0.5, 1.0)
        assert rel @ u == pytest.approx(OBS.gain * rel @ rel, rel=1e-12)


def test_obstacle_batched_and_coincidence():
    p = np.array([[0.6, 2.0], [3.0, 3.0]])
    ph = np.zeros((2, 2))
    u = obstacle_avoid_control(p, ph, OBS, 0.5, 1.0)
    np.testing.assert_allclose(u[0], obstacle_avoid_control(p[0], ph[0], OBS, 0.5, 1.0))
    np.testing.assert_allclose(u[1], tracking_rhs(p[1], ph[1], 0.5, 1.0))
    with pytest.raises(ObstacleCoincidence):
        obstacle_avoid_control(OBS.position.copy(), np.zeros(2), OBS, 0.5, 1.0)


# --- leader profile -----------------------------------------------------------


def test_sim1_profile_values():
    prof = build_profile(SIM1_SEGMENTS, 2)
    np.testing.assert_allclose(leader_velocity(prof, LEADERS, 0.0), np.tile([1.9, 0.0], (4, 1)))
    np.testing.assert_allclose(prof.segments[0].velocity(10.0), [0.5, 0.0], atol=1e-15)
    np.testing.assert_allclose(prof.reference_velocity(10.0), [0.5, 0.0], atol=1e-15)
    assert prof.max_speed() == pytest.approx(1.9)
    assert prof.scaling_windows() == [(10, 15), (25, 30)]


def test_sim1_scaling_phase_shrinks():
    prof = build_profile(SIM1_SEGMENTS, 2)
    v = leader_velocity(prof, LEADERS, 12.0)
    h = LEADERS - LEADERS.mean(axis=0)
    np.testing.assert_allclose(v.mean(axis=0), [0.5, 0.0], atol=1e-15)
    np.testing.assert_allclose(v - [0.5, 0.0], -0.2 * h / np.linalg.norm(h), atol=1e-15)
    assert np.sum(h * (v - v.mean(axis=0))) < 0
    v = leader_velocity(prof, LEADERS, 27.0)
    assert np.sum(h * (v - v.mean(axis=0))) > 0


def test_profile_errors():
    prof = build_profile(SIM1_SEGMENTS, 2)
    with pytest.raises(DegenerateScaling):
        leader_velocity(prof, np.zeros((4, 2)), 12.0)
    with pytest.raises(ProfileExhausted):
        prof.segment_at(35.5)
    assert prof.segment_at(35.0) is prof.segments[-1]
