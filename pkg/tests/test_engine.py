from __future__ import annotations

from dataclasses import replace

import numpy as np
import pytest

from bearingsim.config import Monitoring
from bearingsim.engine import (
    WorldState,
    _first_dwell,
    initial_state,
    monitor_hypotheses,
    run,
    step,
)
from bearingsim.errors import AgentCollision, CollinearNeighbors, ProfileExhausted, ValidationError
from bearingsim.geom import bearings_batch
from bearingsim.laws import bearing_only_control
from bearingsim.scenario import build_scenario, load_scenario
from conftest import SCENARIOS, minimal_raw


def _tracking_scenario(**integrator):
    raw = minimal_raw(law="estimator_tracking", beta=2.0, gamma="auto")
    raw["initial"] = {"positions": [[0, 0], [2, 0], [0, 2], [2, 1]], "estimates": [[0, 0], [2, 0], [0, 2], [1, 1]]}
    raw["integrator"].update(integrator)
    return build_scenario(raw)


def test_single_tracking_step():
    sc = _tracking_scenario(step=0.01, end_time=0.01)
    s1 = step(initial_state(sc), sc)
    np.testing.assert_allclose(s1.positions[3] - [2.0, 1.0], [-0.03, 0.0], atol=1e-12)
    assert s1.t == 0.01 and s1.k == 1


def test_one_step_run_has_two_samples():
    sc = build_scenario(minimal_raw()).with_settings(end_time=0.001)
    tr = run(sc)
    assert tr.times.tolist() == [0.0, 0.001]
    assert tr.positions.shape == (2, 4, 2)


def test_equilibrium_advection():
    raw = minimal_raw(beta=1.0)
    raw["initial"]["positions"] = [[0, 0], [2, 0], [0, 2], [1, 1]]
    raw["leaders"]["segments"][0]["velocity"] = ["0.5", "-0.2"]
    sc = build_scenario(raw).with_settings(end_time=0.5)
    tr = run(sc)
    h, beta = sc.settings.step, sc.beta
    drift = tr.positions[:, 3] - tr.positions[:, 0] - [1.0, 1.0]
    assert np.abs(drift).max() <= 2 * h * beta * 10
    np.testing.assert_allclose(tr.positions[-1, 0], [0.25, -0.1], atol=1e-12)


def test_monitor_healthy_sim1(sim1):
    sc, _ = sim1
    assert monitor_hypotheses(initial_state(sc), sc) == []


def test_monitor_collision_and_collinear():
    sc = build_scenario(minimal_raw())
    p = np.array([[0, 0], [2, 0], [0, 2], [1e-10, 0]], dtype=float)
    diags = monitor_hypotheses(WorldState(0.0, 0, p), sc)
    assert diags and diags[0]["kind"] == "AgentCollision" and diags[0]["agents"] == [1, 4]
    p = np.array([[0, 0], [2, 0], [4, 0], [1, 0]], dtype=float)
    diags = monitor_hypotheses(WorldState(0.0, 0, p), sc)
    assert [d["kind"] for d in diags] == ["CollinearNeighbors"]
    assert diags[0]["value"] < 1e-6 and diags[0]["agents"] == [4]
    with pytest.raises(CollinearNeighbors):
        step(WorldState(0.0, 0, p), sc)


def test_speed_warning_recorded():
    raw = minimal_raw()
    raw["leaders"]["segments"][0]["velocity"] = ["0.3", "0"]
    sc = replace(build_scenario(raw), beta=0.2)
    tr = run(sc.with_settings(end_time=0.01))
    assert [ev["kind"] for ev in tr.events].count("warning") == 1


def test_profile_exhausted():
    sc = build_scenario(minimal_raw()).with_settings(end_time=3.0)
    with pytest.raises(ProfileExhausted):
        run(sc)


def test_invalid_settings_rejected():
    sc = build_scenario(minimal_raw())
    with pytest.raises(ValidationError):
        run(sc.with_settings(stride=7))
    with pytest.raises(ValidationError):
        run(sc.with_settings(end_time=0.0015))


def test_abort_returns_partial_trace():
    raw = minimal_raw(law="estimator_tracking", beta=2.0, gamma="auto")
    # the straight path from the start to the target runs through leader 1
    raw["initial"] = {"positions": [[0, 0], [2, 0], [0, 2], [-1, -1]], "estimates": [[0, 0], [2, 0], [0, 2], [1, 1]]}
    sc = replace(build_scenario(raw), monitoring=Monitoring(collision_threshold=0.05))
    tr = run(sc)
    ab = tr.aborted
    assert ab is not None and ab["detail"].startswith("AgentCollision")
    assert 0 < ab["step"] < sc.settings.n_steps
    assert tr.times.size == ab["step"]
    assert np.all(np.isfinite(tr.positions))


def test_determinism():
    sc = load_scenario(SCENARIOS / "sim2.json").with_settings(end_time=0.25)
    a, b = run(sc), run(sc)
    for name in ("times", "positions", "estimates", "bearing_errors", "position_errors", "lambda1", "control_norms"):
        assert getattr(a, name).tobytes() == getattr(b, name).tobytes()
    assert a.events == b.events


def test_simultaneous_update_order_free(sim1, rng):
    sc, _ = sim1
    state = initial_state(sc)
    nxt = step(state, sc)
    g, p, h = sc.graph, state.positions, sc.settings.step
    for i in rng.permutation(g.followers):
        nb = [j - 1 for j in g.neighbors(i)]
        u = bearing_only_control(p[i - 1], p[nb], sc.spec.desired(i), sc.alpha, sc.beta)
        np.testing.assert_allclose(nxt.positions[i - 1], p[i - 1] + h * u, rtol=0, atol=1e-14)


def test_first_order_refinement():
    """Richardson check in the transient, where the sign terms do not switch."""
    sc = build_scenario(minimal_raw()).with_settings(end_time=0.1)
    finals = []
    for h in (1e-3, 5e-4, 2.5e-4):
        finals.append(run(sc.with_settings(step=h)).positions[-1, 3])
    d1 = np.linalg.norm(finals[0] - finals[1])
    d2 = np.linalg.norm(finals[1] - finals[2])
    assert d1 > 0
    assert 0.3 < d2 / d1 < 0.7


def test_leader_bearings_preserved(sim1):
    _, tr = sim1
    pl = tr.positions[:, :4]
    iu, ju = np.triu_indices(4, 1)
    g0, _ = bearings_batch(pl[0, iu], pl[0, ju])
    win = np.zeros(tr.times.size, bool)
    for a, b in tr.scaling_windows:
        win |= (tr.times >= a) & (tr.times <= b)
    drift = np.array([np.abs(bearings_batch(x[iu], x[ju])[0] - g0).max() for x in pl[::50]])
    assert drift[~win[::50]].max() < 1e-9
    assert drift.max() < 1e-6


def test_bearing_errors_stay_low_after_convergence(sim1):
    sc, tr = sim1
    thr = sc.monitoring.convergence_threshold
    win = np.zeros(tr.times.size, bool)
    for a, b in tr.scaling_windows:
        win |= (tr.times >= a) & (tr.times <= b)
    conv = tr.convergence_times()
    assert len(conv) == 8
    for i, t in conv.items():
        eids = sc.graph.edge_ids(i)
        late = (tr.times >= t) & ~win
        assert tr.bearing_errors[late][:, eids].max() < thr


def test_gain_bounds_along_trajectory(sim1):
    sc, tr = sim1
    k1, k2 = tr.lambda1 ** (-(sc.alpha + 1) / 2), tr.lambda1**-0.5
    assert np.all(k1 > 3 ** (-(sc.alpha + 1) / 2)) and np.all(k2 > 3**-0.5)
    assert np.all(np.isfinite(k1))


def test_lyapunov_descent_first_follower():
    raw = minimal_raw(beta=1.0)
    raw["leaders"]["segments"][0]["velocity"] = ["0.4*cos(t)", "0.3"]
    sc = build_scenario(raw).with_settings(end_time=1.0)
    tr = run(sc)
    V = 0.5 * tr.position_errors[:, 0] ** 2
    assert np.diff(V).max() <= 10 * sc.settings.step * sc.beta
    assert V[-1] < 1e-4


def test_estimator_cascade(sim2):
    sc, tr = sim2
    est, pos = tr.convergence_times("estimate_converged"), tr.convergence_times()
    assert set(est) == set(pos) == set(sc.graph.followers)
    assert all(est[i] < pos[i] for i in pos)


def test_obstacle_distance_grows_inside():
    sc = load_scenario(SCENARIOS / "obstacle_a.json").with_settings(stride=1, end_time=8.0)
    tr = run(sc)
    dist = np.linalg.norm(tr.positions[:, 3] - sc.obstacle.position, axis=1)
    inside = dist[:-1] < sc.obstacle.radius
    assert inside.any()
    assert np.all(np.diff(dist)[inside] > 0)


def test_first_dwell():
    below = np.array([0, 1, 1, 0, 1, 1, 1, 1], dtype=bool)
    assert _first_dwell(below, 0, 3) == 4
    assert _first_dwell(below, 0, 2) == 1
    assert _first_dwell(below, 5, 4) is None
    assert _first_dwell(below, 6, 2) == 6
