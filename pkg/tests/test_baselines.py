import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ccmpc.baselines import (AcpPolicy, AcpState, ApfConfig, ApfPolicy, acp_plan, acp_update, apf_control,
                             repulsion)
from ccmpc.docp import DocpContext, evaluate_feasibility
from ccmpc.sim_env import PedestrianState, Scenario, SfmParams, VehicleState, WorldState, run_episode


def test_acp_update_values():
    s = AcpState(q=1.0, eta=0.05, alpha=0.15)
    assert acp_update(s, covered=True).q == pytest.approx(0.9925)
    assert acp_update(s, covered=False).q == pytest.approx(1.0425)
    assert acp_update(AcpState(q=0.001), covered=True).q == 0.0


def test_acp_miss_streak_raises_quantile():
    s = AcpState(q=0.5)
    qs = []
    for _ in range(5):
        s = acp_update(s, covered=False)
        qs.append(s.q)
    assert all(b > a for a, b in zip([0.5] + qs, qs))


@given(seed=st.integers(0, 2**32 - 1), alpha=st.floats(0.05, 0.3))
def test_acp_long_run_miss_rate(seed, alpha):
    # without clipping, mean(err - alpha) = (q_N - q_0) / (eta N) exactly
    rng = np.random.default_rng(seed)
    s = AcpState(q=2.0, eta=0.05, alpha=alpha)
    q0, errs = s.q, []
    N = 4000
    for score in rng.exponential(1.0, N):
        covered = score <= s.q
        errs.append(0.0 if covered else 1.0)
        s = acp_update(s, covered)
    assert np.mean(errs) - alpha == pytest.approx((s.q - q0) / (s.eta * N), abs=1e-9)
    assert abs(np.mean(errs) - alpha) <= 0.02


def test_acp_state_validation():
    with pytest.raises(ValueError):
        AcpState(q=-1.0)
    with pytest.raises(ValueError):
        AcpState(eta=0.0)


def _world(peds, x=0.0):
    return WorldState(VehicleState(x), tuple(peds))


def test_apf_free_road():
    assert apf_control(_world([])) == pytest.approx(1.5)
    cfg = ApfConfig(attractive_gain=0.5, speed_map_gain=1.0)
    assert apf_control(_world([]), cfg) == pytest.approx(0.5)


def test_apf_brakes_for_pedestrian_ahead():
    ped = PedestrianState([2.5, 0.0], [0, 0], [2.5, 0])
    assert apf_control(_world([ped])) == 0.0


def test_apf_ignores_far_and_pushes_from_behind():
    far = PedestrianState([9.0, 0.0], [0, 0], [0, 0])
    behind = PedestrianState([-3.0, 0.0], [0, 0], [0, 0])
    cfg = ApfConfig(attractive_gain=0.5, speed_map_gain=1.0)
    assert apf_control(_world([far]), cfg) == pytest.approx(0.5)
    assert apf_control(_world([behind]), cfg) > 0.5


@given(d=st.floats(0.1, 20))
def test_repulsion_shape(d):
    cfg = ApfConfig()
    r = repulsion(d, cfg)
    assert r >= 0
    if d >= cfg.influence_radius:
        assert r == 0
    else:
        assert repulsion(d * 0.9, cfg) > r


def test_apf_policy_runs():
    log = run_episode(ApfPolicy(), Scenario(n_pedestrians=2), SfmParams(), seed=3)
    assert log.status is not None


def test_acp_plan_free_and_constrained(tiny_weights):
    ctx = DocpContext(VehicleState(0.0, 0.0, 0.0), [], tiny_weights)
    u, ok = acp_plan(ctx, 0.5, np.zeros(5))
    assert ok and np.allclose(u, 1.5, atol=1e-6)
    ped = PedestrianState([6.0, 0.5], [0, 0], [6.0, 0.5])
    ctx = DocpContext(VehicleState(0.0, 0.0, 0.0), [ped], tiny_weights)
    u, ok = acp_plan(ctx, 0.5, np.zeros(5))
    if ok:
        assert evaluate_feasibility(ctx, u, np.full((1, 5), 0.5)) <= 1e-6
    else:
        assert np.array_equal(u, np.zeros(5)) or np.all(np.isfinite(u))


def test_acp_policy_warm_up(tiny_weights):
    pol = AcpPolicy(tiny_weights, AcpState(q=0.4))
    log = run_episode(pol, Scenario(n_pedestrians=1, max_episode_steps=30), SfmParams(), seed=5)
    T = tiny_weights.horizon
    n = len(pol.q_trace)
    assert n == len(log.controls)
    # q is frozen until the first forecast can be scored
    assert pol.q_trace[:T] == [0.4] * min(T, n)
    if n > T:
        assert pol.q_trace[T] != 0.4
