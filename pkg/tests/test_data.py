import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ccmpc import data
from ccmpc.predictor import save_dataset
from ccmpc.sim_env import Scenario, SfmParams

SCEN, PARAMS = Scenario(), SfmParams()


def _bytes(ds, tmp_path):
    path = tmp_path / "d.npz"
    save_dataset(ds, path)
    return path.read_bytes()


@given(n=st.integers(2, 300), seed=st.integers(0, 1000))
def test_exact_counts_and_admissible_controls(n, seed):
    tr, cal = data.generate_dataset(data.DataConfig(n_records=n, seed=seed), SCEN, PARAMS, T=5)
    assert len(tr) + len(cal) == n
    assert len(tr) == round(n / 2)
    for ds in (tr, cal):
        assert np.all(ds.inputs.controls >= 0) and np.all(ds.inputs.controls <= SCEN.u_max + 1e-12)
        assert np.all((ds.inputs.veh_last_u >= 0) & (ds.inputs.veh_last_u <= SCEN.u_max + 1e-12))


def test_split_uses_disjoint_episodes():
    tr, cal = data.generate_dataset(data.DataConfig(n_records=2000, seed=3), SCEN, PARAMS)
    assert not set(tr.episode) & set(cal.episode)
    audit = data.generate_split(data.DataConfig(seed=3), SCEN, PARAMS, 10, 500, stream=2)
    assert not set(audit.episode) & (set(tr.episode) | set(cal.episode))
    with pytest.raises(ValueError):
        data.generate_split(data.DataConfig(seed=3), SCEN, PARAMS, 10, 10, stream=1)


def test_reproducible_bytes(tmp_path):
    cfg = data.DataConfig(n_records=100, seed=7)
    a = data.generate_dataset(cfg, SCEN, PARAMS)
    b = data.generate_dataset(cfg, SCEN, PARAMS)
    for x, y in zip(a, b):
        assert _bytes(x, tmp_path) == _bytes(y, tmp_path)
    c = data.generate_dataset(data.DataConfig(n_records=100, seed=8), SCEN, PARAMS)
    assert _bytes(a[0], tmp_path) != _bytes(c[0], tmp_path)


def test_windows_align_targets_with_controls():
    ep = data.simulate_data_episode(Scenario(n_pedestrians=2), PARAMS, "scripted", seed=[1, 2, 3])
    veh_pos, last_u, ped_pos, _, u = ep
    b, Y = data.windows(ep, 4, 0.0, stride=3)
    # record i: window start t = 3 * (i // 2), pedestrian i % 2
    i = 5
    t, m = 3 * (i // 2), i % 2
    assert b.veh_pos[i] == veh_pos[t] and b.veh_last_u[i] == last_u[t]
    assert np.array_equal(b.controls[i], u[t:t + 3])
    assert np.array_equal(Y[i], ped_pos[t + 1:t + 5, m])
    # applied displacements integrate to the vehicle track
    assert np.allclose(np.diff(veh_pos), u)


@pytest.mark.parametrize("behavior", data.BEHAVIORS)
def test_behaviors_in_range(behavior):
    u = data.behavior_controls(behavior, 200, SCEN, np.random.default_rng(0))
    assert u.shape == (200,)
    assert np.all(u >= 0) and np.all(u <= SCEN.u_max + 1e-12)


def test_config_validation():
    with pytest.raises(ValueError):
        data.DataConfig(n_records=0)
    with pytest.raises(ValueError):
        data.DataConfig(behavior="manual")
    with pytest.raises(ValueError):
        data.DataConfig(train_fraction=1.0)
