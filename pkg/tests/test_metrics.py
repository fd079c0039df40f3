import csv
import io
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ccmpc.metrics import EPISODE_FIELDS, SUMMARY_FIELDS, EpisodeRow, episode_row, pdm_score, summarize
from ccmpc.sim_env import REACHED_GOAL, TIMEOUT, Scenario, SfmParams, run_episode


def test_pdm_examples():
    assert pdm_score(1, 1, 1) == pytest.approx(100.0)
    assert pdm_score(1, 0, 0) == pytest.approx(80.0)
    assert pdm_score(0, 1, 0) == pytest.approx(10.0)


@given(a=st.floats(0, 1), b=st.floats(0, 1), c=st.floats(0, 1))
def test_pdm_range(a, b, c):
    assert 0.0 <= pdm_score(a, b, c) <= 100.0 + 1e-9


@pytest.mark.parametrize("args", [(1.1, 0, 0), (0, -0.1, 0), (0, 0, math.nan)])
def test_pdm_rejects_out_of_range(args):
    with pytest.raises(ValueError):
        pdm_score(*args)


def test_episode_row_by_hand():
    scen = Scenario(n_pedestrians=0, max_episode_steps=4)
    seq = iter([0.5, 1.0, 1.0, 0.2])
    log = run_episode(lambda w, l: next(seq), scen, SfmParams(), seed=0)
    row = episode_row(log, 0.1)
    assert row.status == TIMEOUT and row.n_steps == 4
    assert row.distance == pytest.approx(2.7)
    assert row.duration == pytest.approx(0.4)
    assert row.avg_speed == pytest.approx(2.7 / 0.4)
    # |du| = 0.5, 0.5, 0, 0.8 from last_u = 0
    assert row.avg_accel == pytest.approx(np.mean([0.5, 0.5, 0.0, 0.8]) / 0.01)
    assert math.isinf(row.min_distance)


def test_full_and_zero_speed_controllers():
    scen = Scenario(n_pedestrians=0)
    rows = [episode_row(run_episode(lambda w, l: 1.5, scen, SfmParams(), s), 0.1) for s in range(3)]
    s = summarize(rows, "full_speed", 0, scen.v_max)
    assert s.success_rate == 1.0
    assert s.avg_speed == pytest.approx(15.0, rel=0.05)
    zs = Scenario(n_pedestrians=1)
    rows = [episode_row(run_episode(lambda w, l: 0.0, zs, SfmParams(), s), 0.1) for s in range(3)]
    z = summarize(rows, "zero_speed", 1, zs.v_max)
    assert z.success_rate == 0.0 and z.avg_speed == 0.0


def test_summarize_and_csv():
    rows = [EpisodeRow(1, REACHED_GOAL, 40, 50.0, 4.0, 12.5, 2.0, 3.0),
            EpisodeRow(2, TIMEOUT, 400, 10.0, 40.0, 0.25, 6.0, 1.0)]
    s = summarize(rows, "x", 1, 15.0)
    assert s.success_rate == 0.5
    assert s.avg_speed == pytest.approx(6.375)
    assert s.v_norm == pytest.approx(6.375 / 15)
    assert s.c_norm == pytest.approx(1 - 4.0 / 5)
    assert s.pdm_score == pytest.approx(pdm_score(0.5, 6.375 / 15, 0.2))
    summ = list(csv.reader(io.StringIO(s.summary_csv())))
    assert tuple(summ[0]) == SUMMARY_FIELDS and float(summ[1][-1]) == s.pdm_score
    eps = list(csv.reader(io.StringIO(s.episodes_csv())))
    assert tuple(eps[0]) == EPISODE_FIELDS and len(eps) == 3
    with pytest.raises(ValueError):
        summarize([], "x", 1, 15.0)


def test_csv_floats_roundtrip_exactly():
    rows = [EpisodeRow(1, REACHED_GOAL, 3, 0.1 + 0.2, 0.3, np.float64(1) / 3, 0.0, 2.0)]
    s = summarize(rows, "x", 1, 15.0)
    line = s.episodes_csv().splitlines()[1].split(",")
    assert float(line[3]) == 0.1 + 0.2
    assert float(line[5]) == 1 / 3
