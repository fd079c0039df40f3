import dataclasses
import os
from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from ccmpc import experiments as ex
from ccmpc.config import OUTPUT_ENV, RunConfig
from ccmpc.predictor import PredictorMeta, init_weights
from report import ACCEPTANCE

os.environ.pop(OUTPUT_ENV, None)

settings.register_profile("ccmpc", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("ccmpc")


@pytest.fixture
def tiny_weights():
    """Small random network, horizon 5."""
    return init_weights(PredictorMeta(horizon=5, hidden=8, layers=2), seed=3)


@pytest.fixture(scope="session")
def desk(tmp_path_factory):
    """Desk-scale artifacts (data, trained model, bound table) built once per session.

    Set CCMPC_TEST_ARTIFACTS to a directory holding a finished default run to
    reuse it instead of rebuilding.
    """
    reuse = os.environ.get("CCMPC_TEST_ARTIFACTS")
    root = reuse or str(tmp_path_factory.mktemp("desk"))
    cfg = dataclasses.replace(RunConfig(), output_dir=root)
    p = ex.paths(cfg)
    if not (p.train.exists() and p.cal.exists()):
        ex.gen_data(cfg)
    if not p.weights.exists():
        ex.train(cfg)
    if not p.bounds.exists():
        ex.calibrate(cfg)
    return SimpleNamespace(cfg=cfg, weights=ex.load_weights(cfg), table=ex.load_table(cfg), root=root)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[n])
