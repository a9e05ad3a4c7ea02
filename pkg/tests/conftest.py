import sys

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from noisycrf.aux import AuxRBM
from noisycrf.core import MULTICLASS, MULTILABEL, BiasPair, EnergyParams

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def random_model(rng, n, c, h, mode=MULTILABEL, scale=1.0):
    params = EnergyParams(
        c=rng.normal(0, scale, h),
        W=rng.normal(0, scale, (c, n)),
        Wp=rng.normal(0, scale, (h, n)),
        mode=mode,
    )
    bias = BiasPair(rng.normal(0, scale, c), rng.normal(0, scale, n))
    return params, bias


def random_noisy(rng, n, mode):
    if mode == MULTICLASS:
        return np.eye(n)[rng.integers(n)]
    return (rng.random(n) < 0.5).astype(float)


def random_aux_rbm(rng, n, c, h, mode=MULTILABEL, scale=1.0):
    arrays = {
        "a": rng.normal(0, scale, c),
        "b": rng.normal(0, scale, n),
        "c": rng.normal(0, scale, h),
        "W": rng.normal(0, scale, (c, n)),
        "Wp": rng.normal(0, scale, (h, n)),
    }
    return AuxRBM.from_arrays(arrays, mode=mode)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    lines = getattr(module, "RESULTS", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
