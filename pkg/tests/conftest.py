import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from smm.model import init_params

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def params():
    return init_params(1)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def counting_state():
    """State after a counting-only run of 10,000 default trials."""
    from smm.config import RunConfig
    from smm.trainer import new_state, run_trial

    cfg = RunConfig(seed=1, total_steps=10_000, add_onset=10_000)
    state = new_state(cfg)
    sched = cfg.schedule()
    while state.step < cfg.total_steps:
        run_trial(state, cfg, None, sched)
    return state
