import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "otlab",
    deadline=None,
    max_examples=25,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.data_too_large],
)
settings.load_profile("otlab")


def rng(seed):
    return np.random.Generator(np.random.Philox(seed))


@pytest.fixture
def unit_pair_1d():
    from otlab.measures import GridSpec, uniform_box

    spec = GridSpec.box([0.0], [2.0], 0.01)
    return uniform_box(spec, 0.0, 1.0), uniform_box(spec, 1.0, 2.0)
