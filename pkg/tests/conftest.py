import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from xlner.labels import LabelSpace

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("thorough", max_examples=500, deadline=None)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture
def ls4():
    return LabelSpace(["PER", "LOC", "ORG", "MISC"])


@pytest.fixture
def ls2():
    return LabelSpace(["PER", "LOC"])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
