import numpy as np
import pytest

from diffmatch.channel import ScenarioRadio
from diffmatch.reward import EconWeights
from diffmatch.scenario import Scenario


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def make_scenario(seed=0, num_users=15, num_experts=6, quota=2, snr=(10.0,), **radio):
    return Scenario.sampled(np.random.default_rng([seed, 99]), num_users, num_experts, quota,
                            ScenarioRadio(**radio), EconWeights(), snr)


@pytest.fixture
def scenario():
    return make_scenario()
