import numpy as np
import pytest

from workload_hsc import vehicle_dynamics as vd
from workload_hsc.tracks import straight_track
from workload_hsc.workload_hmm import GaussianHmm

ROAD = (0.75, 0.5)
SURVEILLANCE = (0.25, 0.5)


def two_screen_hmm(initial, transition, std=0.05):
    return GaussianHmm(initial_probs=np.array(initial, dtype=float),
                       transition=np.array(transition, dtype=float),
                       means=np.array([ROAD, SURVEILLANCE]),
                       covariances=np.stack([std ** 2 * np.eye(2)] * 2))


@pytest.fixture
def params():
    return vd.VehicleParams()


@pytest.fixture(scope="session")
def straight():
    return straight_track()


@pytest.fixture(scope="session")
def workload_models():
    """(moderate, high): long road glances vs rapid switching between the screens."""
    moderate = two_screen_hmm([0.9, 0.1], [[0.98, 0.02], [0.1, 0.9]])
    high = two_screen_hmm([0.5, 0.5], [[0.8, 0.2], [0.3, 0.7]])
    return moderate, high
