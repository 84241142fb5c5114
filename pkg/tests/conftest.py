import numpy as np
import pytest

from epcag import (
    HybridSystem,
    compute_constants,
    make_schedule,
    spectral_split,
)


@pytest.fixture(scope="session")
def epca_sched():
    return make_schedule("epca", window=(-60, 80))


@pytest.fixture(scope="session")
def diag_split():
    return spectral_split(np.diag([-1.0, 0.0]))


@pytest.fixture(scope="session")
def tanh_system():
    """A = diag(-1, 0) with the neutral rate fed by the anchored decaying
    component: f = amp (0, tanh(w_1))."""
    amp = 0.01

    def f(t, z, w):
        return np.array([0.0, amp * np.tanh(w[0])])

    return HybridSystem(np.diag([-1.0, 0.0]), f, amp, 2)


@pytest.fixture(scope="session")
def tanh_bundle(tanh_system, diag_split, epca_sched):
    return compute_constants(tanh_system.A, diag_split, epca_sched,
                             tanh_system.lipschitz_l, alpha=0.25)
