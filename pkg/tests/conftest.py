import numpy as np
import pytest

import veeqsd as vq


@pytest.fixture
def vee():
    """Degenerate two-upper-level system at omega0 = 1."""
    return vq.build_system(2, [1.0, 1.0])


@pytest.fixture
def vee_nondeg():
    return vq.build_system(2, [1.0, 1.1])


@pytest.fixture
def single_channel_kernel():
    """Identical channels: gamma = 2, Omega = 1, Gamma_m = 0.5 each."""
    kk = np.sqrt(0.5)
    return vq.ou_kernel(vq.OUChannel(kk, 2.0, 1.0), vq.OUChannel(kk, 2.0, 1.0))


@pytest.fixture
def fig2_kernel():
    """Shared-bandwidth kernel of the washout study at gamma = 5."""
    return vq.ou_kernel(vq.OUChannel(1.0, 5.0, 0.99), vq.OUChannel(1.0, 5.0, 0.99))


@pytest.fixture
def multi_kernel():
    """Generic two-channel kernel with everything distinct, pole-free on [0, 5]."""
    return vq.ou_kernel(vq.OUChannel(0.7, 1.5, 1.1), vq.OUChannel(0.5, 0.8, 0.9))


def five_point_derivative(values: np.ndarray, dt: float) -> np.ndarray:
    """O(dt^4) first derivative on the interior (drops 2 points each side)."""
    v = values
    return (v[:-4] - 8 * v[1:-3] + 8 * v[3:-1] - v[4:]) / (12 * dt)
