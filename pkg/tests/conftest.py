import numpy as np
import pytest

from qkdcorr.config import ChannelConfig, ProtocolConfig


@pytest.fixture
def cfg():
    return ProtocolConfig()


@pytest.fixture
def chan():
    return ChannelConfig(eta_det=0.1, dark_count=1e-6, misalignment=0.01)


@pytest.fixture
def rng():
    return np.random.default_rng(20261016)


def random_state(rng, dim):
    v = rng.normal(size=dim) + 1j * rng.normal(size=dim)
    return v / np.linalg.norm(v)


def random_effect(rng, dim):
    """Random operator with 0 <= M <= I."""
    h = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
    _, u = np.linalg.eigh(h + h.conj().T)
    lam = rng.uniform(0, 1, size=dim)
    return (u * lam) @ u.conj().T
