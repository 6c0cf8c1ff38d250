import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qkdcorr import cs
from qkdcorr.errors import ContractError

from conftest import random_effect, random_state


def test_lower_envelope_examples():
    assert cs.g_lower(0.5, 1.0) == pytest.approx(0.5, abs=1e-15)
    assert cs.g_lower(0.3, 0.8) == 0.0  # 0.3 <= 1 - 0.64


def test_upper_envelope_examples():
    assert cs.g_upper(0.5, 0.6) == 1.0  # 0.5 >= 0.36
    for y in (0.1, 0.5, 0.93):
        assert cs.g_upper(0.0, y) == pytest.approx(1 - y * y, abs=1e-15)


def two_dim_extremes(x, y, angles=4001, levels=801):
    """Brute-force range of Tr[A'M] over real 2x2 effects with Tr[AM] = x.

    ``M = l1 |m><m| + l2 |m_perp><m_perp|``; for each angle and ``l1`` on a
    grid, ``l2`` is fixed by the constraint and kept when it lies in [0, 1].
    """
    t = np.linspace(0, math.pi, angles)[:, None]
    l1 = np.linspace(0, 1, levels)[None, :]
    c2 = np.cos(t) ** 2
    with np.errstate(divide="ignore", invalid="ignore"):
        l2 = (x - l1 * c2) / (1 - c2)
    ok = (l2 >= 0) & (l2 <= 1)
    # A = (1, 0), A' = (y, sqrt(1 - y^2))
    s = math.sqrt(1 - y * y)
    on_m = (y * np.cos(t) + s * np.sin(t)) ** 2
    vals = l1 * on_m + l2 * (1 - on_m)
    return vals[ok].min(), vals[ok].max()


@pytest.mark.parametrize("x, y", [(0.9, 0.9), (0.1, 0.9), (0.6, 0.95), (0.5, 0.99)])
def test_envelopes_match_brute_force(x, y):
    lo, hi = two_dim_extremes(x, y)
    assert cs.g_lower(x, y) == pytest.approx(lo, abs=2e-3)
    assert cs.g_upper(x, y) == pytest.approx(hi, abs=2e-3)


def test_envelope_contains_random_statistics(rng):
    for _ in range(2000):
        dim = int(rng.integers(2, 5))
        a, ap = random_state(rng, dim), random_state(rng, dim)
        m = random_effect(rng, dim)
        x = float(np.real(a.conj() @ m @ a))
        xp = float(np.real(ap.conj() @ m @ ap))
        y = abs(a.conj() @ ap)
        assert cs.g_lower(x, y) <= xp + 1e-12
        assert xp <= cs.g_upper(x, y) + 1e-12


@settings(max_examples=200, deadline=None)
@given(st.floats(0.01, 0.99), st.floats(0.05, 0.999))
def test_slopes_match_finite_differences(x, y):
    h = 1e-7
    for g, slope, active in ((cs.g_lower, cs.g_lower_slope, x > 1 - y * y),
                             (cs.g_upper, cs.g_upper_slope, x < y * y)):
        if abs(x - (1 - y * y)) < 1e-4 or abs(x - y * y) < 1e-4:
            continue
        fd = (g(x + h, y) - g(x - h, y)) / (2 * h)
        assert slope(x, y) == pytest.approx(fd, abs=1e-6 * max(1, abs(fd)))
        if not active:
            assert slope(x, y) == 0.0


def test_slope_examples():
    assert cs.g_lower_slope(0.3, 0.8) == 0.0
    assert cs.g_lower_slope(0.5, 1.0) == pytest.approx(1.0, abs=1e-15)
    below = cs.g_upper_slope(0.81 - 1e-9, 0.9)
    assert math.isfinite(below)


def test_slope_at_edges_is_finite():
    for x in (0.0, 1.0):
        assert math.isfinite(cs.g_lower_slope(x, 0.7))
        assert math.isfinite(cs.g_upper_slope(x, 0.7))


def test_tangents_bound_envelopes(rng):
    xs = np.linspace(0, 1, 101)
    for _ in range(200):
        ref, y = rng.uniform(0, 1), rng.uniform(0, 1)
        m, t = cs.tangent_lower(ref, y)
        assert np.all(cs.g_lower(xs, y) >= m * xs + t - 1e-12)
        m, t = cs.tangent_upper(ref, y)
        assert np.all(cs.g_upper(xs, y) <= m * xs + t + 1e-12)


def test_domain_errors():
    with pytest.raises(ContractError):
        cs.g_lower(1.1, 0.5)
    with pytest.raises(ContractError):
        cs.g_upper(0.5, float("nan"))
    # inside the slack the argument is clamped
    assert cs.g_lower(1 + 5e-13, 0.5) == cs.g_lower(1.0, 0.5)
    assert cs.g_upper(-5e-13, 0.5) == cs.g_upper(0.0, 0.5)


def test_identical_states_leave_statistics_fixed():
    xs = np.linspace(0, 1, 11)
    assert np.allclose(cs.g_lower(xs, 1.0), xs, atol=1e-15)
    assert np.allclose(cs.g_upper(xs, 1.0), xs, atol=1e-15)
