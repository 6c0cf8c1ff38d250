import math

import numpy as np
import pytest
from scipy.stats import poisson

from qkdcorr.channel import click_fractions, coherent_gain, observables, photon_yield, reference_yield
from qkdcorr.config import ChannelConfig, ProtocolConfig
from qkdcorr.source import flawed_amplitudes, ideal_source


@pytest.mark.parametrize("eta", [1.0, 0.3, 0.01])
@pytest.mark.parametrize("dark", [0.0, 1e-6, 1e-3])
@pytest.mark.parametrize("mean", [0.0025, 0.09, 0.5, 2.0])
def test_gain_is_poisson_mixture_of_yields(eta, dark, mean):
    frac = click_fractions(flawed_amplitudes(0.1, -0.05))
    n = np.arange(80)
    weights = poisson.pmf(n, mean)
    series = np.tensordot(weights, photon_yield(n[:, None, None, None], frac[None], eta, dark), axes=1)
    assert np.allclose(series, coherent_gain(mean, frac, eta, dark), atol=1e-14)


def test_yield_limits():
    frac = click_fractions(np.array([1.0, 0.0]))
    # vacuum: each detector fires on a dark count, double clicks split evenly
    y0 = photon_yield(0, frac, 0.5, 1e-3)
    assert y0[0, 0] == pytest.approx(1e-3 - 0.5e-6, rel=1e-12)
    assert np.allclose(photon_yield(1, frac, 1.0, 0.0)[0], [1.0, 0.0])
    assert np.allclose(photon_yield(1, frac, 1.0, 0.0)[1], [0.5, 0.5])


def test_misalignment_flips_detectors():
    cfg = ProtocolConfig()
    clean = ChannelConfig(1.0, 0.0, 0.0)
    tilted = ChannelConfig(1.0, 0.0, 0.02)
    y = reference_yield(1, 2, 0, 0, 1, clean, cfg)
    assert y == 0.0
    assert reference_yield(1, 2, 0, 0, 1, tilted, cfg) == pytest.approx(0.02)
    assert reference_yield(1, 2, 0, 0, 0, tilted, cfg) == pytest.approx(0.98)


def test_bit_error_rate_and_gain(cfg):
    chan = ChannelConfig(0.1, 1e-6, 0.01)
    src = ideal_source(cfg)
    st = observables(src, chan, cfg, 10.0)
    eta = 0.01
    q_right = 0.5 * (1 - (1 - 1e-6) * math.exp(-eta * 0.5)) * (1 + (1 - 1e-6))
    q_wrong = 0.5 * (1 - (1 - 1e-6)) * (1 + (1 - 1e-6) * math.exp(-eta * 0.5))
    right = 0.99 * q_right + 0.01 * q_wrong
    wrong = 0.99 * q_wrong + 0.01 * q_right
    assert st.q_mu_z == pytest.approx(right + wrong, rel=1e-12)
    assert st.e_b == pytest.approx(wrong / (right + wrong), rel=1e-12)
    assert st.eta == pytest.approx(eta)
    assert not st.warnings


def test_no_detection_flags_bit_error_rate(cfg):
    st = observables(ideal_source(cfg), ChannelConfig(0.0, 0.0, 0.0), cfg)
    assert st.e_b_flagged
    assert st.warnings


def test_statistics_csv_layout(cfg):
    st = observables(ideal_source(cfg.with_(xi=1)), ChannelConfig(), cfg.with_(xi=1))
    lines = st.to_csv(1).splitlines()
    assert lines[0] == "sequence,basis,outcome,gain"
    assert len(lines) == 1 + 81 * 4
    assert lines[1].startswith("\"(omega,0) (omega,0)\",Z,0,")
