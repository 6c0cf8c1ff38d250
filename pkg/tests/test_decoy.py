import numpy as np
import pytest
from scipy.optimize import linprog
from scipy.stats import poisson

from qkdcorr.channel import click_fractions, observables, photon_yield
from qkdcorr.config import ChannelConfig, ProtocolConfig
from qkdcorr.decoy import (PhotonBounds, build_bound_lp, build_lp, build_yield_lp, photon_bounds, var_index,
                           yield_weights)
from qkdcorr.epsilons import uniform_coarse
from qkdcorr.errors import CapacityError, ContractError
from qkdcorr.overlaps import overlap_bounds
from qkdcorr.source import ideal_source
from qkdcorr.virtual import decompose, zeta_weights


def test_photon_bounds_of_uncorrelated_source(cfg):
    pb = photon_bounds(ideal_source(cfg), cfg)
    expected = poisson.pmf(np.arange(11)[:, None], np.array(cfg.intensities)[None])
    assert np.allclose(pb.lower, expected, rtol=1e-14)
    assert np.allclose(pb.upper, expected, rtol=1e-14)
    assert pb.tail[2] == pytest.approx(poisson.sf(10, 0.5), rel=1e-6)


def test_cutoff_too_small(cfg):
    big = cfg.with_(intensities=(0.0025, 0.09, 3.0))
    with pytest.raises(CapacityError, match="n_cut"):
        photon_bounds(ideal_source(big), big)


def test_row_layout(cfg, chan):
    st = observables(ideal_source(cfg), chan, cfg)
    pb = photon_bounds(ideal_source(cfg), cfg)
    ob = overlap_bounds(uniform_coarse(0, 1e-6), cfg)
    z = zeta_weights(decompose(0.0, 0.0, 1.0, cfg), cfg)
    lp = build_bound_lp(1, 0, st, pb, ob.tau[0], z, cfg, "max")
    assert lp.A.shape == (138, 33)
    assert lp.tags[:2] == ("gain-lower a=omega", "gain-upper a=omega")
    assert lp.tags[6] == "cs-upper n=0 a=omega a'=nu"
    assert lp.tags[-1] == "cs-lower n=10 a=mu a'=nu"
    assert var_index(1, 2) == 5
    text = lp.dump()
    lines = text.splitlines()
    assert lines[1] == "# max v(1,mu)"
    assert len(lines) == 3 + 138
    assert lines[3].endswith("# gain-lower a=omega")
    # the dump round-trips exactly
    row = np.array([float(v) for v in lines[3].split("<=")[0].split()])
    assert np.array_equal(row, lp.A[0])


def test_bad_arguments(cfg, chan):
    st = observables(ideal_source(cfg), chan, cfg)
    pb = photon_bounds(ideal_source(cfg), cfg)
    tau = np.ones((3, 3, 11))
    with pytest.raises(ContractError):
        build_bound_lp(5, 0, st, pb, tau, np.zeros((4, 3, 2)), cfg, "max")
    with pytest.raises(ContractError):
        build_lp(np.zeros(3), np.zeros(11), tau, pb, "sideways")


def test_identical_states_reduce_to_standard_decoy_program():
    # with unit overlaps every intensity shares the same yields; compare with a direct program
    pb = PhotonBounds(*(2 * (poisson.pmf(np.arange(3)[:, None], np.array([0.01, 0.1, 0.4])[None]),)))
    Y = np.array([1e-4, 0.03, 0.06])
    G = pb.lower.T @ Y + np.array([0.0, 1e-7, 2e-5])
    lp = build_lp(G, Y, np.ones((3, 3, 3)), pb, "min")
    got = lp.solve()
    A = np.vstack([pb.lower.T, -pb.upper.T])
    b = np.concatenate([G, pb.tail - G])
    c = np.zeros(3)
    c[1] = 1
    ref = linprog(c, A_ub=A, b_ub=b, bounds=[(0, 1)] * 3, method="highs")
    assert got.ok and ref.status == 0
    assert got.objective == pytest.approx(ref.fun, abs=1e-9)
    x = got.x.reshape(3, 3)
    assert np.allclose(x, x[:, :1], atol=1e-9)


@pytest.mark.parametrize("eps", [0.0, 1e-6, 1e-4])
def test_bounds_sandwich_true_values(eps):
    cfg = ProtocolConfig(xi=0, delta1=0.1, delta2=-0.08)
    src = ideal_source(cfg)
    ob = overlap_bounds(uniform_coarse(0, eps), cfg)
    z = zeta_weights(decompose(cfg.delta1, cfg.delta2, 1.0, cfg), cfg)
    frac = click_fractions(src.amplitudes()[6:9])
    for eta in (1.0, 0.1, 0.01):
        for pd in (0.0, 1e-6):
            chan = ChannelConfig(eta, pd, 0.0)
            st = observables(src, chan, cfg)
            pb = photon_bounds(src, cfg)
            Y1 = photon_yield(1, frac, eta, pd)
            for j in range(1, 5):
                if not z[j - 1].any():
                    continue
                true = float((z[j - 1] * Y1[:, 1, :]).sum())
                hi = build_bound_lp(j, 0, st, pb, ob.tau[0], z, cfg, "max").solve()
                lo = build_bound_lp(j, 0, st, pb, ob.tau[0], z, cfg, "min").solve()
                assert hi.objective >= true - 1e-9
                assert lo.objective <= true + 1e-9
            true_y = float((yield_weights(cfg) * Y1[:, 0, :]).sum())
            y = build_yield_lp(0, st, pb, ob.tau_prime[0], cfg).solve()
            assert y.objective <= true_y + 1e-9
