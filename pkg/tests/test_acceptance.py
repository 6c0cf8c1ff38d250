"""Acceptance suite: one PASS/FAIL line per headline requirement.

Each check returns ``(ok, detail)``; the tests print the verdict and then
assert it, so the printed lines and the pytest outcome always agree.
Run ``python tests/test_acceptance.py`` for the verdict lines alone.
"""

import json
import math
import sys
import time
from pathlib import Path

import numpy as np
import pytest
from click.testing import CliRunner
from scipy.optimize import linprog
from scipy.stats import poisson

sys.path.insert(0, str(Path(__file__).parent))

from conftest import random_effect, random_state  # noqa: E402
from qkdcorr import cs  # noqa: E402
from qkdcorr.channel import click_fractions, observables, photon_yield  # noqa: E402
from qkdcorr.cli import default_threads, main  # noqa: E402
from qkdcorr.config import ChannelConfig, ProtocolConfig, load_preset  # noqa: E402
from qkdcorr.decoy import build_bound_lp, build_yield_lp, photon_bounds, yield_weights  # noqa: E402
from qkdcorr.engine import evaluate_point, sweep  # noqa: E402
from qkdcorr.epsilons import coarse_from_source, derive_epsilons, uniform_epsilons  # noqa: E402
from qkdcorr.overlaps import combine_chi, overlap_bounds  # noqa: E402
from qkdcorr.source import compose_source, delta_from_source, ideal_source  # noqa: E402
from qkdcorr.tables import CorrelationTables, load_table_dir  # noqa: E402
from qkdcorr.virtual import decompose, decomposition_residual, zeta_weights  # noqa: E402

# -- checks --------------------------------------------------------------------


def check_envelope():
    rng = np.random.default_rng(1)
    start = time.perf_counter()
    worst = -np.inf
    for _ in range(10_000):
        dim = int(rng.integers(2, 5))
        a, ap = random_state(rng, dim), random_state(rng, dim)
        m = random_effect(rng, dim)
        x = min(max(float(np.real(a.conj() @ m @ a)), 0.0), 1.0)
        xp = float(np.real(ap.conj() @ m @ ap))
        y = min(abs(complex(a.conj() @ ap)), 1.0)
        worst = max(worst, float(cs.g_lower(x, y)) - xp, xp - float(cs.g_upper(x, y)))
    wall = time.perf_counter() - start
    return worst <= 1e-12 and wall < 10, f"worst violation {worst:.2e}, {wall:.1f} s"


def check_tangents():
    x = np.linspace(0, 1, 50)[:, None, None]
    ref = np.linspace(0, 1, 50)[None, :, None]
    y = np.linspace(0.05, 1, 20)[None, None, :]
    m_u, t_u = cs.tangent_upper(ref, y)
    m_l, t_l = cs.tangent_lower(ref, y)
    over = cs.g_upper(x, y) - (m_u * x + t_u)
    under = (m_l * x + t_l) - cs.g_lower(x, y)
    worst = float(max(over.max(), under.max()))
    return worst <= 1e-12, f"worst violation {worst:.2e} on 50x50x20 points"


def check_identity():
    rng = np.random.default_rng(2)
    cfg = ProtocolConfig()
    resid = norm = 0.0
    for _ in range(100):
        d1, d2 = rng.uniform(-0.4, 0.4, size=2)
        dec = decompose(d1, d2, rng.uniform(0, 2 * math.pi), cfg)
        resid = max(resid, decomposition_residual(dec))
        norm = max(norm, abs(sum(dec.minus_group) - 1), abs(sum(dec.plus_group) - 1))
    return resid < 1e-9 and norm <= 1e-12, f"residual {resid:.2e}, normalization error {norm:.2e}"


def _mixed(arr, e):
    return (1 - e) * arr + e * arr[..., ::-1]


def check_sandwich():
    cfg = ProtocolConfig(xi=1)
    src = compose_source(load_table_dir("bundled"), cfg)
    d1, d2 = delta_from_source(src, cfg)
    cfg = cfg.with_(delta1=d1, delta2=d2)
    ob = overlap_bounds(coarse_from_source(src, cfg, 1e-6), cfg)
    pb = photon_bounds(src, cfg)
    frac = click_fractions(src.amplitudes())
    weights = yield_weights(cfg)
    zetas = [zeta_weights(decompose(d1, d2, phi, cfg), cfg) for phi in (0.0, 1.1, 2.5, 4.0)]
    worst = np.inf
    solved = 0
    start = time.perf_counter()
    for eta in (1.0, 0.5, 0.1, 0.01):
        for pd in (0.0, 1e-6, 1e-5):
            chan = ChannelConfig(eta, pd, 0.01)
            st = observables(src, chan, cfg)
            y1 = _mixed(photon_yield(1, frac, eta, pd), 0.01)   # (window, x, kappa)
            for prefix in range(9):
                mu_codes = (6 + np.arange(3)) * 9 + prefix
                truth_y = float((weights * y1[mu_codes, 0]).sum())
                lp = build_yield_lp(prefix, st, pb, ob.tau_prime[prefix], cfg).solve()
                worst = min(worst, truth_y - lp.objective)
                solved += 1
                for z in zetas:
                    for j in range(1, 5):
                        if not z[j - 1].any():
                            continue
                        truth = float((z[j - 1] * y1[mu_codes, 1]).sum())
                        hi = build_bound_lp(j, prefix, st, pb, ob.tau[prefix], z, cfg, "max").solve()
                        lo = build_bound_lp(j, prefix, st, pb, ob.tau[prefix], z, cfg, "min").solve()
                        if not (hi.ok and lo.ok):
                            return False, f"LP {hi.status}/{lo.status} at eta={eta} pd={pd}"
                        worst = min(worst, hi.objective - truth, truth - lo.objective)
                        solved += 2
    wall = time.perf_counter() - start
    return worst >= -1e-9 and wall < 60, f"{solved} LPs, worst margin {worst:.2e}, {wall:.1f} s"


def _oracle_gains(intensity, eta, pd, e_mis):
    """``Q[r, x, kappa]`` for ideal BB84-type states from the coherent-state click formula."""
    frac = np.array([[[1, 0], [0.5, 0.5]], [[0, 1], [0.5, 0.5]], [[0.5, 0.5], [1, 0]]], dtype=float)
    q = 1 - pd
    raw = 0.5 * (1 - q * np.exp(-eta * intensity * frac)) * (1 + q * np.exp(-eta * intensity * (1 - frac)))
    return (1 - e_mis) * raw + e_mis * raw[..., ::-1]


def _oracle_single_photon(gains, intensities, n_cut, direction):
    """Textbook three-intensity program on shared yields ``Y_0..Y_ncut``."""
    n = np.arange(n_cut + 1)
    P = poisson.pmf(n[None, :], np.asarray(intensities)[:, None])
    tail = 1 - P.sum(axis=1)
    A = np.vstack([P, -P])
    b = np.concatenate([gains, tail - gains])
    c = np.zeros(n_cut + 1)
    c[1] = 1.0 if direction == "min" else -1.0
    res = linprog(c, A_ub=A, b_ub=b, bounds=[(0, 1)] * (n_cut + 1), method="highs")
    return res.fun if direction == "min" else -res.fun


def check_zero_imperfection():
    cfg = ProtocolConfig()
    details = []
    ok = True
    for eta in (0.1, 0.01):
        chan = ChannelConfig(eta, 1e-6, 0.01)
        src = ideal_source(cfg)
        point = evaluate_point(observables(src, chan, cfg), photon_bounds(src, cfg),
                               overlap_bounds(uniform_epsilons("coarse", 0, 0.0), cfg), cfg)
        Q = np.stack([_oracle_gains(a, eta, 1e-6, 0.01) for a in cfg.intensities])   # (a, r, x, k)
        # bit-averaged Z yield, both detectors counted
        y = _oracle_single_photon(0.5 * Q[:, :2, 0, :].sum(axis=(1, 2)), cfg.intensities, cfg.n_cut, "min")
        t1 = _oracle_single_photon(0.5 * (Q[:, 0, 1, 0] + Q[:, 1, 1, 0]), cfg.intensities, cfg.n_cut, "max")
        t3 = _oracle_single_photon(Q[:, 2, 1, 1], cfg.intensities, cfg.n_cut, "max")
        t4 = _oracle_single_photon(Q[:, 2, 1, 0], cfg.intensities, cfg.n_cut, "min")
        ep = (t1 + 0.5 * (t3 - t4)) / y
        dy, dep = abs(point.y_lower - y), abs(point.ep_upper - ep)
        ok &= dy <= 1e-6 and dep <= 1e-6
        details.append(f"eta={eta}: |dy|={dy:.1e} |dep|={dep:.1e}")
    return ok, "; ".join(details)


def check_monotone():
    details = []
    ok = True
    run = load_preset("overclock-500-xi1")
    cfg, chan = run.protocol, run.channel
    src = ideal_source(cfg)
    rates = []
    for value in (0.0, 1e-7, 1e-6, 1e-5, 1e-4):
        pts = sweep(cfg, chan, src, uniform_epsilons(cfg.mode, cfg.xi, value), losses=(5.0, 15.0))
        rates.append([p.skr for p in pts])
    rates = np.array(rates)
    rate_ok = bool(np.all(np.diff(rates, axis=0) <= 1e-12))
    ok &= rate_ok
    details.append(f"key rate non-increasing in eps: {rate_ok}")
    g = np.linspace(0.0, 1e-3, 10)
    grid = np.stack(np.meshgrid(g, g, g, indexing="ij"), -1)      # (0,+), (1,+), (0,1)
    ones = np.ones((3, 3))
    chi, _ = combine_chi(ones, ones, grid, 0.01, 0.01)
    for axis, pair, sign in ((0, "(0,+)", 1), (1, "(1,+)", -1), (2, "(0,1)", 1)):
        good = bool(np.all(sign * np.diff(chi, axis=axis) >= -1e-15))
        ok &= good
        details.append(f"chi {'increasing' if sign > 0 else 'decreasing'} in {pair}: {good}")
    return ok, "; ".join(details)


def check_fig1():
    ideal = load_preset("ideal-250")
    fast = load_preset("overclock-1g-xi3-cross")
    losses = [x for x in ideal.channel.losses_db if x <= 10]
    pa = sweep(fast.protocol, fast.channel, ideal_source(fast.protocol),
               uniform_epsilons(fast.protocol.mode, 3, 1e-6, True), losses=losses)
    pb = sweep(ideal.protocol, ideal.channel, ideal_source(ideal.protocol),
               uniform_epsilons(ideal.protocol.mode, 0, 0.0), losses=losses)
    ratios = [a.skr_bps / b.skr_bps for a, b in zip(pa, pb)]
    shape_ok = all(2.5 <= r <= 4.0 for r in ratios)

    cfg = ProtocolConfig(xi=3, mode="fine", clock_hz=1e9)
    start = time.perf_counter()
    src = compose_source(load_table_dir("bundled"), cfg)
    d1, d2 = delta_from_source(src, cfg)
    cfg = cfg.with_(delta1=d1, delta2=d2)
    eps = derive_epsilons(src, cfg, 1e-6)
    point = evaluate_point(observables(src, ChannelConfig(1.0, 1e-6, 0.01), cfg, 10.0), photon_bounds(src, cfg),
                           overlap_bounds(eps, cfg), cfg, threads=min(8, default_threads()))
    wall = time.perf_counter() - start
    ok = shape_ok and wall < 300 and point.flagged == 0
    return ok, (f"ratio range {min(ratios):.3f}..{max(ratios):.3f} over {len(ratios)} losses; "
                f"fine xi=3 point {wall:.0f} s on {min(8, default_threads())} worker(s)")


def check_characterization():
    tabs = load_table_dir("bundled")
    cells_ok = (tabs.im.cell("mu", "www") == 1.00063 and tabs.im.cell("omega", "uuu") == 0.00493
                and tabs.os_state.cell("plus", "+++") == 0.70711)
    cfg = ProtocolConfig(xi=3)
    ident = CorrelationTables.identity()
    only_im = CorrelationTables(tabs.im, ident.si, ident.os_state, ident.os_intensity)
    src = compose_source(only_im, cfg)
    # with full history every window is one published cell over its probability-weighted row mean
    pa = np.array(cfg.intensity_probs)
    w = np.einsum("i,j,k->ijk", pa, pa, pa).ravel()
    mean = tabs.im.values @ w
    composed_ok = abs(src.alpha[0] - cfg.intensities[0] * tabs.im.cell("omega", "www") / mean[0]) <= 1e-15
    eps = coarse_from_source(src, cfg)
    worst = 0.0
    for a in range(3):
        hand = float(np.max(np.abs(tabs.im.values[a] / mean[a] - 1)))
        for r in range(3):
            worst = max(worst, abs(eps.epshat_r[0, a, r] - hand))
    ok = cells_ok and composed_ok and worst <= 1e-12
    return ok, f"cells {cells_ok}, composed window {composed_ok}, coarse max deviation error {worst:.1e}"


def check_determinism(tmp_dir=None):
    import tempfile

    doc = {"protocol": {"xi": 1}, "channel": {"eta_det": 1.0, "loss_db": "0:20:5"},
           "epsilons": {"floor": 1e-6}, "tables": {"dir": "bundled"}}
    with tempfile.TemporaryDirectory(dir=tmp_dir) as d:
        d = Path(d)
        (d / "run.json").write_text(json.dumps(doc))
        runner = CliRunner()
        codes = []
        for t in (1, 8):
            res = runner.invoke(main, ["skr", "--config", str(d / "run.json"), "--threads", str(t),
                                       "--out", str(d / f"t{t}.csv")])
            codes.append(res.exit_code)
        same = (d / "t1.csv").read_bytes() == (d / "t8.csv").read_bytes()
    return same and codes == [0, 0], f"exit codes {codes}, identical bytes {same}"


CHECKS = [
    ("CS envelope property", check_envelope),
    ("tangent bound property", check_tangents),
    ("virtual-state operator identity", check_identity),
    ("LP soundness sandwich", check_sandwich),
    ("zero-imperfection reduction", check_zero_imperfection),
    ("monotone conservatism", check_monotone),
    ("overclocking figure shape and xi=3 timing", check_fig1),
    ("characterization round trip", check_characterization),
    ("determinism across worker counts", check_determinism),
]


@pytest.mark.parametrize("name, check", CHECKS, ids=[c[0] for c in CHECKS])
def test_acceptance(name, check, capsys):
    ok, detail = check()
    with capsys.disabled():
        print(f"\n{'PASS' if ok else 'FAIL'} {name}: {detail}")
    assert ok, detail


if __name__ == "__main__":
    for name, check in CHECKS:
        ok, detail = check()
        print(f"{'PASS' if ok else 'FAIL'} {name}: {detail}", flush=True)
