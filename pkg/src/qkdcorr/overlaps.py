"""Lower bounds on state overlaps used by the Cauchy-Schwarz constraints.

For every prefix of ``xi`` previous settings this module provides

* ``tau[n, a, a']``: overlap of the n-photon states of two intensities that
  share all other settings, including the effect on future rounds;
* ``tau_prime[n, a, a']``: the same for the bit-averaged Z-basis states;
* ``chi``: overlap between the actual plus state and the plus state
  reconstructed from the Z states, built from the two-state factors
  ``chi1[r, r']`` (attenuation by future rounds) and ``chi2[r, r']``
  (side-channel inflation).

Future rounds are summed over exactly in fine mode, which costs
``9 ** xi`` terms per prefix; coarse mode factorizes per round.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .config import ProtocolConfig
from .epsilons import PAIRS, CoarseEpsilons, EpsilonSet, FineEpsilons, ideal_overlaps
from .errors import ConfigError
from .settings import DEFAULT_MAX_XI, Setting, sequence_code, sequence_digits, setting_probabilities

RADICAND_FLOOR = 1e-15
MU = 2
_CHUNK = 1 << 20


def _digits(length):
    return sequence_digits(length, max_length=max(length, DEFAULT_MAX_XI + 1))


def _decay(nominal, epsbar, epshat, eps):
    return np.exp(-nominal * (1 + epsbar) * (1 - np.sqrt((1 - epshat**2) * (1 - eps))))


def _fine_decay_tables(eps: FineEpsilons, cfg: ProtocolConfig):
    """``exp(-a_i (1 + bar) (1 - sqrt((1 - hat^2)(1 - eps))))`` for both families."""
    digits = _digits(eps.xi + 1)
    nominal = np.asarray(cfg.intensities)[digits[:, 0] // 3][None, :, None]
    dec_a = _decay(nominal, eps.epsbar_a, eps.epshat_a, eps.eps_a)
    dec_r = _decay(nominal, eps.epsbar_r, eps.epshat_r, eps.eps_r)
    return dec_a, dec_r


def _future_sums(decay: np.ndarray, xi: int, setting: int, alt: int, ps9: np.ndarray) -> np.ndarray:
    """Sum over future settings of the product of per-round decay factors.

    Round ``i`` rounds after the analysed one sees a window whose position
    ``i`` holds ``setting``, positions ``0..i-1`` hold the future settings
    ``f_i .. f_1`` and the rest hold the oldest part of the prefix.  Returns
    one value per prefix, in prefix-code order.
    """
    if xi == 0:
        return np.ones(1)
    n = 9**xi
    pre = _digits(xi)   # pre[:, j] is the setting j + 1 rounds back
    fut = _digits(xi)   # fut[:, j] is the setting j + 1 rounds ahead
    wfut = np.prod(ps9[fut], axis=1)
    fut_part, pre_part = [], []
    for i in range(1, xi + 1):
        fp = np.zeros(n, dtype=np.int64)
        for pos in range(i):
            fp += fut[:, i - 1 - pos] * 9 ** (xi - pos)
        pp = np.zeros(n, dtype=np.int64)
        for pos in range(i + 1, xi + 1):
            pp += pre[:, pos - i - 1] * 9 ** (xi - pos)
        fut_part.append(fp + setting * 9 ** (xi - i))
        pre_part.append(pp)
    out = np.empty(n)
    rows = max(1, _CHUNK // n)
    for start in range(0, n, rows):
        sl = slice(start, min(n, start + rows))
        prod = np.ones((sl.stop - sl.start, n))
        for i in range(1, xi + 1):
            prod *= decay[i][pre_part[i - 1][sl, None] + fut_part[i - 1][None, :], alt]
        out[sl] = prod @ wfut
    return out


def _coarse_future_product(eps_w: np.ndarray, hat_w: np.ndarray, cfg: ProtocolConfig, xi: int) -> float:
    """``prod_w sum_{(a, r)} p_a p_r exp(-a (1 - sqrt((1 - hat^2)(1 - eps))))``."""
    ps = setting_probabilities(cfg.intensity_probs, cfg.encoding_probs).reshape(3, 3)
    nominal = np.asarray(cfg.intensities)[:, None]
    total = 1.0
    for w in range(1, xi + 1):
        terms = ps * _decay(nominal, 0.0, hat_w[w], eps_w[w])
        total *= float(terms.sum())
    return total


@dataclass
class OverlapBounds:
    """All overlap bounds for every prefix, arrays indexed by prefix code first."""

    tau: np.ndarray          # (prefixes, 3, 3, n_cut + 1)
    tau_prime: np.ndarray    # (prefixes, 3, 3, n_cut + 1)
    chi: np.ndarray          # (prefixes,)
    chi1: np.ndarray         # (prefixes, 3, 3) attenuation factors chi'_{r, r'}
    chi2: np.ndarray         # (prefixes, 3, 3) inflation factors chi''_{r, r'}
    chi_flagged: np.ndarray = field(default=None)


def tau_factors(eps: EpsilonSet, cfg: ProtocolConfig):
    """Return ``base[P, a, a', r]`` and ``future[P, a, a', r]`` with
    ``tau_n = min_r base ** (n / 2) * future`` (coarse sets have no ``r`` dependence)."""
    xi = eps.xi
    nP = 9**xi
    base = np.ones((nP, 3, 3, 3))
    future = np.ones((nP, 3, 3, 3))
    if isinstance(eps, CoarseEpsilons):
        fut = _coarse_future_product(eps.eps_a, eps.epshat_a, cfg, xi)
        for a in range(3):
            for ap in range(3):
                if a != ap:
                    base[:, a, ap, :] = 1 - eps.eps_a0[a, ap]
                    future[:, a, ap, :] = fut
        return base, future
    ps9 = setting_probabilities(cfg.intensity_probs, cfg.encoding_probs)
    dec_a, _ = _fine_decay_tables(eps, cfg)
    e0 = eps.eps_a[0].reshape(9, nP, 3)
    for a in range(3):
        for ap in range(3):
            if a == ap:
                continue
            for r in range(3):
                base[:, a, ap, r] = 1 - e0[3 * a + r, :, ap]
                future[:, a, ap, r] = _future_sums(dec_a, xi, 3 * a + r, ap, ps9)
    return base, future


def tau_table(eps: EpsilonSet, cfg: ProtocolConfig) -> np.ndarray:
    """``tau[P, a, a', n]`` for ``n = 0..n_cut``; diagonal entries are 1."""
    base, future = tau_factors(eps, cfg)
    n = np.arange(cfg.n_cut + 1)
    vals = base[..., None] ** (n / 2) * future[..., None]     # (P, a, a', r, n)
    tau = np.clip(vals.min(axis=3), 0.0, 1.0)
    for a in range(3):
        tau[:, a, a, :] = 1.0
    return tau


def u_weights(eps: EpsilonSet, cfg: ProtocolConfig) -> np.ndarray:
    """``u[P, a, r, n]`` for the two Z encodings ``r in {0, 1}``."""
    xi = eps.xi
    nP = 9**xi
    if isinstance(eps, FineEpsilons):
        hat = np.stack([eps.epshat_r[0].reshape(9, nP, 3)[3 * a + 0, :, 1] for a in range(3)], axis=1)
        bar = np.stack([eps.epsbar_r[0].reshape(9, nP, 3)[3 * a + 0, :, 1] for a in range(3)], axis=1)
    else:
        dev = np.maximum(eps.epshat_r[0][:, 0], eps.epshat_r[0][:, 1])
        bar = np.broadcast_to(dev, (nP, 3))
        # Two intensities within dev of nominal differ by at most dev / (1 - dev) in ratio form.
        hat = np.broadcast_to(np.minimum(dev / np.maximum(1 - dev, 1e-300), 1.0), (nP, 3))
    p0, p1 = cfg.encoding_probs[0], cfg.encoding_probs[1]
    nominal = np.asarray(cfg.intensities)[None, :, None]
    n = np.arange(cfg.n_cut + 1)[None, None, :]
    h, b = hat[..., None], bar[..., None]
    u0 = max(p0, p1) * np.exp(-nominal * (1 + b) * h) * (1 + h) ** n
    u1 = min(p0, p1) * np.exp(nominal * (1 + b) * h) * (1 - h) ** n
    return np.stack([u0, u1], axis=2)


def tau_prime_table(eps: EpsilonSet, cfg: ProtocolConfig, tau: np.ndarray | None = None) -> np.ndarray:
    """``tau'[P, a, a', n]`` for the bit-averaged Z-basis states."""
    if tau is None:
        tau = tau_table(eps, cfg)
    u = u_weights(eps, cfg)                  # (P, a, r, n)
    num = np.sqrt(u[:, :, None, :, :] * u[:, None, :, :, :]).sum(axis=3)
    tot = u.sum(axis=2)
    den = np.sqrt(tot[:, :, None, :] * tot[:, None, :, :])
    out = np.clip(num / den * tau, 0.0, 1.0)
    for a in range(3):
        out[:, a, a, :] = 1.0
    return out


def chi_factors(eps: EpsilonSet, cfg: ProtocolConfig):
    """Attenuation ``chi1[P, r, r']`` and inflation ``chi2[P, r, r']`` for the signal intensity."""
    xi = eps.xi
    nP = 9**xi
    chi1 = np.ones((nP, 3, 3))
    chi2 = np.ones((nP, 3, 3))
    if isinstance(eps, CoarseEpsilons):
        fut = _coarse_future_product(eps.eps_r, eps.epshat_r, cfg, xi)
        chi1[:] = np.sqrt(1 - eps.eps_r0)[None] * fut
        chi2[:] = np.sqrt(1 + eps.eps_r0)[None]
        return chi1, chi2
    ps9 = setting_probabilities(cfg.intensity_probs, cfg.encoding_probs)
    _, dec_r = _fine_decay_tables(eps, cfg)
    e0 = eps.eps_r[0].reshape(9, nP, 3)
    needed = {(r, rh) for pair in PAIRS for r, rh in (pair, pair[::-1])}
    for r, rh in sorted(needed):
        chi2[:, r, rh] = np.sqrt(1 + e0[3 * MU + r, :, rh])
        chi1[:, r, rh] = np.sqrt(1 - e0[3 * MU + r, :, rh]) * _future_sums(dec_r, xi, 3 * MU + r, rh, ps9)
    return chi1, chi2


def combine_chi(chi1, chi2, eps_delta, delta1: float, delta2: float, variant: str = "full"):
    """Overlap ``chi`` from the two-state factors.

    ``eps_delta`` holds the signed deviations for the pairs ``(0,+), (1,+), (0,1)``
    (last axis).  Returns ``(chi, flagged)``; ``flagged`` marks prefixes where a
    radicand had to be floored.  Vectorized over leading axes.
    """
    chi1 = np.asarray(chi1, dtype=float)
    chi2 = np.asarray(chi2, dtype=float)
    eps_delta = np.asarray(eps_delta, dtype=float)
    x0p = chi1[..., 0, 2]
    x1p = chi1[..., 1, 2]
    if variant == "reduced":
        c = math.cos(delta2 / 4 + math.pi / 4)
        d = math.sin(delta2 / 4 + math.pi / 4 - delta1 / 2)
        s = math.sin(delta1 / 2)
        rad = 1 - (x0p * c) ** 2
        flagged = rad <= 0
        den = np.sqrt(np.maximum(rad, RADICAND_FLOOR)) * math.cos(delta1 / 2)
        chip = np.clip((d * x1p - c * s * x0p) / den, 0.0, 1.0)
        chi = (1 + chip) / 2 - np.abs((1 - chip) / 2 * math.sin(delta2 / 2))
        return np.clip(chi, 0.0, 1.0), flagged
    if variant != "full":
        raise ConfigError(f"unknown chi variant {variant!r}")
    ov = ideal_overlaps(delta1, delta2)
    c = ov[0] - eps_delta[..., 0]
    d = ov[1] - eps_delta[..., 1]
    s1 = ov[2] - eps_delta[..., 2]
    x10 = chi2[..., 1, 0]
    x0p2 = chi2[..., 0, 2]
    rad1 = 1 - (x0p * c) ** 2
    rad2 = 1 - (x10 * s1) ** 2
    flagged = (rad1 <= 0) | (rad2 <= 0)
    den = np.sqrt(np.maximum(rad1, RADICAND_FLOOR)) * np.sqrt(np.maximum(rad2, RADICAND_FLOOR))
    chip = np.clip((d * x1p - c * x0p * s1 * x10) / den, 0.0, 1.0)
    chi = (1 + chip) / 2 - np.abs((1 - chip) / 2 * (1 - 2 * x0p2 * c**2))
    return np.clip(chi, 0.0, 1.0), flagged


def overlap_bounds(eps: EpsilonSet, cfg: ProtocolConfig) -> OverlapBounds:
    if eps.xi != cfg.xi:
        raise ConfigError(f"epsilon set is for xi={eps.xi} but the protocol uses xi={cfg.xi}")
    tau = tau_table(eps, cfg)
    taup = tau_prime_table(eps, cfg, tau)
    chi1, chi2 = chi_factors(eps, cfg)
    chi, flagged = combine_chi(chi1, chi2, eps.eps_delta[MU], cfg.delta1, cfg.delta2, cfg.chi_variant)
    return OverlapBounds(tau, taup, chi, chi1, chi2, flagged)


# -- single-value conveniences --------------------------------------------

def _prefix_code(seq) -> int:
    return sequence_code(tuple(s if isinstance(s, (int, Setting)) else Setting(*s) for s in seq))


def tau(n: int, a: int, a_alt: int, seq, eps: EpsilonSet, cfg: ProtocolConfig) -> float:
    """Overlap bound for intensities ``a`` and ``a_alt`` after the prefix ``seq``."""
    if n > cfg.n_cut:
        raise ConfigError(f"n={n} exceeds n_cut={cfg.n_cut}")
    return float(tau_table(eps, cfg)[_prefix_code(seq), a, a_alt, n])


def tau_prime(n: int, a: int, a_alt: int, seq, eps: EpsilonSet, cfg: ProtocolConfig) -> float:
    if n > cfg.n_cut:
        raise ConfigError(f"n={n} exceeds n_cut={cfg.n_cut}")
    return float(tau_prime_table(eps, cfg)[_prefix_code(seq), a, a_alt, n])


def chi_bound(eps: EpsilonSet, cfg: ProtocolConfig, seq=()) -> float:
    if abs(cfg.delta1) >= 0.5 or abs(cfg.delta2) >= 0.5:
        raise ConfigError("the overlap bound assumes |delta1|, |delta2| < 0.5 rad")
    chi1, chi2 = chi_factors(eps, cfg)
    p = _prefix_code(seq)
    chi, _ = combine_chi(chi1[p], chi2[p], eps.eps_delta[MU, p], cfg.delta1, cfg.delta2, cfg.chi_variant)
    return float(chi)
