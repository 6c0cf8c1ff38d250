"""Analytic detection model producing the statistics an experiment would see.

Bob has two threshold detectors with efficiency-times-transmittance ``eta``
and dark-count probability ``P_d``.  A qubit with early/late amplitudes
``(e, l)`` reaches detector ``kappa`` of basis ``x`` with probability
``alpha[x, kappa]``: ``e^2, l^2`` in Z and ``(e +- l)^2 / 2`` in X.
Double clicks are assigned at random, which gives the ``1/2`` prefactor.

A misalignment ``e_mis`` mixes the two detectors of each basis as a
classical bit flip: ``Q'_k = (1 - e_mis) Q_k + e_mis Q_{1-k}``.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .config import ChannelConfig, ProtocolConfig
from .errors import ContractError
from .settings import DEFAULT_MAX_XI, ENCODING_LABELS, INTENSITY_LABELS, sequence_digits, sequence_weights
from .source import FineGrainedSource, flawed_amplitudes

Z, X = 0, 1
PROB_SLACK = 1e-12


def click_fractions(amps: np.ndarray) -> np.ndarray:
    """``alpha[..., x, kappa]`` from ``(early, late)`` amplitudes on the last axis."""
    amps = np.asarray(amps, dtype=float)
    e, l = amps[..., 0], amps[..., 1]
    out = np.empty(amps.shape[:-1] + (2, 2))
    out[..., Z, 0] = e * e
    out[..., Z, 1] = l * l
    out[..., X, 0] = 0.5 * (e + l) ** 2
    out[..., X, 1] = 0.5 * (e - l) ** 2
    return out


def reference_fractions(delta1: float, delta2: float) -> np.ndarray:
    """Click fractions ``[r, x, kappa]`` of the uncorrelated flawed states."""
    return click_fractions(flawed_amplitudes(delta1, delta2))


def _mix(arr: np.ndarray, e_mis: float) -> np.ndarray:
    """Apply the classical detector flip along the last (kappa) axis."""
    if e_mis == 0:
        return arr
    return (1 - e_mis) * arr + e_mis * arr[..., ::-1]


def photon_yield(n, frac, eta: float, dark: float):
    """Probability that detector ``kappa`` clicks for an n-photon input."""
    n = np.asarray(n, dtype=float)
    frac = np.asarray(frac, dtype=float)
    q = 1 - dark
    val = 0.5 * (1 - q * q * (1 - eta) ** n + q * (1 - (1 - frac) * eta) ** n - q * (1 - frac * eta) ** n)
    return val


def coherent_gain(intensity, frac, eta: float, dark: float):
    """Probability that detector ``kappa`` clicks for a phase-randomized coherent pulse."""
    intensity = np.asarray(intensity, dtype=float)
    frac = np.asarray(frac, dtype=float)
    q = 1 - dark
    return 0.5 * (1 - q * np.exp(-eta * intensity * frac)) * (1 + q * np.exp(-eta * intensity * (1 - frac)))


def reference_yield(n: int, a: int, r: int, x: int, kappa: int, chan: ChannelConfig, cfg: ProtocolConfig,
                    loss_db: float = 0.0) -> float:
    """n-photon yield of the flawed uncorrelated states (independent of ``a``)."""
    if n < 0 or n > cfg.n_cut:
        raise ContractError(f"n={n} outside 0..{cfg.n_cut}")
    frac = reference_fractions(cfg.delta1, cfg.delta2)
    vals = photon_yield(n, frac[r, x], chan.eta(loss_db), chan.dark_count)
    return float(_mix(vals, chan.misalignment)[kappa])


def gain(code: int, x: int, kappa: int, src: FineGrainedSource, chan: ChannelConfig, cfg: ProtocolConfig,
         loss_db: float = 0.0) -> float:
    """Gain of the window with sequence code ``code``."""
    frac = click_fractions(src.amplitudes()[code])[x]
    vals = coherent_gain(src.alpha[code], frac, chan.eta(loss_db), chan.dark_count)
    return float(_mix(vals, chan.misalignment)[kappa])


@dataclass
class ObservedStatistics:
    """Everything the estimation step may use for one channel point.

    ``gains[code, x, kappa]`` per window; ``ref_yields[n, r, x, kappa]`` for the
    LP tangent points; ``e_b`` and ``q_mu_z`` are sifted-key figures (``e_b`` is
    ``nan`` when nothing is detected).
    """

    loss_db: float
    eta: float
    gains: np.ndarray
    ref_yields: np.ndarray
    e_b: float
    q_mu_z: float
    clamp_events: int = 0
    warnings: list[str] = field(default_factory=list)

    @property
    def e_b_flagged(self) -> bool:
        return not math.isfinite(self.e_b)

    def to_csv(self, xi: int) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["sequence", "basis", "outcome", "gain"])
        length = xi + 1
        digits = sequence_digits(length, max_length=max(length, DEFAULT_MAX_XI + 1))
        for code in range(self.gains.shape[0]):
            label = " ".join(f"({INTENSITY_LABELS[s // 3]},{ENCODING_LABELS[s % 3]})" for s in digits[code])
            for x, xl in enumerate("ZX"):
                for k in range(2):
                    w.writerow([label, xl, k, f"{self.gains[code, x, k]:.12g}"])
        return buf.getvalue()


def _clamp(arr: np.ndarray) -> tuple[np.ndarray, int]:
    low, high = arr < 0, arr > 1
    if np.any(arr < -PROB_SLACK) or np.any(arr > 1 + PROB_SLACK):
        raise ContractError("channel model produced a probability outside [0, 1]")
    count = int(low.sum() + high.sum())
    return np.clip(arr, 0.0, 1.0), count


def reference_amplitudes(src: FineGrainedSource, cfg: ProtocolConfig) -> np.ndarray:
    """Amplitudes used for the tangent points: the source's history average for the signal intensity."""
    return src.mean_amplitudes(cfg)


def observables(src: FineGrainedSource, chan: ChannelConfig, cfg: ProtocolConfig, loss_db: float = 0.0) -> ObservedStatistics:
    eta = chan.eta(loss_db)
    frac = click_fractions(src.amplitudes())                      # (W, 2, 2)
    gains = coherent_gain(src.alpha[:, None, None], frac, eta, chan.dark_count)
    gains, clamps = _clamp(_mix(gains, chan.misalignment))

    ref_frac = click_fractions(reference_amplitudes(src, cfg))     # (3, 2, 2)
    n = np.arange(cfg.n_cut + 1)[:, None, None, None]
    ref = photon_yield(n, ref_frac[None], eta, chan.dark_count)
    ref, more = _clamp(_mix(ref, chan.misalignment))
    clamps += more

    digits = src.digits()
    weights = sequence_weights(src.length, cfg)
    cur = digits[:, 0]
    right = wrong = total_w = 0.0
    for r in (0, 1):
        mask = cur == 3 * 2 + r
        w = weights[mask]
        g = gains[mask, Z]
        right += float(np.dot(w, g[:, r]))
        wrong += float(np.dot(w, g[:, 1 - r]))
        total_w += float(w.sum())
    detected = right + wrong
    warnings = []
    if detected > 0:
        e_b = wrong / detected
    else:
        e_b = float("nan")
        warnings.append(f"no Z-basis detections at {loss_db} dB; bit error rate undefined")
    q_mu_z = detected / total_w
    if clamps:
        warnings.append(f"{clamps} probabilities clamped into [0, 1] at {loss_db} dB")
    return ObservedStatistics(loss_db, eta, gains, ref, e_b, q_mu_z, clamps, warnings)
