"""Fine-grained transmitter description built from sub-module tables.

A :class:`FineGrainedSource` stores, for every window of ``xi + 1`` settings
(current round first), the actual mean photon number of the emitted pulse and
the early-bin amplitude ``Lambda`` of its single-photon qubit
``Lambda|e> + sign * sqrt(1 - Lambda^2)|l>``.  Measured tables only give
``Lambda`` and use ``sign = +1``; the textbook flawed states put the bit-1
state at ``sin(d1/2)|e> - cos(d1/2)|l>``, which needs ``sign = -1``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .config import ProtocolConfig
from .errors import ConfigError, DataError
from .settings import DEFAULT_MAX_XI, sequence_digits, sequence_weights
from .tables import CorrelationTables, SubTable

log = logging.getLogger(__name__)

IDEAL_LAMBDA = np.array([1.0, 0.0, math.sqrt(0.5)])


@dataclass(frozen=True)
class FineGrainedSource:
    """Per-window intensities ``alpha`` and qubit amplitudes ``lam``.

    All arrays have ``9 ** (xi + 1)`` entries in sequence-code order.
    ``nominal`` holds the intensities the protocol announces, ordered
    (omega, nu, mu).  ``late_sign`` defaults to all ``+1``.
    """

    xi: int
    alpha: np.ndarray
    lam: np.ndarray
    nominal: tuple[float, float, float]
    label: str = "ideal"
    late_sign: np.ndarray | None = None

    def __post_init__(self):
        n = 9 ** (self.xi + 1)
        alpha = np.asarray(self.alpha, dtype=float)
        lam = np.asarray(self.lam, dtype=float)
        if alpha.shape != (n,) or lam.shape != (n,):
            raise DataError(f"source arrays must have length {n}")
        if np.any(~np.isfinite(alpha)) or np.any(alpha <= 0):
            bad = int(np.argmin(alpha))
            raise DataError(f"intensity for window code {bad} is {alpha[bad]}; intensities must be positive")
        if np.any(lam < -1e-12) or np.any(lam > 1 + 1e-12):
            raise DataError("qubit amplitudes must lie in [0, 1]")
        sign = np.ones(n) if self.late_sign is None else np.where(np.asarray(self.late_sign) < 0, -1.0, 1.0)
        if sign.shape != (n,):
            raise DataError(f"late_sign must have length {n}")
        lam = np.clip(lam, 0.0, 1.0)
        for arr in (alpha, lam, sign):
            arr.setflags(write=False)
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "lam", lam)
        object.__setattr__(self, "late_sign", sign)

    def amplitudes(self) -> np.ndarray:
        """Early and late amplitudes, shape ``(windows, 2)``."""
        return np.stack([self.lam, self.late_sign * np.sqrt(1 - self.lam**2)], axis=1)

    @property
    def length(self) -> int:
        return self.xi + 1

    def digits(self) -> np.ndarray:
        return sequence_digits(self.length, max_length=max(self.length, DEFAULT_MAX_XI + 1))

    def is_ideal(self) -> bool:
        digits = self.digits()
        nominal = np.asarray(self.nominal)[digits[:, 0] // 3]
        return bool(
            np.all(self.alpha == nominal)
            and np.all(self.lam == IDEAL_LAMBDA[digits[:, 0] % 3])
            and np.all(self.late_sign == 1.0)
        )

    def mean_lambda(self, cfg: ProtocolConfig, intensity: int = 2) -> np.ndarray:
        """Root-mean-square early amplitude per encoding, averaged over history.

        Only windows whose current intensity is ``intensity`` contribute.
        """
        digits = self.digits()
        weights = sequence_weights(self.length, cfg)
        out = np.empty(3)
        for r in range(3):
            mask = digits[:, 0] == 3 * intensity + r
            w = weights[mask]
            out[r] = math.sqrt(float(np.dot(w, self.lam[mask] ** 2) / w.sum()))
        return out

    def mean_amplitudes(self, cfg: ProtocolConfig, intensity: int = 2) -> np.ndarray:
        """History-averaged ``(early, late)`` amplitudes per encoding, shape ``(3, 2)``."""
        lam = self.mean_lambda(cfg, intensity)
        digits = self.digits()
        signs = np.array([self.late_sign[np.argmax(digits[:, 0] == 3 * intensity + r)] for r in range(3)])
        return np.stack([lam, signs * np.sqrt(1 - lam**2)], axis=1)

    def mean_intensity(self, cfg: ProtocolConfig) -> np.ndarray:
        """Probability-weighted mean intensity for each current intensity setting."""
        digits = self.digits()
        weights = sequence_weights(self.length, cfg)
        out = np.empty(3)
        for a in range(3):
            mask = digits[:, 0] // 3 == a
            out[a] = float(np.dot(weights[mask], self.alpha[mask]) / weights[mask].sum())
        return out

    def truncated(self, xi: int) -> "FineGrainedSource":
        """Source for a shorter correlation range, keeping the most recent rounds.

        Older settings are averaged out with uniform weights; intended for
        sources that do not depend on them.
        """
        if xi > self.xi:
            raise ConfigError(f"cannot extend a xi={self.xi} source to xi={xi}")
        drop = self.xi - xi
        alpha = self.alpha.reshape(9 ** (xi + 1), 9**drop).mean(axis=1)
        lam = self.lam.reshape(9 ** (xi + 1), 9**drop).mean(axis=1)
        sign = self.late_sign.reshape(9 ** (xi + 1), 9**drop)[:, 0]
        return FineGrainedSource(xi, alpha, lam, self.nominal, self.label, sign)


def flawed_amplitudes(delta1: float, delta2: float) -> np.ndarray:
    """``(early, late)`` amplitudes of the uncorrelated flawed states, shape ``(3, 2)``."""
    return np.array([
        [1.0, 0.0],
        [math.sin(delta1 / 2), -math.cos(delta1 / 2)],
        [math.cos((delta2 + math.pi) / 4), math.sin((delta2 + math.pi) / 4)],
    ])


def ideal_source(cfg: ProtocolConfig) -> FineGrainedSource:
    """Source with nominal intensities and the flawed but uncorrelated states.

    With ``delta1 = delta2 = 0`` these are the perfect BB84 states.
    """
    length = cfg.xi + 1
    digits = sequence_digits(length, max_length=max(length, cfg.max_xi + 1))
    alpha = np.asarray(cfg.intensities)[digits[:, 0] // 3]
    amps = flawed_amplitudes(cfg.delta1, cfg.delta2)
    if cfg.delta1 == 0 and cfg.delta2 == 0:
        lam = IDEAL_LAMBDA[digits[:, 0] % 3]
        sign = np.ones(lam.size)
    else:
        lam = np.abs(amps[digits[:, 0] % 3, 0])
        sign = np.sign(amps[:, 0] * amps[:, 1])[digits[:, 0] % 3]
        sign[sign == 0] = 1.0
    return FineGrainedSource(cfg.xi, alpha, lam, cfg.intensities, "ideal", sign)


def _marginal_cells(table: SubTable, weights: np.ndarray, observed: int, how: str) -> np.ndarray:
    """Collapse the table's unobserved older columns.

    Returns an array of shape ``(rows, k, ..., k)`` with ``observed`` pattern
    axes.  ``how="mean"`` averages with the protocol weights, ``how="max"``
    keeps the cell deviating most from its row mean.
    """
    cube = table.as_cube()
    if observed >= 3:
        return cube
    nrows, k = cube.shape[0], cube.shape[1]
    flat = cube.reshape(nrows, k**observed, k ** (3 - observed))
    tail_w = np.ones(1)
    for _ in range(3 - observed):
        tail_w = np.outer(tail_w, weights).ravel()
    if how == "mean":
        out = flat @ tail_w / tail_w.sum()
        # Constant rows must stay bitwise constant.
        const = np.all(flat == flat[:, :1, :1], axis=(1, 2))
        out[const] = flat[const, 0, :1]
    else:
        centre = _row_means(table, weights)[:, None, None]
        idx = np.argmax(np.abs(flat - centre), axis=2)
        out = np.take_along_axis(flat, idx[:, :, None], axis=2)[:, :, 0]
    return out.reshape((nrows,) + (k,) * observed)


def _row_means(table: SubTable, weights: np.ndarray) -> np.ndarray:
    cube = table.as_cube()
    nrows, k = cube.shape[0], cube.shape[1]
    w3 = np.einsum("i,j,k->ijk", weights, weights, weights).ravel()
    flat = cube.reshape(nrows, k**3)
    means = flat @ w3 / w3.sum()
    const = np.all(flat == flat[:, :1], axis=1)
    means[const] = flat[const, 0]
    return means


def _lookup(cells: np.ndarray, row_idx: np.ndarray, pattern_idx: list[np.ndarray]) -> np.ndarray:
    return cells[(row_idx, *pattern_idx)]


def compose_source(tables: CorrelationTables, cfg: ProtocolConfig, marginalization: str = "mean") -> FineGrainedSource:
    """Combine the four sub-module tables into per-window intensities and amplitudes.

    Intensity factors multiply in the fixed order nominal x IM x SI x OS,
    each normalized by its row's probability-weighted mean so that constant
    tables reproduce the nominal intensities exactly.
    """
    if marginalization not in ("mean", "max"):
        raise ConfigError(f"marginalization must be 'mean' or 'max', got {marginalization!r}")
    length = cfg.xi + 1
    observed = min(3, cfg.xi)
    digits = sequence_digits(length, max_length=max(length, cfg.max_xi + 1))
    a_idx = digits // 3
    r_idx = digits % 3
    b_idx = (r_idx == 2).astype(np.int64)

    pa = np.asarray(cfg.intensity_probs)
    pr = np.asarray(cfg.encoding_probs)
    pb = np.array([cfg.alice_z_prob, cfg.alice_x_prob])

    def factor(table, weights, cur, hist):
        cells = _marginal_cells(table, weights, observed, marginalization)
        means = _row_means(table, weights)
        vals = _lookup(cells, cur[:, 0], [hist[:, p] for p in range(1, observed + 1)])
        out = vals / means[cur[:, 0]]
        const = np.all(table.values == table.values[:, :1], axis=1)
        out[const[cur[:, 0]]] = 1.0
        return out

    f_im = factor(tables.im, pa, a_idx, a_idx)
    f_si = factor(tables.si, pb, b_idx, b_idx)
    f_os = factor(tables.os_intensity, pr, r_idx, r_idx)
    nominal = np.asarray(cfg.intensities)[a_idx[:, 0]]
    alpha = nominal * f_im * f_si * f_os

    lam_cells = _marginal_cells(tables.os_state, pr, observed, marginalization)
    lam = _lookup(lam_cells, r_idx[:, 0], [r_idx[:, p] for p in range(1, observed + 1)])
    src = FineGrainedSource(cfg.xi, alpha, lam, cfg.intensities, "tables")

    means = src.mean_intensity(cfg)
    for a, (m, nom) in enumerate(zip(means, cfg.intensities)):
        if nom > 0 and abs(m / nom - 1) > 0.01:
            log.warning("mean composed intensity %.6g differs from nominal %.6g by more than 1%%", m, nom)
    return src


def delta_from_source(src: FineGrainedSource, cfg: ProtocolConfig) -> tuple[float, float]:
    """SPF angles implied by the history-averaged signal-state amplitudes.

    ``sin(delta1 / 2)`` is the overlap of the two Z states and
    ``cos(delta2 / 4 + pi / 4)`` the overlap of the bit-0 and plus states.
    """
    amps = src.mean_amplitudes(cfg)
    ov01 = abs(float(amps[0] @ amps[1]))
    ov0p = abs(float(amps[0] @ amps[2]))
    delta1 = 2 * math.asin(min(1.0, ov01))
    delta2 = 4 * math.acos(min(1.0, ov0p)) - math.pi
    return delta1, delta2


def qubit_overlap(lam1, lam2, sign1=1.0, sign2=1.0):
    """``<psi1|psi2>`` for real states ``Lambda|e> + sign sqrt(1 - Lambda^2)|l>``."""
    lam1 = np.asarray(lam1, dtype=float)
    lam2 = np.asarray(lam2, dtype=float)
    late = np.sqrt(np.clip(1 - lam1**2, 0, 1)) * np.sqrt(np.clip(1 - lam2**2, 0, 1))
    out = lam1 * lam2 + np.asarray(sign1) * np.asarray(sign2) * late
    return out if out.ndim else float(out)
