"""Correlation and side-channel parameters.

Two granularities are supported.

Fine-grained arrays are indexed ``[w, code, alt]``: ``code`` is a window of
``xi + 1`` settings (current round first) and the parameter bounds the pair
formed by that window and the window whose position ``w`` is changed to the
alternative value ``alt`` (an encoding for the ``*_r`` family, an intensity
for the ``*_a`` family).

Coarse-grained arrays drop the sequence dependence:

* ``eps_r0[r, r_alt]`` and ``eps_a0[a, a_alt]`` cover the current round;
* ``eps_r[w, a, r]``, ``eps_a[w, a, r]`` bound the state parameters of every
  window whose current setting is ``(a, r)``;
* ``epshat[w, a, r]`` bounds the relative intensity deviation from nominal
  of every window whose current setting is ``(a, r)``.

The state-overlap deviations ``eps_delta[a, prefix, pair]`` are kept per
prefix in both granularities, with pairs ordered ``(0,+), (1,+), (0,1)``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .config import ProtocolConfig
from .errors import ConfigError, DataError, ParseError
from .settings import DEFAULT_MAX_XI, sequence_digits
from .source import FineGrainedSource, qubit_overlap

PAIRS = ((0, 2), (1, 2), (0, 1))
PAIR_LABELS = ("0,plus", "1,plus", "0,1")
FINE_FIELDS = ("eps_r", "epshat_r", "epsbar_r", "eps_a", "epshat_a", "epsbar_a")
COARSE_FIELDS = ("eps_r0", "eps_a0", "eps_r", "eps_a", "epshat_r", "epshat_a")


def ideal_overlaps(delta1: float, delta2: float) -> np.ndarray:
    """Overlaps of the flawed but uncorrelated states for the three pairs."""
    return np.array([
        abs(math.cos(delta2 / 4 + math.pi / 4)),
        abs(math.sin(delta2 / 4 + math.pi / 4 - delta1 / 2)),
        abs(math.sin(delta1 / 2)),
    ])


@dataclass(frozen=True)
class FineEpsilons:
    xi: int
    eps_r: np.ndarray
    epshat_r: np.ndarray
    epsbar_r: np.ndarray
    eps_a: np.ndarray
    epshat_a: np.ndarray
    epsbar_a: np.ndarray
    eps_delta: np.ndarray

    mode = "fine"

    def __post_init__(self):
        shape = (self.xi + 1, 9 ** (self.xi + 1), 3)
        for name in FINE_FIELDS:
            arr = np.ascontiguousarray(getattr(self, name), dtype=float)
            if arr.shape != shape:
                raise ConfigError(f"fine {name} must have shape {shape}, got {arr.shape}")
            _check_unit(arr, name)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "eps_delta", _delta_array(self.eps_delta, self.xi))

    def state_maxima(self) -> dict[str, np.ndarray]:
        """Coarse state parameters obtained by maximizing over sequences."""
        digits = sequence_digits(self.xi + 1, max_length=max(self.xi + 1, DEFAULT_MAX_XI + 1))
        cur = digits[:, 0]
        eps_r0 = np.zeros((3, 3))
        eps_a0 = np.zeros((3, 3))
        eps_r = np.zeros((self.xi + 1, 3, 3))
        eps_a = np.zeros((self.xi + 1, 3, 3))
        for s in range(9):
            a, r = divmod(s, 3)
            mask = cur == s
            eps_r0[r] = np.maximum(eps_r0[r], self.eps_r[0, mask].max(axis=0))
            eps_a0[a] = np.maximum(eps_a0[a], self.eps_a[0, mask].max(axis=0))
            eps_r[:, a, r] = self.eps_r[:, mask].max(axis=(1, 2))
            eps_a[:, a, r] = self.eps_a[:, mask].max(axis=(1, 2))
        return {"eps_r0": eps_r0, "eps_a0": eps_a0, "eps_r": eps_r, "eps_a": eps_a}


@dataclass(frozen=True)
class CoarseEpsilons:
    xi: int
    eps_r0: np.ndarray
    eps_a0: np.ndarray
    eps_r: np.ndarray
    eps_a: np.ndarray
    epshat_r: np.ndarray
    epshat_a: np.ndarray
    eps_delta: np.ndarray

    mode = "coarse"

    def __post_init__(self):
        for name in ("eps_r0", "eps_a0"):
            arr = np.ascontiguousarray(getattr(self, name), dtype=float)
            if arr.shape != (3, 3):
                raise ConfigError(f"coarse {name} must have shape (3, 3)")
            _check_unit(arr, name)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        for name in ("eps_r", "eps_a", "epshat_r", "epshat_a"):
            arr = np.ascontiguousarray(getattr(self, name), dtype=float)
            if arr.shape != (self.xi + 1, 3, 3):
                raise ConfigError(f"coarse {name} must have shape {(self.xi + 1, 3, 3)}, got {arr.shape}")
            _check_unit(arr, name)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "eps_delta", _delta_array(self.eps_delta, self.xi))

    def dominates(self, fine: FineEpsilons, tol: float = 1e-12) -> list[str]:
        """Names of coarse state fields that fail to bound ``fine``; empty if all do.

        The coarse ``epshat`` bounds deviations from nominal rather than pair
        ratios, so it has no fine counterpart to compare against.
        """
        ref = fine.state_maxima()
        return [name for name in ref if np.any(ref[name] > getattr(self, name) + tol)]


EpsilonSet = FineEpsilons | CoarseEpsilons


def _check_unit(arr: np.ndarray, name: str) -> None:
    if np.any(~np.isfinite(arr)) or np.any(arr < -1e-12) or np.any(arr > 1 + 1e-12):
        raise ConfigError(f"every {name} value must lie in [0, 1]")


def _delta_array(arr, xi: int) -> np.ndarray:
    shape = (3, 9**xi, 3)
    arr = np.zeros(shape) if arr is None else np.ascontiguousarray(arr, dtype=float)
    if arr.shape != shape:
        raise ConfigError(f"eps_delta must have shape {shape}, got {arr.shape}")
    if np.any(~np.isfinite(arr)) or np.any(np.abs(arr) >= 1):
        raise ConfigError("eps_delta values must be finite with magnitude below 1")
    arr.setflags(write=False)
    return arr


def _floors(floor: float | Sequence[float], xi: int) -> np.ndarray:
    if np.ndim(floor) == 0:
        return np.full(xi + 1, float(floor))
    arr = np.asarray(floor, dtype=float)
    if arr.shape != (xi + 1,):
        raise ConfigError(f"side-channel floor needs one value per w = 0..{xi}")
    return arr


def uniform_fine(xi: int, value: float, cross: bool = True) -> FineEpsilons:
    """Every parameter set to ``value``.

    Without cross correlations the intensity no longer depends on earlier
    encodings (``epshat_r = 0`` for ``w >= 1``) and the state no longer
    depends on earlier intensities (``eps_a = 0`` for ``w >= 1``).
    """
    shape = (xi + 1, 9 ** (xi + 1), 3)
    arrays = {name: np.full(shape, float(value)) for name in FINE_FIELDS}
    if not cross:
        arrays["epshat_r"][1:] = 0.0
        arrays["eps_a"][1:] = 0.0
    return FineEpsilons(xi, **arrays, eps_delta=None)


def uniform_coarse(xi: int, value: float, cross: bool = True) -> CoarseEpsilons:
    square = np.full((3, 3), float(value))
    cube = np.full((xi + 1, 3, 3), float(value))
    eps_a = cube.copy()
    hat_r = cube.copy()
    if not cross:
        eps_a[1:] = 0.0
        hat_r[1:] = 0.0
    return CoarseEpsilons(xi, square, square.copy(), cube, eps_a, hat_r, cube.copy(), None)


def uniform_epsilons(mode: str, xi: int, value: float, cross: bool = True) -> EpsilonSet:
    if mode == "fine":
        return uniform_fine(xi, value, cross)
    return uniform_coarse(xi, value, cross)


def derive_epsilons(
    src: FineGrainedSource,
    cfg: ProtocolConfig,
    sidechannel_floor: float | Sequence[float] = 0.0,
) -> FineEpsilons:
    """Fine-grained parameters implied by a characterized source.

    Intensity parameters come straight from the per-window intensities.
    State parameters are the larger of the qubit-subspace deviation seen in
    the amplitudes and the floor for that ``w``, because the tables cannot
    see leakage outside the qubit.  :func:`coarse_from_source` gives the
    coarse-grained version.
    """
    if np.any(src.alpha <= 0):
        raise DataError("negative or zero intensity in source")
    xi = src.xi
    length = xi + 1
    floors = _floors(sidechannel_floor, xi)
    digits = sequence_digits(length, max_length=max(length, DEFAULT_MAX_XI + 1))
    n = digits.shape[0]
    codes = np.arange(n)
    nominal = np.asarray(src.nominal)[digits[:, 0] // 3]

    shape = (length, n, 3)
    out = {name: np.zeros(shape) for name in FINE_FIELDS}
    for w in range(length):
        place = 9 ** (length - 1 - w)
        a_w = digits[:, w] // 3
        r_w = digits[:, w] % 3
        for alt in range(3):
            for family, new_setting in (("r", 3 * a_w + alt), ("a", 3 * alt + r_w)):
                other = codes + (new_setting - digits[:, w]) * place
                a1, a2 = src.alpha, src.alpha[other]
                hat = np.abs(a1 - a2) / (a1 + a2)
                bar = np.maximum((a1 + a2) / (2 * nominal) - 1, 0.0)
                ov = qubit_overlap(src.lam, src.lam[other], src.late_sign, src.late_sign[other])
                state = np.maximum(1 - ov**2, 0.0)
                if w == 0 and family == "r":
                    # The current-round encoding change is covered by eps_delta.
                    state = np.zeros(n)
                out[f"epshat_{family}"][w, :, alt] = np.minimum(hat, 1.0)
                out[f"epsbar_{family}"][w, :, alt] = np.minimum(bar, 1.0)
                out[f"eps_{family}"][w, :, alt] = np.minimum(np.maximum(state, floors[w]), 1.0)

    eps_delta = derive_eps_delta(src, cfg)
    return FineEpsilons(xi, **out, eps_delta=eps_delta)


def derive_eps_delta(src: FineGrainedSource, cfg: ProtocolConfig) -> np.ndarray:
    """Ideal minus actual overlap for each current intensity, prefix and pair.

    The result is signed: the actual states may overlap more than the ideal
    flawed ones do.
    """
    xi = src.xi
    ideal = ideal_overlaps(cfg.delta1, cfg.delta2)
    out = np.zeros((3, 9**xi, 3))
    lam = src.lam.reshape(9, 9**xi)
    sign = src.late_sign.reshape(9, 9**xi)
    for a in range(3):
        for k, (r, rh) in enumerate(PAIRS):
            i, j = 3 * a + r, 3 * a + rh
            actual = np.abs(qubit_overlap(lam[i], lam[j], sign[i], sign[j]))
            out[a, :, k] = ideal[k] - actual
    return out


def coarse_from_source(src: FineGrainedSource, cfg: ProtocolConfig, sidechannel_floor=0.0) -> CoarseEpsilons:
    """Coarse parameters; ``epshat`` is the worst relative deviation from nominal."""
    fine = derive_epsilons(src, cfg, sidechannel_floor)
    state = fine.state_maxima()
    digits = src.digits()
    nominal = np.asarray(src.nominal)[digits[:, 0] // 3]
    dev = np.abs(src.alpha / nominal - 1)
    hat = np.zeros((src.xi + 1, 3, 3))
    for s in range(9):
        hat[:, s // 3, s % 3] = dev[digits[:, 0] == s].max()
    hat = np.clip(hat, 0, 1)
    return CoarseEpsilons(src.xi, **state, epshat_r=hat, epshat_a=hat.copy(), eps_delta=fine.eps_delta)


# -- JSON report -----------------------------------------------------------

def epsilon_report(eps: EpsilonSet, extra: dict | None = None) -> dict:
    doc = {"format": "qkdcorr-epsilons", "version": 1, "mode": eps.mode, "xi": eps.xi}
    fields = FINE_FIELDS if eps.mode == "fine" else COARSE_FIELDS
    doc["arrays"] = {name: getattr(eps, name).tolist() for name in fields}
    doc["arrays"]["eps_delta"] = eps.eps_delta.tolist()
    if extra:
        doc["summary"] = extra
    return doc


def write_report(eps: EpsilonSet, path: str | Path, extra: dict | None = None) -> None:
    Path(path).write_text(json.dumps(epsilon_report(eps, extra), indent=1) + "\n", encoding="utf-8")


def read_report(path: str | Path) -> EpsilonSet:
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ParseError(f"{path}: {exc.strerror or exc}") from None
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}:{exc.lineno}: {exc.msg}") from None
    if doc.get("format") != "qkdcorr-epsilons":
        raise ParseError(f"{path}: not an epsilon report")
    arrays = {k: np.asarray(v, dtype=float) for k, v in doc["arrays"].items()}
    cls = FineEpsilons if doc["mode"] == "fine" else CoarseEpsilons
    fields = FINE_FIELDS if doc["mode"] == "fine" else COARSE_FIELDS
    missing = [f for f in (*fields, "eps_delta") if f not in arrays]
    if missing:
        raise ParseError(f"{path}: report lacks {missing}")
    return cls(int(doc["xi"]), **{f: arrays[f] for f in fields}, eps_delta=arrays["eps_delta"])
