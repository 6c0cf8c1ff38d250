"""Setting labels and setting-sequence enumeration.

A round's setting is an (intensity, encoding) pair.  Sequences are stored
most recent first: ``seq[0]`` is the round being analysed and ``seq[w]`` is
the round ``w`` steps earlier.  Every module in the package uses this single
convention.

Settings are numbered ``3 * intensity + encoding`` with intensities ordered
(omega, nu, mu) and encodings ordered (0, 1, plus).  A sequence of length L
gets the integer code ``sum(seq[i] * 9 ** (L - 1 - i))``, so integer order and
lexicographic order coincide.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from enum import IntEnum
from typing import Iterable, Sequence

import numpy as np

from .errors import CapacityError, ContractError

DEFAULT_MAX_XI = 4


class Intensity(IntEnum):
    OMEGA = 0
    NU = 1
    MU = 2

    @property
    def label(self) -> str:
        return INTENSITY_LABELS[self]

    @classmethod
    def parse(cls, text: str) -> "Intensity":
        key = text.strip().lower()
        aliases = {"w": "omega", "v": "nu", "u": "mu", "m": "mu", "n": "nu", "o": "omega"}
        key = aliases.get(key, key)
        try:
            return cls(INTENSITY_LABELS.index(key))
        except ValueError:
            raise ContractError(f"unknown intensity label {text!r}") from None


class Encoding(IntEnum):
    BIT0 = 0
    BIT1 = 1
    PLUS = 2

    @property
    def label(self) -> str:
        return ENCODING_LABELS[self]

    @property
    def basis(self) -> str:
        return "X" if self is Encoding.PLUS else "Z"

    @classmethod
    def parse(cls, text: str) -> "Encoding":
        key = text.strip().lower().strip("|>⟩")
        aliases = {"+": "plus", "bit0": "0", "bit1": "1", "p": "plus"}
        key = aliases.get(key, key)
        try:
            return cls(ENCODING_LABELS.index(key))
        except ValueError:
            raise ContractError(f"unknown encoding label {text!r}") from None


INTENSITY_LABELS = ("omega", "nu", "mu")
ENCODING_LABELS = ("0", "1", "plus")


@dataclass(frozen=True, order=True)
class Setting:
    intensity: Intensity
    encoding: Encoding

    @property
    def index(self) -> int:
        return 3 * int(self.intensity) + int(self.encoding)

    @classmethod
    def from_index(cls, index: int) -> "Setting":
        return ALL_SETTINGS[index]

    def __str__(self) -> str:
        return f"({self.intensity.label},{self.encoding.label})"


ALL_SETTINGS: tuple[Setting, ...] = tuple(
    Setting(a, r) for a in Intensity for r in Encoding
)

SettingSequence = tuple[Setting, ...]


def _check_length(length: int, max_length: int) -> None:
    if length < 0:
        raise ContractError(f"sequence length must be non-negative, got {length}")
    if length > max_length:
        raise CapacityError(
            f"sequence length {length} exceeds the configured maximum {max_length}"
        )


def enumerate_sequences(length: int, max_length: int = DEFAULT_MAX_XI + 1) -> list[SettingSequence]:
    """All ``9 ** length`` sequences in lexicographic order, most recent first."""
    _check_length(length, max_length)
    return list(itertools.product(ALL_SETTINGS, repeat=length))


def sequence_digits(length: int, max_length: int = DEFAULT_MAX_XI + 1) -> np.ndarray:
    """Setting indices of every sequence, shape ``(9 ** length, length)``.

    Row ``c`` holds the digits of code ``c``; column 0 is the most recent round.
    """
    _check_length(length, max_length)
    codes = np.arange(9**length, dtype=np.int64)
    digits = np.empty((codes.size, length), dtype=np.int64)
    for pos in range(length):
        digits[:, pos] = (codes // 9 ** (length - 1 - pos)) % 9
    return digits


def sequence_code(seq: Sequence[Setting] | Sequence[int]) -> int:
    code = 0
    for s in seq:
        code = 9 * code + (s.index if isinstance(s, Setting) else int(s))
    return code


def decode_sequence(code: int, length: int) -> SettingSequence:
    out = []
    for pos in range(length):
        out.append(ALL_SETTINGS[(code // 9 ** (length - 1 - pos)) % 9])
    return tuple(out)


def setting_probabilities(intensity_probs: Sequence[float], encoding_probs: Sequence[float]) -> np.ndarray:
    """Probability of each of the 9 settings, indexed by setting number."""
    pa = np.asarray(intensity_probs, dtype=float)
    pr = np.asarray(encoding_probs, dtype=float)
    return np.outer(pa, pr).reshape(9)


def sequence_probability(seq: Iterable[Setting], cfg) -> float:
    """Product of ``p_a * p_r`` over the rounds of ``seq``."""
    prob = 1.0
    for s in seq:
        prob *= cfg.intensity_probs[s.intensity] * cfg.encoding_probs[s.encoding]
    return prob


def sequence_weights(length: int, cfg) -> np.ndarray:
    """Probability of every sequence of ``length``, in code order."""
    ps = setting_probabilities(cfg.intensity_probs, cfg.encoding_probs)
    weights = np.ones(9**length)
    if length:
        digits = sequence_digits(length, max_length=max(length, DEFAULT_MAX_XI + 1))
        for pos in range(length):
            weights = weights * ps[digits[:, pos]]
    return weights


def pattern_index(pattern: Sequence[Intensity] | Sequence[str]) -> int:
    """Index ``9 a[0] + 3 a[1] + a[2]`` of an intensity history (omega=0, nu=1, mu=2).

    ``pattern[0]`` is the previous round, ``pattern[2]`` three rounds back.
    """
    if len(pattern) != 3:
        raise ContractError(f"pattern_index needs exactly 3 settings, got {len(pattern)}")
    vals = [Intensity.parse(p) if isinstance(p, str) else Intensity(p) for p in pattern]
    return 9 * int(vals[0]) + 3 * int(vals[1]) + int(vals[2])
