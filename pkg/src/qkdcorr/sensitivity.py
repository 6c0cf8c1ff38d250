"""Deviation-microscope sensitivity of a biased interferometric modulator.

The modulator output follows ``I(beta) = alpha_in [cos(beta + beta_b) + 1 + I_b] / 2``
and the sensitivity to a small bias change is ``R = |I'(beta)| / (I(beta) + I_n)``.
Biasing near the destructive point makes tiny intensity deviations stand
out against the residual background.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize_scalar

from .errors import ContractError, DomainError

GUARD = 1e-15


@dataclass(frozen=True)
class SensitivityCurve:
    alpha_in: float = 1.0
    beta_b: float = 0.0
    background: float = 0.0
    noise: float = 0.0

    def __post_init__(self):
        if self.noise < 0 or self.background < 0:
            raise ContractError("background and noise must be non-negative")
        if self.alpha_in < 0:
            raise ContractError("alpha_in must be non-negative")

    def intensity(self, beta):
        return self.alpha_in * (np.cos(beta + self.beta_b) + 1 + self.background) / 2

    def slope(self, beta):
        return -self.alpha_in * np.sin(beta + self.beta_b) / 2


def sensitivity(beta, curve: SensitivityCurve):
    """``R(beta)``; returns ``inf`` where the denominator falls below 1e-15.

    Accepts scalars or arrays.  Use :func:`sensitivity_flagged` to learn
    which points hit the guard.
    """
    value, _ = sensitivity_flagged(beta, curve)
    return value


def sensitivity_flagged(beta, curve: SensitivityCurve):
    beta = np.asarray(beta, dtype=float)
    denom = curve.intensity(beta) + curve.noise
    flagged = denom < GUARD
    with np.errstate(divide="ignore", invalid="ignore"):
        value = np.where(flagged, np.inf, np.abs(curve.slope(beta)) / np.where(flagged, 1.0, denom))
    if value.ndim == 0:
        return float(value), bool(flagged)
    return value, flagged


def best_bias(curve: SensitivityCurve, grid: int = 4096) -> float:
    """Bias in ``[0, 2 pi)`` with the largest finite sensitivity.

    The curve is searched on a uniform grid and the best grid cell refined
    with a bounded scalar search.  When two mirror-image maxima tie, the one
    reached first on the grid wins.
    """
    if curve.alpha_in == 0:
        raise DomainError("a flat curve (alpha_in = 0) has no sensitive bias")
    betas = np.linspace(0.0, 2 * math.pi, grid, endpoint=False)
    values, flagged = sensitivity_flagged(betas, curve)
    values = np.where(flagged, -np.inf, values)
    if not np.any(np.isfinite(values)):
        raise DomainError("sensitivity is undefined everywhere; add background or noise")
    i = int(np.argmax(values))
    step = betas[1] - betas[0]
    res = minimize_scalar(
        lambda b: -sensitivity(b, curve) if not sensitivity_flagged(b, curve)[1] else math.inf,
        bounds=(betas[i] - step, betas[i] + step),
        method="bounded",
        options={"xatol": 1e-12},
    )
    best = res.x if -res.fun >= values[i] else betas[i]
    return float(best % (2 * math.pi))
