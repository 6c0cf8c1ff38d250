"""Virtual key states written as combinations of the emitted states.

In the qubit spanned by the two Z states, the X-basis virtual states obey

    |v-><v-| = c0 |phi0><phi0| + c1 |phi1><phi1| + c2 |phi+'><phi+'|
    |v+><v+| = c3 |phi0><phi0| + c4 |phi1><phi1| + c5 |phi+'><phi+'|

for the auxiliary plus state ``phi+'`` fixed by ``(delta2, phi)`` and a
suitable relative phase ``phi'`` in the virtual states.  The phase error
probability then splits into the four groups ``S1 T1 .. S4 T4``.

In the basis ``{|phi0>, |phi1'>}`` the states are

    phi0  = (1, 0)
    phi1  = (sin(d1/2), -cos(d1/2))
    phi+' = (cos(d2/4 + pi/4), sin(d2/4 + pi/4) e^{i phi})
    v+-   ~ phi0 +- e^{i phi'} phi1

and ``v-`` is the state paired with Bob's outcome 0 in the X basis.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .config import ProtocolConfig
from .errors import DomainError, QKDCorrError

GOLDEN = (math.sqrt(5) - 1) / 2


@dataclass(frozen=True)
class VirtualDecomposition:
    delta1: float
    delta2: float
    phi: float
    c: tuple[float, ...]         # c0 .. c5
    c_raw: tuple[float, ...]     # c0' .. c5'
    c_aux: tuple[float, ...]     # c6 .. c9
    phi_prime: float
    p_minus: float
    p_plus: float

    @property
    def minus_group(self) -> tuple[float, float, float]:
        return self.c[0:3]

    @property
    def plus_group(self) -> tuple[float, float, float]:
        return self.c[3:6]


def aux_coefficients(delta1: float, delta2: float, phi: float) -> tuple[float, float, float, float]:
    """``c6 .. c9``; raises :class:`DomainError` if the ``c7`` radicand is not positive."""
    s1, c1 = math.sin(delta1 / 2), math.cos(delta1 / 2)
    s2, c2 = math.sin(delta2 / 2), math.cos(delta2 / 2)
    cphi = math.cos(phi)
    c6 = (
        2 * c1**2 * c2 * cphi * s1
        - c1 * (-2 + s2) / 2
        - c1**3 * s2 / 2
        + 3 * s1 * math.sin(delta1) * s2 / 4
    )
    radicand = c1**2 * (1 + s2) * (1 + c2 * cphi * math.sin(delta1) - math.cos(delta1) * s2)
    if not radicand > 0:
        raise DomainError(
            f"c7 radicand {radicand:.3g} is not positive for delta1={delta1}, delta2={delta2}, phi={phi}"
        )
    c7 = math.sqrt(radicand)
    c8 = c1 * (1 + s2)
    c9 = 2 * c1**3
    return c6, c7, c8, c9


def decompose(delta1: float, delta2: float, phi: float, cfg: ProtocolConfig) -> VirtualDecomposition:
    if abs(delta1) >= math.pi / 2 or abs(delta2) >= math.pi / 2:
        raise DomainError(f"|delta1|, |delta2| must be below pi/2, got {delta1}, {delta2}")
    c6, c7, c8, c9 = aux_coefficients(delta1, delta2, phi)
    raw = (
        0.5 + c6 / (2 * c7),
        0.5 + c8 / (2 * c7),
        -c9 / (2 * c7),
        0.5 - c6 / (2 * c7),
        0.5 - c8 / (2 * c7),
        c9 / (2 * c7),
    )
    lo, hi = sum(raw[:3]), sum(raw[3:])
    c = tuple(v / lo for v in raw[:3]) + tuple(v / hi for v in raw[3:])
    x = (-(1 + math.cos(delta1)) * math.cos(delta2 / 2) * math.cos(phi)
         - math.sin(delta1) * (1 + math.sin(delta2 / 2))) / (2 * c7)
    y = -(1 + math.cos(delta1)) * math.cos(delta2 / 2) * math.sin(phi) / (2 * c7)
    phi_prime = math.atan2(y, x)
    overlap = math.sin(delta1 / 2)
    base = 0.5 * cfg.alice_z_prob * cfg.p_mu
    p_minus = base * (1 - overlap * math.cos(phi_prime))
    p_plus = base * (1 + overlap * math.cos(phi_prime))
    return VirtualDecomposition(delta1, delta2, phi, c, raw, (c6, c7, c8, c9), phi_prime, p_minus, p_plus)


def model_states(delta1: float, delta2: float, phi: float) -> dict[str, np.ndarray]:
    """The qubit vectors used in the decomposition, for checking it."""
    return {
        "phi0": np.array([1.0, 0.0], dtype=complex),
        "phi1": np.array([math.sin(delta1 / 2), -math.cos(delta1 / 2)], dtype=complex),
        "phi_plus_aux": np.array(
            [math.cos(delta2 / 4 + math.pi / 4), math.sin(delta2 / 4 + math.pi / 4) * np.exp(1j * phi)]
        ),
    }


def virtual_projectors(dec: VirtualDecomposition) -> tuple[np.ndarray, np.ndarray]:
    """``|v-><v-|`` and ``|v+><v+|`` built from ``phi'`` (normalized, unit trace)."""
    st = model_states(dec.delta1, dec.delta2, dec.phi)
    rot = np.exp(1j * dec.phi_prime)
    out = []
    for sign in (-1, 1):
        v = st["phi0"] + sign * rot * st["phi1"]
        v = v / np.linalg.norm(v)
        out.append(np.outer(v, v.conj()))
    return out[0], out[1]


def decomposition_residual(dec: VirtualDecomposition) -> float:
    """Largest Frobenius norm of ``|v><v| - sum c |state><state|`` over both groups."""
    st = model_states(dec.delta1, dec.delta2, dec.phi)
    projs = [np.outer(v, v.conj()) for v in (st["phi0"], st["phi1"], st["phi_plus_aux"])]
    v_minus, v_plus = virtual_projectors(dec)
    worst = 0.0
    for target, coeffs in ((v_minus, dec.minus_group), (v_plus, dec.plus_group)):
        combo = sum(ci * p for ci, p in zip(coeffs, projs))
        worst = max(worst, float(np.linalg.norm(target - combo)))
    return worst


@dataclass(frozen=True)
class SFactors:
    s1: float
    s2: float
    s3: float
    s4: float

    def as_tuple(self):
        return (self.s1, self.s2, self.s3, self.s4)


def s_factors(dec: VirtualDecomposition, cfg: ProtocolConfig) -> SFactors:
    pz = cfg.bob_z_prob
    c0, c1, c2, c3, c4, c5 = dec.c
    pm, pp = dec.p_minus, dec.p_plus
    s1 = pz * pm * (max(c0, 0) + max(c1, 0)) + pz * pp * (max(c3, 0) + max(c4, 0))
    s2 = pz * pm * (min(c0, 0) + min(c1, 0)) + pz * pp * (min(c3, 0) + min(c4, 0))
    s3 = c5 * pz * pp
    s4 = c2 * pz * pm
    return SFactors(s1, s2, s3, s4)


def zeta_weights(dec: VirtualDecomposition, cfg: ProtocolConfig) -> np.ndarray:
    """Weights ``zeta[j, r, kappa]`` of the four yield combinations.

    ``r`` runs over (0, 1, plus) and ``kappa`` is Bob's X-basis outcome.
    Groups whose S factor vanishes get all-zero weights; callers drop them.
    """
    pz = cfg.bob_z_prob
    c0, c1, c2, c3, c4, c5 = dec.c
    pm, pp = dec.p_minus, dec.p_plus
    sf = s_factors(dec, cfg)
    z = np.zeros((4, 3, 2))
    for j, (clip, total) in enumerate(((max, sf.s1), (min, sf.s2))):
        if total != 0:
            z[j, 0, 0] = pm * pz * clip(c0, 0) / total
            z[j, 1, 0] = pm * pz * clip(c1, 0) / total
            z[j, 0, 1] = pp * pz * clip(c3, 0) / total
            z[j, 1, 1] = pp * pz * clip(c4, 0) / total
    if sf.s3 != 0:
        z[2, 2, 1] = 1.0
    if sf.s4 != 0:
        z[3, 2, 0] = 1.0
    return z


# -- worst-case auxiliary phase ---------------------------------------------

class PhiEvaluationError(QKDCorrError):
    def __init__(self, phi: float, cause: Exception):
        self.phi = phi
        super().__init__(f"phase-error evaluation failed at phi={phi:.6f}: {cause}")


def worst_case_phi(
    objective: Callable[[float], float],
    grid: int = 64,
    tol: float = 1e-4,
    symmetric: bool = False,
) -> tuple[float, float]:
    """Maximize ``objective`` over ``[0, 2 pi)``.

    A uniform grid locates the best cell, then golden-section search refines
    it to ``tol``.  Ties keep the lowest grid index.  With ``symmetric=True``
    the objective is assumed to depend on ``phi`` only through ``cos(phi)``,
    so mirror points are evaluated once.  The returned value is never below
    the grid maximum.
    """
    cache: dict[float, float] = {}

    def f(phi: float) -> float:
        key = phi % (2 * math.pi)
        if symmetric and key > math.pi:
            key = 2 * math.pi - key
        key = round(key, 13)
        if key not in cache:
            try:
                cache[key] = float(objective(key))
            except QKDCorrError as exc:
                raise PhiEvaluationError(key, exc) from exc
        return cache[key]

    step = 2 * math.pi / grid
    values = [f(i * step) for i in range(grid)]
    best_i = max(range(grid), key=lambda i: (values[i], -i))
    best_phi, best_val = best_i * step, values[best_i]

    lo, hi = best_phi - step, best_phi + step
    x1 = hi - GOLDEN * (hi - lo)
    x2 = lo + GOLDEN * (hi - lo)
    f1, f2 = f(x1), f(x2)
    while hi - lo > tol:
        if f1 >= f2:
            hi, x2, f2 = x2, x1, f1
            x1 = hi - GOLDEN * (hi - lo)
            f1 = f(x1)
        else:
            lo, x1, f1 = x1, x2, f2
            x2 = lo + GOLDEN * (hi - lo)
            f2 = f(x2)
    for x, val in ((x1, f1), (x2, f2)):
        if val > best_val:
            best_phi, best_val = x, val
    return best_phi % (2 * math.pi), best_val
