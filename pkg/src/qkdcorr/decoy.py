"""Linear programs that bound yields in the presence of pulse correlations.

For one history prefix ``P`` and one weighting ``zeta[r, kappa]`` the unknowns
are the combined yields ``v(n, a) = sum zeta Y_{n,(a,r)P}`` for ``n <= n_cut``
and the three intensities.  Two kinds of rows constrain them:

* gain sandwiches: the observed combination ``G_a = sum zeta Q_{(a,r)P}``
  satisfies ``sum_n pL v(n,a) <= G_a <= sum_n pU v(n,a) + 1 - sum_n pL``;
* linearized Cauchy-Schwarz rows linking ``v(n,a)`` and ``v(n,a')`` through
  the overlap bound ``tau[a, a', n]``, tangent at a reference yield.

Variables are ordered ``index = 3 n + a``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.stats import poisson

from . import cs
from .channel import X, Z, ObservedStatistics
from .config import ProtocolConfig
from .errors import CapacityError, ContractError
from .settings import INTENSITY_LABELS
from .simplex import LPSolution, solve_lp
from .source import FineGrainedSource

TAIL_LIMIT = 1e-8
MU = 2


@dataclass(frozen=True)
class PhotonBounds:
    """Extremes over all windows of the Poisson weights, ``[n, a]``."""

    lower: np.ndarray
    upper: np.ndarray

    @property
    def n_cut(self) -> int:
        return self.lower.shape[0] - 1

    @property
    def tail(self) -> np.ndarray:
        """``1 - sum_n pL`` per intensity: the mass the gain rows cannot attribute."""
        return 1.0 - self.lower.sum(axis=0)


def photon_bounds(src: FineGrainedSource, cfg: ProtocolConfig, n_cut: int | None = None) -> PhotonBounds:
    n_cut = cfg.n_cut if n_cut is None else n_cut
    top = float(src.alpha.max())
    tail = float(poisson.sf(n_cut, top))
    if tail >= TAIL_LIMIT:
        raise CapacityError(
            f"photon-number cutoff n_cut={n_cut} leaves a Poisson tail of {tail:.2e} at intensity {top:.4g}; "
            f"raise n_cut until the tail is below {TAIL_LIMIT:g}"
        )
    current = src.digits()[:, 0] // 3
    n = np.arange(n_cut + 1)[:, None]
    lower = np.empty((n_cut + 1, 3))
    upper = np.empty((n_cut + 1, 3))
    for a in range(3):
        alpha = src.alpha[current == a][None, :]
        pmf = poisson.pmf(n, alpha)
        lower[:, a] = pmf.min(axis=1)
        upper[:, a] = pmf.max(axis=1)
    return PhotonBounds(lower, upper)


def var_index(n: int, a: int) -> int:
    return 3 * n + a


def var_label(n: int, a: int) -> str:
    return f"v({n},{INTENSITY_LABELS[a]})"


@dataclass(frozen=True)
class LPProblem:
    """``optimize v(1, mu)`` subject to ``A v <= b`` and ``0 <= v <= 1``."""

    A: np.ndarray
    b: np.ndarray
    tags: tuple[str, ...]
    direction: str
    n_cut: int
    label: str = ""

    @property
    def objective(self) -> np.ndarray:
        c = np.zeros(3 * (self.n_cut + 1))
        c[var_index(1, MU)] = 1.0
        return c

    def solve(self) -> LPSolution:
        return solve_lp(self.objective, self.A, self.b, 0.0, 1.0, maximize=self.direction == "max")

    def dump(self) -> str:
        names = [var_label(n, a) for n in range(self.n_cut + 1) for a in range(3)]
        lines = [f"# {self.label}".rstrip(), f"# {self.direction} {var_label(1, MU)}", "# vars " + " ".join(names)]
        for row, rhs, tag in zip(self.A, self.b, self.tags):
            coeffs = " ".join(f"{v:.17g}" for v in row)
            lines.append(f"{coeffs} <= {rhs:.17g} # {tag}")
        return "\n".join(lines) + "\n"


def reference_combination(stats: ObservedStatistics, zeta: np.ndarray, basis: int) -> np.ndarray:
    """``v'(n) = sum zeta[r, kappa] Y_ref[n, r, basis, kappa]`` clipped into [0, 1]."""
    ref = stats.ref_yields[:, :, basis, :]
    return np.clip(np.einsum("nrk,rk->n", ref, zeta), 0.0, 1.0)


def gain_combination(stats: ObservedStatistics, prefix: int, xi: int, zeta: np.ndarray, basis: int) -> np.ndarray:
    """``G_a = sum zeta[r, kappa] Q_{(a,r)P}`` for the three intensities."""
    stride = 9**xi
    out = np.zeros(3)
    for a in range(3):
        for r in range(3):
            code = (3 * a + r) * stride + prefix
            out[a] += float(np.dot(zeta[r], stats.gains[code, basis]))
    return out


PAIRS = tuple((a, ap) for a in range(3) for ap in range(3) if a != ap)


@lru_cache(maxsize=8)
def _row_tags(n_cut: int) -> tuple[str, ...]:
    tags = []
    for a in range(3):
        tags += [f"gain-lower a={INTENSITY_LABELS[a]}", f"gain-upper a={INTENSITY_LABELS[a]}"]
    for a, ap in PAIRS:
        for n in range(n_cut + 1):
            pair = f"n={n} a={INTENSITY_LABELS[a]} a'={INTENSITY_LABELS[ap]}"
            tags += [f"cs-upper {pair}", f"cs-lower {pair}"]
    return tuple(tags)


def build_lp(gains: np.ndarray, ref: np.ndarray, tau: np.ndarray, bounds: PhotonBounds,
             direction: str, label: str = "") -> LPProblem:
    """Assemble the LP from combined gains ``[a]``, reference ``[n]`` and overlaps ``[a, a', n]``.

    Rows come in a fixed order: two gain rows per intensity, then for every
    ordered pair ``(a, a')`` and every ``n`` an upper and a lower tangent row.
    """
    if direction not in ("max", "min"):
        raise ContractError(f"direction must be 'max' or 'min', got {direction!r}")
    n_cut = bounds.n_cut
    nn = n_cut + 1
    nv = 3 * nn
    n_rows = 6 + 2 * len(PAIRS) * nn
    A = np.zeros((n_rows, nv))
    b = np.empty(n_rows)
    for a in range(3):
        A[2 * a, a::3] = bounds.lower[:, a]
        b[2 * a] = gains[a]
        A[2 * a + 1, a::3] = -bounds.upper[:, a]
        b[2 * a + 1] = bounds.tail[a] - gains[a]
    first = np.array([a for a, _ in PAIRS])
    second = np.array([ap for _, ap in PAIRS])
    overlap = tau[first, second]                                # (pairs, n)
    refs = np.broadcast_to(ref, overlap.shape)
    m_u, t_u = cs.tangent_upper(refs, overlap)
    m_l, t_l = cs.tangent_lower(refs, overlap)
    bad = ~(np.isfinite(m_u) & np.isfinite(t_u) & np.isfinite(m_l) & np.isfinite(t_l))
    if bad.any():
        k, n = map(int, np.argwhere(bad)[0])
        raise ContractError(f"non-finite tangent coefficient at n={n}, a={PAIRS[k][0]}, a'={PAIRS[k][1]}")
    n_idx = np.arange(nn)
    for k, (a, ap) in enumerate(PAIRS):
        up = 6 + 2 * (k * nn + n_idx)
        i, ip = 3 * n_idx + a, 3 * n_idx + ap
        A[up, ip] = 1.0
        A[up, i] -= m_u[k]
        b[up] = t_u[k]
        A[up + 1, i] = m_l[k]
        A[up + 1, ip] -= 1.0
        b[up + 1] = -t_l[k]
    if not (np.all(np.isfinite(A)) and np.all(np.isfinite(b))):
        raise ContractError("LP assembly produced non-finite data")
    return LPProblem(A, b, _row_tags(n_cut), direction, n_cut, label)


def yield_weights(cfg: ProtocolConfig) -> np.ndarray:
    """Z-basis weights for the bit-averaged single-photon yield: both outcomes count."""
    p0, p1 = cfg.encoding_probs[0], cfg.encoding_probs[1]
    z = np.zeros((3, 2))
    z[0, :] = p0 / (p0 + p1)
    z[1, :] = p1 / (p0 + p1)
    return z


def build_bound_lp(j: int, prefix: int, stats: ObservedStatistics, bounds: PhotonBounds, tau: np.ndarray,
                   zeta: np.ndarray, cfg: ProtocolConfig, direction: str) -> LPProblem:
    """LP for ``T^j`` (X-basis combination ``zeta[j-1]``) after history ``prefix``.

    ``tau`` is the ``[a, a', n]`` overlap table of this prefix.
    """
    if j not in (1, 2, 3, 4):
        raise ContractError(f"j must be 1..4, got {j}")
    w = np.asarray(zeta[j - 1])
    gains = gain_combination(stats, prefix, cfg.xi, w, X)
    ref = reference_combination(stats, w, X)
    return build_lp(gains, ref, tau, bounds, direction, f"T{j} prefix={prefix}")


def build_yield_lp(prefix: int, stats: ObservedStatistics, bounds: PhotonBounds, tau_prime: np.ndarray,
                   cfg: ProtocolConfig) -> LPProblem:
    """LP minimizing the bit-averaged single-photon Z yield after history ``prefix``."""
    w = yield_weights(cfg)
    gains = gain_combination(stats, prefix, cfg.xi, w, Z)
    ref = reference_combination(stats, w, Z)
    return build_lp(gains, ref, tau_prime, bounds, "min", f"Y prefix={prefix}")


def solve(lp: LPProblem) -> LPSolution:
    return lp.solve()
