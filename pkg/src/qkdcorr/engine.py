"""From observed statistics to a secret-key rate.

For every history prefix ``P`` the engine

1. lower-bounds the bit-averaged single-photon Z yield ``y_P``;
2. upper-bounds the phase-error term ``E_P`` by maximizing, over the
   auxiliary phase ``phi``, the combination ``S1 T1 + S2 T2 + g(T3) + g(T4)``
   whose ``T`` pieces are LP bounds;

then averages both over prefixes and evaluates

    K = p_mu P_Z^A P_Z^B { p1L y [1 - h(e_p)] - f Q_mu^Z h(e_b) }

floored at zero.  Prefixes with identical inputs are solved once.  Work is
spread over a process pool, but every reduction runs in prefix order, so the
numbers do not depend on the number of workers.

The protocol is split into ``xi + 1`` interleaved sub-protocols that all have
the same asymptotic rate, so a single representative is evaluated.
"""

from __future__ import annotations

import csv
import hashlib
import io
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np

from . import cs
from .channel import ObservedStatistics, observables
from .config import ChannelConfig, ProtocolConfig, RunConfig
from .decoy import MU, PhotonBounds, build_bound_lp, build_yield_lp, photon_bounds
from .epsilons import EpsilonSet, coarse_from_source, derive_epsilons, read_report, uniform_epsilons
from .errors import ConfigError, ContractError, QKDCorrError
from .overlaps import OverlapBounds, overlap_bounds
from .settings import sequence_weights
from .source import FineGrainedSource, compose_source, delta_from_source, ideal_source
from .tables import CorrelationTables, load_table_dir
from .virtual import PhiEvaluationError, SFactors, decompose, s_factors, worst_case_phi, zeta_weights

log = logging.getLogger(__name__)

CSV_COLUMNS = ("loss_db", "skr_per_pulse", "skr_bps", "y1_lower", "ep_upper", "eb", "q_mu_z", "p1_lower",
               "flagged_sequences")
UNIT_SLACK = 1e-12


def binary_entropy(x):
    """``h(x)`` in bits, with ``h(0) = h(1) = 0``."""
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        val = -x * np.log2(x) - (1 - x) * np.log2(1 - x)
    val = np.where((x <= 0) | (x >= 1), 0.0, val)
    return float(val) if val.ndim == 0 else val


# -- phase error ------------------------------------------------------------

def phase_error_bound(sf: SFactors, t: Mapping[str, float], chi: float, cfg: ProtocolConfig) -> float:
    """Upper bound on the phase-error probability for one prefix and one ``phi``.

    ``t`` maps ``"T1U"``, ``"T2L"``, ``"T3U"``/``"T3L"`` and ``"T4U"``/``"T4L"``
    to LP bounds; only the entries selected by the signs of the S factors are
    read.  The result is clamped to ``[0, P_Z^A p_mu P_Z^B]``.
    """
    total = 0.0
    if sf.s1:
        total += sf.s1 * t["T1U"]
    if sf.s2:
        total += sf.s2 * t["T2L"]
    for s, key in ((sf.s3, "T3"), (sf.s4, "T4")):
        if s > 0:
            total += s * cs.g_upper(min(max(t[key + "U"], 0.0), 1.0), chi)
        elif s < 0:
            total += s * cs.g_lower(min(max(t[key + "L"], 0.0), 1.0), chi)
    cap = cfg.alice_z_prob * cfg.p_mu * cfg.bob_z_prob
    return min(max(total, 0.0), cap)


class BoundUnavailable(QKDCorrError):
    """An estimation LP had no optimal solution."""


@dataclass
class PrefixResult:
    """Outcome for one history prefix.  ``e_norm`` is ``E / (P_Z^A p_mu P_Z^B)``."""

    prefix: int
    y_lower: float
    e_norm: float
    phi: float | None
    flagged: bool
    statuses: dict[str, str] = field(default_factory=dict)
    note: str = ""


class PrefixSolver:
    """Solves the LPs of one prefix, memoizing identical problems."""

    def __init__(self, stats: ObservedStatistics, bounds: PhotonBounds, ob: OverlapBounds, cfg: ProtocolConfig):
        self.stats = stats
        self.bounds = bounds
        self.ob = ob
        self.cfg = cfg

    def run(self, prefix: int) -> PrefixResult:
        cfg = self.cfg
        statuses: dict[str, str] = {}
        ylp = build_yield_lp(prefix, self.stats, self.bounds, self.ob.tau_prime[prefix], cfg).solve()
        statuses["Y"] = ylp.status
        if not ylp.ok:
            return PrefixResult(prefix, 0.0, 0.0, None, True, statuses, "single-photon yield LP " + ylp.status)
        y = min(max(ylp.objective, 0.0), 1.0)
        chi = float(self.ob.chi[prefix])
        if self.ob.chi_flagged is not None and bool(self.ob.chi_flagged[prefix]):
            return PrefixResult(prefix, y, 0.5 * y, None, True, statuses, "overlap bound radicand floored")

        memo: dict[tuple, float] = {}
        tau = self.ob.tau[prefix]

        def bound(j: int, zeta: np.ndarray, direction: str) -> float:
            key = (j, direction, zeta[j - 1].tobytes())
            if key not in memo:
                sol = build_bound_lp(j, prefix, self.stats, self.bounds, tau, zeta, cfg, direction).solve()
                statuses[f"T{j}{'U' if direction == 'max' else 'L'}"] = sol.status
                if not sol.ok:
                    raise BoundUnavailable(f"T{j} {direction} LP {sol.status}")
                memo[key] = min(max(sol.objective, 0.0), 1.0)
            return memo[key]

        def objective(phi: float) -> float:
            dec = decompose(cfg.delta1, cfg.delta2, phi, cfg)
            sf = s_factors(dec, cfg)
            zeta = zeta_weights(dec, cfg)
            t: dict[str, float] = {}
            if sf.s1:
                t["T1U"] = bound(1, zeta, "max")
            if sf.s2:
                t["T2L"] = bound(2, zeta, "min")
            for j, s in ((3, sf.s3), (4, sf.s4)):
                if s > 0:
                    t[f"T{j}U"] = bound(j, zeta, "max")
                elif s < 0:
                    t[f"T{j}L"] = bound(j, zeta, "min")
            return phase_error_bound(sf, t, chi, cfg)

        try:
            phi, e = worst_case_phi(objective, grid=cfg.phi_points, symmetric=True)
        except PhiEvaluationError as exc:
            return PrefixResult(prefix, y, 0.5 * y, exc.phi, True, statuses, str(exc))
        norm = cfg.alice_z_prob * cfg.p_mu * cfg.bob_z_prob
        return PrefixResult(prefix, y, e / norm, phi, False, statuses)


def _prefix_key(stats: ObservedStatistics, ob: OverlapBounds, xi: int, prefix: int) -> str:
    stride = 9**xi
    codes = np.arange(9) * stride + prefix
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(stats.gains[codes]).tobytes())
    h.update(np.ascontiguousarray(ob.tau[prefix]).tobytes())
    h.update(np.ascontiguousarray(ob.tau_prime[prefix]).tobytes())
    h.update(np.float64(ob.chi[prefix]).tobytes())
    h.update(b"1" if ob.chi_flagged is not None and ob.chi_flagged[prefix] else b"0")
    return h.hexdigest()


_WORKER: PrefixSolver | None = None


def _init_worker(stats, bounds, ob, cfg):
    global _WORKER
    _WORKER = PrefixSolver(stats, bounds, ob, cfg)


def _run_chunk(prefixes: Sequence[int]) -> list[PrefixResult]:
    assert _WORKER is not None
    return [_WORKER.run(p) for p in prefixes]


def solve_prefixes(stats: ObservedStatistics, bounds: PhotonBounds, ob: OverlapBounds, cfg: ProtocolConfig,
                   threads: int = 1) -> list[PrefixResult]:
    """Results for all ``9 ** xi`` prefixes in prefix order."""
    n_prefix = 9**cfg.xi
    keys = [_prefix_key(stats, ob, cfg.xi, p) for p in range(n_prefix)]
    first: dict[str, int] = {}
    for p, k in enumerate(keys):
        first.setdefault(k, p)
    todo = sorted(first.values())
    if threads <= 1 or len(todo) == 1:
        solver = PrefixSolver(stats, bounds, ob, cfg)
        solved = [solver.run(p) for p in todo]
    else:
        size = max(1, math.ceil(len(todo) / (4 * threads)))
        chunks = [todo[i:i + size] for i in range(0, len(todo), size)]
        with ProcessPoolExecutor(max_workers=threads, initializer=_init_worker,
                                 initargs=(stats, bounds, ob, cfg)) as pool:
            solved = [r for part in pool.map(_run_chunk, chunks) for r in part]
    by_key = {keys[r.prefix]: r for r in solved}
    return [replace(by_key[k], prefix=p) for p, k in enumerate(keys)]


# -- aggregation and key rate ------------------------------------------------

def aggregate(results: Sequence[PrefixResult], cfg: ProtocolConfig) -> tuple[float, float]:
    """Prefix-probability weighted ``(y_Z^L, e_p^U)``; ``e_p`` is 1/2 when ``y <= 0``."""
    weights = sequence_weights(cfg.xi, cfg)
    if len(results) != weights.size:
        raise ContractError(f"expected {weights.size} prefix results, got {len(results)}")
    y = 0.0
    e = 0.0
    for w, res in zip(weights, results):
        y += float(w) * res.y_lower
        e += float(w) * res.e_norm
    if y <= 0:
        return 0.0, 0.5
    return y, min(e / y, 0.5)


def key_rate(y_lower: float, ep_upper: float, e_b: float, q_mu_z: float, p1_lower: float,
             cfg: ProtocolConfig) -> float:
    """Asymptotic key per protocol pulse, floored at zero."""
    for name, v in (("ep_upper", ep_upper), ("e_b", e_b)):
        if not -UNIT_SLACK <= v <= 1 + UNIT_SLACK:
            raise ContractError(f"{name}={v} lies outside [0, 1]")
    ep = min(max(ep_upper, 0.0), 1.0)
    eb = min(max(e_b, 0.0), 1.0)
    pref = cfg.p_mu * cfg.alice_z_prob * cfg.bob_z_prob
    k = pref * (p1_lower * y_lower * (1 - binary_entropy(ep)) - cfg.f_ec * q_mu_z * binary_entropy(eb))
    return max(k, 0.0)


@dataclass
class SkrPoint:
    loss_db: float
    skr: float
    y_lower: float
    ep_upper: float
    e_b: float
    q_mu_z: float
    p1_lower: float
    flagged: int
    clock_hz: float
    prefixes: list[PrefixResult] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)
    notes: list[str] = field(default_factory=list)

    @property
    def skr_bps(self) -> float:
        return self.skr * self.clock_hz


def evaluate_point(stats: ObservedStatistics, bounds: PhotonBounds, ob: OverlapBounds, cfg: ProtocolConfig,
                   threads: int = 1) -> SkrPoint:
    warnings = list(stats.warnings)
    p1 = float(bounds.lower[1, MU])
    if stats.e_b_flagged:
        return SkrPoint(stats.loss_db, 0.0, 0.0, 0.5, float("nan"), stats.q_mu_z, p1, 9**cfg.xi, cfg.clock_hz,
                        [], warnings)
    results = solve_prefixes(stats, bounds, ob, cfg, threads)
    flagged = sum(r.flagged for r in results)
    for r in results:
        if r.flagged:
            warnings.append(f"prefix {r.prefix} at {stats.loss_db} dB flagged: {r.note}")
    y, ep = aggregate(results, cfg)
    k = key_rate(y, ep, stats.e_b, stats.q_mu_z, p1, cfg) if y > 0 else 0.0
    return SkrPoint(stats.loss_db, k, y, ep, stats.e_b, stats.q_mu_z, p1, flagged, cfg.clock_hz, results, warnings)


def sweep(cfg: ProtocolConfig, chan: ChannelConfig, src: FineGrainedSource, eps: EpsilonSet,
          threads: int = 1, losses: Sequence[float] | None = None) -> list[SkrPoint]:
    """One :class:`SkrPoint` per loss value; a failing point gives ``K = 0`` and the sweep goes on."""
    losses = chan.losses_db if losses is None else tuple(losses)
    bounds = photon_bounds(src, cfg)
    ob = overlap_bounds(eps, cfg)
    points = []
    for loss in losses:
        try:
            stats = observables(src, chan, cfg, loss)
            points.append(evaluate_point(stats, bounds, ob, cfg, threads))
        except QKDCorrError as exc:
            points.append(SkrPoint(loss, 0.0, 0.0, 0.5, float("nan"), 0.0, float(bounds.lower[1, MU]),
                                   9**cfg.xi, cfg.clock_hz, [], [f"point at {loss} dB failed: {exc}"]))
    order = sorted(range(len(points)), key=lambda i: points[i].loss_db)
    for i, j in zip(order, order[1:]):
        if points[j].skr > points[i].skr + UNIT_SLACK:
            msg = f"key rate increased from {points[i].loss_db} dB to {points[j].loss_db} dB"
            log.warning(msg)
            points[j].notes.append(msg)
    return points


def _fmt(v: float) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if not math.isfinite(v):
        return "nan"
    return f"{v:.12g}"


def points_to_csv(points: Sequence[SkrPoint]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for p in points:
        w.writerow([_fmt(p.loss_db), _fmt(p.skr), _fmt(p.skr_bps), _fmt(p.y_lower), _fmt(p.ep_upper),
                    _fmt(p.e_b), _fmt(p.q_mu_z), _fmt(p.p1_lower), _fmt(int(p.flagged))])
    return buf.getvalue()


# -- assembling inputs from a run configuration -------------------------------

@dataclass
class PreparedRun:
    protocol: ProtocolConfig
    channel: ChannelConfig
    source: FineGrainedSource
    epsilons: EpsilonSet
    tables: CorrelationTables | None
    warnings: list[str] = field(default_factory=list)


def prepare(run: RunConfig) -> PreparedRun:
    """Resolve tables, SPF angles, source and correlation parameters."""
    cfg = run.protocol
    warnings: list[str] = []
    tables = None
    if run.tables.directory is not None:
        tables = load_table_dir(run.tables.directory)
    if tables is not None and (run.tables.spf_from_tables or run.epsilons.kind == "tables"):
        src = compose_source(tables, cfg, run.tables.marginalization)
        if run.tables.spf_from_tables:
            d1, d2 = delta_from_source(src, cfg)
            cfg = cfg.with_(delta1=d1, delta2=d2)
    else:
        src = ideal_source(cfg)
    if run.epsilons.kind == "uniform":
        eps = uniform_epsilons(cfg.mode, cfg.xi, run.epsilons.value, run.epsilons.cross_correlations)
    elif run.epsilons.kind == "report":
        eps = read_report(run.epsilons.report)
        want = "fine" if cfg.mode == "fine" else "coarse"
        if eps.mode != want:
            raise ConfigError(f"epsilon report is {eps.mode}-grained but protocol.mode is {cfg.mode}")
        if eps.xi != cfg.xi:
            raise ConfigError(f"epsilon report is for xi={eps.xi} but protocol.xi={cfg.xi}")
    else:
        if cfg.mode == "fine":
            eps = derive_epsilons(src, cfg, run.epsilons.value)
        else:
            eps = coarse_from_source(src, cfg, run.epsilons.value)
    return PreparedRun(cfg, run.channel, src, eps, tables, warnings)


def run_sweep(run: RunConfig, threads: int = 1) -> tuple[PreparedRun, list[SkrPoint]]:
    prep = prepare(run)
    points = sweep(prep.protocol, prep.channel, prep.source, prep.epsilons, threads)
    return prep, points
