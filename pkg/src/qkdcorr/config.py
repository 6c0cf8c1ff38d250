"""Protocol, channel and run configuration.

A run is described by a JSON document with five top-level sections::

    {
      "protocol": {...},   # intensities, probabilities, SPF angles, xi, LP controls
      "channel":  {...},   # detector efficiency, dark counts, misalignment, loss grid
      "epsilons": {...},   # how the correlation parameters are obtained
      "tables":   {...},   # optional characterization tables
      "output":   {...}    # where CSV and manifest go
    }

Every key is documented in README.md.  Unknown keys are rejected and all
problems are reported together in a single :class:`ConfigError`.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Any, Mapping

import numpy as np

from .errors import ConfigError, ParseError
from .settings import DEFAULT_MAX_XI, Encoding, Intensity

PROB_TOL = 1e-12
MODES = ("coarse", "fine")
CHI_VARIANTS = ("full", "reduced")
MARGINALIZATIONS = ("mean", "max")
PRESETS = ("ideal-250", "overclock-500-xi1", "overclock-1g-xi3", "overclock-1g-xi3-cross")


@dataclass(frozen=True)
class ProtocolConfig:
    """Alice's and Bob's settings plus the knobs of the bound computation.

    Intensity-indexed tuples follow the ``Intensity`` order (omega, nu, mu) and
    encoding-indexed tuples the ``Encoding`` order (0, 1, plus).
    """

    intensities: tuple[float, float, float] = (0.0025, 0.09, 0.5)
    intensity_probs: tuple[float, float, float] = (0.1, 0.2, 0.7)
    encoding_probs: tuple[float, float, float] = (0.45, 0.45, 0.1)
    bob_z_prob: float = 0.9
    delta1: float = 0.0
    delta2: float = 0.0
    xi: int = 0
    f_ec: float = 1.16
    n_cut: int = 10
    phi_grid: int = 64
    mode: str = "coarse"
    clock_hz: float = 250e6
    max_xi: int = DEFAULT_MAX_XI
    chi_variant: str = "full"
    paranoid_phi: bool = False

    def __post_init__(self):
        object.__setattr__(self, "intensities", tuple(float(v) for v in self.intensities))
        object.__setattr__(self, "intensity_probs", tuple(float(v) for v in self.intensity_probs))
        object.__setattr__(self, "encoding_probs", tuple(float(v) for v in self.encoding_probs))
        problems = self.problems()
        if problems:
            raise ConfigError(problems)

    @property
    def mu(self) -> float:
        return self.intensities[Intensity.MU]

    @property
    def nu(self) -> float:
        return self.intensities[Intensity.NU]

    @property
    def omega(self) -> float:
        return self.intensities[Intensity.OMEGA]

    @property
    def p_mu(self) -> float:
        return self.intensity_probs[Intensity.MU]

    @property
    def alice_z_prob(self) -> float:
        return self.encoding_probs[Encoding.BIT0] + self.encoding_probs[Encoding.BIT1]

    @property
    def alice_x_prob(self) -> float:
        return self.encoding_probs[Encoding.PLUS]

    @property
    def bob_x_prob(self) -> float:
        return 1.0 - self.bob_z_prob

    @property
    def phi_points(self) -> int:
        return 1024 if self.paranoid_phi else self.phi_grid

    def problems(self) -> list[str]:
        out = []
        w, v, u = self.intensities
        if not all(math.isfinite(x) for x in self.intensities):
            out.append("protocol.intensities must be finite")
        elif not (u > v > w >= 0):
            out.append(f"protocol.intensities must satisfy mu > nu > omega >= 0, got {u}, {v}, {w}")
        for name, triple in (("intensity_probs", self.intensity_probs), ("encoding_probs", self.encoding_probs)):
            if any(p < 0 or p > 1 for p in triple):
                out.append(f"protocol.{name} entries must lie in [0, 1]")
            if abs(sum(triple) - 1.0) > PROB_TOL:
                out.append(f"protocol.{name} must sum to 1 (got {sum(triple)!r})")
        if not 0 < self.bob_z_prob <= 1:
            out.append("protocol.bob_z_prob must lie in (0, 1]")
        for name in ("delta1", "delta2"):
            val = getattr(self, name)
            if not (math.isfinite(val) and abs(val) < math.pi / 2):
                out.append(f"protocol.{name} must satisfy |{name}| < pi/2, got {val}")
        if self.xi < 0:
            out.append("protocol.xi must be non-negative")
        if self.xi > self.max_xi:
            out.append(f"protocol.xi = {self.xi} exceeds protocol.max_xi = {self.max_xi}")
        if self.f_ec < 1:
            out.append("protocol.f_ec must be >= 1")
        if self.n_cut < 2:
            out.append("protocol.n_cut must be >= 2")
        if self.phi_grid < 4:
            out.append("protocol.phi_grid must be >= 4")
        if self.mode not in MODES:
            out.append(f"protocol.mode must be one of {MODES}, got {self.mode!r}")
        if self.chi_variant not in CHI_VARIANTS:
            out.append(f"protocol.chi_variant must be one of {CHI_VARIANTS}")
        if not self.clock_hz > 0:
            out.append("protocol.clock_hz must be positive")
        return out

    def with_(self, **changes) -> "ProtocolConfig":
        return replace(self, **changes)


@dataclass(frozen=True)
class ChannelConfig:
    """Detector and fibre model.  ``eta_det`` already includes Bob's optics."""

    eta_det: float = 0.1
    dark_count: float = 1e-6
    misalignment: float = 0.0
    losses_db: tuple[float, ...] = (0.0,)

    def __post_init__(self):
        object.__setattr__(self, "losses_db", tuple(float(x) for x in self.losses_db))
        problems = self.problems()
        if problems:
            raise ConfigError(problems)

    def problems(self) -> list[str]:
        out = []
        if not 0 <= self.eta_det <= 1:
            out.append("channel.eta_det must lie in [0, 1]")
        if not 0 <= self.dark_count < 1:
            out.append("channel.dark_count must lie in [0, 1)")
        if not 0 <= self.misalignment <= 0.5:
            out.append("channel.misalignment must lie in [0, 0.5]")
        if not self.losses_db:
            out.append("channel.loss_db must contain at least one value")
        if any(not math.isfinite(x) or x < 0 for x in self.losses_db):
            out.append("channel.loss_db values must be finite and non-negative")
        return out

    def eta(self, loss_db: float) -> float:
        return self.eta_det * 10.0 ** (-loss_db / 10.0)


@dataclass(frozen=True)
class EpsilonSpec:
    """Where correlation parameters come from.

    ``kind`` is ``"uniform"`` (every parameter set to ``value``), ``"report"``
    (a JSON file written by ``qkdcorr characterize``) or ``"tables"`` (derived
    from the characterization tables with ``value`` as the side-channel floor).
    """

    kind: str = "uniform"
    value: float = 0.0
    cross_correlations: bool = True
    report: str | None = None


@dataclass(frozen=True)
class TableSpec:
    directory: str | None = None
    marginalization: str = "mean"
    spf_from_tables: bool = False


@dataclass(frozen=True)
class OutputSpec:
    csv: str | None = None
    manifest: str | None = None


@dataclass(frozen=True)
class RunConfig:
    protocol: ProtocolConfig = field(default_factory=ProtocolConfig)
    channel: ChannelConfig = field(default_factory=ChannelConfig)
    epsilons: EpsilonSpec = field(default_factory=EpsilonSpec)
    tables: TableSpec = field(default_factory=TableSpec)
    output: OutputSpec = field(default_factory=OutputSpec)
    source_path: str | None = None


def parse_loss_grid(spec: Any) -> tuple[float, ...]:
    """Accept ``"0:30:1"``, ``{"start":..,"stop":..,"step":..}`` or a list.

    The stop value is inclusive when it lands on the grid.
    """
    if isinstance(spec, str):
        parts = spec.split(":")
        if len(parts) != 3:
            raise ConfigError(f"loss grid {spec!r} must look like START:STOP:STEP")
        try:
            start, stop, step = (float(p) for p in parts)
        except ValueError:
            raise ConfigError(f"loss grid {spec!r} has a non-numeric field") from None
        spec = {"start": start, "stop": stop, "step": step}
    if isinstance(spec, Mapping):
        extra = set(spec) - {"start", "stop", "step"}
        if extra or len(spec) != 3:
            raise ConfigError(f"loss grid needs exactly start, stop, step (got {sorted(spec)})")
        start, stop, step = float(spec["start"]), float(spec["stop"]), float(spec["step"])
        if step <= 0 or stop < start:
            raise ConfigError("loss grid needs step > 0 and stop >= start")
        count = int(math.floor((stop - start) / step + 1e-9)) + 1
        return tuple(float(np.round(start + i * step, 12)) for i in range(count))
    if isinstance(spec, (list, tuple)):
        return tuple(float(x) for x in spec)
    if isinstance(spec, (int, float)):
        return (float(spec),)
    raise ConfigError(f"cannot interpret loss grid {spec!r}")


_PROTOCOL_KEYS = {
    "intensities", "intensity_probs", "encoding_probs", "bob_z_prob", "delta1", "delta2",
    "xi", "f_ec", "n_cut", "phi_grid", "mode", "clock_hz", "max_xi", "chi_variant", "paranoid_phi",
}
_CHANNEL_KEYS = {"eta_det", "dark_count", "misalignment", "loss_db"}
_EPS_KEYS = {"uniform", "cross_correlations", "report", "floor"}
_TABLE_KEYS = {"dir", "marginalization", "spf_from_tables"}
_OUTPUT_KEYS = {"csv", "manifest"}
_TOP_KEYS = {"protocol", "channel", "epsilons", "tables", "output"}


def _labelled_triple(obj, labels, parse, where, problems):
    if isinstance(obj, Mapping):
        vals = [None] * 3
        for key, val in obj.items():
            try:
                idx = int(parse(str(key)))
            except Exception:
                problems.append(f"{where}: unknown label {key!r}")
                continue
            vals[idx] = val
        missing = [labels[i] for i, v in enumerate(vals) if v is None]
        if missing:
            problems.append(f"{where}: missing {missing}")
            return None
        return tuple(float(v) for v in vals)
    problems.append(f"{where} must be an object keyed by {labels}")
    return None


def _unknown(section: Mapping, allowed: set, where: str, problems: list):
    for key in sorted(set(section) - allowed):
        problems.append(f"unknown key {where}.{key}")


def config_from_dict(doc: Mapping, base_dir: Path | None = None) -> RunConfig:
    """Validate a parsed JSON document and build a :class:`RunConfig`."""
    problems: list[str] = []
    if not isinstance(doc, Mapping):
        raise ConfigError("configuration must be a JSON object")
    _unknown(doc, _TOP_KEYS, "<root>", problems)

    proto = dict(doc.get("protocol", {}))
    _unknown(proto, _PROTOCOL_KEYS, "protocol", problems)
    kwargs: dict[str, Any] = {}
    if "intensities" in proto:
        kwargs["intensities"] = _labelled_triple(
            proto["intensities"], ("omega", "nu", "mu"), Intensity.parse, "protocol.intensities", problems)
    if "intensity_probs" in proto:
        kwargs["intensity_probs"] = _labelled_triple(
            proto["intensity_probs"], ("omega", "nu", "mu"), Intensity.parse, "protocol.intensity_probs", problems)
    if "encoding_probs" in proto:
        kwargs["encoding_probs"] = _labelled_triple(
            proto["encoding_probs"], ("0", "1", "plus"), Encoding.parse, "protocol.encoding_probs", problems)
    for key, cast in (("bob_z_prob", float), ("delta1", float), ("delta2", float), ("xi", int),
                      ("f_ec", float), ("n_cut", int), ("phi_grid", int), ("mode", str),
                      ("clock_hz", float), ("max_xi", int), ("chi_variant", str), ("paranoid_phi", bool)):
        if key in proto:
            try:
                kwargs[key] = cast(proto[key])
            except (TypeError, ValueError):
                problems.append(f"protocol.{key} has the wrong type")
    kwargs = {k: v for k, v in kwargs.items() if v is not None}

    chan = dict(doc.get("channel", {}))
    _unknown(chan, _CHANNEL_KEYS, "channel", problems)
    ckw: dict[str, Any] = {}
    for key in ("eta_det", "dark_count", "misalignment"):
        if key in chan:
            ckw[key] = float(chan[key])
    if "loss_db" in chan:
        try:
            ckw["losses_db"] = parse_loss_grid(chan["loss_db"])
        except ConfigError as exc:
            problems.extend(exc.problems)

    eps_doc = dict(doc.get("epsilons", {}))
    _unknown(eps_doc, _EPS_KEYS, "epsilons", problems)
    chosen = [k for k in ("uniform", "report", "floor") if k in eps_doc]
    eps = EpsilonSpec()
    if len(chosen) > 1:
        problems.append(f"epsilons: choose one of uniform/report/floor, got {chosen}")
    elif chosen == ["uniform"]:
        eps = EpsilonSpec("uniform", float(eps_doc["uniform"]), bool(eps_doc.get("cross_correlations", True)))
    elif chosen == ["report"]:
        path = Path(eps_doc["report"])
        if base_dir is not None and not path.is_absolute():
            path = base_dir / path
        eps = EpsilonSpec("report", report=str(path))
    elif chosen == ["floor"]:
        eps = EpsilonSpec("tables", float(eps_doc["floor"]))
    if eps.kind != "report" and not 0 <= eps.value <= 1:
        problems.append("epsilons value must lie in [0, 1]")

    tab_doc = dict(doc.get("tables", {}))
    _unknown(tab_doc, _TABLE_KEYS, "tables", problems)
    tdir = tab_doc.get("dir")
    if tdir is not None and tdir != "bundled" and base_dir is not None and not Path(tdir).is_absolute():
        tdir = str(base_dir / tdir)
    tables = TableSpec(tdir, str(tab_doc.get("marginalization", "mean")), bool(tab_doc.get("spf_from_tables", False)))
    if tables.marginalization not in MARGINALIZATIONS:
        problems.append(f"tables.marginalization must be one of {MARGINALIZATIONS}")
    if eps.kind == "tables" and tables.directory is None:
        problems.append("epsilons.floor derives parameters from tables, so tables.dir is required")
    if tables.spf_from_tables and tables.directory is None:
        problems.append("tables.spf_from_tables needs tables.dir")

    out_doc = dict(doc.get("output", {}))
    _unknown(out_doc, _OUTPUT_KEYS, "output", problems)
    output = OutputSpec(out_doc.get("csv"), out_doc.get("manifest"))

    protocol = channel = None
    try:
        protocol = ProtocolConfig(**kwargs)
    except ConfigError as exc:
        problems.extend(exc.problems)
    except TypeError as exc:
        problems.append(str(exc))
    try:
        channel = ChannelConfig(**ckw)
    except ConfigError as exc:
        problems.extend(exc.problems)
    if problems:
        raise ConfigError(problems)
    return RunConfig(protocol, channel, eps, tables, output)


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ParseError(f"{path}: {exc.strerror}") from None
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}:{exc.lineno}: {exc.msg}") from None
    cfg = config_from_dict(doc, base_dir=path.parent)
    return replace(cfg, source_path=str(path))


def preset_document(name: str) -> dict:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")
    text = resources.files("qkdcorr.data.presets").joinpath(f"{name}.json").read_text(encoding="utf-8")
    return json.loads(text)


def load_preset(name: str) -> RunConfig:
    return config_from_dict(preset_document(name))


def config_hash(cfg: RunConfig) -> str:
    """Stable SHA-256 of the resolved configuration."""
    import hashlib
    from dataclasses import asdict

    payload = asdict(cfg)
    payload.pop("source_path", None)
    payload.pop("output", None)
    blob = json.dumps(payload, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()
