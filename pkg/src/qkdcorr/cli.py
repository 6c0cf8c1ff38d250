"""Command-line front end: ``qkdcorr characterize | skr | compare | dump-lp``.

Exit codes: 0 success, 2 bad input, 3 finished but some history prefix was
flagged, 4 internal failure.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import os
import sys
import time
from dataclasses import replace
from pathlib import Path

import click
import numpy as np

from . import __version__
from .channel import observables
from .config import PRESETS, RunConfig, config_hash, load_config, load_preset, parse_loss_grid
from .decoy import build_bound_lp, build_yield_lp, photon_bounds
from .engine import CSV_COLUMNS, points_to_csv, prepare, sweep
from .epsilons import coarse_from_source, derive_epsilons, epsilon_report
from .errors import CapacityError, ConfigError, DataError, ParseError, QKDCorrError
from .overlaps import overlap_bounds
from .settings import ENCODING_LABELS, INTENSITY_LABELS
from .source import compose_source, delta_from_source
from .tables import load_table_dir
from .virtual import decompose, s_factors, zeta_weights

EXIT_OK, EXIT_INPUT, EXIT_FLAGGED, EXIT_INTERNAL = 0, 2, 3, 4
INPUT_ERRORS = (ConfigError, ParseError, DataError, CapacityError)

log = logging.getLogger("qkdcorr")


def default_threads() -> int:
    try:
        return max(1, len(os.sched_getaffinity(0)))
    except AttributeError:
        return max(1, os.cpu_count() or 1)


def _fail(message: str, code: int) -> None:
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def _guard(fn):
    """Translate library errors into exit codes."""

    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except click.exceptions.Exit:
            raise
        except click.ClickException:
            raise
        except ConfigError as exc:
            for problem in exc.problems:
                click.echo(f"error: {problem}", err=True)
            sys.exit(EXIT_INPUT)
        except INPUT_ERRORS as exc:
            _fail(str(exc), EXIT_INPUT)
        except QKDCorrError as exc:
            _fail(f"internal: {exc}", EXIT_INTERNAL)
        except Exception as exc:  # pragma: no cover - last resort
            log.debug("unexpected failure", exc_info=True)
            _fail(f"internal: {type(exc).__name__}: {exc}", EXIT_INTERNAL)

    wrapper.__name__ = fn.__name__
    wrapper.__doc__ = fn.__doc__
    return wrapper


def _single_mode(modes: tuple[str, ...]) -> str | None:
    if len(set(modes)) > 1:
        raise click.UsageError(f"conflicting --mode values: {', '.join(modes)}")
    return modes[0] if modes else None


def resolve_run(config: str | None, preset: str | None, tables: str | None, loss: str | None,
                mode: str | None, paranoid_phi: bool) -> RunConfig:
    """Load the configuration and apply command-line overrides."""
    if config and preset:
        raise click.UsageError("--config and --preset are mutually exclusive")
    if config:
        run = load_config(config)
    elif preset:
        run = load_preset(preset)
    else:
        run = RunConfig()
    proto = {}
    if mode:
        proto["mode"] = mode
    if paranoid_phi:
        proto["paranoid_phi"] = True
    if proto:
        run = replace(run, protocol=run.protocol.with_(**proto))
    if loss:
        run = replace(run, channel=replace(run.channel, losses_db=parse_loss_grid(loss)))
    if tables:
        run = replace(run, tables=replace(run.tables, directory=tables))
    return run


def _output_path(cli_value: str | None, configured: str | None, run: RunConfig) -> Path | None:
    if cli_value:
        return Path(cli_value)
    if configured:
        path = Path(configured)
        if not path.is_absolute() and run.source_path:
            path = Path(run.source_path).parent / path
        return path
    return None


def build_manifest(run: RunConfig, table_hashes, mode: str, wall: float, warnings, **extra) -> dict:
    doc = {
        "engine_version": __version__,
        "config_hash": config_hash(run),
        "table_hashes": {name: digest for name, digest in table_hashes},
        "mode": mode,
        "wall_time_s": round(wall, 3),
        "warnings": list(warnings),
    }
    doc.update(extra)
    return doc


# -- command group -------------------------------------------------------------

@click.group()
@click.version_option(__version__, prog_name="qkdcorr")
@click.option("--verbose", is_flag=True, help="Log progress to stderr.")
def main(verbose: bool) -> None:
    """Key rates of decoy-state QKD with correlated, flawed sources."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING, format="%(levelname)s %(message)s")


_config_opt = click.option("--config", type=click.Path(), help="JSON run configuration.")
_preset_opt = click.option("--preset", type=click.Choice(PRESETS), help="Bundled configuration.")
_mode_opt = click.option("--mode", type=click.Choice(("fine", "coarse")), multiple=True,
                         help="Correlation-parameter granularity.")
_tables_opt = click.option("--tables", type=click.Path(), help="Directory with im/si/os_state/os_intensity CSVs.")


# -- characterize --------------------------------------------------------------

def characterization_summary(src, cfg) -> dict:
    """Largest relative intensity deviation per current setting and history depth."""
    digits = src.digits()
    nominal = np.asarray(src.nominal)[digits[:, 0] // 3]
    dev = np.abs(src.alpha / nominal - 1)
    by_setting = {}
    for s in range(9):
        a, r = divmod(s, 3)
        mask = digits[:, 0] == s
        by_setting[f"{INTENSITY_LABELS[a]},{ENCODING_LABELS[r]}"] = float(dev[mask].max())
    by_intensity = {}
    for a in range(3):
        mask = digits[:, 0] // 3 == a
        worst = int(np.flatnonzero(mask)[np.argmax(dev[mask])])
        history = " ".join(f"({INTENSITY_LABELS[d // 3]},{ENCODING_LABELS[d % 3]})" for d in digits[worst, 1:])
        by_intensity[INTENSITY_LABELS[a]] = {"max_deviation": float(dev[worst]), "worst_history": history,
                                             "intensity": float(src.alpha[worst])}
    return {"max_deviation_by_setting": by_setting, "max_deviation_by_intensity": by_intensity,
            "delta1": cfg.delta1, "delta2": cfg.delta2}


def _summary_text(summary: dict, eps) -> str:
    lines = [f"correlation range xi={eps.xi}, {eps.mode}-grained parameters"]
    lines.append("largest relative intensity deviation by current setting:")
    for key, val in summary["max_deviation_by_setting"].items():
        lines.append(f"  ({key:>9})  {val:.6g}")
    lines.append("worst history per intensity:")
    for key, val in summary["max_deviation_by_intensity"].items():
        lines.append(f"  {key:>5}: {val['max_deviation']:.6g} after {val['worst_history'] or '-'}")
    lines.append(f"max |eps_delta| = {float(np.abs(eps.eps_delta).max()):.6g}")
    return "\n".join(lines) + "\n"


@main.command()
@_tables_opt
@click.option("--out", type=click.Path(), required=True, help="Where to write the JSON report.")
@_config_opt
@_preset_opt
@_mode_opt
@click.option("--floor", type=float, default=None, help="Side-channel floor for the state parameters.")
@_guard
def characterize(tables, out, config, preset, mode, floor):
    """Derive correlation parameters from characterization tables."""
    mode = _single_mode(mode)
    run = resolve_run(config, preset, None, None, mode, False)
    directory = tables or run.tables.directory or "bundled"
    tabs = load_table_dir(directory)
    cfg = run.protocol
    src = compose_source(tabs, cfg, run.tables.marginalization)
    if run.tables.spf_from_tables:
        d1, d2 = delta_from_source(src, cfg)
        cfg = cfg.with_(delta1=d1, delta2=d2)
    if floor is None:
        floor = run.epsilons.value if run.epsilons.kind == "tables" else 0.0
    eps = derive_epsilons(src, cfg, floor) if cfg.mode == "fine" else coarse_from_source(src, cfg, floor)
    summary = characterization_summary(src, cfg)
    summary["table_hashes"] = {name: digest for name, digest in tabs.hashes}
    doc = epsilon_report(eps, summary)
    Path(out).write_text(json.dumps(doc, indent=1) + "\n", encoding="utf-8")
    click.echo(_summary_text(summary, eps), nl=False)


# -- skr -----------------------------------------------------------------------

@main.command()
@_config_opt
@_preset_opt
@_tables_opt
@click.option("--loss", help="Loss grid START:STOP:STEP in dB (overrides the config).")
@_mode_opt
@click.option("--threads", type=int, default=None, help="Worker processes (default: available CPUs).")
@click.option("--out", type=click.Path(), help="CSV path (default: config output.csv, else stdout).")
@click.option("--paranoid-phi", is_flag=True, help="Search the auxiliary phase on a 1024-point grid.")
@_guard
def skr(config, preset, tables, loss, mode, threads, out, paranoid_phi):
    """Sweep channel loss and write the key-rate CSV plus a run manifest."""
    mode = _single_mode(mode)
    threads = default_threads() if threads is None else threads
    if threads < 1:
        raise click.BadParameter("must be at least 1", param_hint="--threads")
    run = resolve_run(config, preset, tables, loss, mode, paranoid_phi)
    start = time.perf_counter()
    prep = prepare(run)
    points = sweep(prep.protocol, prep.channel, prep.source, prep.epsilons, threads)
    wall = time.perf_counter() - start
    text = points_to_csv(points)
    warnings = list(prep.warnings)
    for p in points:
        warnings.extend(p.warnings)
    notes = [n for p in points for n in p.notes]
    flagged = sum(p.flagged for p in points)
    manifest = build_manifest(run, prep.tables.hashes if prep.tables else (), prep.protocol.mode, wall, warnings,
                              notes=notes, flagged_sequences=int(flagged), threads=threads,
                              points=len(points), xi=prep.protocol.xi, clock_hz=prep.protocol.clock_hz)
    csv_path = _output_path(out, run.output.csv, run)
    if csv_path is None:
        click.echo(text, nl=False)
        click.echo(json.dumps(manifest, indent=1), err=True)
    else:
        csv_path.write_text(text, encoding="utf-8")
        manifest_path = _output_path(None, run.output.manifest, run) or csv_path.with_suffix(".manifest.json")
        manifest_path.write_text(json.dumps(manifest, indent=1) + "\n", encoding="utf-8")
    for w in warnings:
        log.warning(w)
    sys.exit(EXIT_FLAGGED if flagged else EXIT_OK)


# -- compare -------------------------------------------------------------------

def read_skr_csv(path: str) -> list[dict[str, str]]:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ParseError(f"{path}: {exc.strerror or exc}") from None
    rows = list(csv.DictReader(io.StringIO(text)))
    missing = [c for c in ("loss_db", "skr_per_pulse", "skr_bps") if rows and c not in rows[0]]
    if not rows or missing:
        raise ParseError(f"{path}: not a key-rate CSV (missing {missing or 'rows'})")
    return rows


def _ratio(a: float, b: float) -> str:
    if not (math.isfinite(a) and math.isfinite(b)):
        return "undefined"
    if b == 0:
        return "undefined" if a == 0 else "inf"
    return f"{a / b:.12g}"


def _clock(rows, path: str) -> float | None:
    """Clock frequency implied by ``skr_bps / skr_per_pulse``; checked to be row-independent."""
    clocks = [float(r["skr_bps"]) / float(r["skr_per_pulse"]) for r in rows
              if math.isfinite(float(r["skr_per_pulse"])) and float(r["skr_per_pulse"]) > 0]
    if not clocks:
        return None
    if max(clocks) - min(clocks) > 1e-9 * max(clocks):
        raise DataError(f"{path}: skr_bps is not a fixed multiple of skr_per_pulse")
    return clocks[0]


def compare_tables(rows_a, rows_b, name_a="A", name_b="B") -> tuple[str, str]:
    """Per-loss ratio CSV and the one-line summary at 10 dB."""
    if len(rows_a) != len(rows_b):
        n = min(len(rows_a), len(rows_b))
        longer = rows_a if len(rows_a) > n else rows_b
        raise DataError(f"loss grids differ: {longer[n]['loss_db']} dB appears in only one file")
    for ra, rb in zip(rows_a, rows_b):
        if float(ra["loss_db"]) != float(rb["loss_db"]):
            raise DataError(f"loss grids differ at {ra['loss_db']} dB ({name_a}) vs {rb['loss_db']} dB ({name_b})")
    clock_a, clock_b = _clock(rows_a, name_a), _clock(rows_b, name_b)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["loss_db", "skr_bps_a", "skr_bps_b", "ratio"])
    at10 = None
    for ra, rb in zip(rows_a, rows_b):
        a, b = float(ra["skr_bps"]), float(rb["skr_bps"])
        ratio = _ratio(a, b)
        if clock_a and clock_b and b > 0 and a > 0:
            per_pulse = float(ra["skr_per_pulse"]) / float(rb["skr_per_pulse"])
            if abs(a / b - per_pulse * clock_a / clock_b) > 1e-9 * (a / b):
                raise DataError(f"bps ratio at {ra['loss_db']} dB is not the per-pulse ratio times the clock ratio")
        w.writerow([ra["loss_db"], ra["skr_bps"], rb["skr_bps"], ratio])
        if float(ra["loss_db"]) == 10.0:
            at10 = ratio
    summary = f"ratio at 10 dB: {at10}" if at10 is not None else "ratio at 10 dB: n/a (10 dB not on the grid)"
    return buf.getvalue(), summary


@main.command()
@click.argument("csv_a", type=click.Path())
@click.argument("csv_b", type=click.Path())
@click.option("--out", type=click.Path(), help="Write the ratio table here instead of stdout.")
@_guard
def compare(csv_a, csv_b, out):
    """Per-loss ratio of two key-rate CSVs (A over B, in bits per second)."""
    table, summary = compare_tables(read_skr_csv(csv_a), read_skr_csv(csv_b), csv_a, csv_b)
    if out:
        Path(out).write_text(table, encoding="utf-8")
    else:
        click.echo(table, nl=False)
    click.echo(summary)


# -- dump-lp -------------------------------------------------------------------

@main.command("dump-lp")
@_config_opt
@_preset_opt
@_tables_opt
@click.option("--loss", type=float, default=0.0, show_default=True, help="Channel loss in dB.")
@_mode_opt
@click.option("--prefix", type=int, default=0, show_default=True, help="History prefix code.")
@click.option("--bound", type=click.Choice(("Y", "T1", "T2", "T3", "T4")), default="Y", show_default=True)
@click.option("--direction", type=click.Choice(("max", "min")), help="Default: the side the key rate uses.")
@click.option("--phi", type=float, default=0.0, show_default=True, help="Auxiliary phase for the T bounds.")
@click.option("--out", type=click.Path(), help="Write here instead of stdout.")
@_guard
def dump_lp(config, preset, tables, loss, mode, prefix, bound, direction, phi, out):
    """Write one estimation LP as text, one constraint per line."""
    mode = _single_mode(mode)
    run = resolve_run(config, preset, tables, None, mode, False)
    prep = prepare(run)
    cfg = prep.protocol
    if not 0 <= prefix < 9**cfg.xi:
        raise click.BadParameter(f"must lie in 0..{9**cfg.xi - 1}", param_hint="--prefix")
    stats = observables(prep.source, prep.channel, cfg, loss)
    bounds = photon_bounds(prep.source, cfg)
    ob = overlap_bounds(prep.epsilons, cfg)
    if bound == "Y":
        lp = build_yield_lp(prefix, stats, bounds, ob.tau_prime[prefix], cfg)
        if direction and direction != "min":
            lp = replace(lp, direction=direction)
    else:
        j = int(bound[1])
        dec = decompose(cfg.delta1, cfg.delta2, phi, cfg)
        if direction is None:
            s = getattr(s_factors(dec, cfg), f"s{j}")
            direction = "min" if (j == 2 or (j > 2 and s < 0)) else "max"
        lp = build_bound_lp(j, prefix, stats, bounds, ob.tau[prefix], zeta_weights(dec, cfg), cfg, direction)
    text = lp.dump()
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        click.echo(text, nl=False)


__all__ = ["main", "CSV_COLUMNS", "compare_tables", "resolve_run"]
