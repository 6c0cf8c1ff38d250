"""Reading and writing sub-module characterization tables.

Each table is a CSV file whose first header cell is ``Prev. selec.`` and whose
remaining header cells are three-letter previous-setting patterns, previous
round first (``"wvu"`` means the last round used omega, the one before nu and
the one before that mu).  Rows are keyed by the current setting.

Four kinds exist, one per independent sub-modulator:

=============  ==============  ==================  =========================
kind           row labels      column alphabet     cell meaning
=============  ==============  ==================  =========================
im             omega, nu, mu   w, v, u             intensity / nominal mu
si             Z, X            Z, X                intensity / mean Z output
os_state       0, 1, plus      0, 1, +             early-bin amplitude Lambda
os_intensity   0, 1, plus      0, 1, +             intensity / own mean
=============  ==============  ==================  =========================
"""

from __future__ import annotations

import csv
import hashlib
import io
import itertools
import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import ParseError

HEADER_CORNER = "Prev. selec."

KINDS = ("im", "si", "os_state", "os_intensity")
FILENAMES = {kind: f"{kind}.csv" for kind in KINDS}

_ROWS = {
    "im": ("omega", "nu", "mu"),
    "si": ("Z", "X"),
    "os_state": ("0", "1", "plus"),
    "os_intensity": ("0", "1", "plus"),
}
_ALPHABET = {
    "im": "wvu",
    "si": "ZX",
    "os_state": "01+",
    "os_intensity": "01+",
}
_ROW_ALIASES = {"|0>": "0", "|1>": "1", "|+>": "plus", "+": "plus", "z": "Z", "x": "X"}


def row_labels(kind: str) -> tuple[str, ...]:
    return _ROWS[kind]


def column_labels(kind: str, depth: int = 3) -> tuple[str, ...]:
    """All patterns of the given depth in lexicographic order of the alphabet."""
    return tuple("".join(p) for p in itertools.product(_ALPHABET[kind], repeat=depth))


@dataclass(frozen=True)
class SubTable:
    """One validated characterization table.

    ``values[i, j]`` is the cell for current setting ``rows[i]`` and previous
    pattern ``columns[j]``; columns are always stored in canonical order.
    """

    kind: str
    values: np.ndarray
    source: str = "<memory>"

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)
        expected = (len(_ROWS[self.kind]), len(_ALPHABET[self.kind]) ** 3)
        if vals.shape != expected:
            raise ParseError(f"{self.source}: {self.kind} table must have shape {expected}, got {vals.shape}")

    @property
    def rows(self) -> tuple[str, ...]:
        return _ROWS[self.kind]

    @property
    def columns(self) -> tuple[str, ...]:
        return column_labels(self.kind)

    def cell(self, row: str, column: str) -> float:
        return float(self.values[self.rows.index(row), self.columns.index(column)])

    def as_cube(self) -> np.ndarray:
        """Values reshaped to ``(current, prev1, prev2, prev3)``."""
        k = len(_ALPHABET[self.kind])
        return self.values.reshape(len(self.rows), k, k, k)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow([HEADER_CORNER, *self.columns])
        for label, row in zip(self.rows, self.values):
            writer.writerow([label, *(repr(float(v)) for v in row)])
        return buf.getvalue()

    @classmethod
    def identity(cls, kind: str) -> "SubTable":
        """Table describing a perfect modulator."""
        ncol = len(_ALPHABET[kind]) ** 3
        if kind == "os_state":
            vals = np.array([[1.0] * ncol, [0.0] * ncol, [math.sqrt(0.5)] * ncol])
        elif kind == "si":
            vals = np.array([[1.0] * ncol, [0.5] * ncol])
        else:
            vals = np.ones((3, ncol))
        return cls(kind, vals, source="<identity>")


def _canon_row(label: str) -> str:
    label = label.strip()
    return _ROW_ALIASES.get(label, _ROW_ALIASES.get(label.lower(), label))


def parse_subtable(text: str, kind: str, source: str = "<string>") -> SubTable:
    """Parse CSV text into a :class:`SubTable`, reporting the first problem by location."""
    if kind not in KINDS:
        raise ParseError(f"{source}: unknown table kind {kind!r}")
    rows = [r for r in csv.reader(io.StringIO(text)) if any(c.strip() for c in r)]
    if not rows:
        raise ParseError(f"{source}: empty table")
    header = [c.strip() for c in rows[0]]
    if header[0] != HEADER_CORNER:
        raise ParseError(f"{source}:1: first header cell must be {HEADER_CORNER!r}, got {header[0]!r}")
    canon_cols = column_labels(kind)
    col_pos = {}
    for j, name in enumerate(header[1:], start=2):
        if name not in canon_cols:
            raise ParseError(f"{source}:1: column {j} has unknown pattern {name!r}")
        if name in col_pos:
            raise ParseError(f"{source}:1: column {j} repeats pattern {name!r}")
        col_pos[name] = j - 1
    missing_cols = [c for c in canon_cols if c not in col_pos]
    if missing_cols:
        raise ParseError(f"{source}:1: missing pattern columns {missing_cols}")

    values = np.full((len(_ROWS[kind]), len(canon_cols)), np.nan)
    seen = set()
    for lineno, row in enumerate(rows[1:], start=2):
        label = _canon_row(row[0])
        if label not in _ROWS[kind]:
            raise ParseError(f"{source}:{lineno}: unknown row label {row[0]!r} for a {kind} table")
        if label in seen:
            raise ParseError(f"{source}:{lineno}: row {label!r} appears twice")
        seen.add(label)
        i = _ROWS[kind].index(label)
        for name, pos in col_pos.items():
            cell = row[pos].strip() if pos < len(row) else ""
            if not cell:
                raise ParseError(f"{source}:{lineno}: missing cell in column {pos + 1} ({name})")
            try:
                val = float(cell)
            except ValueError:
                raise ParseError(f"{source}:{lineno}: non-numeric cell {cell!r} in column {pos + 1} ({name})") from None
            if not math.isfinite(val):
                raise ParseError(f"{source}:{lineno}: non-finite cell in column {pos + 1} ({name})")
            bad = (val < 0 or val > 1) if kind == "os_state" else val <= 0
            if bad:
                rule = "in [0, 1]" if kind == "os_state" else "positive"
                raise ParseError(f"{source}:{lineno}: cell {val} in column {pos + 1} ({name}) must be {rule}")
            values[i, canon_cols.index(name)] = val
        if len(row) > len(header):
            raise ParseError(f"{source}:{lineno}: {len(row)} cells but header has {len(header)}")
    missing_rows = [r for r in _ROWS[kind] if r not in seen]
    if missing_rows:
        raise ParseError(f"{source}: missing rows {missing_rows}")
    return SubTable(kind, values, source)


def read_subtable(path: str | Path, kind: str) -> SubTable:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ParseError(f"{path}: {exc.strerror or exc}") from None
    return parse_subtable(text, kind, source=str(path))


@dataclass(frozen=True)
class CorrelationTables:
    im: SubTable
    si: SubTable
    os_state: SubTable
    os_intensity: SubTable
    hashes: tuple[tuple[str, str], ...] = ()

    def __iter__(self):
        return iter((self.im, self.si, self.os_state, self.os_intensity))

    @classmethod
    def identity(cls) -> "CorrelationTables":
        return cls(*(SubTable.identity(k) for k in KINDS))


def _sha256(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def load_table_dir(directory: str | Path | None) -> CorrelationTables:
    """Load ``im.csv``, ``si.csv``, ``os_state.csv`` and ``os_intensity.csv``.

    ``None`` or ``"bundled"`` loads the tables shipped with the package.
    """
    tables, hashes = {}, []
    if directory is None or str(directory) == "bundled":
        root = resources.files("qkdcorr.data.tables")
        for kind in KINDS:
            text = root.joinpath(FILENAMES[kind]).read_text(encoding="utf-8")
            tables[kind] = parse_subtable(text, kind, source=f"bundled/{FILENAMES[kind]}")
            hashes.append((FILENAMES[kind], _sha256(text)))
    else:
        directory = Path(directory)
        if not directory.is_dir():
            raise ParseError(f"{directory}: table directory not found")
        for kind in KINDS:
            path = directory / FILENAMES[kind]
            try:
                text = path.read_text(encoding="utf-8")
            except OSError:
                raise ParseError(f"{path}: file not found") from None
            tables[kind] = parse_subtable(text, kind, source=str(path))
            hashes.append((str(path), _sha256(text)))
    return CorrelationTables(**tables, hashes=tuple(hashes))


def write_table_dir(tables: CorrelationTables, directory: str | Path) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for table in tables:
        (directory / FILENAMES[table.kind]).write_text(table.to_csv(), encoding="utf-8")
