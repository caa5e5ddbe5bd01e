"""Tabular diagnostics: one row per record, named float columns, CSV round-trip.

Level-dependent columns are named ``<kind>:<q>:<kappa>`` (or ``<kind>:<kappa>``)
with ``%.12g`` keys; lookups match levels numerically with a relative
tolerance, so callers can ask for ``2**(j*gamma)`` without reproducing the
key formatting.
"""

from __future__ import annotations

import csv
import io
from pathlib import Path

import numpy as np

__all__ = ["DiagnosticsSeries", "format_value", "parse_level_key"]

_REL_TOL = 1e-9


def format_value(x: float) -> str:
    """Round-trip formatting; identical floats always give identical text."""
    return format(float(x), ".17g")


def parse_level_key(name: str) -> tuple[str, tuple[float, ...]] | None:
    parts = name.split(":")
    if len(parts) < 2:
        return None
    try:
        return parts[0], tuple(float(p) for p in parts[1:])
    except ValueError:
        return None


class DiagnosticsSeries:
    """Immutable view of a diagnostics table."""

    def __init__(self, columns: list[str], data: np.ndarray):
        data = np.asarray(data, dtype=np.float64)
        if data.ndim != 2 or data.shape[1] != len(columns):
            raise ValueError(f"data shape {data.shape} does not match {len(columns)} columns")
        if "time" not in columns:
            raise ValueError("series needs a 'time' column")
        self.columns = list(columns)
        self.data = data
        self.data.setflags(write=False)
        self._index = {c: i for i, c in enumerate(self.columns)}

    def __len__(self) -> int:
        return self.data.shape[0]

    @classmethod
    def from_records(cls, records) -> "DiagnosticsSeries":
        rows = [r.row() for r in records]
        if not rows:
            raise ValueError("no records")
        cols = list(rows[0])
        return cls(cols, np.array([[row[c] for c in cols] for row in rows]))

    @classmethod
    def from_columns(cls, **columns) -> "DiagnosticsSeries":
        """Build from keyword arrays; ``:`` in names is spelled ``__`` (``levelset__1.5__2``)."""
        names = [k.replace("__", ":") for k in columns]
        arrays = [np.asarray(v, dtype=np.float64) for v in columns.values()]
        return cls(names, np.column_stack(arrays))

    @classmethod
    def from_dict(cls, columns: dict) -> "DiagnosticsSeries":
        names = list(columns)
        return cls(names, np.column_stack([np.asarray(columns[k], dtype=np.float64) for k in names]))

    @property
    def times(self) -> np.ndarray:
        return self.column("time")

    def column(self, name: str) -> np.ndarray:
        if name in self._index:
            return self.data[:, self._index[name]]
        found = self._match(name)
        if found is None:
            raise KeyError(f"unknown quantity {name!r}; available: {', '.join(self.columns)}")
        return self.data[:, self._index[found]]

    def has(self, name: str) -> bool:
        return name in self._index or self._match(name) is not None

    def _match(self, name: str) -> str | None:
        target = parse_level_key(name)
        if target is None:
            return None
        kind, values = target
        for col in self.columns:
            parsed = parse_level_key(col)
            if parsed is None or parsed[0] != kind or len(parsed[1]) != len(values):
                continue
            if all(abs(a - b) <= _REL_TOL * max(abs(a), abs(b), 1.0) for a, b in zip(parsed[1], values)):
                return col
        return None

    def level(self, kind: str, q: float, kappa: float) -> np.ndarray:
        return self.column(f"{kind}:{q!r}:{kappa!r}")

    def levels(self, kind: str, q: float) -> list[float]:
        out = []
        for col in self.columns:
            parsed = parse_level_key(col)
            if parsed and parsed[0] == kind and len(parsed[1]) == 2 and abs(parsed[1][0] - q) <= _REL_TOL * q:
                out.append(parsed[1][1])
        return sorted(out)

    def with_column(self, name: str, values) -> "DiagnosticsSeries":
        values = np.asarray(values, dtype=np.float64).reshape(-1, 1)
        return DiagnosticsSeries(self.columns + [name], np.hstack([self.data, values]))

    def to_csv_text(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(self.columns)
        for row in self.data:
            writer.writerow([format_value(x) for x in row])
        return buf.getvalue()

    def write_csv(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.to_csv_text())
        return path

    @classmethod
    def read_csv(cls, path) -> "DiagnosticsSeries":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        if not rows:
            raise ValueError(f"{path}: empty diagnostics file")
        header, body = rows[0], rows[1:]
        data = np.array([[float(x) for x in r] for r in body], dtype=np.float64).reshape(len(body), len(header))
        return cls(header, data)
