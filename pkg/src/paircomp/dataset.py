"""Comparison records and their CSV form.

Records are stored with ``i < j`` (0-based internally) and the outcome taken
from ``i``'s perspective.  The CSV form uses 1-based ids with header
``i,j,outcome``.
"""

from __future__ import annotations

import csv
import io
import json
import os
from dataclasses import dataclass, field
from typing import Any, Iterable, Sequence

import numpy as np


class DataError(ValueError):
    """Malformed dataset input; ``line`` is the 1-based line number when known."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


@dataclass(frozen=True, eq=False)
class ComparisonDataset:
    """``n`` subjects and a multiset of ``(i, j, outcome)`` records."""

    n: int
    i: np.ndarray
    j: np.ndarray
    x: np.ndarray
    labels: tuple[str, ...] | None = None
    provenance: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        i = np.asarray(self.i, dtype=np.int64).ravel()
        j = np.asarray(self.j, dtype=np.int64).ravel()
        x = np.asarray(self.x, dtype=float).ravel()
        if not (i.size == j.size == x.size):
            raise DataError("record arrays must have equal length")
        if self.n < 1:
            raise DataError("need at least one subject")
        if i.size and (i.min() < 0 or j.max() >= self.n):
            raise DataError("subject id out of range")
        if np.any(i >= j):
            raise DataError("records must satisfy i < j")
        if self.labels is not None and len(self.labels) != self.n:
            raise DataError("labels must name every subject")
        for name, arr in (("i", i), ("j", j), ("x", x)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @classmethod
    def from_records(cls, n: int, records: Iterable[Sequence[float]], **kw) -> "ComparisonDataset":
        """Build from ``(i, j, outcome)`` triples (0-based), reorienting ``i > j``."""
        rows = [tuple(r) for r in records]
        if not rows:
            return cls(n, np.empty(0, np.int64), np.empty(0, np.int64), np.empty(0), **kw)
        a = np.array([r[0] for r in rows], dtype=np.int64)
        b = np.array([r[1] for r in rows], dtype=np.int64)
        x = np.array([r[2] for r in rows], dtype=float)
        return cls.from_arrays(n, a, b, x, **kw)

    @classmethod
    def from_arrays(cls, n, a, b, x, **kw) -> "ComparisonDataset":
        a = np.asarray(a, dtype=np.int64)
        b = np.asarray(b, dtype=np.int64)
        x = np.asarray(x, dtype=float)
        if np.any(a == b):
            raise DataError("self-comparison records are not allowed")
        flip = a > b
        i = np.where(flip, b, a)
        j = np.where(flip, a, b)
        return cls(n, i, j, np.where(flip, -x, x), **kw)

    def __len__(self) -> int:
        return int(self.x.size)

    @property
    def m(self) -> int:
        return len(self)

    def __eq__(self, other):
        return (
            isinstance(other, ComparisonDataset)
            and self.n == other.n
            and np.array_equal(self.i, other.i)
            and np.array_equal(self.j, other.j)
            and np.array_equal(self.x, other.x)
        )

    def degrees(self) -> np.ndarray:
        """Number of records each subject takes part in."""
        return np.bincount(self.i, minlength=self.n) + np.bincount(self.j, minlength=self.n)

    def subset(self, mask) -> "ComparisonDataset":
        mask = np.asarray(mask)
        return ComparisonDataset(self.n, self.i[mask], self.j[mask], self.x[mask],
                                 labels=self.labels, provenance=dict(self.provenance))

    def flipped(self) -> "ComparisonDataset":
        """Same records with every outcome negated."""
        return ComparisonDataset(self.n, self.i, self.j, -self.x, labels=self.labels)

    def repeated(self, times: int) -> "ComparisonDataset":
        return ComparisonDataset(self.n, np.tile(self.i, times), np.tile(self.j, times),
                                 np.tile(self.x, times), labels=self.labels)

    def relabeled(self, perm) -> "ComparisonDataset":
        """Rename subject ``k`` to ``perm[k]``, reorienting records as needed."""
        perm = np.asarray(perm, dtype=np.int64)
        return ComparisonDataset.from_arrays(self.n, perm[self.i], perm[self.j], self.x)

    # -- CSV ----------------------------------------------------------------

    def to_csv(self, path_or_buf=None, integer_outcomes: bool | None = None) -> str | None:
        """Write ``i,j,outcome`` rows with 1-based ids.

        Integer-valued outcomes are written as integers, anything else with
        ``repr`` so that reading back is lossless.
        """
        if integer_outcomes is None:
            integer_outcomes = bool(np.all(self.x == np.round(self.x)))
        buf = io.StringIO()
        buf.write("i,j,outcome\n")
        fmt = (lambda v: str(int(v))) if integer_outcomes else repr
        for a, b, v in zip(self.i.tolist(), self.j.tolist(), self.x.tolist()):
            buf.write(f"{a + 1},{b + 1},{fmt(v)}\n")
        text = buf.getvalue()
        if path_or_buf is None:
            return text
        if hasattr(path_or_buf, "write"):
            path_or_buf.write(text)
        else:
            with open(path_or_buf, "w", newline="") as fh:
                fh.write(text)
        return None

    @classmethod
    def read_csv(cls, path_or_buf, n: int | None = None) -> "ComparisonDataset":
        """Parse a dataset CSV; ``n`` defaults to the largest id present."""
        if hasattr(path_or_buf, "read"):
            text = path_or_buf.read()
        else:
            with open(path_or_buf, newline="") as fh:
                text = fh.read()
        rows = csv.reader(io.StringIO(text))
        try:
            header = next(rows)
        except StopIteration:
            raise DataError("empty dataset file", line=1) from None
        if [h.strip().lower() for h in header] != ["i", "j", "outcome"]:
            raise DataError(f"expected header 'i,j,outcome', got {','.join(header)!r}", line=1)
        a, b, x = [], [], []
        for lineno, row in enumerate(rows, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 3:
                raise DataError(f"expected 3 fields, got {len(row)}", line=lineno)
            try:
                ii, jj, vv = int(row[0]), int(row[1]), float(row[2])
            except ValueError:
                raise DataError(f"unparseable row {row!r}", line=lineno) from None
            if ii < 1 or jj < 1:
                raise DataError("subject ids are 1-based", line=lineno)
            if ii == jj:
                raise DataError("self-comparison", line=lineno)
            if not np.isfinite(vv):
                raise DataError("non-finite outcome", line=lineno)
            a.append(ii - 1)
            b.append(jj - 1)
            x.append(vv)
        top = max(max(a, default=-1), max(b, default=-1)) + 1
        if n is None:
            n = max(top, 1)
        elif top > n:
            raise DataError(f"subject id {top} exceeds n={n}")
        return cls.from_arrays(n, np.array(a, np.int64), np.array(b, np.int64), np.array(x))


def write_json(path: str | os.PathLike, obj) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def _json_default(o):
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not JSON serialisable: {type(o).__name__}")
