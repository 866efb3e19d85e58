"""Real match results: parsing, best-of-three coding and cleaning.

Two CSV layouts are read.  ``atp_csv`` uses the tennis-data.co.uk column
names ``Winner``, ``Loser``, ``Wsets``, ``Lsets`` (plus ``Comment`` when
present, every other column ignored).  ``generic_csv`` has the header
``winner,loser,winner_units,loser_units``.
"""

from __future__ import annotations

import csv
import io
import json
import os
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .dataset import ComparisonDataset, DataError

FORMATS = ("atp_csv", "generic_csv")
_COLUMNS = {
    "atp_csv": ("Winner", "Loser", "Wsets", "Lsets"),
    "generic_csv": ("winner", "loser", "winner_units", "loser_units"),
}
# anything else in the ATP comment column marks an unfinished match
_COMPLETED = {"", "completed"}


@dataclass(frozen=True)
class RawMatch:
    winner: str
    loser: str
    winner_sets: int
    loser_sets: int
    meta: tuple = ()

    @property
    def is_bo3(self) -> bool:
        return self.winner_sets == 2 and self.loser_sets in (0, 1)


@dataclass
class MatchTable:
    """Parsed matches plus the tally of dropped rows."""

    matches: list[RawMatch] = field(default_factory=list)
    counts: dict[str, int] = field(default_factory=lambda: {
        "rows": 0, "kept": 0, "dropped_missing": 0, "dropped_unfinished": 0, "dropped_bo5": 0})

    def __len__(self):
        return len(self.matches)

    def __iter__(self):
        return iter(self.matches)

    def __getitem__(self, k):
        return self.matches[k]


def _sets(text: str, lineno: int, column: str) -> int | None:
    text = text.strip()
    if text == "" or text.lower() in ("na", "nan", "null"):
        return None
    try:
        val = float(text)
    except ValueError:
        raise DataError(f"column {column}: {text!r} is not a set count", line=lineno) from None
    if val != int(val) or not 0 <= val <= 3:
        raise DataError(f"column {column}: set count {text!r} outside 0..3", line=lineno)
    return int(val)


def _rows(reader):
    # csv.Error (NUL bytes, runaway quotes) surfaces as a located DataError
    while True:
        try:
            row = next(reader)
        except StopIteration:
            return
        except csv.Error as exc:
            raise DataError(f"unreadable CSV: {exc}", line=max(reader.line_num, 1)) from None
        yield row


def load_matches(path_or_buf, format: str = "atp_csv", bo3_only: bool = True) -> MatchTable:
    """Read matches, dropping missing, unfinished and (optionally) best-of-five rows."""
    if format not in FORMATS:
        raise DataError(f"unknown match format {format!r}; expected one of {FORMATS}")
    if hasattr(path_or_buf, "read"):
        text = path_or_buf.read()
    else:
        with open(path_or_buf, newline="", encoding="utf-8-sig") as fh:
            text = fh.read()
    table = MatchTable()
    if not text.strip():
        return table
    reader = csv.reader(io.StringIO(text))
    rows = _rows(reader)
    header = [h.strip() for h in next(rows)]
    cols = _COLUMNS[format]
    missing = [c for c in cols if c not in header]
    if missing:
        raise DataError(f"missing column(s) {missing} for format {format}", line=1)
    pos = [header.index(c) for c in cols]
    comment = header.index("Comment") if format == "atp_csv" and "Comment" in header else None
    counts = table.counts
    for row in rows:
        lineno = reader.line_num
        if not row or all(not c.strip() for c in row):
            continue
        counts["rows"] += 1
        if len(row) < len(header):
            row = row + [""] * (len(header) - len(row))
        elif len(row) > len(header):
            raise DataError(f"expected {len(header)} fields, got {len(row)}", line=lineno)
        win, lose = row[pos[0]].strip(), row[pos[1]].strip()
        ws = _sets(row[pos[2]], lineno, cols[2])
        ls = _sets(row[pos[3]], lineno, cols[3])
        if not win or not lose or ws is None or ls is None:
            counts["dropped_missing"] += 1
            continue
        if win == lose:
            raise DataError(f"{win!r} is listed as both winner and loser", line=lineno)
        if comment is not None and row[comment].strip().lower() not in _COMPLETED:
            counts["dropped_unfinished"] += 1
            continue
        if ws < ls:
            raise DataError(f"winner has {ws} sets but loser has {ls}", line=lineno)
        if ws == ls:
            # level set counts (0:0 walkovers mostly) mean no finished result
            counts["dropped_unfinished"] += 1
            continue
        if ws == 3:
            if bo3_only:
                counts["dropped_bo5"] += 1
                continue
        elif ws != 2:
            # a winner on fewer than two sets never finished the match
            counts["dropped_unfinished"] += 1
            continue
        table.matches.append(RawMatch(win, lose, ws, ls, (("line", lineno),)))
    counts["kept"] = len(table.matches)
    return table


class SubjectIndex:
    """Bijection between names and ids ``0..n-1``, ids assigned in sorted name order.

    The anchored subject (id 0, written as 1 in files) is therefore the
    lexicographically smallest name.
    """

    def __init__(self, names: Iterable[str]):
        self.names = tuple(sorted(set(names)))
        self._ids = {name: k for k, name in enumerate(self.names)}

    @classmethod
    def from_matches(cls, matches: Iterable[RawMatch]) -> "SubjectIndex":
        ms = list(matches)
        return cls([m.winner for m in ms] + [m.loser for m in ms])

    def __len__(self):
        return len(self.names)

    def __contains__(self, name):
        return name in self._ids

    def id(self, name: str) -> int:
        try:
            return self._ids[name]
        except KeyError:
            raise DataError(f"unknown subject {name!r}") from None

    def name(self, k: int) -> str:
        return self.names[k]

    def to_dict(self) -> dict:
        return {"subjects": [{"id": k + 1, "name": nm} for k, nm in enumerate(self.names)]}

    def write_json(self, path: str | os.PathLike) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)
            fh.write("\n")


def bo3_outcome(winner_sets: int, loser_sets: int) -> int:
    """Margin from the winner's side: 2:0 is 2 and 2:1 is 1."""
    if winner_sets == 2 and loser_sets == 0:
        return 2
    if winner_sets == 2 and loser_sets == 1:
        return 1
    raise DataError(f"{winner_sets}:{loser_sets} is not a best-of-three result")


def to_dataset(matches: Iterable[RawMatch], index: SubjectIndex | None = None) -> ComparisonDataset:
    ms = list(matches)
    if index is None:
        index = SubjectIndex.from_matches(ms)
    a = np.fromiter((index.id(m.winner) for m in ms), dtype=np.int64, count=len(ms))
    b = np.fromiter((index.id(m.loser) for m in ms), dtype=np.int64, count=len(ms))
    x = np.fromiter((bo3_outcome(m.winner_sets, m.loser_sets) for m in ms), dtype=float, count=len(ms))
    return ComparisonDataset.from_arrays(max(len(index), 1), a, b, x, labels=index.names or None)


@dataclass
class CleanResult:
    dataset: ComparisonDataset | None
    removed: list[int]
    kept: list[int]
    rounds: int

    @property
    def empty(self) -> bool:
        return self.dataset is None


def clean_never_win_lose(dataset: ComparisonDataset) -> CleanResult:
    """Drop subjects without a win or without a loss, repeating until none remain.

    Surviving subjects are renumbered contiguously in their original order;
    ``removed`` and ``kept`` hold original ids.  When nothing survives the
    result carries ``dataset=None``.
    """
    n = dataset.n
    i, j, x = dataset.i, dataset.j, dataset.x
    alive = np.ones(n, dtype=bool)
    rows = np.ones(len(dataset), dtype=bool)
    rounds = 0
    while True:
        rows &= alive[i] & alive[j]
        ii, jj, xx = i[rows], j[rows], x[rows]
        wins = np.bincount(ii[xx > 0], minlength=n) + np.bincount(jj[xx < 0], minlength=n)
        losses = np.bincount(ii[xx < 0], minlength=n) + np.bincount(jj[xx > 0], minlength=n)
        drop = alive & ((wins == 0) | (losses == 0))
        if not drop.any():
            break
        alive &= ~drop
        rounds += 1
    kept = np.flatnonzero(alive)
    removed = np.flatnonzero(~alive).tolist()
    if kept.size == 0:
        return CleanResult(None, removed, [], rounds)
    new_id = np.full(n, -1, dtype=np.int64)
    new_id[kept] = np.arange(kept.size)
    labels = tuple(dataset.labels[k] for k in kept) if dataset.labels is not None else None
    out = ComparisonDataset(int(kept.size), new_id[i[rows]], new_id[j[rows]], x[rows], labels=labels,
                            provenance=dict(dataset.provenance))
    return CleanResult(out, removed, kept.tolist(), rounds)
