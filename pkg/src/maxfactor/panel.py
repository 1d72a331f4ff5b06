"""Loss-count panels: exposures and loss counts per category and period.

The on-disk format is a CSV file with the exact header
``period,category,exposures,losses`` and one row per (period, category).
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, PanelParseError

HEADER = ("period", "category", "exposures", "losses")


@dataclass(frozen=True, eq=False)
class Panel:
    """Rectangular panel of ``k`` categories observed over ``n`` periods.

    ``exposures[r, j]`` is the number of risks of category ``r`` in period
    ``j`` and ``losses[r, j]`` the number of those producing a loss.
    """

    categories: tuple
    periods: tuple
    exposures: np.ndarray
    losses: np.ndarray

    def __post_init__(self):
        cats = tuple(str(c) for c in self.categories)
        pers = tuple(str(p) for p in self.periods)
        m = np.array(self.exposures, dtype=np.int64)
        M = np.array(self.losses, dtype=np.int64)
        if len(cats) < 1 or len(pers) < 1:
            raise DomainError("a panel needs at least one category and one period")
        if len(set(cats)) != len(cats):
            raise DomainError("category labels must be unique")
        if len(set(pers)) != len(pers):
            raise DomainError("period labels must be unique")
        if m.shape != (len(cats), len(pers)) or M.shape != m.shape:
            raise DomainError(
                f"count matrices must have shape {(len(cats), len(pers))}, "
                f"got {m.shape} and {M.shape}")
        if np.any(m < 1):
            raise DomainError("exposures must be at least 1 in every cell")
        if np.any(M < 0) or np.any(M > m):
            raise DomainError("losses must satisfy 0 <= losses <= exposures")
        m.setflags(write=False)
        M.setflags(write=False)
        object.__setattr__(self, "categories", cats)
        object.__setattr__(self, "periods", pers)
        object.__setattr__(self, "exposures", m)
        object.__setattr__(self, "losses", M)

    @property
    def k(self) -> int:
        return len(self.categories)

    @property
    def n(self) -> int:
        return len(self.periods)

    def category_index(self, label) -> int:
        try:
            return self.categories.index(str(label))
        except ValueError:
            raise DomainError(f"unknown category {label!r}") from None

    def select(self, categories) -> "Panel":
        """Sub-panel (or reordering) restricted to the given category labels."""
        idx = [self.category_index(c) for c in categories]
        return Panel(tuple(self.categories[i] for i in idx), self.periods,
                     self.exposures[idx], self.losses[idx])

    def year(self, j: int):
        """Exposures and losses of period ``j`` as two length-k arrays."""
        return self.exposures[:, j], self.losses[:, j]

    def __eq__(self, other):
        if not isinstance(other, Panel):
            return NotImplemented
        return (self.categories == other.categories and self.periods == other.periods
                and np.array_equal(self.exposures, other.exposures)
                and np.array_equal(self.losses, other.losses))

    def __repr__(self):
        return f"Panel(k={self.k}, n={self.n}, categories={self.categories})"


def _parse_count(text, row, column):
    t = text.strip()
    if not (t.isascii() and t.isdigit()):
        raise PanelParseError(f"non-integer count {text!r}", row=row, column=column)
    return int(t)


def parse_panel(stream) -> Panel:
    """Read a panel from CSV text or a text stream.

    Category and period order follow first appearance.  Duplicate cells,
    ragged panels, non-integer counts and ``losses > exposures`` raise
    :class:`PanelParseError` naming the offending row (1-based line number
    in the file) and column.  Leading ``#`` lines are skipped.
    """
    text = stream if isinstance(stream, str) else stream.read()
    if text.startswith("﻿"):
        text = text[1:]
    lines = text.splitlines()
    # leading '#' lines carry provenance and are not part of the table
    skip = 0
    while skip < len(lines) and lines[skip].startswith("#"):
        skip += 1
    reader = csv.reader(lines[skip:])
    try:
        header = next(reader)
    except StopIteration:
        raise PanelParseError("missing header", row=skip + 1) from None
    if tuple(h.strip() for h in header) != HEADER:
        raise PanelParseError(f"missing header, expected {','.join(HEADER)!r}", row=skip + 1)

    periods: list[str] = []
    categories: list[str] = []
    cells: dict[tuple[str, str], tuple[int, int]] = {}
    for rownum, fields in enumerate(reader, start=skip + 2):
        if not fields or all(not f.strip() for f in fields):
            continue
        if len(fields) != 4:
            raise PanelParseError(f"expected 4 fields, got {len(fields)}", row=rownum)
        period, category = fields[0].strip(), fields[1].strip()
        if not period:
            raise PanelParseError("empty label", row=rownum, column="period")
        if not category:
            raise PanelParseError("empty label", row=rownum, column="category")
        m = _parse_count(fields[2], rownum, "exposures")
        M = _parse_count(fields[3], rownum, "losses")
        if m < 1:
            raise PanelParseError("exposures must be at least 1", row=rownum,
                                  column="exposures")
        if M > m:
            raise PanelParseError("losses exceed exposures", row=rownum, column="losses")
        if (period, category) in cells:
            raise PanelParseError(f"duplicate cell ({period}, {category})", row=rownum,
                                  column="category")
        cells[(period, category)] = (m, M)
        if period not in periods:
            periods.append(period)
        if category not in categories:
            categories.append(category)

    if not cells:
        raise PanelParseError("no data rows", row=skip + 2)
    m_arr = np.zeros((len(categories), len(periods)), dtype=np.int64)
    M_arr = np.zeros_like(m_arr)
    for r, c in enumerate(categories):
        for j, p in enumerate(periods):
            if (p, c) not in cells:
                raise PanelParseError(
                    f"ragged panel: category {c!r} missing in period {p!r}",
                    row=len(lines), column="category")
            m_arr[r, j], M_arr[r, j] = cells[(p, c)]
    return Panel(tuple(categories), tuple(periods), m_arr, M_arr)


def read_panel(path) -> Panel:
    with open(path, encoding="utf-8", newline="") as fh:
        return parse_panel(fh.read())


def serialize_panel(panel: Panel, provenance: dict = None) -> str:
    """Write ``panel`` in the CSV format read by :func:`parse_panel`.

    ``provenance`` entries are written first as ``# key=value`` lines.
    """
    buf = io.StringIO()
    for key, value in (provenance or {}).items():
        buf.write(f"# {key}={value}\n")
    buf.write(",".join(HEADER) + "\n")
    for j, p in enumerate(panel.periods):
        for r, c in enumerate(panel.categories):
            buf.write(f"{p},{c},{panel.exposures[r, j]},{panel.losses[r, j]}\n")
    return buf.getvalue()


def observed_proportions(panel: Panel) -> np.ndarray:
    """Matrix of observed loss proportions ``losses / exposures``, shape (k, n)."""
    return panel.losses / panel.exposures
