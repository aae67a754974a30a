"""Diagnostics: top-1 overlap matrices, pseudo-box size histograms, tables."""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from owdet.ensemble import TopOne, pairwise_overlap
from owdet.errors import ValidationError
from owdet.evaluation import EvalReport
from owdet.pseudolabel import PseudoBox

DEFAULT_SIZE_EDGES = (0.0, 16.0, 32.0, 64.0, 96.0, 128.0, 192.0, 256.0, 512.0)


@dataclass(frozen=True)
class OverlapMatrix:
    source_tags: tuple[str, ...]
    values: tuple[tuple[float | None, ...], ...]  # row i -> column j is overlap(i -> j)


def overlap_matrix(sources: Sequence[tuple[str, TopOne]], iou_t: float = 0.5) -> OverlapMatrix:
    if len(sources) < 2:
        raise ValidationError("overlap matrix needs at least two sources")
    rows = tuple(
        tuple(pairwise_overlap(a, b, iou_t) for _, b in sources) for _, a in sources
    )
    return OverlapMatrix(tuple(t for t, _ in sources), rows)


@dataclass(frozen=True)
class SizeHistogram:
    source_tag: str
    edges: tuple[float, ...]
    counts: tuple[int, ...]  # len(edges) - 1 bins
    overflow: int = 0

    @property
    def total(self) -> int:
        return sum(self.counts) + self.overflow


def size_histogram(
    boxes: Sequence[PseudoBox],
    edges: Sequence[float] = DEFAULT_SIZE_EDGES,
    source_tag: str = "",
) -> SizeHistogram:
    """Bin boxes by ``sqrt(area)``: half-open bins, the last one closed.

    Boxes beyond the final edge go to ``overflow``.
    """
    edges = tuple(float(e) for e in edges)
    if len(edges) < 2 or any(b <= a for a, b in zip(edges, edges[1:])):
        raise ValidationError(f"histogram edges must be strictly increasing, got {edges}")
    sizes = np.array([math.sqrt(b.box.width * b.box.height) for b in boxes], dtype=np.float64)
    e = np.asarray(edges)
    idx = np.searchsorted(e, sizes, side="right") - 1
    idx[sizes == e[-1]] = len(edges) - 2
    inside = (idx >= 0) & (idx < len(edges) - 1)
    counts = np.bincount(idx[inside], minlength=len(edges) - 1)
    return SizeHistogram(source_tag, edges, tuple(int(c) for c in counts), int((~inside).sum()))


# ------------------------------------------------------------------ tables

DEFAULT_COLUMNS = (
    ("AR_A", "ar_all"),
    ("AR_N", "ar_novel"),
    ("AR_N^s", "ar_novel_small"),
    ("AR_N^m", "ar_novel_medium"),
    ("AR_N^l", "ar_novel_large"),
)


@dataclass(frozen=True)
class TableLayout:
    columns: tuple[tuple[str, str], ...] = DEFAULT_COLUMNS  # (header, report attribute)
    row_labels: tuple[str, ...] | None = None
    mark_max: bool = True


def _pct(v: float | None) -> str:
    return "-" if v is None else f"{100.0 * v:.1f}"


def render_table(reports: Sequence[EvalReport], layout: TableLayout = TableLayout()) -> str:
    """Markdown table, values in percent to one decimal; column maxima in bold."""
    if not reports:
        raise ValidationError("no reports to render")
    labels = layout.row_labels or tuple(r.dataset for r in reports)
    if len(labels) != len(reports):
        raise ValidationError(f"{len(labels)} row labels for {len(reports)} reports")
    cfgs = {r.config for r in reports}
    if len(cfgs) > 1:
        raise ValidationError("reports were computed with different configurations")
    for header, attr in layout.columns:
        if not hasattr(reports[0], attr):
            raise ValidationError(f"column {header!r}: reports have no field {attr!r}")

    cells = [[_pct(getattr(r, attr)) for _, attr in layout.columns] for r in reports]
    if layout.mark_max:
        for j in range(len(layout.columns)):
            vals = [float(row[j]) for row in cells if row[j] != "-"]
            if len(vals) > 1:
                top = max(vals)
                for row in cells:
                    if row[j] != "-" and float(row[j]) == top:
                        row[j] = f"**{row[j]}**"

    header = ["Method"] + [h for h, _ in layout.columns]
    rows = [header] + [[lab] + row for lab, row in zip(labels, cells)]
    widths = [max(len(r[j]) for r in rows) for j in range(len(header))]
    fmt = lambda r: "| " + " | ".join(c.ljust(w) for c, w in zip(r, widths)) + " |"  # noqa: E731
    sep = "|" + "|".join("-" * (w + 2) for w in widths) + "|"
    return "\n".join([fmt(rows[0]), sep] + [fmt(r) for r in rows[1:]]) + "\n"


def parse_table(text: str) -> dict[str, dict[str, float | None]]:
    """Inverse of :func:`render_table`: ``{row label: {header: ratio}}``."""
    lines = [ln for ln in text.strip().splitlines() if ln.startswith("|")]
    split = lambda ln: [c.strip() for c in ln.strip().strip("|").split("|")]  # noqa: E731
    header = split(lines[0])[1:]
    out: dict[str, dict[str, float | None]] = {}
    for ln in lines[2:]:
        cells = split(ln)
        vals = {}
        for h, c in zip(header, cells[1:]):
            c = re.sub(r"\*", "", c)
            vals[h] = None if c == "-" else float(c) / 100.0
        out[cells[0]] = vals
    return out
