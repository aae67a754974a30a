"""Greedy ordering of pseudo-label sources by utility x uniqueness."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

from owdet.errors import ValidationError
from owdet.evaluation import UNDEFINED, EvalReport
from owdet.geometry import BBox, iou
from owdet.pseudolabel import PseudoBox

TopOne = Mapping[int, BBox]  # image_id -> highest-objectness pseudo box


def top1_pseudo(boxes: Sequence[PseudoBox]) -> list[PseudoBox]:
    """Highest-objectness box per image, by image id; earlier boxes win ties."""
    best: dict[int, PseudoBox] = {}
    for b in boxes:
        cur = best.get(b.image_id)
        if cur is None or b.objectness > cur.objectness:
            best[b.image_id] = b
    return [best[i] for i in sorted(best)]


def top1_boxes(boxes: Sequence[PseudoBox]) -> dict[int, BBox]:
    return {b.image_id: b.box for b in top1_pseudo(boxes)}


def pairwise_overlap(a: TopOne, b: TopOne, iou_t: float = 0.5) -> float | None:
    """Fraction of shared images where the two top-1 boxes reach ``iou_t`` IoU.

    Images present in only one source are skipped; ``None`` if none are shared.
    """
    common = sorted(set(a) & set(b))
    if not common:
        return UNDEFINED
    hits = sum(1 for i in common if iou(a[i], b[i]) >= iou_t)
    return hits / len(common)


def utility(holdout_report: EvalReport, baseline: float | EvalReport) -> float:
    """Holdout AR_N gain over the baseline detector."""
    if isinstance(baseline, EvalReport):
        if (baseline.dataset, baseline.split) != (holdout_report.dataset, holdout_report.split):
            raise ValidationError(
                f"report is for {holdout_report.dataset}/{holdout_report.split} but baseline is "
                f"for {baseline.dataset}/{baseline.split}"
            )
        baseline = baseline.ar_novel
    return holdout_report.ar_novel - float(baseline)


@dataclass(frozen=True)
class SourceCandidate:
    source_tag: str
    top1: TopOne
    utility: float


@dataclass(frozen=True)
class Selection:
    source_tag: str
    utility: float
    uniqueness: float
    score: float


def greedy_selections(candidates: Sequence[SourceCandidate], iou_t: float = 0.5) -> list[Selection]:
    """Full selection trace.

    The first pick is the highest-utility source. Afterwards each remaining
    source scores ``utility * (1 - max overlap with any selected source)``.
    Sources sharing no images with the selection count as fully unique.
    Ties go to the lexicographically smaller tag.
    """
    if not candidates:
        raise ValidationError("greedy ordering needs at least one source")
    tags = [c.source_tag for c in candidates]
    if len(set(tags)) != len(tags):
        raise ValidationError(f"duplicate source tags: {tags}")
    remaining = {c.source_tag: c for c in candidates}
    selected: list[SourceCandidate] = []
    trace: list[Selection] = []
    while remaining:
        scored = []
        for tag in sorted(remaining):
            c = remaining[tag]
            overlaps = [pairwise_overlap(c.top1, s.top1, iou_t) for s in selected]
            worst = max((o for o in overlaps if o is not None), default=0.0)
            uniq = 1.0 - worst
            scored.append((c.utility * uniq, tag, uniq))
        best_score = max(s for s, _, _ in scored)
        score, tag, uniq = next(t for t in scored if t[0] == best_score)
        c = remaining.pop(tag)
        selected.append(c)
        trace.append(Selection(tag, c.utility, uniq, score))
    return trace


def greedy_order(candidates: Sequence[SourceCandidate], iou_t: float = 0.5) -> list[str]:
    return [s.source_tag for s in greedy_selections(candidates, iou_t)]
