"""Pseudo-box pool construction from proposal files.

Per image: drop proposals overlapping non-crowd base annotations, keep the
top-k by objectness, merge the surviving boxes of several sources by greedy
descending-objectness suppression, then append them to the annotation pool.
"""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from owdet.dataset import Dataset, GroundTruthAnnotation
from owdet.errors import InvariantError, ValidationError
from owdet.geometry import BBox, boxes_to_array, iou_matrix

DEFAULT_GT_FILTER_IOU = 0.5
DEFAULT_MERGE_IOU = 0.5


def objectness_score(centerness: float, iou: float) -> float:
    if not (0.0 <= centerness <= 1.0 and 0.0 <= iou <= 1.0):
        raise ValidationError(f"sub-scores must lie in [0, 1], got ({centerness}, {iou})")
    return math.sqrt(centerness * iou)


@dataclass(frozen=True)
class Proposal:
    image_id: int
    box: BBox
    objectness: float
    centerness_score: float | None = None
    iou_score: float | None = None
    source_tag: str = ""

    @classmethod
    def from_scores(
        cls,
        image_id: int,
        box: BBox,
        centerness: float | None = None,
        iou_pred: float | None = None,
        score: float | None = None,
        source_tag: str = "",
    ) -> Proposal:
        """Derive objectness from sub-scores when both exist, else take ``score``."""
        if centerness is not None and iou_pred is not None:
            obj = objectness_score(centerness, iou_pred)
        elif score is not None:
            obj = float(score)
        else:
            raise ValidationError("proposal needs either both sub-scores or a combined score")
        if not 0.0 <= obj <= 1.0:
            raise ValidationError(f"objectness {obj} outside [0, 1]")
        return cls(image_id, box, obj, centerness, iou_pred, source_tag)


@dataclass(frozen=True)
class PseudoBox:
    pseudo_id: int
    image_id: int
    box: BBox
    objectness: float
    source_tag: str = ""


@dataclass(frozen=True)
class AnnotationPool:
    base: tuple[GroundTruthAnnotation, ...]
    pseudo: tuple[PseudoBox, ...]
    gt_filter_threshold: float = DEFAULT_GT_FILTER_IOU

    def sizes(self) -> tuple[int, int]:
        return len(self.base), len(self.pseudo)


def _group(items: Iterable, key=lambda x: x.image_id) -> dict[int, list]:
    out: dict[int, list] = defaultdict(list)
    for it in items:
        out[key(it)].append(it)
    return out


def _max_gt_iou(boxes: Sequence[BBox], gts: Sequence[GroundTruthAnnotation]) -> np.ndarray:
    solid = [g.box for g in gts if not g.is_crowd]
    if not solid or not boxes:
        return np.zeros(len(boxes))
    return iou_matrix(boxes_to_array(boxes), boxes_to_array(solid)).max(axis=1)


def filter_against_gt(
    proposals: Sequence[Proposal],
    base: Sequence[GroundTruthAnnotation],
    threshold: float = DEFAULT_GT_FILTER_IOU,
) -> list[Proposal]:
    """Keep proposals whose max IoU with non-crowd base GT is ``<= threshold``."""
    if not 0.0 < threshold <= 1.0:
        raise ValidationError(f"GT filter threshold must lie in (0, 1], got {threshold}")
    gt_by_image = _group(base)
    keep = np.ones(len(proposals), dtype=bool)
    positions = _group(range(len(proposals)), key=lambda i: proposals[i].image_id)
    for image_id, idx in positions.items():
        gts = gt_by_image.get(image_id)
        if not gts:
            continue
        overlap = _max_gt_iou([proposals[i].box for i in idx], gts)
        keep[idx] = overlap <= threshold
    return [p for p, k in zip(proposals, keep) if k]


def _ranked(items: Sequence, score=lambda x: x.objectness) -> list:
    # stable sort: equal scores keep input order
    return sorted(items, key=lambda x: -score(x))


def top_k(proposals: Sequence[Proposal], k: int) -> list[PseudoBox]:
    """Highest-objectness ``k`` proposals per image, images in first-seen order.

    ``pseudo_id`` is a running index over the output.
    """
    if k < 1:
        raise ValidationError(f"k must be >= 1, got {k}")
    out: list[PseudoBox] = []
    for image_id, group in _group(proposals).items():
        for p in _ranked(group)[:k]:
            out.append(PseudoBox(len(out) + 1, image_id, p.box, p.objectness, p.source_tag))
    return out


def _suppress(boxes: Sequence[PseudoBox], iou_threshold: float) -> list[int]:
    """Greedy NMS over boxes already ordered by priority; returns kept positions."""
    if not boxes:
        return []
    ious = iou_matrix(boxes_to_array([b.box for b in boxes]), boxes_to_array([b.box for b in boxes]))
    kept: list[int] = []
    for i in range(len(boxes)):
        if not kept or ious[i, kept].max() <= iou_threshold:
            kept.append(i)
    return kept


def canonical_order(boxes: Iterable[PseudoBox]) -> list[PseudoBox]:
    """Sort by ``(image_id, -objectness)``; ties keep their incoming order."""
    return sorted(boxes, key=lambda b: (b.image_id, -b.objectness))


def merge_sources(
    sources: Sequence[tuple[str, Sequence[PseudoBox]]],
    iou_threshold: float = DEFAULT_MERGE_IOU,
) -> list[PseudoBox]:
    """Pool every source's boxes per image and drop the lower-objectness box of
    any pair overlapping above ``iou_threshold``, greedily from the top.

    Output is in canonical order and renumbered from 1.
    """
    pooled: dict[int, list[PseudoBox]] = defaultdict(list)
    for tag, boxes in sources:
        for b in boxes:
            pooled[b.image_id].append(b if b.source_tag else PseudoBox(b.pseudo_id, b.image_id, b.box, b.objectness, tag))
    merged: list[PseudoBox] = []
    for image_id in sorted(pooled):
        ranked = _ranked(pooled[image_id])
        merged.extend(ranked[i] for i in _suppress(ranked, iou_threshold))
    return [
        PseudoBox(n, b.image_id, b.box, b.objectness, b.source_tag)
        for n, b in enumerate(canonical_order(merged), start=1)
    ]


def violations(pool_pseudo: Sequence[PseudoBox], base: Sequence[GroundTruthAnnotation], threshold: float) -> list[PseudoBox]:
    gt_by_image = _group(base)
    bad = []
    for image_id, group in _group(pool_pseudo).items():
        gts = gt_by_image.get(image_id)
        if not gts:
            continue
        overlap = _max_gt_iou([b.box for b in group], gts)
        bad.extend(b for b, o in zip(group, overlap) if o > threshold)
    return bad


def build_pool(
    ds_train: Dataset,
    merged: Sequence[PseudoBox],
    gt_filter_threshold: float = DEFAULT_GT_FILTER_IOU,
) -> AnnotationPool:
    bad = violations(merged, ds_train.annotations, gt_filter_threshold)
    if bad:
        ids = ", ".join(str(b.pseudo_id) for b in bad[:10])
        raise InvariantError(
            f"{len(bad)} pseudo box(es) overlap base annotations above IoU "
            f"{gt_filter_threshold} (pseudo ids {ids})"
        )
    return AnnotationPool(tuple(ds_train.annotations), tuple(merged), gt_filter_threshold)


def pseudo_label(
    ds_train: Dataset,
    sources: Sequence[tuple[str, Sequence[Proposal]]],
    k: int = 1,
    gt_filter_iou: float = DEFAULT_GT_FILTER_IOU,
    merge_iou: float = DEFAULT_MERGE_IOU,
) -> AnnotationPool:
    """Full pipeline: filter, top-k, merge and pool, for each source in order."""
    selected = []
    for tag, proposals in sources:
        kept = filter_against_gt(proposals, ds_train.annotations, gt_filter_iou)
        boxes = [PseudoBox(b.pseudo_id, b.image_id, b.box, b.objectness, tag) for b in top_k(kept, k)]
        selected.append((tag, boxes))
    merged = merge_sources(selected, merge_iou)
    return build_pool(ds_train, merged, gt_filter_iou)
