"""Open-world Average Recall.

Matching is COCO-style greedy: detections are visited in descending score
order (ties keep input order) and each takes the highest-IoU unmatched
non-crowd ground truth at or above the IoU threshold. A detection that finds
no such box but overlaps a crowd region at the threshold is ignored: it
neither counts as recall nor consumes budget. Every other detection consumes
one unit of the per-image budget ``k``.

For novel-class recall, detections whose max IoU with any base-class box is
``>= base_association_iou`` are dropped before budgeting.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from owdet.dataset import ClassSplit, Dataset, GroundTruthAnnotation
from owdet.errors import ValidationError
from owdet.geometry import BBox, SizeClass, iou_matrix, size_class

log = logging.getLogger(__name__)

DEFAULT_IOU_THRESHOLDS = tuple(round(0.5 + 0.05 * i, 2) for i in range(10))
UNDEFINED = None  # marker for ratios with a zero denominator
_CHUNK = 512


@dataclass(frozen=True)
class Detection:
    image_id: int
    box: BBox
    score: float


@dataclass(frozen=True)
class EvalConfig:
    budget: int = 100
    iou_thresholds: tuple[float, ...] = DEFAULT_IOU_THRESHOLDS
    base_association_iou: float = 0.5
    size_strata: bool = True
    per_class_budget: int = 5

    def __post_init__(self) -> None:
        object.__setattr__(self, "iou_thresholds", tuple(float(t) for t in self.iou_thresholds))
        t = self.iou_thresholds
        if not t or any(not 0.0 < x <= 1.0 for x in t) or any(b <= a for a, b in zip(t, t[1:])):
            raise ValidationError(f"IoU thresholds must be strictly increasing in (0, 1], got {t}")
        if self.budget < 1 or self.per_class_budget < 1:
            raise ValidationError("budgets must be >= 1")
        if not 0.0 < self.base_association_iou <= 1.0:
            raise ValidationError("base_association_iou must lie in (0, 1]")

    def with_budget(self, k: int) -> EvalConfig:
        return EvalConfig(k, self.iou_thresholds, self.base_association_iou, self.size_strata, self.per_class_budget)


@dataclass(frozen=True)
class RecallCounts:
    """Matched non-crowd GT per IoU threshold, over ``total`` non-crowd GT."""

    matched: tuple[int, ...]
    total: int

    @property
    def recalls(self) -> tuple[float, ...]:
        if self.total == 0:
            return tuple(0.0 for _ in self.matched)
        return tuple(m / self.total for m in self.matched)

    @property
    def ar(self) -> float:
        if self.total == 0:
            return 0.0
        return float(np.mean(np.asarray(self.matched, dtype=np.float64) / self.total))

    def __add__(self, other: RecallCounts) -> RecallCounts:
        return RecallCounts(tuple(a + b for a, b in zip(self.matched, other.matched)), self.total + other.total)


@dataclass(frozen=True)
class EvalReport:
    dataset: str
    split: str
    config: EvalConfig
    all: RecallCounts
    novel: RecallCounts
    all_strata: Mapping[str, RecallCounts] = field(default_factory=dict)
    novel_strata: Mapping[str, RecallCounts] = field(default_factory=dict)
    per_class_ar: Mapping[int, float] = field(default_factory=dict)
    warnings: tuple[str, ...] = ()

    @property
    def ar_all(self) -> float:
        return self.all.ar

    @property
    def ar_novel(self) -> float:
        return self.novel.ar

    def stratum_ar(self, stratum: str, novel: bool = True) -> float | None:
        strata = self.novel_strata if novel else self.all_strata
        return strata[stratum].ar if stratum in strata else UNDEFINED

    @property
    def ar_novel_small(self):
        return self.stratum_ar(SizeClass.SMALL.value)

    @property
    def ar_novel_medium(self):
        return self.stratum_ar(SizeClass.MEDIUM.value)

    @property
    def ar_novel_large(self):
        return self.stratum_ar(SizeClass.LARGE.value)


# ------------------------------------------------------------------ matching


@dataclass
class _ImageProblem:
    det_boxes: np.ndarray  # (n, 4), already in rank order
    gt_boxes: np.ndarray  # (g, 4) non-crowd
    crowd_boxes: np.ndarray  # (c, 4)


def _prepare(p: _ImageProblem, thr_min: float):
    """Reduce one image to its relevant detections.

    A detection is relevant if it reaches ``thr_min`` IoU with any GT or crowd
    box; all others can only consume budget at every threshold.
    """
    ious = iou_matrix(p.det_boxes, p.gt_boxes)
    crowd = iou_matrix(p.det_boxes, p.crowd_boxes)
    crowd_max = crowd.max(axis=1) if crowd.shape[1] else np.zeros(len(p.det_boxes))
    best = ious.max(axis=1) if ious.shape[1] else np.zeros(len(p.det_boxes))
    rel = np.flatnonzero((best >= thr_min) | (crowd_max >= thr_min))
    skipped_before = rel - np.arange(len(rel))
    return ious[rel], crowd_max[rel], skipped_before


def _match_chunk(problems: Sequence[_ImageProblem], thresholds: np.ndarray, k: int) -> list[np.ndarray]:
    """Greedy matching of many images in lockstep.

    Returns, per image, a ``(T, g)`` bool array of matched non-crowd GT.
    """
    T = len(thresholds)
    prepared = [_prepare(p, float(thresholds[0])) for p in problems]
    C = len(problems)
    G = max((p.gt_boxes.shape[0] for p in problems), default=0)
    R = max((len(s) for _, _, s in prepared), default=0)
    matched = np.zeros((C, T, G), dtype=bool)
    if G == 0 or R == 0:
        return [matched[c, :, : p.gt_boxes.shape[0]] for c, p in enumerate(problems)]

    iou_pad = np.full((C, R, G), -1.0)
    crowd_pad = np.full((C, R), -1.0)
    skip_pad = np.full((C, R), k, dtype=np.int64)  # padded rows are never active
    for c, (ious, crowd_max, skipped) in enumerate(prepared):
        r, g = ious.shape
        iou_pad[c, :r, :g] = ious
        crowd_pad[c, :r] = crowd_max
        skip_pad[c, :r] = skipped

    thr = thresholds[None, :, None]
    consumed = np.zeros((C, T), dtype=np.int64)
    for r in range(R):
        active = (skip_pad[:, r, None] + consumed) < k  # (C, T)
        if not active.any():
            break
        row = iou_pad[:, r, :]  # (C, G)
        elig = (row[:, None, :] >= thr) & ~matched & active[:, :, None]
        has = elig.any(axis=2)
        if has.any():
            pick = np.where(elig, row[:, None, :], -np.inf).argmax(axis=2)
            ci, ti = np.nonzero(has)
            matched[ci, ti, pick[ci, ti]] = True
        crowd_hit = ~has & (crowd_pad[:, r, None] >= thresholds[None, :])
        consumed += active & ~crowd_hit
    return [matched[c, :, : p.gt_boxes.shape[0]] for c, p in enumerate(problems)]


def match_images(
    problems: Sequence[_ImageProblem],
    thresholds: Sequence[float],
    k: int,
    threads: int = 1,
) -> list[np.ndarray]:
    thresholds = np.asarray(thresholds, dtype=np.float64)
    chunks = [problems[i : i + _CHUNK] for i in range(0, len(problems), _CHUNK)]
    if threads > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(lambda ch: _match_chunk(ch, thresholds, k), chunks))
    else:
        results = [_match_chunk(ch, thresholds, k) for ch in chunks]
    return [m for chunk in results for m in chunk]


# --------------------------------------------------------------- grouping


class _DetectionIndex:
    """Detections grouped per image, each group in rank order."""

    def __init__(self, dets: Sequence[Detection]):
        n = len(dets)
        image_ids = np.fromiter((d.image_id for d in dets), dtype=np.int64, count=n)
        scores = np.fromiter((d.score for d in dets), dtype=np.float64, count=n)
        if n and not np.isfinite(scores).all():
            raise ValidationError("detection scores must be finite")
        boxes = np.array([d.box.as_tuple() for d in dets], dtype=np.float64).reshape(n, 4)
        order = np.lexsort((np.arange(n), -scores, image_ids))
        ids_sorted = image_ids[order]
        starts = np.flatnonzero(np.r_[True, ids_sorted[1:] != ids_sorted[:-1]]) if n else np.zeros(0, int)
        ends = np.r_[starts[1:], n] if n else np.zeros(0, int)
        self._boxes = boxes[order]
        self._slices = {int(ids_sorted[s]): (int(s), int(e)) for s, e in zip(starts, ends)}

    def boxes(self, image_id: int) -> np.ndarray:
        s = self._slices.get(image_id)
        if s is None:
            return np.zeros((0, 4))
        return self._boxes[s[0] : s[1]]

    @property
    def image_ids(self) -> Iterable[int]:
        return self._slices.keys()


def _box_array(anns: Sequence[GroundTruthAnnotation]) -> np.ndarray:
    if not anns:
        return np.zeros((0, 4))
    return np.array([a.box.as_tuple() for a in anns], dtype=np.float64)


def _exclude_base(det_boxes: np.ndarray, base: Sequence[GroundTruthAnnotation], thr: float) -> np.ndarray:
    if not base or det_boxes.shape[0] == 0:
        return det_boxes
    keep = iou_matrix(det_boxes, _box_array(base)).max(axis=1) < thr
    return det_boxes[keep]


def _evaluate(
    index: _DetectionIndex,
    gts_by_image: Mapping[int, Sequence[GroundTruthAnnotation]],
    k: int,
    thresholds: Sequence[float],
    base_by_image: Mapping[int, Sequence[GroundTruthAnnotation]] | None = None,
    base_iou: float = 0.5,
    threads: int = 1,
) -> tuple[list[GroundTruthAnnotation], np.ndarray]:
    """Match and return the evaluated non-crowd GT with a ``(T, n_gt)`` matched array."""
    problems, solids = [], []
    for image_id in sorted(gts_by_image):
        gts = gts_by_image[image_id]
        solid = [g for g in gts if not g.is_crowd]
        if not solid:
            continue
        dets = index.boxes(image_id)
        if base_by_image is not None:
            dets = _exclude_base(dets, base_by_image.get(image_id, ()), base_iou)
        problems.append(_ImageProblem(dets, _box_array(solid), _box_array([g for g in gts if g.is_crowd])))
        solids.extend(solid)
    per_image = match_images(problems, thresholds, k, threads)
    T = len(thresholds)
    matched = np.concatenate(per_image, axis=1) if per_image else np.zeros((T, 0), dtype=bool)
    return solids, matched


def _counts(matched: np.ndarray, mask: np.ndarray | None = None) -> RecallCounts:
    if mask is not None:
        matched = matched[:, mask]
    return RecallCounts(tuple(int(x) for x in matched.sum(axis=1)), int(matched.shape[1]))


def _strata(solids: Sequence[GroundTruthAnnotation], matched: np.ndarray) -> dict[str, RecallCounts]:
    classes = np.array([size_class(g.box).value for g in solids], dtype=object)
    return {s.value: _counts(matched, classes == s.value) for s in SizeClass}


def _group(anns: Iterable[GroundTruthAnnotation]) -> dict[int, list[GroundTruthAnnotation]]:
    out: dict[int, list[GroundTruthAnnotation]] = {}
    for a in anns:
        out.setdefault(a.image_id, []).append(a)
    return out


# ------------------------------------------------------------------ public ops


def recall_single(
    dets: Sequence[Detection],
    gts: Sequence[GroundTruthAnnotation],
    iou_t: float,
    k: int,
) -> tuple[int, int]:
    """``(matched, total)`` non-crowd GT for one image at one IoU threshold."""
    solid = [g for g in gts if not g.is_crowd]
    order = sorted(range(len(dets)), key=lambda i: -dets[i].score)
    det_boxes = np.array([dets[i].box.as_tuple() for i in order], dtype=np.float64).reshape(-1, 4)
    problem = _ImageProblem(det_boxes, _box_array(solid), _box_array([g for g in gts if g.is_crowd]))
    (m,) = match_images([problem], [iou_t], k)
    return int(m.sum()), len(solid)


def recall_counts(dets: Sequence[Detection], gts: Sequence[GroundTruthAnnotation], cfg: EvalConfig, threads: int = 1) -> RecallCounts:
    solids, matched = _evaluate(_DetectionIndex(dets), _group(gts), cfg.budget, cfg.iou_thresholds, threads=threads)
    return _counts(matched)


def average_recall(dets: Sequence[Detection], gts: Sequence[GroundTruthAnnotation], cfg: EvalConfig = EvalConfig()) -> float:
    """Mean over IoU thresholds of pooled recall at budget ``cfg.budget``."""
    counts = recall_counts(dets, gts, cfg)
    if counts.total == 0:
        log.warning("average_recall: no non-crowd ground truth; AR defined as 0")
    return counts.ar


def _split_gts(ds: Dataset, split: ClassSplit):
    base = [a for a in ds.annotations if a.category_id in split.base_category_ids]
    novel = [a for a in ds.annotations if a.category_id in split.novel_category_ids]
    return _group(base), novel


def ar_novel_counts(
    dets: Sequence[Detection] | _DetectionIndex,
    ds: Dataset,
    split: ClassSplit,
    cfg: EvalConfig = EvalConfig(),
    threads: int = 1,
    category_id: int | None = None,
    budget: int | None = None,
) -> tuple[RecallCounts, dict[str, RecallCounts]]:
    """Novel-class recall with base-associated detections excluded from the budget.

    ``category_id`` restricts the ground truth to one novel class (the base
    exclusion is unchanged). Returns overall counts and size strata.
    """
    index = dets if isinstance(dets, _DetectionIndex) else _DetectionIndex(dets)
    base_by_image, novel = _split_gts(ds, split)
    if category_id is not None:
        novel = [a for a in novel if a.category_id == category_id]
    solids, matched = _evaluate(
        index, _group(novel), budget or cfg.budget, cfg.iou_thresholds,
        base_by_image, cfg.base_association_iou, threads,
    )
    return _counts(matched), (_strata(solids, matched) if cfg.size_strata else {})


def ar_novel(dets: Sequence[Detection], ds: Dataset, split: ClassSplit, cfg: EvalConfig = EvalConfig()) -> float:
    return ar_novel_counts(dets, ds, split, cfg)[0].ar


def per_class_ar(
    dets: Sequence[Detection] | _DetectionIndex,
    ds: Dataset,
    split: ClassSplit,
    cfg: EvalConfig = EvalConfig(),
    threads: int = 1,
    budget: int | None = None,
) -> dict[int, float]:
    """Novel-class AR for each class separately (budget ``cfg.per_class_budget``).

    Classes without non-crowd ground truth are omitted.
    """
    index = dets if isinstance(dets, _DetectionIndex) else _DetectionIndex(dets)
    k = budget or cfg.per_class_budget
    present = sorted({a.category_id for a in ds.annotations if a.category_id in split.novel_category_ids and not a.is_crowd})
    no_strata = EvalConfig(cfg.budget, cfg.iou_thresholds, cfg.base_association_iou, False, cfg.per_class_budget)
    return {
        c: ar_novel_counts(index, ds, split, no_strata, threads, category_id=c, budget=k)[0].ar
        for c in present
    }


def relative_diff(ar_x: Mapping[int, float], ar_ref: Mapping[int, float]) -> dict[int, float | None]:
    """``(ar_x - ar_ref) / ar_ref`` per shared class; ``None`` where ``ar_ref`` is 0."""
    out: dict[int, float | None] = {}
    for c in sorted(set(ar_x) & set(ar_ref)):
        ref = ar_ref[c]
        out[c] = UNDEFINED if ref == 0 else (ar_x[c] - ref) / ref
    return out


def evaluate(
    dets: Sequence[Detection],
    ds: Dataset,
    split: ClassSplit,
    cfg: EvalConfig = EvalConfig(),
    threads: int = 1,
    with_per_class: bool = True,
) -> EvalReport:
    """Full report: AR_A, AR_N, size strata and per-novel-class AR."""
    index = _DetectionIndex(dets)
    warnings = []
    known = set(ds.image_ids)
    stray = [i for i in index.image_ids if i not in known]
    if stray:
        warnings.append(f"{len(stray)} image id(s) in detections are not in the dataset and were ignored")

    solids, matched = _evaluate(index, _group(ds.annotations), cfg.budget, cfg.iou_thresholds, threads=threads)
    all_counts = _counts(matched)
    all_strata = _strata(solids, matched) if cfg.size_strata else {}
    novel, novel_strata = ar_novel_counts(index, ds, split, cfg, threads)
    per_class = per_class_ar(index, ds, split, cfg, threads) if with_per_class else {}
    if all_counts.total == 0:
        warnings.append("no non-crowd ground truth: AR_A defined as 0")
    if novel.total == 0:
        warnings.append("no non-crowd novel ground truth: AR_N defined as 0")
    return EvalReport(ds.name, split.name, cfg, all_counts, novel, all_strata, novel_strata, per_class, tuple(warnings))
