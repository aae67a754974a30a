"""Candidate-to-target assignment and the three detector training losses.

Losses are evaluated, never differentiated:

* ``loss_std``  – BCE classification over all candidates + L1 box regression
  over base-matched candidates.
* ``loss_oln``  – L1 regression + L1 objectness over base-matched candidates
  only; background is ignored entirely.
* ``loss_good`` – same form as ``loss_oln`` over base- and pseudo-matched
  candidates.

Box regression is the mean absolute corner error, x coordinates divided by
image width and y by image height. Empty sums contribute 0.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from owdet.errors import ValidationError
from owdet.geometry import BBox, boxes_to_array, iou, iou_matrix
from owdet.pseudolabel import AnnotationPool

DEFAULT_POSITIVE_IOU = 0.5
_EPS = 1e-12


class Label(str, enum.Enum):
    BASE = "base"
    PSEUDO = "pseudo"
    BACKGROUND = "background"


@dataclass(frozen=True)
class Candidate:
    candidate_id: int
    box: BBox
    predicted_label_prob: float
    predicted_box: BBox
    predicted_objectness: float

    def __post_init__(self) -> None:
        for name in ("predicted_label_prob", "predicted_objectness"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValidationError(f"candidate {self.candidate_id}: {name}={v} outside [0, 1]")


@dataclass(frozen=True)
class Assignment:
    candidates: tuple[Candidate, ...]
    labels: tuple[Label, ...]
    matched_ids: tuple[int | None, ...]
    target_boxes: tuple[BBox | None, ...]
    p_star: tuple[int, ...]
    o_star: tuple[float | None, ...]
    image_size: tuple[float, float] = (1.0, 1.0)

    def indices(self, *labels: Label) -> list[int]:
        return [i for i, lab in enumerate(self.labels) if lab in labels]

    @property
    def base_set(self) -> list[int]:
        return self.indices(Label.BASE)

    @property
    def pseudo_set(self) -> list[int]:
        return self.indices(Label.PSEUDO)

    @property
    def n_cls(self) -> int:
        return len(self.candidates)

    def n_reg(self, include_pseudo: bool = False) -> int:
        if include_pseudo:
            return len(self.indices(Label.BASE, Label.PSEUDO))
        return len(self.base_set)


def centerness(location: tuple[float, float], target: BBox) -> float:
    """``sqrt(min(l,r)/max(l,r) * min(t,b)/max(t,b))`` for a point inside ``target``."""
    x, y = location
    if not (target.x1 <= x <= target.x2 and target.y1 <= y <= target.y2):
        raise ValidationError(f"location {location} lies outside target {target.as_tuple()}")
    left, right = x - target.x1, target.x2 - x
    top, bottom = y - target.y1, target.y2 - y
    if max(left, right) <= 0.0 or max(top, bottom) <= 0.0:
        return 0.0
    ratio = (min(left, right) / max(left, right)) * (min(top, bottom) / max(top, bottom))
    return math.sqrt(ratio)


def objectness_target(candidate_box: BBox, matched: BBox) -> float:
    """``sqrt(centerness * IoU)``; centerness at the candidate's center, 0 if outside."""
    try:
        c = centerness(candidate_box.center, matched)
    except ValidationError:
        return 0.0
    return math.sqrt(c * iou(candidate_box, matched))


def assign(
    candidates: Sequence[Candidate],
    pool: AnnotationPool,
    iou_positive_threshold: float = DEFAULT_POSITIVE_IOU,
    image_id: int | None = None,
    image_size: tuple[float, float] = (1.0, 1.0),
) -> Assignment:
    """Match each candidate to its highest-IoU pool box (base or pseudo).

    Candidates below ``iou_positive_threshold`` become background. Equal IoU
    prefers base over pseudo, then pool order. Crowd regions are not targets.
    ``image_id`` restricts the pool to one image; ``None`` uses all of it.
    """
    if not 0.0 < iou_positive_threshold <= 1.0:
        raise ValidationError(f"positive IoU threshold must lie in (0, 1], got {iou_positive_threshold}")
    base = [a for a in pool.base if not a.is_crowd and (image_id is None or a.image_id == image_id)]
    pseudo = [p for p in pool.pseudo if image_id is None or p.image_id == image_id]
    targets = [a.box for a in base] + [p.box for p in pseudo]
    target_ids = [a.annotation_id for a in base] + [p.pseudo_id for p in pseudo]
    n_base = len(base)

    ious = iou_matrix(boxes_to_array([c.box for c in candidates]), boxes_to_array(targets))
    labels, matched, tboxes, p_star, o_star = [], [], [], [], []
    for i, cand in enumerate(candidates):
        j = int(np.argmax(ious[i])) if targets else -1  # first max: base precedes pseudo
        if j < 0 or ious[i, j] < iou_positive_threshold:
            labels.append(Label.BACKGROUND)
            matched.append(None)
            tboxes.append(None)
            p_star.append(0)
            o_star.append(None)
            continue
        is_base = j < n_base
        labels.append(Label.BASE if is_base else Label.PSEUDO)
        matched.append(target_ids[j])
        tboxes.append(targets[j])
        p_star.append(1 if is_base else 0)
        o_star.append(objectness_target(cand.box, targets[j]))
    return Assignment(
        tuple(candidates), tuple(labels), tuple(matched), tuple(tboxes),
        tuple(p_star), tuple(o_star), (float(image_size[0]), float(image_size[1])),
    )


def _reg_terms(a: Assignment, idx: list[int]) -> np.ndarray:
    if not idx:
        return np.zeros(0)
    pred = boxes_to_array([a.candidates[i].predicted_box for i in idx])
    tgt = boxes_to_array([a.target_boxes[i] for i in idx])
    w, h = a.image_size
    scale = np.array([w, h, w, h], dtype=np.float64)
    return (np.abs(pred - tgt) / scale).mean(axis=1)


def _bce_terms(a: Assignment) -> np.ndarray:
    p = np.array([c.predicted_label_prob for c in a.candidates], dtype=np.float64)
    t = np.array(a.p_star, dtype=bool)
    return np.where(t, -np.log(np.maximum(p, _EPS)), -np.log(np.maximum(1.0 - p, _EPS)))


def _obj_terms(a: Assignment, idx: list[int]) -> np.ndarray:
    o = np.array([a.candidates[i].predicted_objectness for i in idx], dtype=np.float64)
    t = np.array([a.o_star[i] for i in idx], dtype=np.float64)
    return np.abs(o - t)


def _mean(terms: np.ndarray) -> float:
    return float(terms.sum() / terms.size) if terms.size else 0.0


def loss_std(a: Assignment) -> tuple[float, float, float]:
    """``(loss_cls, loss_reg, total)`` for the closed-world detector loss."""
    loss_cls = _mean(_bce_terms(a)) if a.candidates else 0.0
    loss_reg = _mean(_reg_terms(a, a.base_set))
    return loss_cls, loss_reg, loss_cls + loss_reg


def _objectness_loss(a: Assignment, idx: list[int]) -> tuple[float, float, float]:
    loss_reg = _mean(_reg_terms(a, idx))
    loss_obj = _mean(_obj_terms(a, idx))
    return loss_reg, loss_obj, loss_reg + loss_obj


def loss_oln(a: Assignment) -> tuple[float, float, float]:
    """``(loss_reg, loss_obj, total)`` over base-matched candidates."""
    return _objectness_loss(a, a.base_set)


def loss_good(a: Assignment) -> tuple[float, float, float]:
    """``(loss_reg, loss_obj, total)`` over base- and pseudo-matched candidates."""
    return _objectness_loss(a, a.indices(Label.BASE, Label.PSEUDO))
