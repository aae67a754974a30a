"""Seeded synthetic corpora and proposal sources.

Every image and every (source, image) pair draws from its own generator,
seeded from the master seed and the image index, so output does not depend
on generation order.
"""

from __future__ import annotations

import math
import zlib
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from owdet.dataset import Category, ClassSplit, Dataset, GroundTruthAnnotation, ImageInfo, Taxonomy
from owdet.errors import ValidationError
from owdet.geometry import BBox, iou, iou_matrix, boxes_to_array, size_class
from owdet.pseudolabel import Proposal


@dataclass(frozen=True)
class ClassProfile:
    name: str
    base: bool
    size_range: tuple[float, float] = (16.0, 160.0)  # sqrt(area), pixels
    aspect_range: tuple[float, float] = (0.5, 2.0)
    weight: float = 1.0
    supercategory: str = "synthetic"


@dataclass(frozen=True)
class SourceProfile:
    name: str
    recall: Mapping[str, float] = field(default_factory=lambda: {"small": 1.0, "medium": 1.0, "large": 1.0})
    jitter: float = 0.0  # corner noise sigma, pixels
    score_noise: float = 0.0
    false_positives: float = 0.0  # expected per image
    fp_size_range: tuple[float, float] = (8.0, 200.0)

    def __post_init__(self) -> None:
        if self.jitter < 0 or self.score_noise < 0 or self.false_positives < 0:
            raise ValidationError(f"source {self.name!r}: noise levels and rates must be >= 0")
        for k, p in self.recall.items():
            if not 0.0 <= p <= 1.0:
                raise ValidationError(f"source {self.name!r}: recall[{k}]={p} outside [0, 1]")


DEFAULT_CLASSES = (
    ClassProfile("person", True, (24.0, 200.0)),
    ClassProfile("car", True, (16.0, 160.0)),
    ClassProfile("cup", False, (8.0, 48.0)),
    ClassProfile("sandwich", False, (20.0, 90.0)),
    ClassProfile("bed", False, (96.0, 260.0)),
    ClassProfile("tree", False, (40.0, 220.0)),
)

# Appearance-driven sources favour small objects, geometry-driven ones large.
DEFAULT_SOURCES = (
    SourceProfile("depth", {"small": 0.25, "medium": 0.6, "large": 0.9}, 3.0, 0.08, 1.0),
    SourceProfile("normal", {"small": 0.3, "medium": 0.65, "large": 0.8}, 3.5, 0.1, 1.0),
    SourceProfile("pa", {"small": 0.45, "medium": 0.55, "large": 0.6}, 4.0, 0.12, 1.5),
    SourceProfile("edge", {"small": 0.5, "medium": 0.5, "large": 0.45}, 4.0, 0.12, 2.0),
    SourceProfile("rgb", {"small": 0.8, "medium": 0.55, "large": 0.35}, 3.0, 0.1, 1.0),
)


@dataclass(frozen=True)
class SynthSpec:
    seed: int = 0
    n_images: int = 20
    image_size: tuple[float, float] = (640.0, 480.0)
    objects_per_image: tuple[int, int] = (1, 6)  # inclusive range
    classes: tuple[ClassProfile, ...] = DEFAULT_CLASSES
    max_iou: float = 0.3
    max_tries: int = 2000
    name: str = "synthetic"

    def __post_init__(self) -> None:
        lo, hi = self.objects_per_image
        if self.n_images < 0 or lo < 0 or hi < lo:
            raise ValidationError("n_images and objects_per_image must be non-negative, lo <= hi")
        if not self.classes:
            raise ValidationError("at least one class profile is required")


def _rng(*key: int) -> np.random.Generator:
    return np.random.default_rng([int(k) & 0xFFFFFFFF for k in key])


def _tag_key(tag: str) -> int:
    return zlib.crc32(tag.encode("utf-8"))


def _loguniform(rng: np.random.Generator, lo: float, hi: float) -> float:
    return float(math.exp(rng.uniform(math.log(lo), math.log(hi))))


def _place(rng, profile: ClassProfile, width: float, height: float) -> BBox:
    side = _loguniform(rng, *profile.size_range)
    aspect = _loguniform(rng, *profile.aspect_range)
    w = min(side * math.sqrt(aspect), width)
    h = min(side / math.sqrt(aspect), height)
    x = rng.uniform(0.0, width - w)
    y = rng.uniform(0.0, height - h)
    return BBox(round(x, 2), round(y, 2), round(x + w, 2), round(y + h, 2))


def gen_corpus(spec: SynthSpec) -> tuple[Dataset, ClassSplit]:
    """GT boxes by seeded rejection sampling with pairwise IoU <= ``spec.max_iou``."""
    cats = tuple(Category(i + 1, c.name, c.supercategory) for i, c in enumerate(spec.classes))
    weights = np.array([c.weight for c in spec.classes], dtype=np.float64)
    weights /= weights.sum()
    width, height = spec.image_size
    images, anns = [], []
    for idx in range(spec.n_images):
        rng = _rng(spec.seed, idx)
        image_id = idx + 1
        images.append(ImageInfo(image_id, float(width), float(height), f"synth_{image_id:06d}.jpg"))
        n_obj = int(rng.integers(spec.objects_per_image[0], spec.objects_per_image[1] + 1))
        placed: list[BBox] = []
        for _ in range(n_obj):
            c = int(rng.choice(len(spec.classes), p=weights))
            for _ in range(spec.max_tries):
                box = _place(rng, spec.classes[c], width, height)
                if box.width > 0 and box.height > 0 and all(iou(box, p) <= spec.max_iou for p in placed):
                    break
            else:
                raise ValidationError(
                    f"could not place object {len(placed) + 1} of {n_obj} in image {image_id} "
                    f"after {spec.max_tries} tries; lower objects_per_image or max_iou constraints"
                )
            placed.append(box)
            anns.append(GroundTruthAnnotation(len(anns) + 1, image_id, c + 1, box))
    base = frozenset(i + 1 for i, c in enumerate(spec.classes) if c.base)
    novel = frozenset(i + 1 for i, c in enumerate(spec.classes) if not c.base)
    ds = Dataset(Taxonomy(cats), tuple(images), tuple(anns), spec.name)
    return ds, ClassSplit(spec.name, base, novel)


def _clamp01(v: float) -> float:
    return min(1.0, max(0.0, v))


def _proposal(image_id: int, box: BBox, score: float, tag: str) -> Proposal:
    return Proposal.from_scores(image_id, box, centerness=score, iou_pred=score, source_tag=tag)


def _jitter(rng, gt: BBox, sigma: float, width: float, height: float) -> BBox:
    if sigma == 0:
        return gt
    xs = sorted(np.array([gt.x1, gt.x2]) + rng.normal(0.0, sigma, 2))
    ys = sorted(np.array([gt.y1, gt.y2]) + rng.normal(0.0, sigma, 2))
    return BBox(float(xs[0]), float(ys[0]), float(xs[1]), float(ys[1])).clip(width, height)


def simulate_source(ds: Dataset, profile: SourceProfile, seed: int = 0) -> list[Proposal]:
    """Noisy class-agnostic proposals for every image of ``ds``.

    Each non-crowd GT is detected with probability ``recall[size class]`` as
    a jittered copy; false positives are Poisson per image. Scores are the
    true IoU to the nearest GT plus Gaussian noise, clamped to [0, 1], and
    double as both sub-scores so that objectness equals the score.
    """
    out: list[Proposal] = []
    key = _tag_key(profile.name)
    by_image = ds.annotations_by_image
    for idx, im in enumerate(ds.images):
        rng = _rng(seed, key, idx)
        gts = [g for g in by_image.get(im.id, ()) if not g.is_crowd]
        for g in gts:
            hit = rng.random() < profile.recall.get(size_class(g.box).value, 0.0)
            box = _jitter(rng, g.box, profile.jitter, im.width, im.height)
            noise = rng.normal(0.0, profile.score_noise) if profile.score_noise else 0.0
            if hit:
                out.append(_proposal(im.id, box, _clamp01(iou(box, g.box) + noise), profile.name))
        n_fp = int(rng.poisson(profile.false_positives)) if profile.false_positives else 0
        gt_arr = boxes_to_array([g.box for g in gts])
        for _ in range(n_fp):
            side = _loguniform(rng, *profile.fp_size_range)
            w, h = min(side, im.width), min(side, im.height)
            x, y = rng.uniform(0.0, im.width - w), rng.uniform(0.0, im.height - h)
            box = BBox(float(x), float(y), float(x + w), float(y + h))
            best = float(iou_matrix(boxes_to_array([box]), gt_arr).max()) if gts else 0.0
            noise = rng.normal(0.0, profile.score_noise) if profile.score_noise else 0.0
            out.append(_proposal(im.id, box, _clamp01(best + noise), profile.name))
    return out


def perfect_source(name: str = "oracle") -> SourceProfile:
    return SourceProfile(name)
