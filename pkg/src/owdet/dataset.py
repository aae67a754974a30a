"""COCO-format ground truth, base/novel class splits and holdout carving."""

from __future__ import annotations

import json
import math
from collections import defaultdict
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from owdet.coco_meta import COCO_CATEGORIES, SUPERCATEGORY_STEPS, VOC_CLASS_NAMES
from owdet.errors import ParseError, ValidationError
from owdet.geometry import BBox


@dataclass(frozen=True)
class Category:
    id: int
    name: str
    supercategory: str


@dataclass(frozen=True)
class Taxonomy:
    categories: tuple[Category, ...]

    def __post_init__(self) -> None:
        ids = [c.id for c in self.categories]
        if len(set(ids)) != len(ids):
            raise ValidationError("duplicate category ids in taxonomy")
        for c in self.categories:
            if not c.supercategory:
                raise ValidationError(f"category {c.id} ({c.name!r}) has an empty supercategory")

    @cached_property
    def ids(self) -> frozenset[int]:
        return frozenset(c.id for c in self.categories)

    @cached_property
    def by_name(self) -> dict[str, Category]:
        return {c.name: c for c in self.categories}

    @classmethod
    def coco(cls) -> Taxonomy:
        return cls(tuple(Category(i, n, s) for i, n, s in COCO_CATEGORIES))


@dataclass(frozen=True)
class ImageInfo:
    id: int
    width: float
    height: float
    file_name: str = ""


@dataclass(frozen=True)
class GroundTruthAnnotation:
    annotation_id: int
    image_id: int
    category_id: int
    box: BBox
    is_crowd: bool = False


@dataclass(frozen=True)
class Dataset:
    taxonomy: Taxonomy
    images: tuple[ImageInfo, ...]
    annotations: tuple[GroundTruthAnnotation, ...]
    name: str = "dataset"

    @cached_property
    def image_ids(self) -> tuple[int, ...]:
        return tuple(im.id for im in self.images)

    @cached_property
    def image_index(self) -> dict[int, ImageInfo]:
        return {im.id: im for im in self.images}

    @cached_property
    def annotations_by_image(self) -> dict[int, list[GroundTruthAnnotation]]:
        out: dict[int, list[GroundTruthAnnotation]] = {im.id: [] for im in self.images}
        for a in self.annotations:
            out.setdefault(a.image_id, []).append(a)
        return out

    def replace(self, images=None, annotations=None, name=None) -> Dataset:
        return Dataset(
            self.taxonomy,
            tuple(self.images if images is None else images),
            tuple(self.annotations if annotations is None else annotations),
            self.name if name is None else name,
        )


@dataclass(frozen=True)
class ClassSplit:
    name: str
    base_category_ids: frozenset[int]
    novel_category_ids: frozenset[int] = field(default_factory=frozenset)

    def __post_init__(self) -> None:
        object.__setattr__(self, "base_category_ids", frozenset(self.base_category_ids))
        object.__setattr__(self, "novel_category_ids", frozenset(self.novel_category_ids))
        overlap = self.base_category_ids & self.novel_category_ids
        if overlap:
            raise ValidationError(f"split {self.name!r}: base and novel overlap on {sorted(overlap)}")

    def check(self, taxonomy: Taxonomy) -> None:
        union = self.base_category_ids | self.novel_category_ids
        if union != taxonomy.ids:
            missing = sorted(taxonomy.ids - union)
            extra = sorted(union - taxonomy.ids)
            raise ValidationError(
                f"split {self.name!r} does not partition the taxonomy "
                f"(unassigned ids {missing}, unknown ids {extra})"
            )


# --------------------------------------------------------------------- loading


def _field(record: dict, key: str, where: str, kind=None):
    if key not in record:
        raise ParseError(f"{where}: missing field {key!r}")
    value = record[key]
    if kind is not None and (not isinstance(value, kind) or isinstance(value, bool)):
        raise ParseError(f"{where}.{key}: expected {getattr(kind, '__name__', kind)}, got {value!r}")
    return value


_NUMBER = (int, float)


def parse_dataset(data: dict, name: str = "dataset") -> Dataset:
    """Build a :class:`Dataset` from a decoded COCO annotation object."""
    if not isinstance(data, dict):
        raise ParseError("top level: expected an object with images/annotations/categories")
    for key in ("images", "annotations", "categories"):
        if not isinstance(data.get(key), list):
            raise ParseError(f"top level: missing or non-list field {key!r}")

    cats = []
    for i, c in enumerate(data["categories"]):
        where = f"categories[{i}]"
        cats.append(
            Category(
                int(_field(c, "id", where, int)),
                str(_field(c, "name", where, str)),
                str(c.get("supercategory") or ""),
            )
        )
    taxonomy = Taxonomy(tuple(cats))

    images = []
    for i, im in enumerate(data["images"]):
        where = f"images[{i}]"
        images.append(
            ImageInfo(
                int(_field(im, "id", where, int)),
                float(_field(im, "width", where, _NUMBER)),
                float(_field(im, "height", where, _NUMBER)),
                str(im.get("file_name", "")),
            )
        )
    index = {im.id: im for im in images}
    if len(index) != len(images):
        raise ParseError("images: duplicate image ids")

    anns = []
    for i, a in enumerate(data["annotations"]):
        where = f"annotations[{i}]"
        image_id = int(_field(a, "image_id", where, int))
        category_id = int(_field(a, "category_id", where, int))
        bbox = _field(a, "bbox", where, list)
        if len(bbox) != 4 or not all(isinstance(v, _NUMBER) for v in bbox):
            raise ParseError(f"{where}.bbox: expected [x, y, w, h], got {bbox!r}")
        if image_id not in index:
            raise ValidationError(f"{where}: references missing image_id {image_id}")
        if category_id not in taxonomy.ids:
            raise ValidationError(f"{where}: references unknown category_id {category_id}")
        x, y, w, h = (float(v) for v in bbox)
        if w < 0 or h < 0:
            raise ParseError(f"{where}.bbox: negative width/height {bbox!r}")
        im = index[image_id]
        box = BBox.from_xywh(x, y, w, h).clip(im.width, im.height)
        anns.append(
            GroundTruthAnnotation(
                int(a.get("id", i + 1)), image_id, category_id, box, bool(a.get("iscrowd", 0))
            )
        )
    return Dataset(taxonomy, tuple(images), tuple(anns), name)


def load_dataset(annotation_file: str | Path) -> Dataset:
    path = Path(annotation_file)
    try:
        with open(path, encoding="utf-8") as f:
            data = json.load(f)
    except json.JSONDecodeError as e:
        raise ParseError(f"{path}: line {e.lineno} column {e.colno}: {e.msg}") from e
    try:
        return parse_dataset(data, name=path.stem)
    except (ParseError, ValidationError) as e:
        raise type(e)(f"{path}: {e}") from e


def dataset_to_coco(ds: Dataset) -> dict:
    return {
        "images": [
            {"id": im.id, "width": im.width, "height": im.height, "file_name": im.file_name}
            for im in ds.images
        ],
        "annotations": [
            {
                "id": a.annotation_id,
                "image_id": a.image_id,
                "category_id": a.category_id,
                "bbox": a.box.to_xywh(),
                "area": a.box.width * a.box.height,
                "iscrowd": int(a.is_crowd),
            }
            for a in ds.annotations
        ],
        "categories": [
            {"id": c.id, "name": c.name, "supercategory": c.supercategory}
            for c in ds.taxonomy.categories
        ],
    }


# ---------------------------------------------------------------------- splits

BUILTIN_SPLITS = (
    "person",
    "voc",
    "supercat-1",
    "supercat-9",
    "supercat-24",
    "supercat-39",
    "supercat-56",
    "supercat-80",
)


def _split_from_names(name: str, base_names: Iterable[str], taxonomy: Taxonomy) -> ClassSplit:
    base = set()
    for n in base_names:
        if n not in taxonomy.by_name:
            raise ValidationError(f"split {name!r}: class {n!r} not in taxonomy")
        base.add(taxonomy.by_name[n].id)
    return ClassSplit(name, frozenset(base), taxonomy.ids - base)


def builtin_split(name: str, taxonomy: Taxonomy | None = None) -> ClassSplit:
    """One of the named COCO benchmark splits.

    ``supercat-N`` base sets accumulate supercategories in the order of the
    base-class study (person, vehicle, outdoor+animal, ...), N being the
    resulting class count.
    """
    taxonomy = taxonomy or Taxonomy.coco()
    if name == "person":
        return _split_from_names(name, ["person"], taxonomy)
    if name == "voc":
        return _split_from_names(name, VOC_CLASS_NAMES, taxonomy)
    if name.startswith("supercat-"):
        supers: set[str] = set()
        for step in SUPERCATEGORY_STEPS:
            supers.update(step)
            names = [c.name for c in Taxonomy.coco().categories if c.supercategory in supers]
            if f"supercat-{len(names)}" == name:
                return _split_from_names(name, names, taxonomy)
    raise ValidationError(f"unknown split {name!r}; expected one of {', '.join(BUILTIN_SPLITS)}")


def load_split(path: str | Path, taxonomy: Taxonomy) -> ClassSplit:
    """Custom split file: ``{"name": ..., "base": [names or ids]}``."""
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ParseError(f"{path}: line {e.lineno} column {e.colno}: {e.msg}") from e
    if not isinstance(data, dict) or not isinstance(data.get("base"), list):
        raise ParseError(f"{path}: expected an object with a 'base' list")
    name = str(data.get("name", path.stem))
    base = set()
    for entry in data["base"]:
        if isinstance(entry, str):
            if entry not in taxonomy.by_name:
                raise ValidationError(f"{path}: class {entry!r} not in taxonomy")
            base.add(taxonomy.by_name[entry].id)
        elif isinstance(entry, int) and entry in taxonomy.ids:
            base.add(entry)
        else:
            raise ValidationError(f"{path}: unknown base class {entry!r}")
    return ClassSplit(name, frozenset(base), taxonomy.ids - base)


def resolve_split(name_or_path: str, taxonomy: Taxonomy) -> ClassSplit:
    if name_or_path in BUILTIN_SPLITS:
        split = builtin_split(name_or_path, taxonomy)
    else:
        path = Path(name_or_path)
        if not path.exists():
            raise ValidationError(f"split {name_or_path!r} is neither builtin nor an existing file")
        split = load_split(path, taxonomy)
    split.check(taxonomy)
    return split


# ----------------------------------------------------------------------- views


def training_view(ds: Dataset, split: ClassSplit) -> Dataset:
    """Base-class annotations only, on images that keep at least one."""
    anns = [a for a in ds.annotations if a.category_id in split.base_category_ids]
    keep = {a.image_id for a in anns}
    images = [im for im in ds.images if im.id in keep]
    return ds.replace(images=images, annotations=anns)


def split_stats(
    ds: Dataset,
    split: ClassSplit,
    include_crowd: bool = True,
    instance_scope: str = "base",
) -> tuple[int, int, int]:
    """``(n_classes, n_images, n_instances)`` of the training view.

    ``instance_scope="base"`` counts base-class instances; ``"image"`` counts
    every annotation on the retained images. ``include_crowd`` decides whether
    crowd regions count as instances (images are retained either way).
    """
    if instance_scope not in ("base", "image"):
        raise ValidationError(f"instance_scope must be 'base' or 'image', got {instance_scope!r}")
    view = training_view(ds, split)
    if instance_scope == "base":
        pool: Sequence[GroundTruthAnnotation] = view.annotations
    else:
        kept = set(view.image_ids)
        pool = [a for a in ds.annotations if a.image_id in kept]
    n_inst = sum(1 for a in pool if include_crowd or not a.is_crowd)
    return len(split.base_category_ids), len(view.images), n_inst


def carve_holdout(ds: Dataset, fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    """Image-level seeded split; the holdout gets ``ceil(fraction * n)`` images."""
    if not 0.0 < fraction < 1.0:
        raise ValidationError(f"holdout fraction must lie in (0, 1), got {fraction}")
    n = len(ds.images)
    n_hold = math.ceil(fraction * n)
    order = np.random.default_rng(seed).permutation(n)
    hold_ids = {ds.images[i].id for i in order[:n_hold]}
    by_side: dict[bool, list] = defaultdict(list)
    for a in ds.annotations:
        by_side[a.image_id in hold_ids].append(a)
    train = ds.replace(
        images=[im for im in ds.images if im.id not in hold_ids],
        annotations=by_side[False],
        name=f"{ds.name}-train",
    )
    holdout = ds.replace(
        images=[im for im in ds.images if im.id in hold_ids],
        annotations=by_side[True],
        name=f"{ds.name}-holdout",
    )
    return train, holdout
