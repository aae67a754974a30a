"""File formats: proposals, detections, pseudo pools, reports, orderings.

All writers emit canonical JSON (fixed key order, trailing newline) so that
identical inputs give byte-identical files.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Any, Iterable, Sequence

from owdet.dataset import Dataset, dataset_to_coco
from owdet.errors import ParseError, ValidationError
from owdet.evaluation import Detection, EvalConfig, EvalReport, RecallCounts
from owdet.geometry import BBox
from owdet.pseudolabel import AnnotationPool, Proposal, PseudoBox
from owdet.supervision import Candidate


def dumps(obj: Any) -> str:
    return json.dumps(obj, indent=2, ensure_ascii=False, allow_nan=False) + "\n"


def write_json(path: str | Path, obj: Any) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps(obj), encoding="utf-8")
    return path


def read_json(path: str | Path) -> Any:
    path = Path(path)
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ParseError(f"{path}: line {e.lineno} column {e.colno}: {e.msg}") from e


def _records(data: Any, path) -> list[dict]:
    if not isinstance(data, list) or not all(isinstance(r, dict) for r in data):
        raise ParseError(f"{path}: expected a JSON list of records")
    return data


def _bbox(rec: dict, where: str) -> BBox:
    bb = rec.get("bbox")
    if not isinstance(bb, list) or len(bb) != 4 or not all(isinstance(v, (int, float)) for v in bb):
        raise ParseError(f"{where}.bbox: expected [x, y, w, h], got {bb!r}")
    try:
        return BBox.from_xywh(*bb)
    except ValueError as e:
        raise ParseError(f"{where}.bbox: {e}") from e


def _req(rec: dict, key: str, where: str):
    if key not in rec:
        raise ParseError(f"{where}: missing field {key!r}")
    return rec[key]


def save_dataset(path, ds: Dataset) -> Path:
    return write_json(path, dataset_to_coco(ds))


# ------------------------------------------------------------------ proposals


def proposal_record(p: Proposal) -> dict:
    rec = {"image_id": p.image_id, "bbox": p.box.to_xywh(), "score": p.objectness}
    if p.centerness_score is not None:
        rec["centerness"] = p.centerness_score
    if p.iou_score is not None:
        rec["iou_pred"] = p.iou_score
    if p.source_tag:
        rec["source"] = p.source_tag
    return rec


def save_proposals(path, proposals: Iterable[Proposal]) -> Path:
    return write_json(path, [proposal_record(p) for p in proposals])


def load_proposals(path, source_tag: str | None = None) -> list[Proposal]:
    out = []
    for i, rec in enumerate(_records(read_json(path), path)):
        where = f"{path}[{i}]"
        try:
            out.append(
                Proposal.from_scores(
                    int(_req(rec, "image_id", where)),
                    _bbox(rec, where),
                    rec.get("centerness"),
                    rec.get("iou_pred"),
                    rec.get("score"),
                    source_tag or rec.get("source", ""),
                )
            )
        except ValidationError as e:
            raise ValidationError(f"{where}: {e}") from e
    return out


def save_detections(path, dets: Iterable[Detection]) -> Path:
    return write_json(path, [{"image_id": d.image_id, "bbox": d.box.to_xywh(), "score": d.score} for d in dets])


def load_detections(path) -> list[Detection]:
    out = []
    for i, rec in enumerate(_records(read_json(path), path)):
        where = f"{path}[{i}]"
        score = _req(rec, "score", where)
        if not isinstance(score, (int, float)):
            raise ParseError(f"{where}.score: expected a number, got {score!r}")
        out.append(Detection(int(_req(rec, "image_id", where)), _bbox(rec, where), float(score)))
    return out


# ----------------------------------------------------------------------- pools


def pseudo_record(b: PseudoBox) -> dict:
    return {
        "pseudo_id": b.pseudo_id,
        "image_id": b.image_id,
        "bbox": b.box.to_xywh(),
        "score": b.objectness,
        "source": b.source_tag,
    }


def save_pool(path, pool: AnnotationPool) -> Path:
    return write_json(path, [pseudo_record(b) for b in pool.pseudo])


def load_pseudo(path) -> list[PseudoBox]:
    out = []
    for i, rec in enumerate(_records(read_json(path), path)):
        where = f"{path}[{i}]"
        out.append(
            PseudoBox(
                int(_req(rec, "pseudo_id", where)),
                int(_req(rec, "image_id", where)),
                _bbox(rec, where),
                float(_req(rec, "score", where)),
                str(rec.get("source", "")),
            )
        )
    return out


def pool_to_coco(ds_train: Dataset, pool: AnnotationPool) -> dict:
    """Training annotations extended with pseudo boxes under an extra category."""
    coco = dataset_to_coco(ds_train)
    pseudo_cat = max((c.id for c in ds_train.taxonomy.categories), default=0) + 1
    coco["categories"].append({"id": pseudo_cat, "name": "pseudo_object", "supercategory": "pseudo"})
    next_id = max((a.annotation_id for a in ds_train.annotations), default=0) + 1
    for n, b in enumerate(pool.pseudo):
        coco["annotations"].append(
            {
                "id": next_id + n,
                "image_id": b.image_id,
                "category_id": pseudo_cat,
                "bbox": b.box.to_xywh(),
                "area": b.box.width * b.box.height,
                "iscrowd": 0,
                "pseudo": True,
                "score": b.objectness,
                "source": b.source_tag,
            }
        )
    return coco


# --------------------------------------------------------------------- reports


def _pct(v):
    return None if v is None else f"{100.0 * v:.1f}"


def _counts_dict(c: RecallCounts) -> dict:
    return {"matched": list(c.matched), "total": c.total, "recall": list(c.recalls), "ar": c.ar}


def report_to_dict(r: EvalReport) -> dict:
    cfg = r.config
    return {
        "dataset": r.dataset,
        "split": r.split,
        "config": {
            "budget": cfg.budget,
            "iou_thresholds": list(cfg.iou_thresholds),
            "base_association_iou": cfg.base_association_iou,
            "size_strata": cfg.size_strata,
            "per_class_budget": cfg.per_class_budget,
        },
        "ar_all": r.ar_all,
        "ar_novel": r.ar_novel,
        "ar_novel_small": r.ar_novel_small,
        "ar_novel_medium": r.ar_novel_medium,
        "ar_novel_large": r.ar_novel_large,
        "percent": {
            "AR_A": _pct(r.ar_all),
            "AR_N": _pct(r.ar_novel),
            "AR_N_small": _pct(r.ar_novel_small),
            "AR_N_medium": _pct(r.ar_novel_medium),
            "AR_N_large": _pct(r.ar_novel_large),
        },
        "all": _counts_dict(r.all),
        "novel": _counts_dict(r.novel),
        "all_strata": {k: _counts_dict(v) for k, v in r.all_strata.items()},
        "novel_strata": {k: _counts_dict(v) for k, v in r.novel_strata.items()},
        "per_class_ar": {str(k): v for k, v in sorted(r.per_class_ar.items())},
        "warnings": list(r.warnings),
    }


def _counts_from(d: dict) -> RecallCounts:
    return RecallCounts(tuple(int(m) for m in d["matched"]), int(d["total"]))


def report_from_dict(d: dict) -> EvalReport:
    try:
        c = d["config"]
        cfg = EvalConfig(
            int(c["budget"]), tuple(c["iou_thresholds"]), float(c["base_association_iou"]),
            bool(c["size_strata"]), int(c["per_class_budget"]),
        )
        return EvalReport(
            str(d["dataset"]),
            str(d["split"]),
            cfg,
            _counts_from(d["all"]),
            _counts_from(d["novel"]),
            {k: _counts_from(v) for k, v in d.get("all_strata", {}).items()},
            {k: _counts_from(v) for k, v in d.get("novel_strata", {}).items()},
            {int(k): float(v) for k, v in d.get("per_class_ar", {}).items()},
            tuple(d.get("warnings", ())),
        )
    except (KeyError, TypeError, ValueError) as e:
        raise ParseError(f"malformed report: {e!r}") from e


def save_report(path, r: EvalReport) -> Path:
    return write_json(path, report_to_dict(r))


def load_report(path) -> EvalReport:
    data = read_json(path)
    try:
        return report_from_dict(data)
    except ParseError as e:
        raise ParseError(f"{path}: {e}") from e


# ------------------------------------------------------------------ loss-check


def load_assignment_input(path):
    """Loss-check input: candidates plus the supervision pool for one image.

    ``{"image_size": [w, h], "iou_threshold": 0.5,
       "candidates": [{"id", "box", "label_prob", "pred_box", "objectness"}],
       "base": [{"id", "bbox", "iscrowd"?}], "pseudo": [{"id", "bbox", "score"}]}``

    ``box``/``pred_box`` are corner form, ``bbox`` is ``[x, y, w, h]``.
    """
    from owdet.dataset import GroundTruthAnnotation

    data = read_json(path)
    if not isinstance(data, dict):
        raise ParseError(f"{path}: expected an object")
    cands = []
    for i, c in enumerate(_records(data.get("candidates", []), path)):
        where = f"{path}:candidates[{i}]"
        try:
            cands.append(
                Candidate(
                    int(c.get("id", i)),
                    BBox(*map(float, _req(c, "box", where))),
                    float(c.get("label_prob", 0.0)),
                    BBox(*map(float, _req(c, "pred_box", where))),
                    float(c.get("objectness", 0.0)),
                )
            )
        except (TypeError, ValueError) as e:
            raise ParseError(f"{where}: {e}") from e
    base = [
        GroundTruthAnnotation(int(b.get("id", i)), 0, 0, _bbox(b, f"{path}:base[{i}]"), bool(b.get("iscrowd", 0)))
        for i, b in enumerate(_records(data.get("base", []), path))
    ]
    pseudo = [
        PseudoBox(int(p.get("id", i)), 0, _bbox(p, f"{path}:pseudo[{i}]"), float(p.get("score", 1.0)))
        for i, p in enumerate(_records(data.get("pseudo", []), path))
    ]
    size = data.get("image_size", [1.0, 1.0])
    return cands, AnnotationPool(tuple(base), tuple(pseudo)), float(data.get("iou_threshold", 0.5)), (float(size[0]), float(size[1]))


def ordering_records(selections: Sequence) -> list[dict]:
    return [
        {"rank": i + 1, "source": s.source_tag, "utility": s.utility, "uniqueness": s.uniqueness, "score": s.score}
        for i, s in enumerate(selections)
    ]
