"""``owdet`` command line: one binary, verb subcommands.

A ``--config`` JSON object supplies defaults for any flag (keys are flag
names with dashes or underscores); explicit flags win.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Sequence

from owdet import io
from owdet.analysis import DEFAULT_SIZE_EDGES, TableLayout, overlap_matrix, render_table, size_histogram
from owdet.dataset import BUILTIN_SPLITS, carve_holdout, load_dataset, resolve_split, split_stats, training_view
from owdet.ensemble import SourceCandidate, greedy_selections, top1_boxes, top1_pseudo, utility
from owdet.errors import OwdetError, ValidationError
from owdet.evaluation import EvalConfig, evaluate, per_class_ar, relative_diff
from owdet.pseudolabel import (
    PseudoBox,
    build_pool,
    filter_against_gt,
    merge_sources,
    top_k,
)
from owdet.supervision import assign, loss_good, loss_oln, loss_std
from owdet.synth import DEFAULT_SOURCES, SynthSpec, gen_corpus, perfect_source, simulate_source

log = logging.getLogger("owdet")

IO_EXIT = 2


# -------------------------------------------------------------------- helpers


def _tagged(values: Sequence[str] | None, flag: str) -> list[tuple[str, Path]]:
    out = []
    for v in values or ():
        tag, sep, path = v.partition("=")
        if not sep or not tag or not path:
            raise ValidationError(f"{flag} expects TAG=PATH, got {v!r}")
        out.append((tag, Path(path)))
    tags = [t for t, _ in out]
    if len(set(tags)) != len(tags):
        raise ValidationError(f"{flag}: duplicate tags in {tags}")
    return out


def _ratio(name: str, v: float, lo_open: bool = True) -> float:
    ok = (0.0 < v <= 1.0) if lo_open else (0.0 <= v <= 1.0)
    if not ok:
        raise ValidationError(f"--{name} must lie in (0, 1], got {v}")
    return v


def _out(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _require(path: Path | str | None, flag: str) -> Path:
    if path is None:
        raise ValidationError(f"{flag} is required")
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"{flag}: no such file {p}")
    return p


def _map(fn, items, threads: int):
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(fn, items))
    return [fn(x) for x in items]


# ---------------------------------------------------------------- subcommands


def cmd_split_stats(args) -> int:
    ds = load_dataset(_require(args.dataset, "--dataset"))
    rows = []
    for name in args.split or BUILTIN_SPLITS[2:]:
        split = resolve_split(name, ds.taxonomy)
        n_cls, n_img, n_inst = split_stats(ds, split, not args.exclude_crowd, args.instance_scope)
        rows.append({"split": split.name, "classes": n_cls, "images": n_img, "instances": n_inst})
    result = {
        "dataset": ds.name,
        "include_crowd": not args.exclude_crowd,
        "instance_scope": args.instance_scope,
        "splits": rows,
    }
    if args.out:
        io.write_json(_out(args) / "split_stats.json", result)
    print(f"{'split':<14}{'classes':>9}{'images':>10}{'instances':>11}")
    for r in rows:
        print(f"{r['split']:<14}{r['classes']:>9}{r['images']:>10}{r['instances']:>11}")
    return 0


def cmd_pseudo_label(args) -> int:
    ds = load_dataset(_require(args.dataset, "--dataset"))
    split = resolve_split(args.split, ds.taxonomy)
    sources = _tagged(args.proposals, "--proposals")
    if not sources:
        raise ValidationError("--proposals TAG=PATH is required at least once")
    if args.k < 1:
        raise ValidationError(f"--k must be >= 1, got {args.k}")
    gt_iou = _ratio("gt-filter-iou", args.gt_filter_iou)
    merge_iou = _ratio("merge-iou", args.merge_iou)
    out = _out(args)

    train = training_view(ds, split)
    if args.holdout_fraction is not None:
        train, holdout = carve_holdout(train, args.holdout_fraction, args.seed)
        io.save_dataset(out / "train.json", train)
        io.save_dataset(out / "holdout.json", holdout)
    train_ids = set(train.image_ids)

    def run_source(item):
        tag, path = item
        props = [p for p in io.load_proposals(_require(path, f"--proposals {tag}"), tag) if p.image_id in train_ids]
        kept = filter_against_gt(props, train.annotations, gt_iou)
        boxes = [PseudoBox(b.pseudo_id, b.image_id, b.box, b.objectness, tag) for b in top_k(kept, args.k)]
        return tag, boxes, {"source": tag, "proposals": len(props), "after_gt_filter": len(kept), "top_k": len(boxes)}

    results = _map(run_source, sources, args.threads)
    merged = merge_sources([(t, b) for t, b, _ in results], merge_iou)
    pool = build_pool(train, merged, gt_iou)
    io.save_pool(out / "pool.json", pool)
    io.write_json(out / "pool_coco.json", io.pool_to_coco(train, pool))
    summary = {
        "dataset": ds.name,
        "split": split.name,
        "k": args.k,
        "gt_filter_iou": gt_iou,
        "merge_iou": merge_iou,
        "sources": [s for _, _, s in results],
        "pool": {"base": len(pool.base), "pseudo": len(pool.pseudo)},
    }
    io.write_json(out / "pseudo_summary.json", summary)
    print(f"pool: {len(pool.base)} base annotations + {len(pool.pseudo)} pseudo boxes -> {out / 'pool.json'}")
    return 0


def _eval_config(args) -> EvalConfig:
    return EvalConfig(
        budget=args.budget,
        base_association_iou=_ratio("base-assoc-iou", args.base_assoc_iou),
        per_class_budget=args.per_class_budget,
    )


def cmd_evaluate(args) -> int:
    ds = load_dataset(_require(args.dataset, "--dataset"))
    split = resolve_split(args.split, ds.taxonomy)
    dets = io.load_detections(_require(args.detections, "--detections"))
    cfg = _eval_config(args)
    out = _out(args)
    report = evaluate(dets, ds, split, cfg, threads=args.threads)
    io.save_report(out / "report.json", report)
    (out / "report.md").write_text(render_table([report], TableLayout(row_labels=(args.label,))), encoding="utf-8")
    names = {c.id: c.name for c in ds.taxonomy.categories}
    io.write_json(
        out / "per_class.json",
        [{"category_id": c, "name": names[c], "ar": v} for c, v in sorted(report.per_class_ar.items())],
    )
    if args.reference:
        ref = per_class_ar(io.load_detections(_require(args.reference, "--reference")), ds, split, cfg, args.threads)
        diff = relative_diff(report.per_class_ar, ref)
        io.write_json(
            out / "relative_diff.json",
            [
                {"category_id": c, "name": names[c], "ar": report.per_class_ar[c], "ar_ref": ref[c], "relative_diff": v}
                for c, v in diff.items()
            ],
        )
    for w in report.warnings:
        log.warning(w)
    print(f"AR_A@{cfg.budget} {100 * report.ar_all:.1f}  AR_N@{cfg.budget} {100 * report.ar_novel:.1f}")
    return 0


def cmd_ensemble_order(args) -> int:
    pools = _tagged(args.pools, "--pools")
    reports = dict(_tagged(args.reports, "--reports"))
    if not pools:
        raise ValidationError("--pools TAG=PATH is required at least once")
    missing = [t for t, _ in pools if t not in reports]
    if missing:
        raise ValidationError(f"no --reports entry for source(s) {missing}")
    if (args.baseline is None) == (args.baseline_ar is None):
        raise ValidationError("give exactly one of --baseline (report file) or --baseline-ar")
    baseline = io.load_report(_require(args.baseline, "--baseline")) if args.baseline else args.baseline_ar

    def load(item):
        tag, path = item
        top1 = top1_boxes(io.load_pseudo(_require(path, f"--pools {tag}")))
        util = utility(io.load_report(_require(reports[tag], f"--reports {tag}")), baseline)
        return SourceCandidate(tag, top1, util)

    candidates = _map(load, pools, args.threads)
    trace = greedy_selections(candidates, _ratio("overlap-iou", args.overlap_iou))
    out = _out(args)
    io.write_json(out / "ordering.json", io.ordering_records(trace))
    print("order: " + ", ".join(s.source_tag for s in trace))
    return 0


def cmd_analyze(args) -> int:
    pools = _tagged(args.pools, "--pools")
    out = _out(args)
    loaded = _map(lambda item: (item[0], io.load_pseudo(_require(item[1], f"--pools {item[0]}"))), pools, args.threads)
    if len(loaded) >= 2:
        m = overlap_matrix([(t, top1_boxes(b)) for t, b in loaded], _ratio("overlap-iou", args.overlap_iou))
        io.write_json(
            out / "overlap_matrix.json",
            [
                {"row": a, "col": b, "overlap": m.values[i][j]}
                for i, a in enumerate(m.source_tags)
                for j, b in enumerate(m.source_tags)
            ],
        )
    edges = tuple(float(e) for e in args.edges.split(",")) if args.edges else DEFAULT_SIZE_EDGES
    hist_records = []
    for tag, boxes in loaded:
        h = size_histogram(top1_pseudo(boxes) if args.top1_only else boxes, edges, tag)
        for lo, hi, c in zip(h.edges, h.edges[1:], h.counts):
            hist_records.append({"source": tag, "lo": lo, "hi": hi, "count": c})
        hist_records.append({"source": tag, "lo": h.edges[-1], "hi": None, "count": h.overflow})
    if loaded:
        io.write_json(out / "size_histograms.json", hist_records)
    tagged_reports = _tagged(args.reports, "--reports")
    if tagged_reports:
        reps = [io.load_report(_require(p, f"--reports {t}")) for t, p in tagged_reports]
        table = render_table(reps, TableLayout(row_labels=tuple(t for t, _ in tagged_reports)))
        (out / "table.md").write_text(table, encoding="utf-8")
        print(table, end="")
    print(f"analysis written to {out}")
    return 0


def cmd_synth(args) -> int:
    lo, _, hi = args.objects_per_image.partition(",")
    spec = SynthSpec(seed=args.seed, n_images=args.n_images, objects_per_image=(int(lo), int(hi or lo)))
    ds, split = gen_corpus(spec)
    out = _out(args)
    io.save_dataset(out / "dataset.json", ds)
    names = {c.id: c.name for c in ds.taxonomy.categories}
    io.write_json(out / "split.json", {"name": split.name, "base": [names[i] for i in sorted(split.base_category_ids)]})
    profiles = {p.name: p for p in DEFAULT_SOURCES}
    profiles["perfect"] = perfect_source("perfect")
    wanted = args.sources.split(",") if args.sources else list(profiles)
    unknown = [w for w in wanted if w not in profiles]
    if unknown:
        raise ValidationError(f"unknown source profile(s) {unknown}; known: {sorted(profiles)}")
    props = _map(lambda name: (name, simulate_source(ds, profiles[name], args.seed)), wanted, args.threads)
    for name, p in props:
        io.save_proposals(out / f"proposals_{name}.json", p)
    if args.holdout_fraction is not None:
        train, holdout = carve_holdout(ds, args.holdout_fraction, args.seed)
        io.save_dataset(out / "train.json", train)
        io.save_dataset(out / "holdout.json", holdout)
    print(f"{len(ds.images)} images, {len(ds.annotations)} annotations, {len(props)} sources -> {out}")
    return 0


def cmd_loss_check(args) -> int:
    cands, pool, thr, size = io.load_assignment_input(_require(args.assignment, "--assignment"))
    a = assign(cands, pool, thr, image_size=size)
    std, oln, good = loss_std(a), loss_oln(a), loss_good(a)
    result = {
        "n_candidates": a.n_cls,
        "n_base_matched": len(a.base_set),
        "n_pseudo_matched": len(a.pseudo_set),
        "assignment": [
            {"candidate_id": c.candidate_id, "label": lab.value, "matched_id": m, "o_star": o}
            for c, lab, m, o in zip(a.candidates, a.labels, a.matched_ids, a.o_star)
        ],
        "loss_std": {"cls": std[0], "reg": std[1], "total": std[2]},
        "loss_oln": {"reg": oln[0], "obj": oln[1], "total": oln[2]},
        "loss_good": {"reg": good[0], "obj": good[1], "total": good[2]},
    }
    if args.out:
        io.write_json(_out(args) / "losses.json", result)
    print(f"std {std[2]:.6g}  oln {oln[2]:.6g}  good {good[2]:.6g}")
    return 0


# --------------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON object of flag defaults; explicit flags win")
    common.add_argument("--out", default="owdet_out", help="output directory")
    common.add_argument("--seed", type=int, default=0, help="single source of all randomness")
    common.add_argument("--threads", type=int, default=1, help="worker threads; output is identical for any value")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="owdet", description=__doc__, formatter_class=fmt)
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, help_):
        p = sub.add_parser(name, parents=[common], help=help_, description=help_, formatter_class=fmt)
        p.set_defaults(func=fn)
        return p

    split_help = f"builtin split ({', '.join(BUILTIN_SPLITS)}) or a JSON split file"

    p = add("split-stats", cmd_split_stats, "class/image/instance counts of base-class training views")
    p.add_argument("--dataset", help="COCO annotation file")
    p.add_argument("--split", action="append", help=split_help + "; repeatable (default: all supercat-N splits)")
    p.add_argument("--exclude-crowd", action="store_true", help="do not count crowd regions as instances")
    p.add_argument(
        "--instance-scope", choices=("base", "image"), default="base",
        help="count base-class instances, or every instance on retained images",
    )
    p.set_defaults(out=None)

    p = add("pseudo-label", cmd_pseudo_label, "filter, top-k and merge proposals into a pseudo-box pool")
    p.add_argument("--dataset", help="COCO annotation file of the training images")
    p.add_argument("--split", default="voc", help=split_help)
    p.add_argument("--proposals", action="append", metavar="TAG=PATH", help="proposal file per source; repeatable, order = merge priority on ties")
    p.add_argument("--k", type=int, default=1, help="pseudo boxes kept per image and source (1 suits geometry sources, 3 an RGB self-training source)")
    p.add_argument("--gt-filter-iou", type=float, default=0.5, help="proposals with IoU above this to any base box are dropped")
    p.add_argument("--merge-iou", type=float, default=0.5, help="of two pseudo boxes with IoU above this, the lower-objectness one is dropped")
    p.add_argument("--holdout-fraction", type=float, default=None, help="carve this fraction of training images into a holdout set first")

    p = add("evaluate", cmd_evaluate, "AR_A, AR_N, size strata and per-class AR of a detection file")
    p.add_argument("--dataset", help="COCO annotation file of the evaluation images")
    p.add_argument("--split", default="voc", help=split_help)
    p.add_argument("--detections", help="COCO-results detection file")
    p.add_argument("--reference", help="second detection file; writes per-class (AR - AR_ref) / AR_ref")
    p.add_argument("--budget", type=int, default=100, help="detections per image, AR@k over IoU 0.50:0.05:0.95")
    p.add_argument("--per-class-budget", type=int, default=5, help="budget of the per-novel-class AR")
    p.add_argument("--base-assoc-iou", type=float, default=0.5, help="detections at or above this IoU with base boxes are left out of the novel budget")
    p.add_argument("--label", default="detector", help="row label in report.md")

    p = add("ensemble-order", cmd_ensemble_order, "greedy source order by utility x uniqueness")
    p.add_argument("--pools", action="append", metavar="TAG=PATH", help="pseudo pool file per source; repeatable")
    p.add_argument("--reports", action="append", metavar="TAG=PATH", help="holdout report of the detector trained with each source")
    p.add_argument("--baseline", help="holdout report of the baseline detector")
    p.add_argument("--baseline-ar", type=float, help="baseline holdout AR_N as a number")
    p.add_argument("--overlap-iou", type=float, default=0.5, help="IoU at which two top-1 boxes count as overlapping")

    p = add("analyze", cmd_analyze, "top-1 overlap matrix, pseudo-box size histograms, AR tables")
    p.add_argument("--pools", action="append", metavar="TAG=PATH", help="pseudo pool file per source; repeatable")
    p.add_argument("--reports", action="append", metavar="LABEL=PATH", help="report files to tabulate; repeatable")
    p.add_argument("--overlap-iou", type=float, default=0.5, help="IoU at which two top-1 boxes count as overlapping")
    p.add_argument("--edges", help="comma-separated sqrt(area) bin edges", default=",".join(f"{e:g}" for e in DEFAULT_SIZE_EDGES))
    p.add_argument("--top1-only", action="store_true", help="histogram only the top-1 box per image")

    p = add("synth", cmd_synth, "generate a synthetic corpus and simulated proposal sources")
    p.add_argument("--n-images", type=int, default=50)
    p.add_argument("--objects-per-image", default="1,6", help="inclusive LO,HI object count range")
    p.add_argument("--sources", help="comma-separated source profiles (default: all)")
    p.add_argument("--holdout-fraction", type=float, default=None, help="also write an image-level train/holdout split")

    p = add("loss-check", cmd_loss_check, "assign candidates and evaluate the three training losses")
    p.add_argument("--assignment", help="JSON file with candidates and a one-image supervision pool")
    p.set_defaults(out=None)
    return parser


def _apply_config(parser: argparse.ArgumentParser, argv: list[str]) -> argparse.Namespace:
    args = parser.parse_args(argv)
    if not getattr(args, "config", None):
        return args
    path = _require(args.config, "--config")
    cfg = io.read_json(path)
    if not isinstance(cfg, dict):
        raise ValidationError(f"{path}: config must be a JSON object")
    sub = parser._subparsers._group_actions[0].choices[args.command]  # noqa: SLF001
    known = {a.dest for a in sub._actions}  # noqa: SLF001
    defaults = {}
    for key, value in cfg.items():
        dest = key.replace("-", "_")
        if dest not in known:
            raise ValidationError(f"{path}: unknown config key {key!r} for {args.command}")
        defaults[dest] = value
    sub.set_defaults(**defaults)
    return parser.parse_args(argv)


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = _apply_config(parser, argv)
        logging.basicConfig(
            level=logging.INFO if args.verbose else logging.WARNING,
            format="%(levelname)s %(name)s: %(message)s",
        )
        if args.threads < 1:
            raise ValidationError(f"--threads must be >= 1, got {args.threads}")
        return args.func(args)
    except OwdetError as e:
        print(f"owdet: {e.category} error: {e}", file=sys.stderr)
        return e.exit_code
    except OSError as e:
        print(f"owdet: io error: {e}", file=sys.stderr)
        return IO_EXIT


if __name__ == "__main__":
    sys.exit(main())
