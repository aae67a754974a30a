"""Drive every CLI subcommand over one synthetic corpus."""

import json
from pathlib import Path

from owdet.cli import main

SOURCES = ("depth", "normal", "pa", "edge", "rgb")


def loss_check_input(path: Path) -> Path:
    data = {
        "image_size": [100, 80],
        "iou_threshold": 0.5,
        "candidates": [
            {"id": 0, "box": [0, 0, 10, 10], "label_prob": 0.9, "pred_box": [1, 0, 10, 10], "objectness": 0.8},
            {"id": 1, "box": [40, 40, 60, 60], "label_prob": 0.2, "pred_box": [40, 40, 60, 61], "objectness": 0.7},
            {"id": 2, "box": [80, 0, 90, 5], "label_prob": 0.3, "pred_box": [80, 0, 90, 5], "objectness": 0.1},
        ],
        "base": [{"id": 1, "bbox": [0, 0, 10, 10]}],
        "pseudo": [{"id": 5, "bbox": [40, 40, 20, 20], "score": 0.9}],
    }
    path.write_text(json.dumps(data))
    return path


def run_all(root: Path, seed: int, threads: int, n_images: int = 30) -> Path:
    """Run every subcommand; returns the root holding all outputs."""
    root = Path(root)
    t = ["--threads", str(threads), "--seed", str(seed)]
    s = root / "synth"

    def ok(args):
        code = main(args + t)
        assert code == 0, (args, code)

    ok(["synth", "--out", str(s), "--n-images", str(n_images), "--holdout-fraction", "0.2"])
    ds, split = str(s / "dataset.json"), str(s / "split.json")
    ok(["split-stats", "--dataset", ds, "--split", split, "--out", str(root / "stats")])
    pools, reports = [], []
    for tag in SOURCES:
        ok(["pseudo-label", "--dataset", ds, "--split", split, "--proposals", f"{tag}={s / f'proposals_{tag}.json'}",
            "--k", "1", "--out", str(root / f"pool_{tag}")])
        ok(["evaluate", "--dataset", str(s / "holdout.json"), "--split", split,
            "--detections", str(s / f"proposals_{tag}.json"), "--reference", str(s / "proposals_rgb.json"),
            "--out", str(root / f"eval_{tag}")])
        pools += ["--pools", f"{tag}={root / f'pool_{tag}' / 'pool.json'}"]
        reports += ["--reports", f"{tag}={root / f'eval_{tag}' / 'report.json'}"]
    ok(["pseudo-label", "--dataset", ds, "--split", split,
        "--proposals", f"depth={s / 'proposals_depth.json'}", "--proposals", f"normal={s / 'proposals_normal.json'}",
        "--k", "2", "--holdout-fraction", "0.2", "--out", str(root / "pool_both")])
    ok(["evaluate", "--dataset", str(s / "holdout.json"), "--split", split,
        "--detections", str(s / "proposals_perfect.json"), "--out", str(root / "eval_baseline")])
    ok(["ensemble-order", *pools, *reports, "--baseline-ar", "0.2", "--out", str(root / "order")])
    ok(["analyze", *pools, *reports, "--out", str(root / "analysis")])
    ok(["loss-check", "--assignment", str(loss_check_input(root / "assign.json")), "--out", str(root / "loss")])
    return root


def snapshot(root: Path) -> dict[str, bytes]:
    root = Path(root)
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}
