import json
import subprocess
import sys

import pytest

from owdet import io
from owdet.cli import build_parser, main
from owdet.evaluation import EvalConfig, EvalReport, RecallCounts
from owdet.geometry import BBox
from owdet.pseudolabel import AnnotationPool, PseudoBox

from workflow import loss_check_input, run_all

SUBCOMMANDS = ("split-stats", "pseudo-label", "evaluate", "ensemble-order", "analyze", "synth", "loss-check")


@pytest.fixture(scope="module")
def synth_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("synth")
    assert main(["synth", "--out", str(out), "--n-images", "25", "--seed", "2"]) == 0
    return out


@pytest.mark.parametrize("cmd", SUBCOMMANDS)
def test_help_lists_defaults(cmd, capsys):
    with pytest.raises(SystemExit) as e:
        main([cmd, "--help"])
    assert e.value.code == 0
    text = capsys.readouterr().out
    assert "--threads" in text and "default" in text


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "owdet.cli", "synth", "--help"], capture_output=True, text=True)
    assert res.returncode == 0 and "--n-images" in res.stdout


def test_evaluate_perfect(synth_dir, tmp_path, capsys):
    code = main(["evaluate", "--dataset", str(synth_dir / "dataset.json"), "--split", str(synth_dir / "split.json"),
                 "--detections", str(synth_dir / "proposals_perfect.json"), "--out", str(tmp_path)])
    assert code == 0
    assert "AR_A@100 100.0" in capsys.readouterr().out
    report = json.loads((tmp_path / "report.json").read_text())
    assert report["percent"]["AR_A"] == "100.0"
    assert "100.0" in (tmp_path / "report.md").read_text()


def test_pseudo_label_k1(synth_dir, tmp_path):
    code = main(["pseudo-label", "--dataset", str(synth_dir / "dataset.json"), "--split", str(synth_dir / "split.json"),
                 "--proposals", f"depth={synth_dir / 'proposals_depth.json'}", "--k", "1", "--out", str(tmp_path)])
    assert code == 0
    pseudo = io.load_pseudo(tmp_path / "pool.json")
    images = [p.image_id for p in pseudo]
    assert len(images) == len(set(images)) > 0


def test_ensemble_order_trio(tmp_path):
    grid = lambda off: tuple(PseudoBox(i, i, BBox(off + 10 * i, 0, off + 10 * i + 8, 8), 0.9, "") for i in range(1, 5))  # noqa: E731
    pools = {"A": grid(0), "B": grid(0), "C": grid(1000)}
    ars = {"A": 0.39, "B": 0.38, "C": 0.36}
    args = ["ensemble-order", "--baseline-ar", "0.33", "--out", str(tmp_path / "o")]
    for tag, boxes in pools.items():
        io.save_pool(tmp_path / f"{tag}.json", AnnotationPool((), boxes))
        r = EvalReport("hold", "voc", EvalConfig(iou_thresholds=(0.5,)), RecallCounts((0,), 100), RecallCounts((round(ars[tag] * 100),), 100))
        io.save_report(tmp_path / f"r{tag}.json", r)
        args += ["--pools", f"{tag}={tmp_path / f'{tag}.json'}", "--reports", f"{tag}={tmp_path / f'r{tag}.json'}"]
    assert main(args) == 0
    order = json.loads((tmp_path / "o" / "ordering.json").read_text())
    assert [o["source"] for o in order] == ["A", "C", "B"]
    assert order[0]["utility"] == pytest.approx(0.06)


def test_split_stats_prints(synth_dir, capsys):
    assert main(["split-stats", "--dataset", str(synth_dir / "dataset.json"), "--split", str(synth_dir / "split.json")]) == 0
    assert "synthetic" in capsys.readouterr().out


def test_loss_check(tmp_path):
    assert main(["loss-check", "--assignment", str(loss_check_input(tmp_path / "a.json")), "--out", str(tmp_path)]) == 0
    res = json.loads((tmp_path / "losses.json").read_text())
    assert [a["label"] for a in res["assignment"]] == ["base", "pseudo", "background"]
    assert res["loss_good"]["total"] >= res["loss_oln"]["total"] - 1.0


def test_config_file_defaults_and_override(synth_dir, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"dataset": str(synth_dir / "dataset.json"), "split": str(synth_dir / "split.json"),
                               "proposals": [f"depth={synth_dir / 'proposals_depth.json'}"], "k": 3}))
    assert main(["pseudo-label", "--config", str(cfg), "--out", str(tmp_path / "a")]) == 0
    assert main(["pseudo-label", "--config", str(cfg), "--k", "1", "--out", str(tmp_path / "b")]) == 0
    a = json.loads((tmp_path / "a" / "pseudo_summary.json").read_text())
    b = json.loads((tmp_path / "b" / "pseudo_summary.json").read_text())
    assert (a["k"], b["k"]) == (3, 1)
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"nonsense": 1}))
    assert main(["pseudo-label", "--config", str(bad)]) == 4


@pytest.mark.parametrize(
    "argv, code, category",
    [
        (["evaluate", "--dataset", "/nonexistent.json", "--detections", "x"], 2, "io"),
        (["pseudo-label", "--dataset", "{ds}", "--split", "{split}", "--proposals", "nope"], 4, "validation"),
        (["pseudo-label", "--dataset", "{ds}", "--split", "{split}", "--proposals", "a={ds}", "--merge-iou", "1.5"], 4, "validation"),
        (["evaluate", "--dataset", "{broken}", "--detections", "{ds}"], 3, "parse"),
        (["split-stats", "--dataset", "{ds}", "--split", "no-such-split"], 4, "validation"),
        (["synth", "--threads", "0"], 4, "validation"),
    ],
)
def test_error_categories(argv, code, category, synth_dir, tmp_path, capsys):
    broken = tmp_path / "broken.json"
    broken.write_text("{")
    fill = {"ds": str(synth_dir / "dataset.json"), "split": str(synth_dir / "split.json"), "broken": str(broken)}
    argv = [a.format(**fill) for a in argv] + ["--out", str(tmp_path / "o")]
    assert main(argv) == code
    assert f"{category} error" in capsys.readouterr().err


def test_pool_invariant_error_code(synth_dir, tmp_path, monkeypatch):
    import owdet.cli as cli

    monkeypatch.setattr(cli, "filter_against_gt", lambda props, base, thr: props)
    code = main(["pseudo-label", "--dataset", str(synth_dir / "dataset.json"), "--split", str(synth_dir / "split.json"),
                 "--proposals", f"p={synth_dir / 'proposals_perfect.json'}", "--out", str(tmp_path)])
    assert code == 5


def test_all_subcommands_run(tmp_path):
    root = run_all(tmp_path, seed=1, threads=2, n_images=20)
    order = json.loads((root / "order" / "ordering.json").read_text())
    assert sorted(o["source"] for o in order) == sorted(["depth", "normal", "pa", "edge", "rgb"])
    assert (root / "analysis" / "overlap_matrix.json").exists()
    assert (root / "analysis" / "table.md").exists()
    assert (root / "eval_depth" / "relative_diff.json").exists()


def test_parser_has_every_subcommand():
    parser = build_parser()
    choices = parser._subparsers._group_actions[0].choices  # noqa: SLF001
    assert set(SUBCOMMANDS) <= set(choices)
