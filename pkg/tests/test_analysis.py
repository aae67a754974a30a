import pytest

from owdet.analysis import (
    DEFAULT_SIZE_EDGES,
    TableLayout,
    overlap_matrix,
    parse_table,
    render_table,
    size_histogram,
)
from owdet.errors import ValidationError
from owdet.evaluation import EvalConfig, EvalReport, RecallCounts
from owdet.geometry import BBox
from owdet.pseudolabel import PseudoBox


def grid(n, offset=0.0):
    return {i: BBox(offset + 10 * i, 0, offset + 10 * i + 8, 8) for i in range(1, n + 1)}


def square(side, image_id=1):
    return PseudoBox(image_id, image_id, BBox(0, 0, side, side), 0.9)


def test_overlap_matrix_identical_and_disjoint():
    m = overlap_matrix([("a", grid(3)), ("b", grid(3))])
    assert m.values == ((1.0, 1.0), (1.0, 1.0))
    m = overlap_matrix([("a", grid(3)), ("b", grid(3, 500))])
    assert m.values == ((1.0, 0.0), (0.0, 1.0))


def test_overlap_matrix_hand_counted():
    a = grid(4)
    b = {1: a[1], 2: a[2], 3: BBox(900, 0, 908, 8), 4: BBox(950, 0, 958, 8)}
    c = {1: a[1], 2: BBox(700, 0, 708, 8), 3: b[3], 5: BBox(0, 0, 1, 1)}
    m = overlap_matrix([("a", a), ("b", b), ("c", c)])
    # a-c share images 1,2,3 -> only image 1 agrees; b-c share 1,2,3 -> images 1 and 3 agree
    assert m.values == (
        (1.0, 0.5, pytest.approx(1 / 3)),
        (0.5, 1.0, pytest.approx(2 / 3)),
        (pytest.approx(1 / 3), pytest.approx(2 / 3), 1.0),
    )


def test_overlap_matrix_needs_two():
    with pytest.raises(ValidationError):
        overlap_matrix([("a", grid(2))])


def test_histogram_examples():
    h = size_histogram([], DEFAULT_SIZE_EDGES)
    assert sum(h.counts) == 0 and h.overflow == 0
    h = size_histogram([square(32)], (0, 32, 96, float("inf")))
    assert h.counts == (0, 1, 0)
    h = size_histogram([square(40)] * 7)
    assert sorted(h.counts)[-1] == 7 and h.total == 7


def test_histogram_edges_and_overflow():
    h = size_histogram([square(512), square(600), square(0)])
    assert h.counts[-1] == 1  # last bin is closed
    assert h.overflow == 1
    assert h.counts[0] == 1
    assert h.total == 3
    with pytest.raises(ValidationError):
        size_histogram([], (0, 10, 10))


def _report(name, ar_all, ar_novel):
    cfg = EvalConfig(iou_thresholds=(0.5,))
    return EvalReport(name, "voc", cfg, RecallCounts((round(ar_all * 1000),), 1000), RecallCounts((round(ar_novel * 1000),), 1000))


def test_render_single_row():
    text = render_table([_report("x", 0.5, 0.25)], TableLayout(columns=(("AR_A", "ar_all"), ("AR_N", "ar_novel"))))
    assert text.count("\n") == 3
    assert "50.0" in text and "25.0" in text and "**" not in text


def test_render_marks_maxima_and_round_trips():
    reps = [_report("oln", 0.334, 0.281), _report("good", 0.391, 0.262)]
    layout = TableLayout(columns=(("AR_A", "ar_all"), ("AR_N", "ar_novel")))
    text = render_table(reps, layout)
    assert "**39.1**" in text and "**28.1**" in text
    parsed = parse_table(text)
    assert parsed["oln"]["AR_A"] == pytest.approx(0.334, abs=1e-3)
    assert parsed["good"]["AR_N"] == pytest.approx(0.262, abs=1e-3)
    assert render_table(reps, layout) == text


def test_render_rejects_mismatch():
    with pytest.raises(ValidationError):
        render_table([_report("a", 0.1, 0.1)], TableLayout(row_labels=("a", "b")))
    with pytest.raises(ValidationError):
        render_table([_report("a", 0.1, 0.1)], TableLayout(columns=(("X", "nope"),)))
    other = EvalReport("b", "voc", EvalConfig(), RecallCounts((0,) * 10, 1), RecallCounts((0,) * 10, 1))
    with pytest.raises(ValidationError):
        render_table([_report("a", 0.1, 0.1), other])
