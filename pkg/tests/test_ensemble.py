import itertools

import pytest
from hypothesis import given
from hypothesis import strategies as st

from owdet.errors import ValidationError
from owdet.evaluation import EvalConfig, EvalReport, RecallCounts
from owdet.geometry import BBox
from owdet.ensemble import (
    SourceCandidate,
    greedy_order,
    greedy_selections,
    pairwise_overlap,
    top1_boxes,
    utility,
)
from owdet.pseudolabel import PseudoBox


def grid(n, offset=0.0):
    return {i: BBox(offset + 10 * i, 0, offset + 10 * i + 8, 8) for i in range(1, n + 1)}


def report(ar_novel, dataset="hold", split="voc"):
    matched = round(ar_novel * 1000)
    return EvalReport(dataset, split, EvalConfig(iou_thresholds=(0.5,)), RecallCounts((1000,), 1000), RecallCounts((matched,), 1000))


def test_pairwise_overlap_examples():
    a = grid(4)
    assert pairwise_overlap(a, a) == 1.0
    assert pairwise_overlap(a, grid(4, offset=1000)) == 0.0
    b = dict(grid(4, offset=1000))
    b[2] = a[2]
    assert pairwise_overlap(a, b) == 0.25
    assert pairwise_overlap(a, {99: BBox(0, 0, 1, 1)}) is None


def test_pairwise_overlap_skips_unshared_images():
    a = grid(4)
    b = {1: a[1], 2: a[2]}
    assert pairwise_overlap(a, b) == 1.0


def test_top1_boxes():
    boxes = [PseudoBox(1, 1, BBox(0, 0, 1, 1), 0.4), PseudoBox(2, 1, BBox(2, 2, 3, 3), 0.9), PseudoBox(3, 2, BBox(0, 0, 2, 2), 0.1)]
    assert top1_boxes(boxes) == {1: BBox(2, 2, 3, 3), 2: BBox(0, 0, 2, 2)}


def test_utility_examples():
    assert utility(report(0.33), 0.33) == 0.0
    assert utility(report(0.39), 0.33) == pytest.approx(0.06)
    assert utility(report(0.30), 0.33) < 0
    assert utility(report(0.39), report(0.33)) == pytest.approx(0.06)
    with pytest.raises(ValidationError):
        utility(report(0.39), report(0.33, dataset="other"))


def test_single_candidate():
    assert greedy_order([SourceCandidate("depth", grid(3), 0.05)]) == ["depth"]


def test_disjoint_candidates_ordered_by_utility():
    cands = [SourceCandidate("a", grid(3), 0.01), SourceCandidate("b", grid(3, offset=500), 0.04)]
    assert greedy_order(cands) == ["b", "a"]


def test_duplicate_disjoint_trio():
    a = SourceCandidate("A", grid(4), 0.06)
    b = SourceCandidate("B", grid(4), 0.05)  # duplicates A's top-1 boxes
    c = SourceCandidate("C", grid(4, offset=1000), 0.03)
    for perm in itertools.permutations([a, b, c]):
        assert greedy_order(list(perm)) == ["A", "C", "B"]
    trace = greedy_selections([a, b, c])
    assert [s.uniqueness for s in trace] == [1.0, 1.0, 0.0]
    assert trace[2].score == 0.0


def test_ties_broken_by_tag():
    cands = [SourceCandidate(t, grid(2, offset=100 * i), 0.02) for i, t in enumerate("zyx")]
    assert greedy_order(cands) == ["x", "y", "z"]


def test_rejects_empty_and_duplicates():
    with pytest.raises(ValidationError):
        greedy_order([])
    with pytest.raises(ValidationError):
        greedy_order([SourceCandidate("a", {}, 0.1), SourceCandidate("a", {}, 0.2)])


@st.composite
def candidate_sets(draw):
    n = draw(st.integers(1, 5))
    out = []
    for i in range(n):
        offsets = draw(st.lists(st.sampled_from([0.0, 3.0, 500.0]), min_size=4, max_size=4))
        top1 = {j + 1: BBox(o + 10 * j, 0, o + 10 * j + 8, 8) for j, o in enumerate(offsets)}
        out.append(SourceCandidate(f"s{i}", top1, draw(st.floats(-0.1, 0.1))))
    return out


@given(candidate_sets())
def test_greedy_properties(cands):
    order = greedy_order(cands)
    assert sorted(order) == sorted(c.source_tag for c in cands)
    best = max(c.utility for c in cands)
    assert {c.source_tag: c.utility for c in cands}[order[0]] == best
    assert greedy_order(list(reversed(cands))) == order
    # every pick maximises utility * (1 - max overlap) among what was left
    by_tag = {c.source_tag: c for c in cands}
    for step, tag in enumerate(order[1:], start=1):
        chosen = [by_tag[t] for t in order[:step]]

        def score(c):
            ov = [pairwise_overlap(c.top1, s.top1) for s in chosen]
            return c.utility * (1 - max([o for o in ov if o is not None], default=0.0))

        left = [by_tag[t] for t in order[step:]]
        assert score(by_tag[tag]) == max(score(c) for c in left)


def test_exact_duplicate_never_beats_positive_score():
    a = SourceCandidate("a", grid(4), 0.1)
    dup = SourceCandidate("dup", grid(4), 0.09)
    c = SourceCandidate("c", grid(4, offset=300), 0.001)
    assert greedy_order([a, dup, c]).index("c") < greedy_order([a, dup, c]).index("dup")
