import pytest

from owdet.analysis import size_histogram
from owdet.dataset import training_view
from owdet.ensemble import top1_pseudo
from owdet.errors import ValidationError
from owdet.evaluation import Detection, evaluate
from owdet.geometry import iou
from owdet.pseudolabel import PseudoBox, filter_against_gt, pseudo_label, top_k
from owdet.synth import ClassProfile, SourceProfile, SynthSpec, gen_corpus, perfect_source, simulate_source


def test_empty_corpus():
    ds, split = gen_corpus(SynthSpec(n_images=0))
    assert ds.images == () and ds.annotations == ()


def test_counts_and_determinism():
    spec = SynthSpec(seed=4, n_images=5, objects_per_image=(4, 4))
    ds, split = gen_corpus(spec)
    assert len(ds.annotations) == 20
    assert gen_corpus(spec) == (ds, split)
    assert gen_corpus(SynthSpec(seed=5, n_images=5, objects_per_image=(4, 4)))[0] != ds


def test_placement_constraint(corpus):
    ds, _ = corpus
    for gts in ds.annotations_by_image.values():
        for i, a in enumerate(gts):
            for b in gts[i + 1 :]:
                assert iou(a.box, b.box) <= 0.3


def test_overcrowded_image_errors():
    spec = SynthSpec(n_images=1, objects_per_image=(30, 30), image_size=(40.0, 40.0),
                     classes=(ClassProfile("big", False, (35.0, 40.0)),), max_tries=50)
    with pytest.raises(ValidationError, match="image 1"):
        gen_corpus(spec)


def test_perfect_and_silent_sources(corpus):
    ds, _ = corpus
    props = simulate_source(ds, perfect_source())
    assert [(p.image_id, p.box) for p in props] == [(a.image_id, a.box) for a in ds.annotations]
    assert all(p.objectness == 1.0 for p in props)
    silent = SourceProfile("none", {"small": 0, "medium": 0, "large": 0})
    assert simulate_source(ds, silent) == []


def test_source_determinism(corpus):
    ds, _ = corpus
    prof = SourceProfile("x", jitter=2.0, score_noise=0.1, false_positives=2.0)
    assert simulate_source(ds, prof, 3) == simulate_source(ds, prof, 3)
    assert simulate_source(ds, prof, 3) != simulate_source(ds, prof, 4)
    for p in simulate_source(ds, prof, 3):
        assert 0 <= p.objectness <= 1


def test_size_bias_shows_in_histograms():
    ds, _ = gen_corpus(SynthSpec(seed=2, n_images=300))
    small = SourceProfile("app", {"small": 0.95, "medium": 0.3, "large": 0.05})
    large = SourceProfile("geo", {"small": 0.05, "medium": 0.3, "large": 0.95})
    edges = (0.0, 32.0, 96.0, 1e9)
    hs = size_histogram([PseudoBox(0, p.image_id, p.box, p.objectness) for p in simulate_source(ds, small, 1)], edges)
    hl = size_histogram([PseudoBox(0, p.image_id, p.box, p.objectness) for p in simulate_source(ds, large, 1)], edges)
    assert hs.counts.index(max(hs.counts)) < hl.counts.index(max(hl.counts))


def test_perfect_pipeline_scores_one(corpus):
    ds, split = corpus
    dets = [Detection(p.image_id, p.box, p.objectness) for p in simulate_source(ds, perfect_source())]
    r = evaluate(dets, ds, split)
    assert r.ar_all == 1.0 and r.ar_novel == 1.0


def test_geometry_pseudo_boxes_add_novel_coverage(corpus):
    ds, split = corpus
    train = training_view(ds, split)
    geo = SourceProfile("geo", {"small": 0.2, "medium": 0.7, "large": 0.95}, jitter=1.0)
    pool = pseudo_label(train, [("geo", simulate_source(ds, geo, 0))], k=1)
    novel = [a for a in ds.annotations if a.category_id in split.novel_category_ids and a.image_id in set(train.image_ids)]
    covered = sum(1 for a in novel if any(p.image_id == a.image_id and iou(p.box, a.box) >= 0.5 for p in pool.pseudo))
    assert covered > 0  # the GT-only pool covers none of them
