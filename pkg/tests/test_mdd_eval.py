import numpy as np
import pytest

from mddkit.losses import ErrorTags
from mddkit.mdd_eval import (
    GAP,
    MetricCounts,
    TranscriptTriple,
    align,
    categorize,
    corpus_score,
    infer_tags,
    report,
)


def _fixture_triple(predicted):
    canonical = ["s", "p", "iy", "k", "t"]
    perceived = ["s", "b", "iy", "g", "d"]
    tags = infer_tags(canonical, perceived)
    return TranscriptTriple(canonical=canonical, perceived=perceived,
                            tags=tags, predicted=predicted, id="fixture")


def test_alignment_is_levenshtein():
    ops = align(list("kitten"), list("sitting"))
    cost = sum(1 for op, _, _ in ops if op != "match")
    assert cost == 3


def test_align_empty_sides():
    assert [op for op, _, _ in align([], ["a"])] == ["ins"]
    assert [op for op, _, _ in align(["a"], [])] == ["del"]
    assert align([], []) == []


def test_fixture_counts():
    counts = categorize(_fixture_triple(["s", "p", "ih", "g", "th"]))
    assert (counts.TA, counts.FA, counts.FR, counts.TR) == (1, 1, 1, 2)
    assert (counts.CD, counts.ED) == (1, 1)


def test_fixture_rates():
    counts = categorize(_fixture_triple(["s", "p", "ih", "g", "th"]))
    rep = report(counts)
    assert rep.precision == pytest.approx(66.67, abs=0.01)
    assert rep.recall == pytest.approx(66.67, abs=0.01)
    assert rep.f1 == pytest.approx(66.67, abs=0.01)


def test_predict_perceived_is_perfect_diagnosis():
    counts = categorize(_fixture_triple(["s", "b", "iy", "g", "d"]))
    assert counts.FA == 0 and counts.FR == 0 and counts.ED == 0
    assert counts.TR == counts.CD == 3
    rep = report(counts)
    assert rep.f1 == pytest.approx(100.0)
    assert rep.per == pytest.approx(0.0)
    assert rep.cor == pytest.approx(100.0)


def test_predict_canonical_is_all_false_accepts():
    counts = categorize(_fixture_triple(["s", "p", "iy", "k", "t"]))
    assert counts.TR == 0 and counts.FR == 0
    assert counts.FA == 3
    assert report(counts).far == pytest.approx(100.0)


def test_detection_partition():
    # TA + FR covers correct sites; FA + TR covers mispronounced sites
    rng = np.random.default_rng(0)
    syms = list("abcdef")
    for _ in range(50):
        m = int(rng.integers(1, 8))
        canonical = [syms[i] for i in rng.integers(0, len(syms), size=m)]
        perceived = [s if rng.random() < 0.6 else syms[int(rng.integers(0, len(syms)))]
                     for s in canonical]
        predicted = [s if rng.random() < 0.6 else syms[int(rng.integers(0, len(syms)))]
                     for s in perceived]
        tags = infer_tags(canonical, perceived)
        counts = categorize(TranscriptTriple(canonical, perceived, tags, predicted))
        wrong = int(tags.positions.sum()) + (tags.final_insertion is not None)
        right = len(canonical) - int(tags.positions.sum())
        assert counts.TA + counts.FR == right
        assert counts.FA + counts.TR == wrong
        assert counts.TR == counts.CD + counts.ED
        assert counts.N == len(perceived)


def test_infer_tags_round_trip():
    rng = np.random.default_rng(1)
    syms = list("abcdefgh")
    ok = 0
    for _ in range(200):
        m = int(rng.integers(1, 10))
        canonical = [syms[i] for i in rng.integers(0, len(syms), size=m)]
        perceived = []
        for s in canonical:
            r = rng.random()
            if r < 0.1:
                continue  # deletion
            if r < 0.25:
                perceived.append(syms[int(rng.integers(0, len(syms)))])
            else:
                perceived.append(s)
        try:
            tags = infer_tags(canonical, perceived)
        except ValueError:
            continue
        assert tags.apply(canonical) == perceived
        ok += 1
    assert ok > 150


def test_infer_tags_insertion_attaches_to_following_site():
    tags = infer_tags(["a", "b"], ["a", "x", "b"])
    assert tags.types == ["correct", "insertion"]
    assert tags.realized[1] == "x"
    assert tags.apply(["a", "b"]) == ["a", "x", "b"]


def test_infer_tags_final_insertion():
    tags = infer_tags(["a"], ["a", "x"])
    assert tags.final_insertion == "x"
    assert tags.apply(["a"]) == ["a", "x"]


def test_final_insertion_counts_as_mispronounced_site():
    canonical = ["a"]
    perceived = ["a", "x"]
    tags = infer_tags(canonical, perceived)
    # predicting only the canonical token misses the trailing insertion
    counts = categorize(TranscriptTriple(canonical, perceived, tags, ["a"]))
    assert counts.FA == 1
    # predicting it exactly diagnoses the site
    counts = categorize(TranscriptTriple(canonical, perceived, tags, ["a", "x"]))
    assert counts.TR == 1 and counts.CD == 1


def test_deletion_detected_by_predicted_gap():
    canonical = ["a", "b", "c"]
    perceived = ["a", "c"]
    tags = infer_tags(canonical, perceived)
    assert tags.types[1] == "deletion"
    counts = categorize(TranscriptTriple(canonical, perceived, tags, ["a", "c"]))
    assert counts.TR == 1 and counts.CD == 1
    counts = categorize(TranscriptTriple(canonical, perceived, tags, ["a", "b", "c"]))
    assert counts.FA == 1


def test_recognition_counts_from_perceived_alignment():
    triple = _fixture_triple(["s", "b", "iy", "g", "d"])
    counts = categorize(triple)
    assert (counts.S, counts.D, counts.I, counts.N) == (0, 0, 0, 5)
    triple = _fixture_triple(["s", "iy", "g", "d"])
    counts = categorize(triple)
    assert counts.D == 1 and counts.N == 5
    triple = _fixture_triple(["s", "b", "iy", "g", "d", "k"])
    counts = categorize(triple)
    assert counts.I == 1


def test_report_zero_denominators_are_none():
    rep = report(MetricCounts())
    assert rep.precision is None and rep.recall is None and rep.f1 is None
    assert rep.per is None and rep.cor is None


def test_corpus_score_accumulates_and_skips():
    good = _fixture_triple(["s", "p", "ih", "g", "th"])
    bad = TranscriptTriple(["a", "b"], ["a"],
                           ErrorTags(positions=[0], types=["correct"]), ["a"],
                           id="bad")
    result = corpus_score([good, bad, good])
    assert len(result.per_utterance) == 2
    assert result.skipped and result.skipped[0][0] == "bad"
    assert not result.clean
    assert result.counts.TR == 4
    assert result.report.f1 == pytest.approx(66.67, abs=0.01)
