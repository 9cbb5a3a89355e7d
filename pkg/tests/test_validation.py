"""Partitioning, sampling, reviewer agreement, and confusion metrics."""

from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from aptrail.extraction import OcrLine, SegmentResult
from aptrail.model import MacCandidate, parse_mac
from aptrail.validation import (
    AnnotationRecord,
    ConfusionCounts,
    DegenerateDenominator,
    ImageEvidence,
    InsufficientImages,
    Partition,
    TooFewReviewers,
    annotation_from_record,
    annotation_to_record,
    classify,
    dump_annotations,
    load_annotations,
    metrics,
    ocr_word_count,
    partition_images,
    partition_of,
    resolve_ground_truth,
    run_validation,
    sample_for_annotation,
    weighted_accuracy,
    write_metrics_csv,
)

M1 = "aabbcc000001"
M2 = "aabbcc000002"
M3 = "aabbcc000003"
M4 = "aabbcc000004"


def cand(mac_text, valid=True):
    m = parse_mac(mac_text)
    return MacCandidate(mac=m, raw_match=m.canonical, listing_id="L",
                        image_id="I", oui_valid=valid)


def ev(image_id, n_cands=0, words=0, valid=True):
    cands = tuple(cand(f"aabbcc{i:06x}", valid=valid)
                  for i in range(1, n_cands + 1))
    return ImageEvidence(image_id=image_id, candidates=cands,
                         word_count=words)


def ann(image, reviewer, macs=(), flags=()):
    return AnnotationRecord(image_id=image, reviewer_id=reviewer,
                            macs=tuple(parse_mac(m) for m in macs),
                            flags=frozenset(flags))


# Table of frozen whole-corpus confusion counts used across metric tests.
P1_COUNTS = ConfusionCounts(tp=150, fp=60, fn=22, tn=63)
P2_COUNTS = ConfusionCounts(tp=0, fp=0, fn=2, tn=245)
P3_COUNTS = ConfusionCounts(tp=0, fp=0, fn=2, tn=238)
TOTAL_COUNTS = P1_COUNTS + P2_COUNTS + P3_COUNTS
SHARE_WEIGHTS = {Partition.P1: 0.088, Partition.P2: 0.338,
                 Partition.P3: 0.574}


# ------------------------------------------------------------- annotations

def test_annotation_rejects_unknown_flag():
    with pytest.raises(ValueError):
        AnnotationRecord(image_id="i", reviewer_id="r",
                         flags=frozenset({"sideways"}))


def test_annotation_recorded_presence():
    assert ann("i", "r", macs=[M1]).recorded_presence
    assert ann("i", "r", flags={"placeholder"}).recorded_presence
    assert not ann("i", "r", flags={"redacted"}).recorded_presence
    assert not ann("i", "r").recorded_presence


def test_annotation_record_roundtrip(tmp_path):
    a = ann("img9", "rev2", macs=[M1, M2], flags={"uncertain"})
    rec = annotation_to_record(a)
    assert rec["macs"] == [M1, M2]
    assert annotation_from_record(rec) == a
    path = tmp_path / "ann.jsonl"
    assert dump_annotations(path, [a]) == 1
    assert load_annotations(path) == [a]


# ------------------------------------------------------------- partitioning

def test_invalid_oui_candidate_still_p1():
    assert partition_of(ev("i", n_cands=1, words=50, valid=False)) \
        is Partition.P1


def test_no_candidates_few_words_p2():
    assert partition_of(ev("i", words=7)) is Partition.P2


def test_no_candidates_many_words_p3():
    assert partition_of(ev("i", words=30)) is Partition.P3


def test_word_limit_boundary():
    assert partition_of(ev("i", words=10)) is Partition.P2
    assert partition_of(ev("i", words=11)) is Partition.P3


@settings(max_examples=200, deadline=None)
@given(n_cands=st.integers(min_value=0, max_value=3),
       words=st.integers(min_value=0, max_value=40),
       valid=st.booleans())
def test_partition_total_and_single(n_cands, words, valid):
    part = partition_of(ev("i", n_cands=n_cands, words=words, valid=valid))
    if n_cands:
        assert part is Partition.P1
    elif words <= 10:
        assert part is Partition.P2
    else:
        assert part is Partition.P3


def test_partition_images_maps_every_image():
    evidences = [ev("a", n_cands=1), ev("b", words=3), ev("c", words=30)]
    parts = partition_images(evidences)
    assert parts == {"a": Partition.P1, "b": Partition.P2,
                     "c": Partition.P3}


def test_ocr_word_count():
    box = ((0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0))
    results = [
        SegmentResult(segment_index=0, rotation_deg=0, lines=(
            OcrLine(text="MAC AA:BB:CC:DD:EE:FF", confidence=0.9, box=box),
            OcrLine(text="Model X20", confidence=0.9, box=box),
        )),
        SegmentResult(segment_index=1, rotation_deg=0, lines=(
            OcrLine(text="serial 12345", confidence=0.9, box=box),
        )),
    ]
    assert ocr_word_count(results) == 6


# ----------------------------------------------------------------- sampling

def big_partition_map():
    parts = {}
    for i in range(300):
        parts[f"p1-{i:03d}"] = Partition.P1
        parts[f"p2-{i:03d}"] = Partition.P2
        parts[f"p3-{i:03d}"] = Partition.P3
    return parts


def test_sample_750_worklist():
    worklist = sample_for_annotation(big_partition_map(), 250, seed=7)
    assert len(worklist) == 750
    assert len(set(worklist)) == 750
    for tag in ("p1-", "p2-", "p3-"):
        assert sum(1 for iid in worklist if iid.startswith(tag)) == 250


def test_sample_deterministic_for_seed():
    parts = big_partition_map()
    assert sample_for_annotation(parts, 250, seed=7) == \
        sample_for_annotation(parts, 250, seed=7)
    assert sample_for_annotation(parts, 250, seed=7) != \
        sample_for_annotation(parts, 250, seed=8)


def test_sample_independent_of_dict_order():
    parts = big_partition_map()
    reversed_parts = dict(reversed(list(parts.items())))
    assert sample_for_annotation(parts, 100, seed=3) == \
        sample_for_annotation(reversed_parts, 100, seed=3)


def test_sample_order_is_mixed():
    worklist = sample_for_annotation(big_partition_map(), 250, seed=7)
    first_block = worklist[:250]
    assert any(not iid.startswith("p1-") for iid in first_block)


def test_sample_insufficient_partition():
    parts = {f"p1-{i}": Partition.P1 for i in range(100)}
    parts.update({f"p2-{i}": Partition.P2 for i in range(300)})
    parts.update({f"p3-{i}": Partition.P3 for i in range(300)})
    with pytest.raises(InsufficientImages):
        sample_for_annotation(parts, 250, seed=1)


# ------------------------------------------------------------- ground truth

def test_agreement_accepted():
    gt = resolve_ground_truth(
        [ann("i", "r1", macs=[M1]), ann("i", "r2", macs=[M1])],
        pipeline_had_candidates=True)
    assert gt.accepted == {M1}
    assert not gt.inconclusive
    assert gt.reviewer_ids == ("r1", "r2")


def test_disagreement_inconclusive_with_candidates():
    gt = resolve_ground_truth(
        [ann("i", "r1", macs=[M1]), ann("i", "r2", macs=[M2])],
        pipeline_had_candidates=True)
    assert gt.accepted == frozenset()
    assert gt.inconclusive


def test_disagreement_without_candidates_not_inconclusive():
    gt = resolve_ground_truth(
        [ann("i", "r1", macs=[M1]), ann("i", "r2", macs=[M2])],
        pipeline_had_candidates=False)
    assert not gt.inconclusive


def test_double_empty_clean_negative():
    gt = resolve_ground_truth(
        [ann("i", "r1"), ann("i", "r2")], pipeline_had_candidates=True)
    assert gt.accepted == frozenset()
    assert not gt.inconclusive


def test_placeholder_presence_makes_inconclusive():
    gt = resolve_ground_truth(
        [ann("i", "r1", flags={"placeholder"}), ann("i", "r2")],
        pipeline_had_candidates=True)
    assert gt.inconclusive


def test_first_two_reviewers_by_id():
    gt = resolve_ground_truth(
        [ann("i", "r3", macs=[M1]), ann("i", "r1", macs=[M1]),
         ann("i", "r2")],
        pipeline_had_candidates=True)
    # r1 and r2 are the pair; r3's matching annotation is ignored
    assert gt.reviewer_ids == ("r1", "r2")
    assert gt.accepted == frozenset()
    assert gt.inconclusive


def test_duplicate_reviewer_records_keep_first():
    gt = resolve_ground_truth(
        [ann("i", "r1", macs=[M1]), ann("i", "r1", macs=[M2]),
         ann("i", "r2", macs=[M1])],
        pipeline_had_candidates=True)
    assert gt.accepted == {M1}


def test_too_few_reviewers():
    with pytest.raises(TooFewReviewers):
        resolve_ground_truth([ann("i", "r1", macs=[M1])],
                             pipeline_had_candidates=True)
    with pytest.raises(TooFewReviewers):
        resolve_ground_truth([], pipeline_had_candidates=False)


def test_mixed_image_ids_rejected():
    with pytest.raises(ValueError):
        resolve_ground_truth(
            [ann("i", "r1"), ann("j", "r2")], pipeline_had_candidates=False)


# ----------------------------------------------------------- classification

def test_classify_tp_and_fp():
    counts = classify([M1, M2], [M1])
    assert (counts.tp, counts.fp, counts.fn, counts.tn) == (1, 1, 0, 0)


def test_classify_double_empty_tn():
    counts = classify([], [])
    assert (counts.tp, counts.fp, counts.fn, counts.tn) == (0, 0, 0, 1)


def test_classify_missed_truth_fn():
    counts = classify([], [M1])
    assert (counts.tp, counts.fp, counts.fn, counts.tn) == (0, 0, 1, 0)


def test_classify_accepts_mac_objects():
    counts = classify([parse_mac(M1)], [M1])
    assert counts.tp == 1


mac_set = st.sets(st.sampled_from([M1, M2, M3, M4]), max_size=4)


@settings(max_examples=200, deadline=None)
@given(pipeline=mac_set, truth=mac_set)
def test_classify_contribution_invariants(pipeline, truth):
    c = classify(pipeline, truth)
    assert c.tp + c.fn == len(truth)
    assert c.tp + c.fp == len(pipeline)
    assert c.tn in (0, 1)
    assert c.tn == 0 or (not pipeline and not truth)


def test_confusion_counts_validation_and_add():
    with pytest.raises(ValueError):
        ConfusionCounts(tp=-1)
    total = ConfusionCounts(1, 2, 3, 4) + ConfusionCounts(10, 20, 30, 40)
    assert (total.tp, total.fp, total.fn, total.tn) == (11, 22, 33, 44)
    assert total.total == 110


# ---------------------------------------------------------------- metrics

def test_metrics_totals_frozen_values():
    m = metrics(TOTAL_COUNTS)
    assert m.accuracy == Fraction(696, 782)
    assert m.precision == Fraction(150, 210)
    assert m.false_positive_rate == Fraction(60, 606)
    assert round(float(m.accuracy), 3) == 0.890
    assert round(float(m.precision), 3) == 0.714
    assert round(float(m.false_positive_rate), 3) == 0.099


def test_metrics_per_partition_exact():
    assert metrics(P1_COUNTS).accuracy == Fraction(213, 295)
    assert metrics(P2_COUNTS).accuracy == Fraction(245, 247)
    assert metrics(P3_COUNTS).accuracy == Fraction(238, 240)


def test_metrics_degenerate():
    with pytest.raises(DegenerateDenominator):
        metrics(ConfusionCounts())


def test_metrics_partial_denominators_none():
    m = metrics(ConfusionCounts(tp=0, fp=0, fn=2, tn=0))
    assert m.precision is None
    assert m.false_positive_rate is None
    assert m.accuracy == Fraction(0, 1)


def test_weighted_accuracy_count_mass():
    per = {Partition.P1: P1_COUNTS, Partition.P2: P2_COUNTS,
           Partition.P3: P3_COUNTS}
    value = weighted_accuracy(per, SHARE_WEIGHTS, basis="count_mass")
    assert value == Fraction(238166, 247206)
    assert round(float(value), 3) == 0.963


def test_weighted_accuracy_mean_of_accuracies():
    per = {Partition.P1: P1_COUNTS, Partition.P2: P2_COUNTS,
           Partition.P3: P3_COUNTS}
    value = weighted_accuracy(per, SHARE_WEIGHTS, basis="accuracy_mean")
    assert round(float(value), 3) == 0.968


def test_weighted_accuracy_unknown_basis():
    with pytest.raises(ValueError):
        weighted_accuracy({}, {}, basis="vibes")


# ------------------------------------------------------------ full harness

def harness_fixture():
    evidences = {
        "imgA": ImageEvidence("imgA", candidates=(cand(M1),), word_count=12),
        "imgB": ImageEvidence(
            "imgB", candidates=(cand(M2, valid=False),), word_count=9),
        "imgC": ImageEvidence("imgC", word_count=5),
        "imgD": ImageEvidence("imgD", candidates=(cand(M3),), word_count=8),
    }
    annotations = [
        ann("imgA", "r1", macs=[M1]), ann("imgA", "r2", macs=[M1]),
        ann("imgB", "r1"), ann("imgB", "r2"),
        ann("imgC", "r1", macs=[M2]), ann("imgC", "r2"),
        ann("imgD", "r1", macs=[M4]),
        ann("imgD", "r2", flags={"placeholder"}),
    ]
    return evidences, annotations


def test_run_validation_small_corpus():
    evidences, annotations = harness_fixture()
    report = run_validation(evidences, annotations)
    assert report.inconclusive == ["imgD"]
    totals = report.totals
    # imgA TP, imgB TN (all candidates invalid-OUI), imgC TN
    assert (totals.tp, totals.fp, totals.fn, totals.tn) == (1, 0, 0, 2)
    assert report.per_partition[Partition.P1].tp == 1
    assert report.per_partition[Partition.P1].tn == 1
    assert report.per_partition[Partition.P2].tn == 1


def test_run_validation_sampled_filter():
    evidences, annotations = harness_fixture()
    report = run_validation(evidences, annotations, sampled=["imgA"])
    assert report.totals.total == 1
    assert list(report.ground_truth) == ["imgA"]


def test_run_validation_missing_evidence():
    _, annotations = harness_fixture()
    with pytest.raises(ValueError):
        run_validation({}, annotations)


def test_write_metrics_csv(tmp_path):
    evidences, annotations = harness_fixture()
    report = run_validation(evidences, annotations)
    path = tmp_path / "metrics.csv"
    write_metrics_csv(path, report, weights=SHARE_WEIGHTS)
    lines = path.read_text(encoding="utf-8").splitlines()
    assert lines[0].startswith("partition,tp,fp,fn,tn,accuracy")
    assert any(row.startswith("total,1,0,0,2,1.000000") for row in lines)
    assert any(row.startswith("weighted_accuracy_count_mass")
               for row in lines)
    assert any(row.startswith("inconclusive_images,1") for row in lines)
