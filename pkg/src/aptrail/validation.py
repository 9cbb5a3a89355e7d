"""Annotation-based accuracy harness.

Images are partitioned by pipeline outcome, sampled into a fixed worklist,
independently annotated by reviewers, and scored: dual-reviewer agreement
defines ground truth, and per-image confusion counts roll up into accuracy,
precision, and false-positive-rate figures.
"""

from __future__ import annotations

import csv
import enum
import json
import random
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

from .model import MacAddress, MacCandidate, parse_mac

ANNOTATION_FLAGS = frozenset({"redacted", "placeholder", "uncertain"})


class TooFewReviewers(ValueError):
    """Ground truth needs two independent reviewers per image."""


class InsufficientImages(ValueError):
    """A partition cannot supply the requested sample size."""


class DegenerateDenominator(ArithmeticError):
    """A metric's denominator is zero; the value is undefined."""


@dataclass(frozen=True)
class AnnotationRecord:
    image_id: str
    reviewer_id: str
    macs: tuple[MacAddress, ...] = ()
    flags: frozenset[str] = frozenset()

    def __post_init__(self):
        bad = set(self.flags) - ANNOTATION_FLAGS
        if bad:
            raise ValueError(f"unknown annotation flags: {sorted(bad)}")

    @property
    def recorded_presence(self) -> bool:
        """The reviewer saw an address: transcribed or placeholdered."""
        return bool(self.macs) or "placeholder" in self.flags


def annotation_to_record(a: AnnotationRecord) -> dict:
    return {
        "image_id": a.image_id,
        "reviewer_id": a.reviewer_id,
        "macs": [m.canonical for m in a.macs],
        "flags": sorted(a.flags),
    }


def annotation_from_record(rec: dict) -> AnnotationRecord:
    return AnnotationRecord(
        image_id=rec["image_id"],
        reviewer_id=rec["reviewer_id"],
        macs=tuple(parse_mac(m) for m in rec.get("macs", ())),
        flags=frozenset(rec.get("flags", ())),
    )


def load_annotations(path: str | Path) -> list[AnnotationRecord]:
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(annotation_from_record(json.loads(line)))
    return out


def dump_annotations(path: str | Path,
                     annotations: Iterable[AnnotationRecord]) -> int:
    count = 0
    with open(path, "w", encoding="utf-8") as fh:
        for a in annotations:
            fh.write(json.dumps(annotation_to_record(a), sort_keys=True)
                     + "\n")
            count += 1
    return count


class Partition(str, enum.Enum):
    P1 = "P1"
    P2 = "P2"
    P3 = "P3"


WORD_LIMIT = 10


@dataclass(frozen=True)
class ImageEvidence:
    """Pipeline outcome for one image: candidates plus OCR volume."""

    image_id: str
    candidates: tuple[MacCandidate, ...] = ()
    word_count: int = 0

    def __post_init__(self):
        if self.word_count < 0:
            raise ValueError("word_count must be >= 0")

    @property
    def valid_macs(self) -> frozenset[str]:
        return frozenset(c.mac.canonical for c in self.candidates
                         if c.oui_valid)


def ocr_word_count(results) -> int:
    """Whitespace-token count over every recognized line."""
    return sum(len(line.text.split())
               for result in results for line in result.lines)


def partition_of(evidence: ImageEvidence) -> Partition:
    if evidence.candidates:
        return Partition.P1
    if evidence.word_count <= WORD_LIMIT:
        return Partition.P2
    return Partition.P3


def partition_images(evidences: Iterable[ImageEvidence]
                     ) -> dict[str, Partition]:
    return {e.image_id: partition_of(e) for e in evidences}


def sample_for_annotation(partition_by_image: Mapping[str, Partition],
                          n_per_partition: int, seed: int) -> list[str]:
    """Fixed-size per-partition sample, shuffled into one worklist.

    Pools are sorted before sampling so the result depends only on the
    seed and membership, not on mapping iteration order.
    """
    rng = random.Random(seed)
    worklist: list[str] = []
    for part in Partition:
        pool = sorted(iid for iid, p in partition_by_image.items()
                      if p is part)
        if len(pool) < n_per_partition:
            raise InsufficientImages(
                f"{part.value} holds {len(pool)} images,"
                f" need {n_per_partition}")
        worklist.extend(rng.sample(pool, n_per_partition))
    rng.shuffle(worklist)
    return worklist


@dataclass(frozen=True)
class GroundTruth:
    image_id: str
    accepted: frozenset[str]
    inconclusive: bool
    reviewer_ids: tuple[str, str]


def resolve_ground_truth(annotations: Sequence[AnnotationRecord],
                         pipeline_had_candidates: bool) -> GroundTruth:
    """Intersect the first two reviewers (by reviewer id) for one image.

    An image is inconclusive when the pipeline saw candidates, the two
    reviewers could not agree on a single address, yet at least one of
    them recorded an address or a placeholder: there probably is a MAC
    in the image, but no trustworthy transcription of it.
    """
    if not annotations:
        raise TooFewReviewers("no annotations for image")
    image_id = annotations[0].image_id
    for a in annotations:
        if a.image_id != image_id:
            raise ValueError(
                f"mixed image ids: {a.image_id!r} vs {image_id!r}")
    by_reviewer: dict[str, AnnotationRecord] = {}
    for a in annotations:
        by_reviewer.setdefault(a.reviewer_id, a)
    if len(by_reviewer) < 2:
        raise TooFewReviewers(
            f"image {image_id}: {len(by_reviewer)} reviewer(s), need 2")
    first, second = (by_reviewer[rid]
                     for rid in sorted(by_reviewer)[:2])
    accepted = frozenset(m.canonical for m in first.macs) & frozenset(
        m.canonical for m in second.macs)
    inconclusive = (pipeline_had_candidates and not accepted
                    and (first.recorded_presence
                         or second.recorded_presence))
    return GroundTruth(
        image_id=image_id,
        accepted=accepted,
        inconclusive=inconclusive,
        reviewer_ids=(first.reviewer_id, second.reviewer_id),
    )


@dataclass
class ConfusionCounts:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0

    def __post_init__(self):
        if min(self.tp, self.fp, self.fn, self.tn) < 0:
            raise ValueError("confusion counts must be >= 0")

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(self.tp + other.tp, self.fp + other.fp,
                               self.fn + other.fn, self.tn + other.tn)

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn


def classify(pipeline_macs: Iterable[str | MacAddress],
             accepted: Iterable[str | MacAddress]) -> ConfusionCounts:
    """Per-image confusion contribution over unique canonical addresses."""
    pipeline = {m.canonical if isinstance(m, MacAddress) else m
                for m in pipeline_macs}
    truth = {m.canonical if isinstance(m, MacAddress) else m
             for m in accepted}
    return ConfusionCounts(
        tp=len(pipeline & truth),
        fp=len(pipeline - truth),
        fn=len(truth - pipeline),
        tn=1 if not pipeline and not truth else 0,
    )


@dataclass(frozen=True)
class MetricsReport:
    accuracy: Fraction
    precision: Optional[Fraction]
    false_positive_rate: Optional[Fraction]


def accuracy_of(counts: ConfusionCounts) -> Fraction:
    if counts.total == 0:
        raise DegenerateDenominator("no classified addresses")
    return Fraction(counts.tp + counts.tn, counts.total)


def metrics(counts: ConfusionCounts) -> MetricsReport:
    """Exact rational metrics; ratios with empty denominators are None."""
    acc = accuracy_of(counts)
    precision = (Fraction(counts.tp, counts.tp + counts.fp)
                 if counts.tp + counts.fp else None)
    fpr = (Fraction(counts.fp, counts.fp + counts.tn)
           if counts.fp + counts.tn else None)
    return MetricsReport(accuracy=acc, precision=precision,
                         false_positive_rate=fpr)


def weighted_accuracy(per_partition: Mapping[Partition, ConfusionCounts],
                      weights: Mapping[Partition, Fraction | float | str],
                      basis: str = "count_mass") -> Fraction:
    """Corpus-share-weighted accuracy.

    count_mass scales each partition's raw counts by its corpus share
    before dividing (small annotation partitions stop dominating);
    accuracy_mean is the plain weighted mean of per-partition accuracies.
    The two disagree whenever partition sample sizes differ.
    """
    if basis not in ("count_mass", "accuracy_mean"):
        raise ValueError(f"unknown basis {basis!r}")
    w = {p: Fraction(str(weights[p])) for p in per_partition}
    if basis == "count_mass":
        num = sum((w[p] * (c.tp + c.tn)
                   for p, c in per_partition.items()), Fraction(0))
        den = sum((w[p] * c.total
                   for p, c in per_partition.items()), Fraction(0))
        if den == 0:
            raise DegenerateDenominator("weighted count mass is zero")
        return num / den
    num = sum((w[p] * accuracy_of(c)
               for p, c in per_partition.items()), Fraction(0))
    den = sum((w[p] for p in per_partition), Fraction(0))
    if den == 0:
        raise DegenerateDenominator("weights sum to zero")
    return num / den


@dataclass
class ValidationReport:
    per_partition: dict[Partition, ConfusionCounts] = field(
        default_factory=lambda: {p: ConfusionCounts() for p in Partition})
    inconclusive: list[str] = field(default_factory=list)
    ground_truth: dict[str, GroundTruth] = field(default_factory=dict)

    @property
    def totals(self) -> ConfusionCounts:
        out = ConfusionCounts()
        for counts in self.per_partition.values():
            out = out + counts
        return out


def run_validation(evidences: Mapping[str, ImageEvidence],
                   annotations: Iterable[AnnotationRecord],
                   sampled: Optional[Sequence[str]] = None
                   ) -> ValidationReport:
    """Score annotated images against pipeline output.

    Only valid-OUI pipeline addresses count; inconclusive images are
    listed and contribute nothing to the confusion counts.
    """
    grouped: dict[str, list[AnnotationRecord]] = {}
    wanted = set(sampled) if sampled is not None else None
    for a in annotations:
        if wanted is not None and a.image_id not in wanted:
            continue
        grouped.setdefault(a.image_id, []).append(a)
    report = ValidationReport()
    for image_id in sorted(grouped):
        evidence = evidences.get(image_id)
        if evidence is None:
            raise ValueError(f"no pipeline evidence for image {image_id}")
        gt = resolve_ground_truth(
            grouped[image_id],
            pipeline_had_candidates=bool(evidence.candidates))
        report.ground_truth[image_id] = gt
        if gt.inconclusive:
            report.inconclusive.append(image_id)
            continue
        part = partition_of(evidence)
        report.per_partition[part] = report.per_partition[part] + classify(
            evidence.valid_macs, gt.accepted)
    return report


def write_metrics_csv(path: str | Path, report: ValidationReport,
                      weights: Optional[Mapping[Partition, Fraction | float]]
                      = None) -> None:
    def fmt(value: Optional[Fraction]) -> str:
        return "" if value is None else f"{float(value):.6f}"

    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["partition", "tp", "fp", "fn", "tn",
                         "accuracy", "precision", "false_positive_rate"])
        for part in Partition:
            counts = report.per_partition[part]
            if counts.total == 0:
                writer.writerow([part.value, 0, 0, 0, 0, "", "", ""])
                continue
            m = metrics(counts)
            writer.writerow([part.value, counts.tp, counts.fp, counts.fn,
                             counts.tn, fmt(m.accuracy), fmt(m.precision),
                             fmt(m.false_positive_rate)])
        totals = report.totals
        if totals.total:
            m = metrics(totals)
            writer.writerow(["total", totals.tp, totals.fp, totals.fn,
                             totals.tn, fmt(m.accuracy), fmt(m.precision),
                             fmt(m.false_positive_rate)])
        if weights is not None:
            for basis in ("count_mass", "accuracy_mean"):
                try:
                    value = weighted_accuracy(report.per_partition, weights,
                                              basis=basis)
                except DegenerateDenominator:
                    value = None
                writer.writerow([f"weighted_accuracy_{basis}", "", "", "",
                                 "", fmt(value), "", ""])
        writer.writerow(["inconclusive_images",
                         len(report.inconclusive), "", "", "", "", "", ""])
