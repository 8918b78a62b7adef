"""Detection scoring and replicate statistics.

The matching procedure scores detections against point annotations
independently per cell class: predictions are visited in decreasing
confidence, each claims the nearest unmatched annotation within the
valid distance (25 px at the reference resolution) or counts as a false
positive; leftover annotations are false negatives.  F1 is computed per
class from the pooled counts and averaged over the two classes (mF1).
Model comparisons pair replicate mF1 scores and use the Wilcoxon
signed-rank test, exact for small samples.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .annotations import CellAnnotation, CellClass
from .detect import Detection

DEFAULT_MATCH_DISTANCE = 25.0  # pixels at the reference resolution
EXACT_ENUMERATION_LIMIT = 25  # pairs; above this the normal approximation kicks in
SIGNIFICANCE_LEVEL = 0.05


@dataclass
class ClassCounts:
    tp: int = 0
    fp: int = 0
    fn: int = 0

    def __add__(self, other: "ClassCounts") -> "ClassCounts":
        return ClassCounts(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn)


@dataclass
class MatchCounts:
    """Per-class TP/FP/FN tallies; addable for pooling across patches."""

    per_class: dict[CellClass, ClassCounts] = field(
        default_factory=lambda: {c: ClassCounts() for c in CellClass}
    )

    def __add__(self, other: "MatchCounts") -> "MatchCounts":
        return MatchCounts(
            {c: self.per_class[c] + other.per_class[c] for c in CellClass}
        )


@dataclass
class ClassScore:
    precision: float
    recall: float
    f1: float
    empty: bool = False


@dataclass
class F1Report:
    per_class: dict[CellClass, ClassScore]
    mf1: float


@dataclass
class ReplicateScores:
    """mF1 scores from repeated stochastic inferences of one model."""

    model_id: str
    scores: list[float]

    def __post_init__(self):
        if not self.scores:
            raise ValueError("replicate score list is empty")
        for s in self.scores:
            if not 0.0 <= s <= 1.0:
                raise ValueError(f"score {s} outside [0, 1]")


@dataclass
class WilcoxonResult:
    statistic: float
    p_value: float
    n_effective: int
    method: str
    degenerate: bool = False


@dataclass
class ComparisonResult:
    model_a: str
    model_b: str
    summary_a: tuple[float, float, float]
    summary_b: tuple[float, float, float]
    statistic: float
    p_value: float
    significant: bool


def greedy_match(
    preds: list[Detection],
    gts: list[CellAnnotation],
    max_dist: float = DEFAULT_MATCH_DISTANCE,
) -> MatchCounts:
    """Confidence-ordered greedy matching, independently per cell class.

    Prediction order breaks confidence ties by row-major (y, x) then
    input index; each prediction claims the nearest unmatched annotation
    within max_dist (distance ties go to the lowest annotation index).
    """
    if max_dist < 0:
        raise ValueError(f"max_dist must be non-negative, got {max_dist}")
    max_d2 = float(max_dist) ** 2
    result = MatchCounts()
    for cls in CellClass:
        cls_preds = [(i, p) for i, p in enumerate(preds) if p.cls == cls]
        cls_gts = [g for g in gts if g.cls == cls]
        cls_preds.sort(key=lambda ip: (-ip[1].confidence, ip[1].y, ip[1].x, ip[0]))
        gx = np.asarray([g.x for g in cls_gts], dtype=np.float64)
        gy = np.asarray([g.y for g in cls_gts], dtype=np.float64)
        unmatched = np.ones(len(cls_gts), dtype=bool)
        counts = result.per_class[cls]
        for _, p in cls_preds:
            if len(cls_gts) == 0 or not unmatched.any():
                counts.fp += 1
                continue
            d2 = (gx - p.x) ** 2 + (gy - p.y) ** 2
            d2[~unmatched] = np.inf
            j = int(np.argmin(d2))  # first index wins distance ties
            if d2[j] <= max_d2:
                counts.tp += 1
                unmatched[j] = False
            else:
                counts.fp += 1
        counts.fn = int(unmatched.sum())
    return result


def f1_from_counts(counts: MatchCounts) -> F1Report:
    """Per-class precision/recall/F1 and their mean over the two classes.

    F1 uses the count form tp / (tp + 0.5*(fp + fn)).  A class with no
    predictions and no annotations scores 1.0 and is flagged empty so
    reports can exclude it.
    """
    per_class = {}
    for cls, c in counts.per_class.items():
        if c.tp == 0 and c.fp == 0 and c.fn == 0:
            per_class[cls] = ClassScore(1.0, 1.0, 1.0, empty=True)
            continue
        precision = c.tp / (c.tp + c.fp) if c.tp + c.fp > 0 else 0.0
        recall = c.tp / (c.tp + c.fn) if c.tp + c.fn > 0 else 0.0
        f1 = c.tp / (c.tp + 0.5 * (c.fp + c.fn))
        per_class[cls] = ClassScore(precision, recall, f1)
    mf1 = sum(per_class[cls].f1 for cls in CellClass) / len(CellClass)
    return F1Report(per_class, mf1)


def midranks(values: np.ndarray) -> np.ndarray:
    """1-based ranks with ties assigned the group mean rank."""
    values = np.asarray(values, dtype=np.float64)
    order = np.argsort(values, kind="stable")
    ranks = np.empty(len(values), dtype=np.float64)
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and values[order[j + 1]] == values[order[i]]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def normal_cdf(z: float) -> float:
    return 0.5 * math.erfc(-z / math.sqrt(2.0))


def _signed_rank_exact_p(doubled_ranks: list[int], w2: int) -> float:
    """P(min(S+, S-) <= observed) under random signs, by counting.

    Ranks are doubled so midranks stay integral; the distribution of the
    doubled positive-rank sum is built by dynamic programming, which
    counts exactly the 2^n sign assignments.
    """
    total = sum(doubled_ranks)
    counts = np.zeros(total + 1, dtype=np.int64)
    counts[0] = 1
    for r in doubled_ranks:
        shifted = np.zeros_like(counts)
        shifted[r:] = counts[: total + 1 - r]
        counts = counts + shifted
    favorable = 0
    for s in range(total + 1):
        if min(s, total - s) <= w2:
            favorable += int(counts[s])
    return favorable / float(2 ** len(doubled_ranks))


def wilcoxon_signed_rank(a: list[float], b: list[float]) -> WilcoxonResult:
    """Two-sided Wilcoxon signed-rank test on paired samples.

    Zero differences are dropped; |differences| are ranked with midranks
    and W is the smaller of the signed rank sums.  The p-value is exact
    (full sign enumeration) up to 25 effective pairs, then a normal
    approximation with tie-corrected variance.  All-zero differences are
    degenerate and reported as p = 1.
    """
    if len(a) != len(b):
        raise ValueError(f"paired samples differ in length: {len(a)} vs {len(b)}")
    diffs = np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)
    diffs = diffs[diffs != 0.0]
    n = len(diffs)
    if n == 0:
        return WilcoxonResult(0.0, 1.0, 0, "degenerate", degenerate=True)
    ranks = midranks(np.abs(diffs))
    doubled = [int(round(2 * r)) for r in ranks]
    w2_pos = sum(d2 for d2, d in zip(doubled, diffs) if d > 0)
    total2 = sum(doubled)
    w2 = min(w2_pos, total2 - w2_pos)
    w = w2 / 2.0
    if n <= EXACT_ENUMERATION_LIMIT:
        return WilcoxonResult(w, _signed_rank_exact_p(doubled, w2), n, "exact")
    mean = n * (n + 1) / 4.0
    sd = math.sqrt(float(np.sum(ranks**2)) / 4.0)
    z = (w - mean) / sd
    p = min(1.0, 2.0 * normal_cdf(z))
    return WilcoxonResult(w, p, n, "normal")


def replicate_summary(scores: ReplicateScores) -> tuple[float, float, float]:
    """(median, min, max) with even-length midpoint medians."""
    vals = sorted(scores.scores)
    n = len(vals)
    median = vals[n // 2] if n % 2 else (vals[n // 2 - 1] + vals[n // 2]) / 2.0
    return median, vals[0], vals[-1]


def compare_models(a: ReplicateScores, b: ReplicateScores) -> ComparisonResult:
    """Paired significance comparison of two replicate score sets."""
    if len(a.scores) != len(b.scores):
        raise ValueError(
            f"replicate counts differ: {a.model_id} has {len(a.scores)}, "
            f"{b.model_id} has {len(b.scores)}"
        )
    test = wilcoxon_signed_rank(a.scores, b.scores)
    return ComparisonResult(
        model_a=a.model_id,
        model_b=b.model_id,
        summary_a=replicate_summary(a),
        summary_b=replicate_summary(b),
        statistic=test.statistic,
        p_value=test.p_value,
        significant=(not test.degenerate) and test.p_value < SIGNIFICANCE_LEVEL,
    )
