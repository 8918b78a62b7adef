"""Slide-level quantification and agreement evaluation.

TPS is the percentage of tumor cells that stain positive, binned three
ways at 1% and 50% cutoffs.  Slide-level ground truth is the majority
bin of a three-rater panel.  Agreement against that ground truth is
summarized with unweighted Cohen's kappa, plain accuracy, confusion
matrices, ROC/AUC over a fixed 1% ground-truth cutoff, and an accuracy
sweep over the upper cutoff.
"""

from __future__ import annotations

import enum
import statistics
from collections import Counter
from dataclasses import dataclass

import numpy as np

from .detect import Detection
from .annotations import CellClass
from .metrics import midranks

DEFAULT_CUTOFFS = (1.0, 50.0)
DEFAULT_SWEEP_RANGE = (2.0, 75.0)


class TpsCategory(enum.IntEnum):
    """Three-way TPS bin; names reflect the default (1, 50) cutoffs."""

    LT1 = 0
    FROM1TO49 = 1
    GE50 = 2


@dataclass
class TpsResult:
    slide_id: str
    n_pos: int
    n_neg: int
    tps: float


@dataclass
class RaterPanel:
    """Exactly three independent TPS reads of one slide."""

    slide_id: str
    tps_by_rater: tuple[float, float, float]

    def __post_init__(self):
        if len(self.tps_by_rater) != 3:
            raise ValueError(f"panel needs exactly 3 raters, got {len(self.tps_by_rater)}")
        for t in self.tps_by_rater:
            if not 0.0 <= t <= 100.0:
                raise ValueError(f"TPS {t} outside [0, 100]")


@dataclass
class ConsensusResult:
    category: TpsCategory
    no_majority: bool = False


@dataclass
class GroupStats:
    n: int
    mean: float
    sd: float | None  # sample SD (n-1); None when n == 1


def compute_tps(detections: list[Detection], slide_id: str = "") -> TpsResult:
    """TPS = 100 * #TC+ / (#TC- + #TC+); undefined without any cells."""
    n_pos = sum(1 for d in detections if d.cls == CellClass.TC_POS)
    n_neg = sum(1 for d in detections if d.cls == CellClass.TC_NEG)
    if n_pos + n_neg == 0:
        raise ValueError(f"slide {slide_id!r}: no cells detected, TPS undefined")
    return TpsResult(slide_id, n_pos, n_neg, 100.0 * n_pos / (n_pos + n_neg))


def _check_cutoffs(c1: float, c2: float) -> None:
    if not (0.0 <= c1 < c2 <= 100.0):
        raise ValueError(f"cutoffs must satisfy 0 <= c1 < c2 <= 100, got ({c1}, {c2})")


def bin_tps(tps: float, c1: float = DEFAULT_CUTOFFS[0], c2: float = DEFAULT_CUTOFFS[1]) -> TpsCategory:
    """Half-open binning: [0, c1), [c1, c2), [c2, 100]."""
    _check_cutoffs(c1, c2)
    if tps < c1:
        return TpsCategory.LT1
    if tps < c2:
        return TpsCategory.FROM1TO49
    return TpsCategory.GE50


def consensus_category(
    panel: RaterPanel,
    c1: float = DEFAULT_CUTOFFS[0],
    c2: float = DEFAULT_CUTOFFS[1],
) -> ConsensusResult:
    """Majority bin of the three raters.

    A three-way disagreement has no majority; it falls to the middle bin
    and is flagged.
    """
    bins = [bin_tps(t, c1, c2) for t in panel.tps_by_rater]
    cat, count = Counter(bins).most_common(1)[0]
    if count >= 2:
        return ConsensusResult(cat)
    return ConsensusResult(TpsCategory.FROM1TO49, no_majority=True)


def confusion(gt: list[TpsCategory], pred: list[TpsCategory]) -> np.ndarray:
    """3x3 count matrix, rows = ground truth, columns = prediction."""
    if len(gt) != len(pred):
        raise ValueError(f"length mismatch: {len(gt)} ground truths vs {len(pred)} predictions")
    if not gt:
        raise ValueError("empty input")
    matrix = np.zeros((3, 3), dtype=np.int64)
    for g, p in zip(gt, pred):
        matrix[int(g), int(p)] += 1
    return matrix


def accuracy(gt: list[TpsCategory], pred: list[TpsCategory]) -> float:
    if len(gt) != len(pred):
        raise ValueError(f"length mismatch: {len(gt)} vs {len(pred)}")
    if not gt:
        raise ValueError("empty input")
    return sum(1 for g, p in zip(gt, pred) if g == p) / len(gt)


def cohens_kappa(gt: list[TpsCategory], pred: list[TpsCategory]) -> float:
    """Unweighted Cohen's kappa over the three categories.

    Chance agreement comes from the marginal products; the degenerate
    case of both raters stuck on one category is perfect agreement and
    returns 1 by convention.
    """
    matrix = confusion(gt, pred).astype(np.float64)
    n = matrix.sum()
    p_observed = np.trace(matrix) / n
    p_expected = float(matrix.sum(axis=1) @ matrix.sum(axis=0)) / (n * n)
    if p_expected >= 1.0:
        return 1.0
    return (p_observed - p_expected) / (1.0 - p_expected)


def macro_kappa(per_dataset: list[float]) -> float:
    """Unweighted mean of per-dataset kappas."""
    if not per_dataset:
        raise ValueError("no kappas to average")
    return sum(per_dataset) / len(per_dataset)


def auroc(gt_positive: list[bool], predicted_tps: list[float]) -> tuple[list[tuple[float, float]], float]:
    """ROC points and rank-statistic AUC for a binary ground truth.

    A slide is called positive at threshold t iff its predicted TPS >= t;
    every distinct predicted value is used as a threshold and (0,0)/(1,1)
    are included.  AUC is the Mann-Whitney statistic with half credit for
    ties, so it is invariant to strictly monotone rescaling.
    """
    y = np.asarray(gt_positive, dtype=bool)
    s = np.asarray(predicted_tps, dtype=np.float64)
    if len(y) != len(s):
        raise ValueError(f"length mismatch: {len(y)} labels vs {len(s)} scores")
    n_pos = int(y.sum())
    n_neg = len(y) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("ROC needs at least one positive and one negative slide")
    ranks = midranks(s)
    auc = (float(ranks[y].sum()) - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)
    points = [(0.0, 0.0)]
    for t in np.unique(s)[::-1]:
        called = s >= t
        tpr = float((called & y).sum()) / n_pos
        fpr = float((called & ~y).sum()) / n_neg
        points.append((fpr, tpr))
    if points[-1] != (1.0, 1.0):
        points.append((1.0, 1.0))
    return points, auc


def cutoff_sweep(
    gt_tps: list[float],
    pred_tps: list[float],
    c1: float = DEFAULT_CUTOFFS[0],
    c2_range: tuple[float, float] = DEFAULT_SWEEP_RANGE,
    step: float = 1.0,
) -> list[tuple[float, float]]:
    """Three-way accuracy as the upper cutoff varies, the lower held at c1."""
    if len(gt_tps) != len(pred_tps):
        raise ValueError(f"length mismatch: {len(gt_tps)} vs {len(pred_tps)}")
    if not gt_tps:
        raise ValueError("empty input")
    lo, hi = c2_range
    if step <= 0:
        raise ValueError("step must be positive")
    _check_cutoffs(c1, lo)
    _check_cutoffs(c1, hi)
    curve = []
    n_steps = int(round((hi - lo) / step))
    for k in range(n_steps + 1):
        c2 = lo + k * step
        gt_cat = [bin_tps(t, c1, c2) for t in gt_tps]
        pred_cat = [bin_tps(t, c1, c2) for t in pred_tps]
        curve.append((c2, accuracy(gt_cat, pred_cat)))
    return curve


def group_summary(groups: dict[str, list[float]]) -> dict[str, GroupStats]:
    """Per-group mean and sample standard deviation (n-1 denominator)."""
    out = {}
    for label, values in groups.items():
        if not values:
            raise ValueError(f"group {label!r} is empty")
        mean = statistics.mean(values)
        sd = statistics.stdev(values) if len(values) >= 2 else None
        out[label] = GroupStats(len(values), mean, sd)
    return out


def format_group_stats(stats: GroupStats) -> str:
    """Report format: mean±SD at one decimal; SD omitted for n = 1."""
    if stats.sd is None:
        return f"{stats.mean:.1f}"
    return f"{stats.mean:.1f}±{stats.sd:.1f}"
