import itertools

import numpy as np
import pytest

from ihcquant.annotations import CellClass
from ihcquant.detect import Detection
from ihcquant.quantify import (
    GroupStats,
    RaterPanel,
    TpsCategory,
    accuracy,
    auroc,
    bin_tps,
    cohens_kappa,
    compute_tps,
    confusion,
    consensus_category,
    cutoff_sweep,
    format_group_stats,
    group_summary,
    macro_kappa,
)

LT1, MID, GE50 = TpsCategory.LT1, TpsCategory.FROM1TO49, TpsCategory.GE50


def dets(n_pos, n_neg):
    out = [Detection(i, 0, CellClass.TC_POS, 0.9) for i in range(n_pos)]
    out += [Detection(i, 1, CellClass.TC_NEG, 0.9) for i in range(n_neg)]
    return out


def kappa_oracle(gt, pred):
    """Independent reimplementation straight from raw pairs."""
    n = len(gt)
    po = sum(g == p for g, p in zip(gt, pred)) / n
    pe = 0.0
    for c in TpsCategory:
        pe += (sum(g == c for g in gt) / n) * (sum(p == c for p in pred) / n)
    return (po - pe) / (1 - pe)


class TestTps:
    def test_quarter_positive(self):
        assert compute_tps(dets(1, 3)).tps == 25.0

    def test_all_negative(self):
        assert compute_tps(dets(0, 100)).tps == 0.0

    def test_large_count_arithmetic(self):
        res = compute_tps(dets(13792, 37716))
        assert res.tps == pytest.approx(100 * 13792 / 51508)
        assert round(res.tps, 2) == 26.78

    def test_no_cells_is_an_error(self):
        with pytest.raises(ValueError, match="undefined"):
            compute_tps([], "empty-slide")


class TestBinning:
    @pytest.mark.parametrize(
        "tps,expected",
        [(0.999, LT1), (1.0, MID), (49.999, MID), (50.0, GE50), (0.0, LT1), (100.0, GE50)],
    )
    def test_default_cutoff_boundaries(self, tps, expected):
        assert bin_tps(tps, 1, 50) == expected

    @pytest.mark.parametrize("c1,c2", [(1.0, 50.0), (5.0, 30.0), (0.5, 99.0)])
    def test_boundary_semantics_for_any_cutoffs(self, c1, c2):
        eps = 1e-9
        assert bin_tps(c1 - eps, c1, c2) == LT1
        assert bin_tps(c1, c1, c2) == MID
        assert bin_tps(c2 - eps, c1, c2) == MID
        assert bin_tps(c2, c1, c2) == GE50

    def test_invalid_cutoffs_rejected(self):
        with pytest.raises(ValueError):
            bin_tps(10, 50, 1)
        with pytest.raises(ValueError):
            bin_tps(10, 1, 101)


class TestConsensus:
    def test_two_to_one_majority(self):
        panel = RaterPanel("s", (0.5, 0.8, 10.0))  # bins LT1, LT1, FROM1TO49
        res = consensus_category(panel)
        assert res.category == LT1
        assert not res.no_majority

    def test_unanimous(self):
        res = consensus_category(RaterPanel("s", (60.0, 75.0, 90.0)))
        assert res.category == GE50
        assert not res.no_majority

    def test_three_way_split_falls_to_middle_flagged(self):
        res = consensus_category(RaterPanel("s", (0.5, 10.0, 80.0)))
        assert res.category == MID
        assert res.no_majority

    def test_rule_over_all_bin_combinations(self):
        # exhaustive oracle over the 27 bin triples
        rep = {LT1: 0.0, MID: 10.0, GE50: 80.0}
        for combo in itertools.product(TpsCategory, repeat=3):
            res = consensus_category(RaterPanel("s", tuple(rep[c] for c in combo)))
            counts = {c: combo.count(c) for c in TpsCategory}
            best = max(counts.values())
            if best >= 2:
                expected = next(c for c in TpsCategory if counts[c] == best)
                assert res.category == expected
                assert not res.no_majority
            else:
                assert res.category == MID
                assert res.no_majority

    def test_panel_validation(self):
        with pytest.raises(ValueError):
            RaterPanel("s", (1.0, 2.0))
        with pytest.raises(ValueError):
            RaterPanel("s", (1.0, 2.0, 101.0))


class TestAgreement:
    def test_perfect_agreement_kappa_one(self):
        labels = [LT1, MID, GE50, MID, LT1]
        assert cohens_kappa(labels, list(labels)) == pytest.approx(1.0, abs=1e-12)

    def test_two_category_fixture(self):
        # confusion [[2,1],[1,2]]: po=2/3, pe=1/2, kappa=1/3
        gt = [LT1, LT1, LT1, MID, MID, MID]
        pred = [LT1, LT1, MID, LT1, MID, MID]
        assert cohens_kappa(gt, pred) == pytest.approx(1 / 3, abs=1e-12)

    def test_independent_labels_have_near_zero_kappa(self):
        rng = np.random.default_rng(14)
        n = 100_000
        gt = [TpsCategory(int(v)) for v in rng.integers(0, 3, n)]
        pred = [TpsCategory(int(v)) for v in rng.integers(0, 3, n)]
        assert abs(cohens_kappa(gt, pred)) < 0.05

    def test_degenerate_single_category_is_one(self):
        assert cohens_kappa([LT1, LT1], [LT1, LT1]) == 1.0

    def test_kappa_is_one_iff_confusion_is_diagonal(self):
        rng = np.random.default_rng(55)
        for _ in range(100):
            n = int(rng.integers(4, 30))
            gt = [TpsCategory(int(v)) for v in rng.integers(0, 3, n)]
            if len(set(gt)) < 2:
                continue
            pred = list(gt)
            assert cohens_kappa(gt, pred) == pytest.approx(1.0, abs=1e-12)
            pred[0] = TpsCategory((int(pred[0]) + 1) % 3)  # one off-diagonal entry
            assert cohens_kappa(gt, pred) < 1.0

    def test_matches_independent_reimplementation(self):
        rng = np.random.default_rng(15)
        for _ in range(200):
            n = int(rng.integers(2, 40))
            gt = [TpsCategory(int(v)) for v in rng.integers(0, 3, n)]
            pred = [TpsCategory(int(v)) for v in rng.integers(0, 3, n)]
            if len(set(gt)) == 1 and gt == pred:
                continue
            assert cohens_kappa(gt, pred) == pytest.approx(kappa_oracle(gt, pred), abs=1e-12)

    def test_accuracy_fixtures(self):
        assert accuracy([LT1, MID], [LT1, MID]) == 1.0
        assert accuracy([LT1, MID], [MID, LT1]) == 0.0
        assert accuracy([LT1, LT1, MID, GE50], [LT1, LT1, MID, MID]) == 0.75

    def test_confusion_single_category(self):
        m = confusion([LT1] * 5, [LT1] * 5)
        assert m[0, 0] == 5
        assert m.sum() == 5

    def test_confusion_one_per_pair(self):
        gt, pred = zip(*itertools.product(TpsCategory, repeat=2))
        assert np.array_equal(confusion(list(gt), list(pred)), np.ones((3, 3), dtype=int))

    def test_confusion_diagonal_equals_accuracy(self):
        rng = np.random.default_rng(16)
        gt = [TpsCategory(int(v)) for v in rng.integers(0, 3, 100)]
        pred = [TpsCategory(int(v)) for v in rng.integers(0, 3, 100)]
        m = confusion(gt, pred)
        assert np.trace(m) == pytest.approx(accuracy(gt, pred) * 100)
        # row sums recover the ground-truth histogram
        for c in TpsCategory:
            assert m[int(c)].sum() == sum(g == c for g in gt)

    def test_length_mismatch_and_empty(self):
        with pytest.raises(ValueError):
            confusion([LT1], [])
        with pytest.raises(ValueError):
            accuracy([], [])

    def test_macro_kappa(self):
        assert macro_kappa([0.5]) == 0.5
        assert macro_kappa([0.2, 0.4, 0.6, 0.8]) == pytest.approx(0.5)
        values = list(np.random.default_rng(17).uniform(-0.2, 1.0, 9))
        assert macro_kappa(values) == pytest.approx(sum(values) / len(values))
        with pytest.raises(ValueError):
            macro_kappa([])


def auc_pairwise_oracle(labels, scores):
    """Independent oracle: fraction of positive/negative pairs won, half
    credit for ties."""
    pos = [s for y, s in zip(labels, scores) if y]
    neg = [s for y, s in zip(labels, scores) if not y]
    wins = sum(1.0 if p > n else 0.5 if p == n else 0.0 for p in pos for n in neg)
    return wins / (len(pos) * len(neg))


class TestAuroc:
    def test_perfect_separation(self):
        _, auc = auroc([True, True, False, False], [90.0, 80.0, 10.0, 5.0])
        assert auc == 1.0

    def test_interleaved_fixture(self):
        labels = [True, True, False, False]
        scores = [0.9, 0.4, 0.8, 0.3]
        points, auc = auroc(labels, scores)
        assert auc == pytest.approx(0.75)
        assert auc == pytest.approx(auc_pairwise_oracle(labels, scores))
        assert points[0] == (0.0, 0.0)
        assert points[-1] == (1.0, 1.0)

    def test_all_tied_scores(self):
        _, auc = auroc([True, False, True, False], [5.0] * 4)
        assert auc == pytest.approx(0.5)

    def test_monotone_transform_invariance(self):
        rng = np.random.default_rng(18)
        labels = [bool(v) for v in rng.integers(0, 2, 40)]
        labels[0], labels[1] = True, False
        scores = list(rng.uniform(0, 100, 40))
        _, base = auroc(labels, scores)
        transformed = [3.0 + 0.5 * s + 0.001 * s**3 for s in scores]
        _, after = auroc(labels, transformed)
        assert after == base

    def test_matches_pairwise_oracle_on_random_instances(self):
        rng = np.random.default_rng(19)
        for _ in range(50):
            n = int(rng.integers(4, 30))
            labels = [bool(v) for v in rng.integers(0, 2, n)]
            labels[0], labels[1] = True, False
            scores = list(np.round(rng.uniform(0, 100, n), 0))  # rounded to force ties
            _, auc = auroc(labels, scores)
            assert auc == pytest.approx(auc_pairwise_oracle(labels, scores), abs=1e-12)

    def test_roc_points_are_monotone(self):
        rng = np.random.default_rng(20)
        labels = [bool(v) for v in rng.integers(0, 2, 30)]
        labels[0], labels[1] = True, False
        points, _ = auroc(labels, list(rng.uniform(0, 100, 30)))
        fprs = [p[0] for p in points]
        tprs = [p[1] for p in points]
        assert fprs == sorted(fprs)
        assert tprs == sorted(tprs)

    def test_single_class_rejected(self):
        with pytest.raises(ValueError):
            auroc([True, True], [1.0, 2.0])


class TestCutoffSweep:
    def test_perfect_predictions_everywhere(self):
        rng = np.random.default_rng(21)
        tps = list(rng.uniform(0, 100, 40))
        curve = cutoff_sweep(tps, list(tps))
        assert len(curve) == 74  # integer steps from 2 to 75
        assert all(acc == 1.0 for _, acc in curve)

    def test_matches_per_point_rebinning_oracle(self):
        rng = np.random.default_rng(22)
        gt = list(rng.uniform(0, 100, 60))
        pred = [100.0 - t for t in gt]
        curve = cutoff_sweep(gt, pred)
        for c2, acc in curve:
            gt_cat = [bin_tps(t, 1.0, c2) for t in gt]
            pred_cat = [bin_tps(t, 1.0, c2) for t in pred]
            expected = sum(g == p for g, p in zip(gt_cat, pred_cat)) / len(gt)
            assert acc == pytest.approx(expected)

    def test_single_point_consistency_with_default_bins(self):
        rng = np.random.default_rng(23)
        gt = list(rng.uniform(0, 100, 30))
        pred = list(rng.uniform(0, 100, 30))
        curve = cutoff_sweep(gt, pred, c1=1.0, c2_range=(50.0, 50.0), step=1.0)
        assert len(curve) == 1
        expected = accuracy(
            [bin_tps(t, 1.0, 50.0) for t in gt], [bin_tps(t, 1.0, 50.0) for t in pred]
        )
        assert curve[0] == (50.0, expected)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            cutoff_sweep([], [])


class TestGroupSummary:
    def test_reported_group_statistics(self):
        groups = {
            "EGFR exon20ins": [68.6, 85.7, 88.4, 27.1, 80.0, 98.0, 82.2],
            "MET exon 14 skipping": [74.1, 88.9, 89.9, 53.1, 60.0, 96.7],
            "MET amplification": [94.6, 92.5, 96.5],
        }
        stats = group_summary(groups)
        assert format_group_stats(stats["EGFR exon20ins"]) == "75.7±23.2"
        assert format_group_stats(stats["MET exon 14 skipping"]) == "77.1±17.7"
        assert format_group_stats(stats["MET amplification"]) == "94.5±2.0"

    def test_population_sd_would_not_reproduce_the_report(self):
        values = [68.6, 85.7, 88.4, 27.1, 80.0, 98.0, 82.2]
        pop_sd = float(np.std(values))  # n denominator
        assert f"{pop_sd:.1f}" == "21.5"  # != 23.2, so n-1 is required

    def test_single_value_group_has_no_sd(self):
        stats = group_summary({"solo": [50.0]})
        assert stats["solo"] == GroupStats(n=1, mean=50.0, sd=None)
        assert format_group_stats(stats["solo"]) == "50.0"

    def test_empty_group_rejected(self):
        with pytest.raises(ValueError, match="empty"):
            group_summary({"g": []})
