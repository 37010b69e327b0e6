"""Fold construction, exact ROC metrics and the threshold grid."""

from fractions import Fraction
from typing import NamedTuple

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from oracles import (auc_pair_oracle, bland_altman_oracle,
                     fold_balance_achievable, operating_point_oracle,
                     roc_points_oracle, trapezoid_auc_fraction)

from bmodelab.errors import (DegenerateInputError, DimensionMismatchError,
                             ValidationError)
from bmodelab.evaluate import (SET_ALL, ExperimentGrid, FoldAssignment,
                               aggregate_lesion_probability, assert_no_leakage,
                               auc, bland_altman, cell_key, make_folds,
                               operating_point, report_from_json,
                               report_to_json, roc_curve, run_experiment,
                               threshold_label)
from bmodelab.features import FeatureCache, baseline_spec
from bmodelab.prep import builtin_preprocess_specs
from bmodelab.svm import SvmConfig


class _StubLesion(NamedTuple):
    lesion_id: str
    patient_id: str
    label: str


class _StubDataset:
    """Just enough surface for fold construction tests."""

    def __init__(self, lesions):
        self.lesions = tuple(lesions)

    @property
    def patients(self):
        out = {}
        for lesion in self.lesions:
            out.setdefault(lesion.patient_id, []).append(lesion)
        return out


def _stub_from_counts(counts):
    """counts: list of (malignant, benign) lesions per patient."""
    lesions = []
    for p, (mal, ben) in enumerate(counts):
        for i in range(mal):
            lesions.append(_StubLesion(f"p{p}m{i}", f"p{p}", "malignant"))
        for i in range(ben):
            lesions.append(_StubLesion(f"p{p}b{i}", f"p{p}", "benign"))
    return _StubDataset(lesions)


def _class_counts(dataset, folds):
    mal = [0] * folds.k
    ben = [0] * folds.k
    for lesion in dataset.lesions:
        f = folds.fold_of_lesion[lesion.lesion_id]
        if lesion.label == "malignant":
            mal[f] += 1
        else:
            ben[f] += 1
    return mal, ben


class TestMakeFolds:
    def test_single_lesion_patients_balance_exactly(self):
        counts = [(1, 0)] * 157 + [(0, 1)] * 94
        dataset = _stub_from_counts(counts)
        folds = make_folds(dataset, 5, seed=0)
        assert_no_leakage(dataset, folds)
        mal, ben = _class_counts(dataset, folds)
        assert max(mal) - min(mal) <= 1 and sorted(mal) == [31, 31, 31, 32, 32]
        assert max(ben) - min(ben) <= 1 and sorted(ben) == [18, 19, 19, 19, 19]
        sizes = [mal[f] + ben[f] for f in range(5)]
        assert sorted(sizes) == [50, 50, 50, 50, 51]

    def test_multi_lesion_patients_stay_together(self):
        counts = [(2, 1), (1, 2), (3, 0), (0, 2), (1, 1), (2, 2), (0, 1), (1, 0)]
        dataset = _stub_from_counts(counts)
        folds = make_folds(dataset, 3, seed=4)
        assert_no_leakage(dataset, folds)
        for pid, lesions in dataset.patients.items():
            assigned = {folds.fold_of_lesion[l.lesion_id] for l in lesions}
            assert len(assigned) == 1

    def test_greedy_dead_end_is_repaired(self):
        # plain largest-first can strand this at spread 2; one swap fixes it
        counts = [(3, 0), (3, 0), (2, 0), (2, 0), (2, 0),
                  (0, 3), (0, 3), (0, 2), (0, 2), (0, 2)]
        dataset = _stub_from_counts(counts)
        folds = make_folds(dataset, 2, seed=0)
        mal, ben = _class_counts(dataset, folds)
        assert max(mal) - min(mal) <= 1
        assert max(ben) - min(ben) <= 1

    def test_random_structures_balanced_when_achievable(self, rng):
        checked_balance = 0
        for trial in range(60):
            k = int(rng.integers(2, 5))
            n_patients = int(rng.integers(2 * k, 13))
            counts = []
            for _ in range(n_patients):
                mal = int(rng.integers(0, 3))
                ben = int(rng.integers(0, 3 - (mal > 1)))
                if mal == ben == 0:
                    mal = 1
                counts.append((mal, ben))
            dataset = _stub_from_counts(counts)
            try:
                folds = make_folds(dataset, k, seed=trial)
            except DegenerateInputError:
                continue
            assert_no_leakage(dataset, folds)
            assert set(folds.fold_of_lesion.values()) == set(range(k))
            if fold_balance_achievable(counts, k):
                mal, ben = _class_counts(dataset, folds)
                assert max(mal) - min(mal) <= 1, (counts, k)
                assert max(ben) - min(ben) <= 1, (counts, k)
                checked_balance += 1
        assert checked_balance >= 20

    def test_same_seed_reproduces(self):
        counts = [(1, 1)] * 9
        a = make_folds(_stub_from_counts(counts), 3, seed=7)
        b = make_folds(_stub_from_counts(counts), 3, seed=7)
        assert a.fold_of_lesion == b.fold_of_lesion

    def test_lesions_in_fold_partition(self):
        dataset = _stub_from_counts([(1, 1)] * 6)
        folds = make_folds(dataset, 2, seed=1)
        union = sorted(folds.lesions_in_fold(0) + folds.lesions_in_fold(1))
        assert union == sorted(l.lesion_id for l in dataset.lesions)

    def test_too_few_patients_rejected(self):
        dataset = _stub_from_counts([(1, 0), (1, 0), (0, 1), (0, 1)])
        with pytest.raises(DegenerateInputError):
            make_folds(dataset, 3, seed=0)

    def test_k_below_two_rejected(self):
        dataset = _stub_from_counts([(1, 1)] * 4)
        with pytest.raises(ValidationError):
            make_folds(dataset, 1, seed=0)

    def test_leakage_detected(self):
        dataset = _stub_from_counts([(1, 1), (1, 1)])
        broken = FoldAssignment(k=2, fold_of_lesion={
            "p0m0": 0, "p0b0": 1, "p1m0": 0, "p1b0": 1}, seed=0)
        with pytest.raises(ValidationError, match="split across folds"):
            assert_no_leakage(dataset, broken)

    def test_missing_lesion_detected(self):
        dataset = _stub_from_counts([(1, 1), (1, 1)])
        partial = FoldAssignment(k=2, fold_of_lesion={"p0m0": 0}, seed=0)
        with pytest.raises(ValidationError, match="missing"):
            assert_no_leakage(dataset, partial)


def _tied_instance(rng, n_max=100):
    n = int(rng.integers(4, n_max + 1))
    scores = rng.integers(0, 6, n).astype(np.float64)
    labels = rng.integers(0, 2, n)
    labels[0], labels[1] = 0, 1
    return scores, labels


class TestRocAndAuc:
    def test_points_match_oracle(self, rng):
        for _ in range(25):
            scores, labels = _tied_instance(rng, n_max=60)
            curve = roc_curve(scores, labels)
            got = [(p.tp, p.fp, p.threshold) for p in curve.points]
            assert got == roc_points_oracle(scores, labels)

    def test_auc_equals_pair_oracle_exactly(self, rng):
        for _ in range(40):
            scores, labels = _tied_instance(rng)
            assert auc(scores, labels) == auc_pair_oracle(scores, labels)

    @given(st.lists(st.tuples(st.integers(0, 4), st.booleans()),
                    min_size=2, max_size=30).filter(
                        lambda rows: len({l for _, l in rows}) == 2))
    @settings(max_examples=150, deadline=None)
    def test_auc_pair_oracle_property(self, rows):
        scores = np.array([float(s) for s, _ in rows])
        labels = np.array([int(l) for _, l in rows])
        assert auc(scores, labels) == auc_pair_oracle(scores, labels)

    def test_trapezoid_equals_mann_whitney(self, rng):
        for _ in range(25):
            scores, labels = _tied_instance(rng, n_max=50)
            points = roc_points_oracle(scores, labels)
            n_pos = int(labels.sum())
            n_neg = len(labels) - n_pos
            area = trapezoid_auc_fraction(points, n_pos, n_neg)
            assert auc(scores, labels) == float(area)

    def test_monotone_transform_invariance(self, rng):
        scores, labels = _tied_instance(rng)
        transformed = scores ** 3 + scores
        assert auc(transformed, labels) == auc(scores, labels)
        curve_a = roc_curve(scores, labels)
        curve_b = roc_curve(transformed, labels)
        assert [(p.tp, p.fp) for p in curve_a.points] == \
               [(p.tp, p.fp) for p in curve_b.points]

    def test_known_values(self):
        assert auc([0.9, 0.8, 0.2, 0.1], [1, 1, 0, 0]) == 1.0
        assert auc([0.1, 0.2, 0.8, 0.9], [1, 1, 0, 0]) == 0.0
        assert auc([0.5, 0.5, 0.5, 0.5], [1, 1, 0, 0]) == 0.5

    def test_curve_shape(self, rng):
        scores, labels = _tied_instance(rng, n_max=40)
        curve = roc_curve(scores, labels)
        first, last = curve.points[0], curve.points[-1]
        assert (first.fpr, first.tpr, first.threshold) == (0.0, 0.0, float("inf"))
        assert (last.fpr, last.tpr) == (1.0, 1.0)
        assert last.threshold == scores.min()
        fprs = [p.fpr for p in curve.points]
        tprs = [p.tpr for p in curve.points]
        assert fprs == sorted(fprs) and tprs == sorted(tprs)
        for p in curve.points:
            assert p.fpr == p.fp / curve.n_neg
            assert p.tpr == p.tp / curve.n_pos

    def test_degenerate_labels_rejected(self):
        with pytest.raises(DegenerateInputError):
            auc([0.1, 0.2], [1, 1])
        with pytest.raises(ValidationError):
            auc([0.1, np.nan], [1, 0])
        with pytest.raises(DimensionMismatchError):
            auc([0.1, 0.2, 0.3], [1, 0])


class TestOperatingPoint:
    def test_matches_oracle_exactly(self, rng):
        for _ in range(40):
            scores, labels = _tied_instance(rng)
            op = operating_point(roc_curve(scores, labels))
            sens, spec, acc, threshold = operating_point_oracle(scores, labels)
            assert (op.sensitivity, op.specificity, op.accuracy, op.threshold) \
                == (sens, spec, acc, threshold)

    def test_perfect_classifier(self):
        op = operating_point(roc_curve([0.9, 0.8, 0.2, 0.1], [1, 1, 0, 0]))
        assert (op.sensitivity, op.specificity, op.accuracy) == (1.0, 1.0, 1.0)
        assert op.threshold == 0.8

    def test_tie_prefers_sensitivity(self):
        op = operating_point(roc_curve([1.0, 1.0], [1, 0]))
        assert op.sensitivity == 1.0 and op.specificity == 0.0
        assert op.threshold == 1.0

    def test_accuracy_recomputes_from_threshold(self, rng):
        scores, labels = _tied_instance(rng, n_max=60)
        op = operating_point(roc_curve(scores, labels))
        predicted = scores >= op.threshold
        acc = float(np.mean(predicted == (labels == 1)))
        assert op.accuracy == acc


class TestAggregationAndAgreement:
    def test_aggregate_is_mean(self):
        assert aggregate_lesion_probability([0.2, 0.4, 0.9]) == pytest.approx(0.5)

    def test_aggregate_validation(self):
        with pytest.raises(ValidationError):
            aggregate_lesion_probability([])
        with pytest.raises(ValidationError):
            aggregate_lesion_probability([0.5, 1.2])

    def test_bland_altman_matches_oracle(self, rng):
        a = rng.uniform(0, 1, 30)
        b = rng.uniform(0, 1, 30)
        stats = bland_altman(a, b)
        mean, sd, lo, hi = bland_altman_oracle(a, b)
        assert stats.mean_diff == pytest.approx(mean, rel=1e-12)
        assert stats.sd_diff == pytest.approx(sd, rel=1e-12)
        assert stats.loa_low == pytest.approx(lo, rel=1e-12)
        assert stats.loa_high == pytest.approx(hi, rel=1e-12)
        means = [p[0] for p in stats.points]
        np.testing.assert_allclose(means, (a + b) / 2)

    def test_identical_inputs_give_zero(self, rng):
        a = rng.uniform(0, 1, 10)
        stats = bland_altman(a, a.copy())
        assert stats.mean_diff == 0.0 and stats.sd_diff == 0.0
        assert stats.loa_low == 0.0 and stats.loa_high == 0.0

    def test_validation(self):
        with pytest.raises(DimensionMismatchError):
            bland_altman([0.1, 0.2], [0.1])
        with pytest.raises(ValidationError):
            bland_altman([0.1], [0.2])


class TestGridDefinitions:
    def test_threshold_label(self):
        assert threshold_label(40.0) == "40"
        assert threshold_label(42.5) == "42.5"

    def test_resolve(self):
        folds = FoldAssignment(k=2, fold_of_lesion={}, seed=0)
        grid = ExperimentGrid(train_sets=("40", SET_ALL), test_sets=("60",),
                              extractor_id="baseline", margins=(5.0,),
                              folds=folds)
        assert grid.resolve("40") == (40.0,)
        assert grid.resolve(SET_ALL) == (40.0, 50.0, 60.0)

    def test_unknown_set_rejected(self):
        folds = FoldAssignment(k=2, fold_of_lesion={}, seed=0)
        with pytest.raises(ValidationError):
            ExperimentGrid(train_sets=("45",), test_sets=("40",),
                           extractor_id="baseline", margins=(5.0,), folds=folds)


@pytest.fixture(scope="module")
def grid_report(small_phantom_dataset):
    dataset = small_phantom_dataset
    folds = make_folds(dataset, 2, seed=3)
    grid = ExperimentGrid(train_sets=("40", "60", SET_ALL),
                          test_sets=("40", "50", "60", SET_ALL),
                          extractor_id="baseline", margins=(5.0,), folds=folds)
    spec = builtin_preprocess_specs()["baseline"]
    report = run_experiment(dataset, grid, baseline_spec(), spec,
                            SvmConfig(c=1.0, seed=5))
    return dataset, grid, spec, report


class TestRunExperiment:
    def test_cell_coverage(self, grid_report):
        dataset, grid, _, report = grid_report
        assert len(report.cells) == len(grid.train_sets) * len(grid.test_sets)
        for train in grid.train_sets:
            for test in grid.test_sets:
                cell = report.cell(train, test)
                assert 0.0 <= cell.auc <= 1.0
                probs = report.lesion_probabilities[cell_key(train, test)]
                assert sorted(probs) == sorted(l.lesion_id for l in dataset.lesions)

    def test_all_column_is_mean_of_threshold_columns(self, grid_report):
        dataset, grid, _, report = grid_report
        for train in grid.train_sets:
            p_all = report.lesion_probabilities[cell_key(train, SET_ALL)]
            per_t = [report.lesion_probabilities[cell_key(train, t)]
                     for t in ("40", "50", "60")]
            for lesion in dataset.lesions:
                lid = lesion.lesion_id
                expected = np.mean([p[lid] for p in per_t])
                assert p_all[lid] == pytest.approx(expected, abs=1e-12)

    def test_deterministic_across_runs_and_workers(self, grid_report):
        dataset, grid, spec, report = grid_report
        again = run_experiment(dataset, grid, baseline_spec(), spec,
                               SvmConfig(c=1.0, seed=5))
        parallel = run_experiment(dataset, grid, baseline_spec(), spec,
                                  SvmConfig(c=1.0, seed=5), workers=3)
        base = report_to_json(report)
        assert report_to_json(again) == base
        assert report_to_json(parallel) == base

    def test_cache_does_not_change_results(self, grid_report, tmp_path):
        dataset, grid, spec, report = grid_report
        cache = FeatureCache()
        cold = run_experiment(dataset, grid, baseline_spec(), spec,
                              SvmConfig(c=1.0, seed=5), cache=cache)
        warm = run_experiment(dataset, grid, baseline_spec(), spec,
                              SvmConfig(c=1.0, seed=5), cache=cache)
        base = report_to_json(report)
        assert report_to_json(cold) == base
        assert report_to_json(warm) == base
        path = tmp_path / "f.bmlfc"
        cache.save(path)
        reloaded = run_experiment(dataset, grid, baseline_spec(), spec,
                                  SvmConfig(c=1.0, seed=5),
                                  cache=FeatureCache.load(path))
        assert report_to_json(reloaded) == base

    def test_default_bland_altman_pair_spans_diagonal(self, grid_report):
        _, _, _, report = grid_report
        assert report.bland_altman_pairs == (("40|40", "60|60"),)
        assert len(report.bland_altman_stats) == 1

    def test_identical_cells_agree_perfectly(self, grid_report):
        dataset, grid, spec, _ = grid_report
        report = run_experiment(dataset, grid, baseline_spec(), spec,
                                SvmConfig(c=1.0, seed=5),
                                bland_altman_pairs=(("40|40", "40|40"),))
        stats = report.bland_altman_stats[0]
        assert stats.mean_diff == 0.0 and stats.sd_diff == 0.0

    def test_unknown_bland_altman_pair_rejected(self, grid_report):
        dataset, grid, spec, _ = grid_report
        with pytest.raises(ValidationError, match="Bland-Altman"):
            run_experiment(dataset, grid, baseline_spec(), spec,
                           SvmConfig(c=1.0, seed=5),
                           bland_altman_pairs=(("40|40", "50|50"),))

    def test_report_json_round_trip(self, grid_report):
        _, _, _, report = grid_report
        text = report_to_json(report)
        assert report_to_json(report_from_json(text)) == text

    def test_malformed_report_json_rejected(self):
        with pytest.raises(ValidationError):
            report_from_json("{\"cells\": 3}")

    def test_meta_records_parameters(self, grid_report):
        dataset, grid, _, report = grid_report
        assert report.meta["dataset"] == dataset.name
        assert report.meta["folds"] == 2
        assert report.meta["svm"]["c"] == 1.0
        assert report.meta["margins"] == [5.0]
