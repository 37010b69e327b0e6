"""Cross-validated grid evaluation and agreement statistics.

Folds are patient-grouped and class-stratified.  Every (train set, test
set) cell of the threshold grid pools out-of-fold lesion probabilities
across folds into a single ROC, from which AUC and the closest-to-(0,1)
operating point are read.  Bland-Altman stats compare the probabilities
two cells assign to the same lesions.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .data_io import Dataset, LABEL_MALIGNANT
from .errors import (DegenerateInputError, DimensionMismatchError,
                     ToolkitError, ValidationError)
from .features import ExtractorSpec, FeatureCache, extract_for_variant
from .prep import NetworkPreprocessSpec, enumerate_variants
from .seeding import derive_seed
from .svm import SvmConfig, SvmModel, predict_probability, train_svm

SET_ALL = "ALL"

_REPAIR_CAP = 10000


# ---------------------------------------------------------------- folds

@dataclass(frozen=True)
class FoldAssignment:
    """Patient-grouped fold index per lesion."""

    k: int
    fold_of_lesion: dict[str, int]
    seed: int

    def lesions_in_fold(self, fold: int) -> list[str]:
        return sorted(l for l, f in self.fold_of_lesion.items() if f == fold)


def _patient_table(dataset: Dataset) -> list[tuple[str, int, int, list[str]]]:
    """(patient_id, malignant count, benign count, lesion ids) per patient."""
    out = []
    for pid, lesions in dataset.patients.items():
        mal = sum(1 for l in lesions if l.label == LABEL_MALIGNANT)
        ben = len(lesions) - mal
        out.append((pid, mal, ben, [l.lesion_id for l in lesions]))
    return out


def _spread(counts: list[int]) -> int:
    return max(counts) - min(counts)


def _phi(mal: list[int], ben: list[int], size: list[int]) -> tuple[int, int, int]:
    """Lexicographic imbalance: worst class spread, summed spread, size spread."""
    ms, bs = _spread(mal), _spread(ben)
    return (max(ms, bs), ms + bs, _spread(size))


def _exact_balanced_assignment(patients, k: int) -> dict[str, int] | None:
    """Search for an assignment with both class spreads <= 1.

    Breadth-first over fold-count states, canonicalized by sorting, so
    symmetric fold permutations collapse; tractable for the small
    instances this is invoked on.  Returns None when no such grouping
    exists.
    """
    total_mal = sum(p[1] for p in patients)
    total_ben = sum(p[2] for p in patients)
    cap_mal = -(-total_mal // k)
    cap_ben = -(-total_ben // k)
    order = sorted(patients, key=lambda p: (-(p[1] + p[2]), -p[1], p[0]))
    frontier: dict[tuple, tuple[tuple, dict]] = {
        tuple(sorted([(0, 0)] * k)): (tuple([(0, 0)] * k), {})}
    for pid, mal, ben, _ in order:
        nxt: dict[tuple, tuple[tuple, dict]] = {}
        for state, assign in frontier.values():
            seen = set()
            for f in range(k):
                if state[f] in seen:  # symmetric fold, same continuations
                    continue
                seen.add(state[f])
                nm, nb = state[f][0] + mal, state[f][1] + ben
                if nm > cap_mal or nb > cap_ben:
                    continue
                grown = list(state)
                grown[f] = (nm, nb)
                canon = tuple(sorted(grown))
                if canon not in nxt:
                    new_assign = dict(assign)
                    new_assign[pid] = f
                    nxt[canon] = (tuple(grown), new_assign)
        if not nxt:
            return None
        frontier = nxt
    for state, assign in frontier.values():
        mal_counts = [m for m, _ in state]
        ben_counts = [b for _, b in state]
        if (_spread(mal_counts) <= 1 and _spread(ben_counts) <= 1):
            return assign
    return None


def make_folds(dataset: Dataset, k: int, seed: int) -> FoldAssignment:
    """Greedy stratified grouping with a local repair pass.

    Patients are placed largest-first onto the fold where they add the
    least to current class counts; a deterministic move/swap pass then
    shrinks any remaining imbalance.  Small instances the local search
    leaves above a +-1 class spread fall back to an exact search.  All
    lesions of a patient stay together by construction.
    """
    if k < 2:
        raise ValidationError(f"k must be >= 2, got {k}")
    patients = _patient_table(dataset)
    n_mal_patients = sum(1 for _, mal, _, _ in patients if mal > 0)
    n_ben_patients = sum(1 for _, _, ben, _ in patients if ben > 0)
    if n_mal_patients < k or n_ben_patients < k:
        raise DegenerateInputError(
            f"need at least {k} patients of each class, have "
            f"{n_mal_patients} malignant / {n_ben_patients} benign")

    order = sorted(patients, key=lambda p: (-p[1], -p[2], p[0]))
    rng = np.random.default_rng(derive_seed(seed, "fold-ties"))
    fold_mal = [0] * k
    fold_ben = [0] * k
    fold_size = [0] * k
    assignment: dict[str, int] = {}
    for pid, mal, ben, _ in order:
        costs = [mal * fold_mal[f] + ben * fold_ben[f] for f in range(k)]
        best = min(costs)
        tied = [f for f in range(k) if costs[f] == best]
        if len(tied) > 1:
            smallest = min(fold_size[f] for f in tied)
            tied = [f for f in tied if fold_size[f] == smallest]
        chosen = tied[int(rng.integers(len(tied)))] if len(tied) > 1 else tied[0]
        assignment[pid] = chosen
        fold_mal[chosen] += mal
        fold_ben[chosen] += ben
        fold_size[chosen] += mal + ben

    # repair: steepest-descent single moves and pairwise swaps on the
    # imbalance vector; greedy alone can strand a feasible +-1 balance
    by_pid = {p[0]: p for p in patients}
    pids = sorted(assignment)
    for _ in range(_REPAIR_CAP):
        current = _phi(fold_mal, fold_ben, fold_size)
        best_phi = current
        best_action = None
        for pid in pids:
            src = assignment[pid]
            _, mal, ben, _ = by_pid[pid]
            for dst in range(k):
                if dst == src:
                    continue
                fold_mal[src] -= mal; fold_mal[dst] += mal
                fold_ben[src] -= ben; fold_ben[dst] += ben
                fold_size[src] -= mal + ben; fold_size[dst] += mal + ben
                cand = _phi(fold_mal, fold_ben, fold_size)
                fold_mal[src] += mal; fold_mal[dst] -= mal
                fold_ben[src] += ben; fold_ben[dst] -= ben
                fold_size[src] += mal + ben; fold_size[dst] -= mal + ben
                if cand < best_phi:
                    best_phi = cand
                    best_action = ("move", pid, dst)
        for i, pa in enumerate(pids):
            fa = assignment[pa]
            _, mal_a, ben_a, _ = by_pid[pa]
            for pb in pids[i + 1:]:
                fb = assignment[pb]
                if fa == fb:
                    continue
                _, mal_b, ben_b, _ = by_pid[pb]
                dm, db = mal_a - mal_b, ben_a - ben_b
                if dm == 0 and db == 0:
                    continue
                fold_mal[fa] -= dm; fold_mal[fb] += dm
                fold_ben[fa] -= db; fold_ben[fb] += db
                fold_size[fa] -= dm + db; fold_size[fb] += dm + db
                cand = _phi(fold_mal, fold_ben, fold_size)
                fold_mal[fa] += dm; fold_mal[fb] -= dm
                fold_ben[fa] += db; fold_ben[fb] -= db
                fold_size[fa] += dm + db; fold_size[fb] -= dm + db
                if cand < best_phi:
                    best_phi = cand
                    best_action = ("swap", pa, pb)
        if best_action is None:
            break
        if best_action[0] == "move":
            _, pid, dst = best_action
            src = assignment[pid]
            _, mal, ben, _ = by_pid[pid]
            assignment[pid] = dst
            fold_mal[src] -= mal; fold_mal[dst] += mal
            fold_ben[src] -= ben; fold_ben[dst] += ben
            fold_size[src] -= mal + ben; fold_size[dst] += mal + ben
        else:
            _, pa, pb = best_action
            fa, fb = assignment[pa], assignment[pb]
            _, mal_a, ben_a, _ = by_pid[pa]
            _, mal_b, ben_b, _ = by_pid[pb]
            assignment[pa], assignment[pb] = fb, fa
            dm, db = mal_a - mal_b, ben_a - ben_b
            fold_mal[fa] -= dm; fold_mal[fb] += dm
            fold_ben[fa] -= db; fold_ben[fb] += db
            fold_size[fa] -= dm + db; fold_size[fb] += dm + db

    if max(_spread(fold_mal), _spread(fold_ben)) > 1 and len(patients) <= 24:
        exact = _exact_balanced_assignment(patients, k)
        if exact is not None:
            assignment = exact

    fold_of_lesion = {}
    for pid, _, _, lesion_ids in patients:
        for lid in lesion_ids:
            fold_of_lesion[lid] = assignment[pid]
    return FoldAssignment(k=k, fold_of_lesion=dict(sorted(fold_of_lesion.items())),
                          seed=seed)


def assert_no_leakage(dataset: Dataset, folds: FoldAssignment) -> None:
    """Every patient's lesions must share one fold; every lesion covered."""
    seen: dict[str, int] = {}
    for lesion in dataset.lesions:
        if lesion.lesion_id not in folds.fold_of_lesion:
            raise ValidationError(f"lesion {lesion.lesion_id!r} missing from folds")
        f = folds.fold_of_lesion[lesion.lesion_id]
        prev = seen.setdefault(lesion.patient_id, f)
        if prev != f:
            raise ValidationError(
                f"patient {lesion.patient_id!r} split across folds {prev} and {f}")


# ------------------------------------------------------------- metrics

@dataclass(frozen=True)
class RocPoint:
    fpr: float
    tpr: float
    threshold: float
    tp: int
    fp: int


@dataclass(frozen=True)
class RocCurve:
    points: tuple[RocPoint, ...]
    n_pos: int
    n_neg: int


@dataclass(frozen=True)
class OperatingPoint:
    sensitivity: float
    specificity: float
    accuracy: float
    threshold: float


@dataclass(frozen=True)
class BlandAltman:
    mean_diff: float
    sd_diff: float
    loa_low: float
    loa_high: float
    points: tuple[tuple[float, float], ...]  # (pair mean, difference)


def _check_scores(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if s.shape != y.shape or s.ndim != 1:
        raise DimensionMismatchError(f"scores shape {s.shape} vs labels {y.shape}")
    if not np.all(np.isfinite(s)):
        raise ValidationError("scores contain NaN or Inf")
    if not np.all((y == 0) | (y == 1)):
        raise ValidationError("labels must be 0 or 1")
    if y.sum() == 0 or y.sum() == y.shape[0]:
        raise DegenerateInputError("need both classes to sweep a ROC")
    return s, y


def roc_curve(scores, labels) -> RocCurve:
    """ROC points over descending unique score thresholds (rule: score >= t)."""
    s, y = _check_scores(scores, labels)
    n_pos = int(y.sum())
    n_neg = int(y.shape[0] - n_pos)
    order = np.argsort(-s, kind="stable")
    s_sorted = s[order]
    y_sorted = y[order]
    points = [RocPoint(0.0, 0.0, float("inf"), 0, 0)]
    tp = fp = 0
    i = 0
    n = s_sorted.shape[0]
    while i < n:
        j = i
        while j < n and s_sorted[j] == s_sorted[i]:
            j += 1
        group = y_sorted[i:j]
        tp += int(group.sum())
        fp += int(group.shape[0] - group.sum())
        points.append(RocPoint(fp / n_neg, tp / n_pos, float(s_sorted[i]), tp, fp))
        i = j
    return RocCurve(points=tuple(points), n_pos=n_pos, n_neg=n_neg)


def auc(scores, labels) -> float:
    """Mann-Whitney AUC with exact tie handling (integer pair counting)."""
    s, y = _check_scores(scores, labels)
    n_pos = int(y.sum())
    n_neg = int(y.shape[0] - n_pos)
    order = np.argsort(s, kind="stable")
    s_sorted = s[order]
    y_sorted = y[order]
    total2 = 0  # twice the pair score, exact in integers
    neg_below = 0
    i = 0
    n = s_sorted.shape[0]
    while i < n:
        j = i
        while j < n and s_sorted[j] == s_sorted[i]:
            j += 1
        pos_here = int(y_sorted[i:j].sum())
        neg_here = (j - i) - pos_here
        total2 += 2 * pos_here * neg_below + pos_here * neg_here
        neg_below += neg_here
        i = j
    return total2 / (2 * n_pos * n_neg)


def operating_point(curve: RocCurve) -> OperatingPoint:
    """Point of the curve closest to (0,1); exact integer distance compare.

    Ties prefer higher sensitivity, then the lower threshold.  Accuracy
    is the prevalence-weighted (TP+TN)/N at the chosen threshold.
    """
    n_pos, n_neg = curve.n_pos, curve.n_neg
    best = None
    best_key = None
    for pt in curve.points:
        # d^2 = (fp/N)^2 + ((P-tp)/P)^2, compared exactly via integers:
        # common denominator (N*P)^2 -> numerator (fp*P)^2 + ((P-tp)*N)^2
        num = (pt.fp * n_pos) ** 2 + ((n_pos - pt.tp) * n_neg) ** 2
        key = (num, -pt.tp, pt.threshold)
        if best_key is None or key < best_key:
            best_key = key
            best = pt
    accuracy = (best.tp + (n_neg - best.fp)) / (n_pos + n_neg)
    return OperatingPoint(sensitivity=best.tp / n_pos,
                          specificity=(n_neg - best.fp) / n_neg,
                          accuracy=accuracy,
                          threshold=best.threshold)


def aggregate_lesion_probability(variant_probs) -> float:
    """Arithmetic mean of the per-variant probabilities of one lesion."""
    probs = np.asarray(list(variant_probs), dtype=np.float64)
    if probs.size == 0:
        raise ValidationError("cannot aggregate an empty probability list")
    if not np.all((probs >= 0.0) & (probs <= 1.0)):
        raise ValidationError("probabilities must lie in [0, 1]")
    return float(probs.mean())


def bland_altman(probs_a, probs_b) -> BlandAltman:
    """Agreement statistics between two aligned probability vectors."""
    a = np.asarray(probs_a, dtype=np.float64)
    b = np.asarray(probs_b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise DimensionMismatchError(f"shapes differ: {a.shape} vs {b.shape}")
    if a.shape[0] < 2:
        raise ValidationError("Bland-Altman needs at least 2 paired values")
    diff = a - b
    mean_diff = float(diff.mean())
    sd_diff = float(diff.std(ddof=1))
    points = tuple(((float(m), float(d))) for m, d in zip((a + b) / 2.0, diff))
    return BlandAltman(mean_diff=mean_diff, sd_diff=sd_diff,
                       loa_low=mean_diff - 1.96 * sd_diff,
                       loa_high=mean_diff + 1.96 * sd_diff,
                       points=points)


# ------------------------------------------------------------ the grid

def threshold_label(threshold: float) -> str:
    return format(float(threshold), "g")


@dataclass(frozen=True)
class ExperimentGrid:
    """Which train rows and test columns to run, on which fold split."""

    train_sets: tuple[str, ...]
    test_sets: tuple[str, ...]
    extractor_id: str
    margins: tuple[float, ...]
    folds: FoldAssignment
    thresholds: tuple[float, ...] = (40.0, 50.0, 60.0)

    def __post_init__(self):
        valid = {threshold_label(t) for t in self.thresholds} | {SET_ALL}
        for name in list(self.train_sets) + list(self.test_sets):
            if name not in valid:
                raise ValidationError(f"unknown threshold set {name!r}; valid: {sorted(valid)}")
        if not self.train_sets or not self.test_sets:
            raise ValidationError("grid needs at least one train and one test set")
        if not self.margins:
            raise ValidationError("grid needs at least one margin")

    def resolve(self, set_name: str) -> tuple[float, ...]:
        if set_name == SET_ALL:
            return tuple(sorted(self.thresholds))
        wanted = [t for t in self.thresholds if threshold_label(t) == set_name]
        return tuple(wanted)


@dataclass(frozen=True)
class CellResult:
    train_set: str
    test_set: str
    auc: float
    accuracy: float
    sensitivity: float
    specificity: float
    threshold: float
    roc: RocCurve


@dataclass(frozen=True)
class EvalReport:
    """Everything a grid run produced, sufficient to redraw every artifact."""

    meta: dict
    cells: tuple[CellResult, ...]
    lesion_probabilities: dict[str, dict[str, float]]  # "train|test" -> lesion -> p
    lesion_labels: dict[str, str]
    fold_of_lesion: dict[str, int]
    bland_altman_pairs: tuple[tuple[str, str], ...]
    bland_altman_stats: tuple[BlandAltman, ...]

    def cell(self, train_set: str, test_set: str) -> CellResult:
        for c in self.cells:
            if c.train_set == train_set and c.test_set == test_set:
                return c
        raise KeyError((train_set, test_set))


def cell_key(train_set: str, test_set: str) -> str:
    return f"{train_set}|{test_set}"


FeatureTable = dict[str, dict[tuple[int, float, float], np.ndarray]]


def compute_feature_table(dataset: Dataset, thresholds, margins,
                          preprocess: NetworkPreprocessSpec,
                          extractor: ExtractorSpec, *,
                          cache: FeatureCache | None = None,
                          workers: int = 1) -> FeatureTable:
    """Features for every (lesion, scan, margin, threshold) combination."""
    thresholds = tuple(sorted({float(t) for t in thresholds}))
    margins = tuple(sorted({float(m) for m in margins}))

    def one_lesion(record) -> dict[tuple[int, float, float], np.ndarray]:
        variants = enumerate_variants(record, thresholds, margins, preprocess)
        out = {}
        for v in variants:
            vec = extract_for_variant(v, extractor, cache)
            out[(v.scan_index, v.margin_mm, v.threshold_db)] = vec.values
        return out

    table: FeatureTable = {}
    if workers <= 1:
        for record in dataset.lesions:
            table[record.lesion_id] = one_lesion(record)
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one_lesion, dataset.lesions))
        for record, result in zip(dataset.lesions, results):
            table[record.lesion_id] = result
    return table


def _train_cell_fold(dataset: Dataset, folds: FoldAssignment, table: FeatureTable,
                     grid: ExperimentGrid, train_set: str, fold: int,
                     svm_config: SvmConfig) -> SvmModel:
    train_thresholds = grid.resolve(train_set)
    rows = []
    labels = []
    for lesion in dataset.lesions:
        if folds.fold_of_lesion[lesion.lesion_id] == fold:
            continue
        per_lesion = table[lesion.lesion_id]
        for scan in (0, 1):
            for margin in grid.margins:
                for t in train_thresholds:
                    rows.append(per_lesion[(scan, float(margin), float(t))])
                    labels.append(1 if lesion.label == LABEL_MALIGNANT else 0)
    X = np.stack(rows)
    y = np.asarray(labels, dtype=np.int64)
    fold_config = replace(svm_config,
                          seed=derive_seed(svm_config.seed, "svm-train",
                                           grid.train_sets.index(train_set), fold))
    return train_svm(X, y, fold_config)


def run_experiment(dataset: Dataset, grid: ExperimentGrid,
                   extractor: ExtractorSpec, preprocess: NetworkPreprocessSpec,
                   svm_config: SvmConfig, *,
                   cache: FeatureCache | None = None,
                   workers: int = 1,
                   bland_altman_pairs: tuple[tuple[str, str], ...] | None = None
                   ) -> EvalReport:
    """Train/test every grid cell with pooled out-of-fold probabilities."""
    assert_no_leakage(dataset, grid.folds)
    folds = grid.folds
    table = compute_feature_table(dataset, grid.thresholds, grid.margins,
                                  preprocess, extractor,
                                  cache=cache, workers=workers)

    jobs = [(train_set, fold)
            for train_set in grid.train_sets
            for fold in range(folds.k)]

    def run_job(job):
        train_set, fold = job
        try:
            model = _train_cell_fold(dataset, folds, table, grid, train_set,
                                     fold, svm_config)
        except ToolkitError as exc:
            raise type(exc)(f"cell train={train_set} fold={fold}: {exc}") from exc
        except Exception as exc:
            raise ToolkitError(f"cell train={train_set} fold={fold}: {exc}") from exc
        preds: dict[tuple[str, str], float] = {}
        for lesion in dataset.lesions:
            if folds.fold_of_lesion[lesion.lesion_id] != fold:
                continue
            per_lesion = table[lesion.lesion_id]
            for test_set in grid.test_sets:
                probs = []
                for scan in (0, 1):
                    for margin in grid.margins:
                        for t in grid.resolve(test_set):
                            x = per_lesion[(scan, float(margin), float(t))]
                            probs.append(predict_probability(model, x))
                preds[(test_set, lesion.lesion_id)] = aggregate_lesion_probability(probs)
        return job, preds

    if workers <= 1:
        job_results = [run_job(j) for j in jobs]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            job_results = list(pool.map(run_job, jobs))
    job_results.sort(key=lambda item: (grid.train_sets.index(item[0][0]), item[0][1]))

    pooled: dict[str, dict[str, float]] = {}
    for (train_set, _), preds in job_results:
        for (test_set, lesion_id), prob in preds.items():
            pooled.setdefault(cell_key(train_set, test_set), {})[lesion_id] = prob

    lesion_labels = {l.lesion_id: l.label for l in dataset.lesions}
    lesion_order = [l.lesion_id for l in dataset.lesions]
    y = np.array([1 if lesion_labels[lid] == LABEL_MALIGNANT else 0
                  for lid in lesion_order], dtype=np.int64)

    cells = []
    for train_set in grid.train_sets:
        for test_set in grid.test_sets:
            key = cell_key(train_set, test_set)
            probs = pooled[key]
            missing = [lid for lid in lesion_order if lid not in probs]
            if missing:
                raise ValidationError(
                    f"cell {key}: no pooled probability for lesions {missing[:3]}...")
            scores = np.array([probs[lid] for lid in lesion_order])
            curve = roc_curve(scores, y)
            op = operating_point(curve)
            cells.append(CellResult(train_set=train_set, test_set=test_set,
                                    auc=auc(scores, y), accuracy=op.accuracy,
                                    sensitivity=op.sensitivity,
                                    specificity=op.specificity,
                                    threshold=op.threshold, roc=curve))

    if bland_altman_pairs is None:
        diag = [s for s in grid.train_sets
                if s != SET_ALL and s in grid.test_sets]
        if len(diag) >= 2:
            bland_altman_pairs = ((cell_key(diag[0], diag[0]),
                                   cell_key(diag[-1], diag[-1])),)
        else:
            bland_altman_pairs = ()
    ba_stats = []
    for key_a, key_b in bland_altman_pairs:
        if key_a not in pooled or key_b not in pooled:
            raise ValidationError(f"Bland-Altman pair ({key_a}, {key_b}) not in the grid")
        a = [pooled[key_a][lid] for lid in lesion_order]
        b = [pooled[key_b][lid] for lid in lesion_order]
        ba_stats.append(bland_altman(a, b))

    meta = {
        "dataset": dataset.name,
        "n_lesions": len(dataset.lesions),
        "extractor_id": extractor.extractor_id,
        "preprocess": preprocess.name,
        "train_sets": list(grid.train_sets),
        "test_sets": list(grid.test_sets),
        "thresholds": [float(t) for t in grid.thresholds],
        "margins": [float(m) for m in grid.margins],
        "folds": folds.k,
        "fold_seed": folds.seed,
        "svm": {
            "c": svm_config.c,
            "gamma": svm_config.gamma,
            "class_weighting": svm_config.class_weighting,
            "tolerance": svm_config.tolerance,
            "max_iterations": svm_config.max_iterations,
            "seed": svm_config.seed,
        },
    }
    return EvalReport(meta=meta, cells=tuple(cells),
                      lesion_probabilities=pooled,
                      lesion_labels=lesion_labels,
                      fold_of_lesion=dict(folds.fold_of_lesion),
                      bland_altman_pairs=tuple(tuple(p) for p in bland_altman_pairs),
                      bland_altman_stats=tuple(ba_stats))


# -------------------------------------------------------- serialization

def report_to_json(report: EvalReport) -> str:
    """Stable JSON encoding of a full report (floats via repr round-trip)."""
    payload = {
        "meta": report.meta,
        "cells": [
            {
                "train_set": c.train_set,
                "test_set": c.test_set,
                "auc": c.auc,
                "accuracy": c.accuracy,
                "sensitivity": c.sensitivity,
                "specificity": c.specificity,
                "threshold": c.threshold,
                "roc": {
                    "n_pos": c.roc.n_pos,
                    "n_neg": c.roc.n_neg,
                    "points": [[p.fpr, p.tpr, p.threshold, p.tp, p.fp]
                               for p in c.roc.points],
                },
            }
            for c in report.cells
        ],
        "lesion_probabilities": {
            key: dict(sorted(probs.items()))
            for key, probs in sorted(report.lesion_probabilities.items())
        },
        "lesion_labels": dict(sorted(report.lesion_labels.items())),
        "fold_of_lesion": dict(sorted(report.fold_of_lesion.items())),
        "bland_altman": [
            {
                "cell_a": pair[0],
                "cell_b": pair[1],
                "mean_diff": st.mean_diff,
                "sd_diff": st.sd_diff,
                "loa_low": st.loa_low,
                "loa_high": st.loa_high,
                "points": [[m, d] for m, d in st.points],
            }
            for pair, st in zip(report.bland_altman_pairs, report.bland_altman_stats)
        ],
    }
    return json.dumps(payload, indent=2, sort_keys=True) + "\n"


def report_from_json(text: str) -> EvalReport:
    try:
        payload = json.loads(text)
        cells = []
        for c in payload["cells"]:
            points = tuple(RocPoint(fpr=p[0], tpr=p[1], threshold=p[2],
                                    tp=int(p[3]), fp=int(p[4]))
                           for p in c["roc"]["points"])
            cells.append(CellResult(
                train_set=c["train_set"], test_set=c["test_set"], auc=c["auc"],
                accuracy=c["accuracy"], sensitivity=c["sensitivity"],
                specificity=c["specificity"], threshold=c["threshold"],
                roc=RocCurve(points=points, n_pos=int(c["roc"]["n_pos"]),
                             n_neg=int(c["roc"]["n_neg"]))))
        pairs = []
        stats = []
        for entry in payload["bland_altman"]:
            pairs.append((entry["cell_a"], entry["cell_b"]))
            stats.append(BlandAltman(
                mean_diff=entry["mean_diff"], sd_diff=entry["sd_diff"],
                loa_low=entry["loa_low"], loa_high=entry["loa_high"],
                points=tuple((m, d) for m, d in entry["points"])))
        return EvalReport(
            meta=payload["meta"], cells=tuple(cells),
            lesion_probabilities={k: dict(v) for k, v in
                                  payload["lesion_probabilities"].items()},
            lesion_labels=dict(payload["lesion_labels"]),
            fold_of_lesion={k: int(v) for k, v in payload["fold_of_lesion"].items()},
            bland_altman_pairs=tuple(pairs),
            bland_altman_stats=tuple(stats))
    except (KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
        raise ValidationError(f"malformed report JSON: {exc}") from exc
