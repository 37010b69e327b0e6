"""Artifact emission: CSV schema, SVG output, byte-stable re-emission."""

import csv

import numpy as np
import pytest

from bmodelab.errors import ValidationError
from bmodelab.evaluate import (CellResult, EvalReport, auc, bland_altman,
                               operating_point, roc_curve)
from bmodelab.report import (GRID_CSV, LESION_CSV, REPORT_JSON, emit_report,
                             load_report)

LESIONS = ["l0", "l1", "l2", "l3", "l4", "l5"]
LABELS = {"l0": "benign", "l1": "malignant", "l2": "benign",
          "l3": "malignant", "l4": "benign", "l5": "malignant"}
Y = [0, 1, 0, 1, 0, 1]


def _tiny_report() -> EvalReport:
    rng = np.random.default_rng(3)
    cells = []
    probs_map = {}
    for train in ("40", "60"):
        for test in ("40", "60"):
            scores = np.round(rng.uniform(0, 1, len(LESIONS)), 3)
            curve = roc_curve(scores, Y)
            op = operating_point(curve)
            cells.append(CellResult(
                train_set=train, test_set=test, auc=auc(scores, Y),
                accuracy=op.accuracy, sensitivity=op.sensitivity,
                specificity=op.specificity, threshold=op.threshold, roc=curve))
            probs_map[f"{train}|{test}"] = dict(zip(LESIONS, map(float, scores)))
    pair = ("40|40", "60|60")
    stats = bland_altman([probs_map[pair[0]][l] for l in LESIONS],
                         [probs_map[pair[1]][l] for l in LESIONS])
    return EvalReport(
        meta={"dataset": "tiny", "n_lesions": len(LESIONS)},
        cells=tuple(cells), lesion_probabilities=probs_map,
        lesion_labels=dict(LABELS),
        fold_of_lesion={l: i % 2 for i, l in enumerate(LESIONS)},
        bland_altman_pairs=(pair,), bland_altman_stats=(stats,))


@pytest.fixture(scope="module")
def emitted(tmp_path_factory):
    report = _tiny_report()
    out = tmp_path_factory.mktemp("report")
    created = emit_report(report, out)
    return report, out, created


class TestEmission:
    def test_expected_files_created(self, emitted):
        report, out, created = emitted
        names = sorted(p.name for p in created)
        expected = sorted(
            [GRID_CSV, LESION_CSV, REPORT_JSON,
             "bland_altman_40_40_vs_60_60.svg"]
            + [f"roc_train{c.train_set}_test{c.test_set}.svg"
               for c in report.cells])
        assert names == expected
        for path in created:
            assert path.is_file() and path.stat().st_size > 0

    def test_grid_csv_schema(self, emitted):
        report, out, _ = emitted
        with (out / GRID_CSV).open() as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["train_set", "test_set", "auc", "accuracy",
                           "sensitivity", "specificity", "threshold"]
        assert len(rows) == 1 + len(report.cells)
        for row, cell in zip(rows[1:], report.cells):
            assert row[0] == cell.train_set and row[1] == cell.test_set
            # repr floats round-trip exactly
            assert float(row[2]) == cell.auc
            assert float(row[6]) == cell.threshold

    def test_lesion_csv_schema(self, emitted):
        report, out, _ = emitted
        with (out / LESION_CSV).open() as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["train_set", "test_set", "lesion_id", "label",
                           "fold", "probability"]
        assert len(rows) == 1 + len(report.cells) * len(LESIONS)
        block = rows[1:1 + len(LESIONS)]
        assert [r[2] for r in block] == sorted(LESIONS)
        for r in block:
            key = f"{r[0]}|{r[1]}"
            assert float(r[5]) == report.lesion_probabilities[key][r[2]]
            assert r[3] == LABELS[r[2]]
            assert int(r[4]) == report.fold_of_lesion[r[2]]

    def test_svg_is_self_contained(self, emitted):
        _, out, _ = emitted
        text = (out / "roc_train40_test40.svg").read_text()
        assert text.lstrip().startswith("<?xml")
        assert "<dc:date>" not in text

    def test_emission_is_deterministic(self, emitted, tmp_path):
        report, out, created = emitted
        again = emit_report(report, tmp_path / "again")
        for a, b in zip(created, again):
            assert a.name == b.name
            assert a.read_bytes() == b.read_bytes(), a.name

    def test_reemission_from_json_is_byte_identical(self, emitted, tmp_path):
        _, out, created = emitted
        loaded = load_report(out)
        second = emit_report(loaded, tmp_path / "re")
        for a, b in zip(created, second):
            assert a.read_bytes() == b.read_bytes(), a.name


class TestLoadReport:
    def test_load_from_directory_or_file(self, emitted):
        report, out, _ = emitted
        from_dir = load_report(out)
        from_file = load_report(out / REPORT_JSON)
        assert from_dir.meta == report.meta == from_file.meta
        assert from_dir.cells == from_file.cells

    def test_missing_report_rejected(self, tmp_path):
        with pytest.raises(ValidationError):
            load_report(tmp_path)
