"""File emission for grid reports: CSV tables, SVG figures, JSON summary.

Emission is deterministic: figures use the Agg backend with a pinned
SVG hash salt and no embedded date, CSV rows use repr floats, and the
JSON summary sorts its keys.  Re-emitting the same report produces
byte-identical files, so reports can be regenerated from report.json.
"""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

from .errors import ValidationError  # noqa: E402
from .evaluate import EvalReport, report_to_json  # noqa: E402

_SVG_RC = {
    "svg.hashsalt": "bmodelab",
    "svg.fonttype": "none",
}

GRID_CSV = "grid_cells.csv"
LESION_CSV = "lesion_probabilities.csv"
REPORT_JSON = "report.json"


def _save_svg(fig, path: Path) -> None:
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def _roc_figure(cell) -> "plt.Figure":
    fig, ax = plt.subplots(figsize=(4.0, 4.0), constrained_layout=True)
    fpr = [p.fpr for p in cell.roc.points]
    tpr = [p.tpr for p in cell.roc.points]
    ax.plot([0, 1], [0, 1], linestyle="--", color="0.6", linewidth=0.8)
    ax.plot(fpr, tpr, color="tab:blue", linewidth=1.5)
    chosen = [p for p in cell.roc.points if p.threshold == cell.threshold]
    if chosen:
        ax.plot([chosen[0].fpr], [chosen[0].tpr], marker="o", color="tab:red",
                markersize=5, linestyle="none")
    ax.set_xlim(-0.02, 1.02)
    ax.set_ylim(-0.02, 1.02)
    ax.set_xlabel("false positive rate")
    ax.set_ylabel("true positive rate")
    ax.set_title(f"Train {cell.train_set} / Test {cell.test_set}  "
                 f"(AUC {cell.auc:.3f})", fontsize=10)
    return fig


def _bland_altman_figure(pair, stats) -> "plt.Figure":
    fig, ax = plt.subplots(figsize=(4.8, 3.6), constrained_layout=True)
    means = [m for m, _ in stats.points]
    diffs = [d for _, d in stats.points]
    ax.scatter(means, diffs, s=12, color="tab:blue", alpha=0.7, linewidths=0)
    ax.axhline(stats.mean_diff, color="tab:red", linewidth=1.2)
    ax.axhline(stats.loa_low, color="tab:red", linewidth=0.9, linestyle="--")
    ax.axhline(stats.loa_high, color="tab:red", linewidth=0.9, linestyle="--")
    ax.set_xlabel("mean of paired probabilities")
    ax.set_ylabel("difference")
    ax.set_title(f"Agreement: {pair[0]} vs {pair[1]}", fontsize=10)
    return fig


def _safe_name(cell_key: str) -> str:
    return cell_key.replace("|", "_")


def emit_report(report: EvalReport, out_dir: str | Path) -> list[Path]:
    """Write every artifact of a report; returns the created paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    created: list[Path] = []

    grid_path = out / GRID_CSV
    with grid_path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["train_set", "test_set", "auc", "accuracy",
                         "sensitivity", "specificity", "threshold"])
        for cell in report.cells:
            writer.writerow([cell.train_set, cell.test_set, repr(cell.auc),
                             repr(cell.accuracy), repr(cell.sensitivity),
                             repr(cell.specificity), repr(cell.threshold)])
    created.append(grid_path)

    lesion_path = out / LESION_CSV
    with lesion_path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["train_set", "test_set", "lesion_id", "label",
                         "fold", "probability"])
        for cell in report.cells:
            key = f"{cell.train_set}|{cell.test_set}"
            probs = report.lesion_probabilities[key]
            for lesion_id in sorted(probs):
                writer.writerow([cell.train_set, cell.test_set, lesion_id,
                                 report.lesion_labels[lesion_id],
                                 report.fold_of_lesion[lesion_id],
                                 repr(probs[lesion_id])])
    created.append(lesion_path)

    json_path = out / REPORT_JSON
    json_path.write_text(report_to_json(report))
    created.append(json_path)

    with plt.rc_context(_SVG_RC):
        for cell in report.cells:
            svg_path = out / f"roc_train{cell.train_set}_test{cell.test_set}.svg"
            _save_svg(_roc_figure(cell), svg_path)
            created.append(svg_path)
        for pair, stats in zip(report.bland_altman_pairs, report.bland_altman_stats):
            svg_path = out / (f"bland_altman_{_safe_name(pair[0])}"
                              f"_vs_{_safe_name(pair[1])}.svg")
            _save_svg(_bland_altman_figure(pair, stats), svg_path)
            created.append(svg_path)

    return created


def load_report(path: str | Path) -> EvalReport:
    """Read a report.json back into an EvalReport."""
    from .evaluate import report_from_json
    path = Path(path)
    if path.is_dir():
        path = path / REPORT_JSON
    try:
        text = path.read_text()
    except OSError as exc:
        raise ValidationError(f"cannot read report {path}: {exc}") from exc
    return report_from_json(text)
