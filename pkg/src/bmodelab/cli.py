"""Command-line pipeline driver.

Subcommands: convert (MAT archives to the native manifest), phantom
(synthetic dataset), reconstruct (B-mode PGMs), extract (feature cache),
run-grid (the full cross-threshold experiment) and report (re-emit
artifacts from a saved report.json).  Exit codes: 0 success, 1 input or
usage error, 2 runtime failure.  Every command writes run_config.json
beside its outputs so a run can be reproduced exactly.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import traceback
from pathlib import Path

from . import __version__
from .data_io import Dataset, load_dataset, save_dataset, write_pgm
from .errors import ToolkitError, ValidationError
from .evaluate import (ExperimentGrid, SET_ALL, compute_feature_table,
                       make_folds, run_experiment, threshold_label)
from .features import (ExtractorSpec, FeatureCache, KIND_PORTABLE,
                       baseline_spec)
from .mat5 import lesion_from_mat
from .phantom import PhantomConfig, synth_dataset
from .prep import NetworkPreprocessSpec, builtin_preprocess_specs
from .reconstruct import (AMAX_PER_DATASET, AMAX_PER_FRAME, CompressionConfig,
                          reconstruct_dataset)
from .report import emit_report, load_report
from .svm import SvmConfig

_WORKERS_ENV = "BMODELAB_WORKERS"


class _Parser(argparse.ArgumentParser):
    """argparse with usage errors on exit code 1 instead of 2."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _floats_arg(text: str) -> list[float]:
    try:
        return [float(part) for part in text.split(",") if part.strip()]
    except ValueError as exc:
        raise ValidationError(f"expected comma-separated numbers, got {text!r}") from exc


def _sets_arg(text: str) -> list[str]:
    return [part.strip() for part in text.split(",") if part.strip()]


def _resolve_workers(flag_value: int) -> int:
    env = os.environ.get(_WORKERS_ENV)
    if env is not None:
        try:
            value = int(env)
        except ValueError as exc:
            raise ValidationError(f"{_WORKERS_ENV} must be an integer, got {env!r}") from exc
        if value < 1:
            raise ValidationError(f"{_WORKERS_ENV} must be >= 1, got {value}")
        return value
    if flag_value < 1:
        raise ValidationError(f"--workers must be >= 1, got {flag_value}")
    return flag_value


def _write_run_config(out_dir: Path, command: str, params: dict) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    payload = {"tool": "bmodelab", "version": __version__,
               "command": command, "params": params}
    (out_dir / "run_config.json").write_text(
        json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _resolve_extractor(name_or_path: str, models_dir: Path
                       ) -> tuple[ExtractorSpec, str]:
    """Extractor spec plus the preprocess-spec name it needs."""
    if name_or_path == "baseline":
        return baseline_spec(), "baseline"
    aliases = {"inception": "inception_v3", "inception_v3": "inception_v3",
               "vgg": "vgg19", "vgg19": "vgg19"}
    candidate = Path(name_or_path)
    if name_or_path in aliases:
        candidate = models_dir / aliases[name_or_path]
    if candidate.is_dir():
        candidate = candidate / "manifest.json"
    if not candidate.is_file():
        raise ValidationError(
            f"extractor {name_or_path!r}: no manifest at {candidate} "
            f"(use 'baseline', a known model name, or a manifest path)")
    try:
        manifest = json.loads(candidate.read_text())
        spec = ExtractorSpec(extractor_id=manifest["extractor_id"],
                             kind=KIND_PORTABLE,
                             expected_dim=int(manifest["expected_dim"]),
                             model_path=str(candidate))
        preprocess_name = manifest["preprocess"]
    except (OSError, json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise ValidationError(f"bad model manifest {candidate}: {exc}") from exc
    return spec, preprocess_name


def _preprocess_by_name(name: str) -> NetworkPreprocessSpec:
    specs = builtin_preprocess_specs()
    if name not in specs:
        raise ValidationError(f"unknown preprocess spec {name!r}; "
                              f"shipped: {sorted(specs)}")
    return specs[name]


def _parse_label_map(text: str) -> dict[int, str]:
    out: dict[int, str] = {}
    for part in text.split(","):
        if not part.strip():
            continue
        try:
            key, value = part.split("=")
            out[int(key.strip())] = value.strip()
        except ValueError as exc:
            raise ValidationError(
                f"label map entries look like 0=benign, got {part!r}") from exc
    if not out:
        raise ValidationError("empty label map")
    return out


# ---------------------------------------------------------- subcommands

def cmd_convert(args) -> int:
    in_path = Path(args.input)
    if in_path.is_dir():
        mat_files = sorted(in_path.glob("*.mat"))
        if not mat_files:
            raise ValidationError(f"no .mat files under {in_path}")
    elif in_path.is_file():
        mat_files = [in_path]
    else:
        raise ValidationError(f"input {in_path} does not exist")

    patient_map = {}
    if args.patient_map:
        try:
            patient_map = json.loads(Path(args.patient_map).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ValidationError(f"cannot read patient map: {exc}") from exc

    label_map = _parse_label_map(args.label_map)
    rf_vars = tuple(_sets_arg(args.rf_vars))
    mask_vars = tuple(_sets_arg(args.mask_vars))
    if len(rf_vars) != 2 or len(mask_vars) != 2:
        raise ValidationError("need exactly two RF and two mask variable names")

    lesions = []
    for mat in mat_files:
        lesion_id = mat.stem
        lesions.append(lesion_from_mat(
            mat, lesion_id=lesion_id,
            patient_id=patient_map.get(lesion_id, lesion_id),
            label_map=label_map,
            sampling_rate_hz=args.sampling_rate,
            lateral_mm_per_line=args.lateral_spacing,
            rf_vars=rf_vars, mask_vars=mask_vars, label_var=args.label_var))
    dataset = Dataset(lesions=tuple(lesions), name=args.name)
    out_dir = Path(args.out)
    manifest = save_dataset(dataset, out_dir)
    _write_run_config(out_dir, "convert", {
        "input": str(in_path), "out": str(out_dir), "name": args.name,
        "sampling_rate": args.sampling_rate,
        "lateral_spacing": args.lateral_spacing,
        "label_map": args.label_map, "rf_vars": args.rf_vars,
        "mask_vars": args.mask_vars, "label_var": args.label_var,
    })
    print(f"converted {len(lesions)} lesions -> {manifest}")
    return 0


def cmd_phantom(args) -> int:
    workers = _resolve_workers(args.workers)
    config = PhantomConfig(rows=args.rows, cols=args.cols,
                           scatterer_density=args.density,
                           lesion_contrast_db=args.contrast,
                           boundary_irregularity=args.irregularity)
    dataset = synth_dataset(args.benign, args.malignant, config, args.seed,
                            workers=workers)
    out_dir = Path(args.out)
    manifest = save_dataset(dataset, out_dir)
    _write_run_config(out_dir, "phantom", {
        "benign": args.benign, "malignant": args.malignant, "seed": args.seed,
        "rows": args.rows, "cols": args.cols, "density": args.density,
        "contrast": args.contrast, "irregularity": args.irregularity,
        "workers": workers, "out": str(out_dir),
    })
    print(f"wrote {len(dataset.lesions)} phantom lesions -> {manifest}")
    return 0


def cmd_reconstruct(args) -> int:
    dataset = load_dataset(args.data)
    scope = AMAX_PER_FRAME if args.amax_scope == "frame" else AMAX_PER_DATASET
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    count = 0
    for threshold in _floats_arg(args.threshold):
        config = CompressionConfig(threshold_db=threshold, a_max_scope=scope)
        images = reconstruct_dataset(dataset, config)
        label = threshold_label(threshold)
        for lesion_id in sorted(images):
            for k, image in enumerate(images[lesion_id]):
                write_pgm(image, out_dir / f"{lesion_id}_scan{k}_t{label}.pgm")
                count += 1
    _write_run_config(out_dir, "reconstruct", {
        "data": str(args.data), "threshold": args.threshold,
        "amax_scope": args.amax_scope, "out": str(out_dir),
    })
    print(f"wrote {count} PGM images -> {out_dir}")
    return 0


def cmd_extract(args) -> int:
    workers = _resolve_workers(args.workers)
    dataset = load_dataset(args.data)
    extractor, preprocess_name = _resolve_extractor(args.extractor,
                                                    Path(args.models_dir))
    preprocess = _preprocess_by_name(args.preprocess or preprocess_name)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    cache_path = out_dir / "features.bmlfc"
    cache = FeatureCache.load(cache_path) if cache_path.is_file() else FeatureCache()
    table = compute_feature_table(dataset, _floats_arg(args.thresholds),
                                  _floats_arg(args.margins), preprocess,
                                  extractor, cache=cache, workers=workers)
    cache.save(cache_path)
    _write_run_config(out_dir, "extract", {
        "data": str(args.data), "extractor": args.extractor,
        "preprocess": preprocess.name, "thresholds": args.thresholds,
        "margins": args.margins, "workers": workers, "out": str(out_dir),
    })
    n_vectors = sum(len(v) for v in table.values())
    print(f"cached {n_vectors} feature vectors -> {cache_path}")
    return 0


def cmd_run_grid(args) -> int:
    workers = _resolve_workers(args.workers)
    dataset = load_dataset(args.data)
    extractor, preprocess_name = _resolve_extractor(args.extractor,
                                                    Path(args.models_dir))
    preprocess = _preprocess_by_name(args.preprocess or preprocess_name)
    thresholds = tuple(_floats_arg(args.thresholds))
    margins = tuple(_floats_arg(args.margins))
    train_sets = tuple(_sets_arg(args.train_sets)) if args.train_sets else (
        tuple(threshold_label(t) for t in sorted(thresholds)) + (SET_ALL,))
    test_sets = tuple(_sets_arg(args.test_sets)) if args.test_sets else (
        tuple(threshold_label(t) for t in sorted(thresholds)) + (SET_ALL,))

    folds = make_folds(dataset, args.folds, args.seed)
    grid = ExperimentGrid(train_sets=train_sets, test_sets=test_sets,
                          extractor_id=extractor.extractor_id,
                          margins=margins, folds=folds, thresholds=thresholds)
    svm_config = SvmConfig(c=args.svm_c, gamma=args.svm_gamma, seed=args.seed)

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    cache_path = Path(args.cache) if args.cache else out_dir / "features.bmlfc"
    cache = FeatureCache.load(cache_path) if cache_path.is_file() else FeatureCache()
    report = run_experiment(dataset, grid, extractor, preprocess, svm_config,
                            cache=cache, workers=workers)
    cache.save(cache_path)
    created = emit_report(report, out_dir)
    _write_run_config(out_dir, "run-grid", {
        "data": str(args.data), "extractor": args.extractor,
        "preprocess": preprocess.name,
        "thresholds": args.thresholds, "margins": args.margins,
        "train_sets": list(train_sets), "test_sets": list(test_sets),
        "folds": args.folds, "seed": args.seed, "svm_c": args.svm_c,
        "svm_gamma": args.svm_gamma, "workers": workers,
        "cache": str(cache_path), "out": str(out_dir),
    })
    for cell in report.cells:
        print(f"train={cell.train_set:>4} test={cell.test_set:>4} "
              f"auc={cell.auc:.3f} acc={cell.accuracy:.3f}")
    print(f"wrote {len(created)} artifacts -> {out_dir}")
    return 0


def cmd_report(args) -> int:
    report = load_report(args.input)
    out_dir = Path(args.out)
    created = emit_report(report, out_dir)
    _write_run_config(out_dir, "report", {
        "input": str(args.input), "out": str(out_dir),
    })
    print(f"re-emitted {len(created)} artifacts -> {out_dir}")
    return 0


# --------------------------------------------------------------- parser

def build_parser() -> _Parser:
    parser = _Parser(prog="bmodelab",
                     description="B-mode reconstruction-threshold experiments")
    parser.add_argument("--version", action="version",
                        version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("convert", parents=[], help="MAT archives to native manifest")
    p.add_argument("--in", dest="input", required=True,
                   help=".mat file or directory of .mat files")
    p.add_argument("--out", required=True)
    p.add_argument("--name", default="converted")
    p.add_argument("--sampling-rate", type=float, required=True,
                   help="RF sampling rate in Hz")
    p.add_argument("--lateral-spacing", type=float, required=True,
                   help="scan-line pitch in mm")
    p.add_argument("--label-map", default="0=benign,1=malignant")
    p.add_argument("--rf-vars", default="rf1,rf2")
    p.add_argument("--mask-vars", default="roi1,roi2")
    p.add_argument("--label-var", default="class")
    p.add_argument("--patient-map", default=None,
                   help="JSON file mapping lesion_id to patient_id")
    p.set_defaults(func=cmd_convert)

    p = sub.add_parser("phantom", help="generate a synthetic dataset")
    p.add_argument("--benign", type=int, required=True)
    p.add_argument("--malignant", type=int, required=True)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--out", required=True)
    p.add_argument("--rows", type=int, default=1024)
    p.add_argument("--cols", type=int, default=256)
    p.add_argument("--density", type=float, default=0.15)
    p.add_argument("--contrast", type=float, default=-12.0)
    p.add_argument("--irregularity", type=float, default=None)
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_phantom)

    p = sub.add_parser("reconstruct", help="write B-mode PGM images")
    p.add_argument("--in", dest="data", required=True, help="manifest.json")
    p.add_argument("--threshold", default="40,50,60",
                   help="comma-separated dB thresholds")
    p.add_argument("--amax-scope", choices=("frame", "dataset"), default="frame")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("extract", help="fill a feature cache")
    p.add_argument("--data", required=True, help="manifest.json")
    p.add_argument("--extractor", default="baseline")
    p.add_argument("--preprocess", default=None,
                   help="override the preprocess spec name")
    p.add_argument("--models-dir", default="models")
    p.add_argument("--thresholds", default="40,50,60")
    p.add_argument("--margins", default="2,5,10")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("run-grid", help="cross-threshold train/test grid")
    p.add_argument("--data", required=True, help="manifest.json")
    p.add_argument("--extractor", default="baseline")
    p.add_argument("--preprocess", default=None)
    p.add_argument("--models-dir", default="models")
    p.add_argument("--thresholds", default="40,50,60")
    p.add_argument("--margins", default="2,5,10")
    p.add_argument("--train-sets", default=None,
                   help="e.g. 40,50,60,ALL (default: thresholds + ALL)")
    p.add_argument("--test-sets", default=None)
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--svm-c", type=float, default=1.0)
    p.add_argument("--svm-gamma", type=float, default=None)
    p.add_argument("--cache", default=None, help="feature cache path")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_run_grid)

    p = sub.add_parser("report", help="re-emit artifacts from report.json")
    p.add_argument("--in", dest="input", required=True,
                   help="report.json or a directory holding one")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except SystemExit as exc:
        return int(exc.code or 0)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except ToolkitError as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return 2
    except Exception:
        traceback.print_exc()
        return 2


if __name__ == "__main__":
    sys.exit(main())
