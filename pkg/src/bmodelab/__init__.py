"""Ultrasound B-mode reconstruction-threshold experiments.

Tools for studying how the dynamic-range threshold used during B-mode
log compression affects lesion classification: RF-to-image
reconstruction, margin-based cropping and network preprocessing,
feature extraction, a from-scratch linear SVM with Platt calibration,
patient-grouped cross-validated threshold grids, and a synthetic RF
phantom for end-to-end runs without clinical data.
"""

__version__ = "0.1.0"

from .data_io import (Dataset, LesionRecord, PixelGeometry, RfFrame, RoiMask,
                      load_dataset, save_dataset, write_pgm)
from .errors import (DataFormatError, DegenerateInputError,
                     DimensionMismatchError, Mat5Error, ToolkitError,
                     ValidationError)
from .evaluate import (BlandAltman, EvalReport, ExperimentGrid,
                       FoldAssignment, OperatingPoint, RocCurve,
                       aggregate_lesion_probability, auc, bland_altman,
                       make_folds, operating_point, roc_curve,
                       run_experiment)
from .features import (ExtractorSpec, FeatureCache, FeatureVector,
                       baseline_extract, baseline_spec, extract_features)
from .mat5 import Mat5File, load_mat5, parse_mat5
from .phantom import PhantomConfig, synth_dataset, synth_lesion_rf
from .prep import (ImageVariant, NetworkPreprocessSpec, bicubic_resize,
                   builtin_preprocess_specs, crop_with_margin,
                   enumerate_variants, to_network_input)
from .reconstruct import (BModeImage, CompressionConfig, analytic_envelope,
                          log_compress, quantize, reconstruct_bmode,
                          reconstruct_dataset)
from .report import emit_report, load_report
from .svm import (SvmConfig, SvmModel, decision_value, fit_platt,
                  model_from_json, model_to_json, predict_probability,
                  train_svm)

__all__ = [name for name in dir() if not name.startswith("_")]
