"""Synthetic RF lesion phantoms.

A frame is a sparse field of Gaussian point scatterers convolved per
column with a Gaussian-modulated cosine pulse, which yields realistic
speckle after envelope detection.  The lesion is an ellipse whose
scatterer amplitudes are attenuated; its boundary radius is perturbed
by low-order sinusoids so the two classes differ in boundary
regularity (malignant also gets a small extra contrast offset).
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np
from scipy.signal import fftconvolve

from .data_io import (Dataset, LABEL_BENIGN, LABEL_MALIGNANT, LABELS,
                      LesionRecord, PixelGeometry, RfFrame, RoiMask)
from .errors import ValidationError
from .seeding import derive_seed

DEFAULT_IRREGULARITY = {LABEL_BENIGN: 0.05, LABEL_MALIGNANT: 0.35}
MALIGNANT_CONTRAST_OFFSET_DB = -3.0
_BOUNDARY_MODES = (2, 3, 5)


@dataclass(frozen=True)
class PhantomConfig:
    """Geometry, pulse and texture knobs of the synthetic scanner."""

    rows: int = 1024
    cols: int = 256
    sampling_rate_hz: float = 40e6
    center_frequency_hz: float = 7e6
    pulse_bandwidth_fraction: float = 0.6
    scatterer_density: float = 0.15
    lesion_contrast_db: float = -12.0
    boundary_irregularity: float | None = None  # None: per-label default
    lateral_mm_per_line: float = 0.2
    seed: int = 0

    def __post_init__(self):
        if self.rows < 64 or self.cols < 64:
            raise ValidationError(f"frame must be at least 64x64, got {self.rows}x{self.cols}")
        if not (0.0 < self.scatterer_density <= 1.0):
            raise ValidationError(f"scatterer_density must be in (0,1], got {self.scatterer_density!r}")
        if not np.isfinite(self.lesion_contrast_db):
            raise ValidationError("lesion_contrast_db must be finite")
        for name in ("sampling_rate_hz", "center_frequency_hz",
                     "pulse_bandwidth_fraction", "lateral_mm_per_line"):
            value = getattr(self, name)
            if not (np.isfinite(value) and value > 0):
                raise ValidationError(f"{name} must be > 0, got {value!r}")
        if self.boundary_irregularity is not None and not (
                np.isfinite(self.boundary_irregularity) and self.boundary_irregularity >= 0):
            raise ValidationError(
                f"boundary_irregularity must be >= 0, got {self.boundary_irregularity!r}")

    @property
    def geometry(self) -> PixelGeometry:
        return PixelGeometry.from_acquisition(self.sampling_rate_hz,
                                              self.lateral_mm_per_line)


def _pulse(config: PhantomConfig) -> np.ndarray:
    """Gaussian-modulated cosine at the center frequency.

    sigma_t is set so the envelope's -6 dB width matches the requested
    fractional bandwidth.
    """
    f0 = config.center_frequency_hz
    sigma_t = math.sqrt(2.0 * math.log(2.0)) / (math.pi * config.pulse_bandwidth_fraction * f0)
    half = int(math.ceil(3.0 * sigma_t * config.sampling_rate_hz))
    t = np.arange(-half, half + 1) / config.sampling_rate_hz
    return np.exp(-t * t / (2.0 * sigma_t * sigma_t)) * np.cos(2.0 * math.pi * f0 * t)


def _lesion_geometry(config: PhantomConfig, label: str):
    """Ellipse parameters and boundary perturbation, seeded per lesion."""
    rng = np.random.default_rng(derive_seed(config.seed, f"lesion-geometry-{label}"))
    center_r = 0.5 * config.rows * (1.0 + 0.3 * (rng.uniform() - 0.5))
    center_c = 0.5 * config.cols * (1.0 + 0.3 * (rng.uniform() - 0.5))
    semi_r = 0.5 * config.rows * rng.uniform(0.25, 0.40)
    semi_c = 0.5 * config.cols * rng.uniform(0.25, 0.40)
    amps = rng.uniform(0.5, 1.0, size=len(_BOUNDARY_MODES))
    amps = amps / amps.sum()  # sum of |amplitudes| is 1, so |s(theta)| <= 1
    phases = rng.uniform(0.0, 2.0 * math.pi, size=len(_BOUNDARY_MODES))
    return center_r, center_c, semi_r, semi_c, amps, phases


def synth_lesion_rf(config: PhantomConfig, label: str,
                    scan_index: int = 0) -> tuple[RfFrame, RoiMask]:
    """One seeded RF scan of one lesion.

    Scans 0 and 1 share the lesion geometry but draw independent
    scatterer fields, standing in for orthogonal imaging planes.
    """
    if label not in LABELS:
        raise ValidationError(f"unknown label {label!r}")
    if scan_index not in (0, 1):
        raise ValidationError(f"scan_index must be 0 or 1, got {scan_index}")
    irregularity = (config.boundary_irregularity
                    if config.boundary_irregularity is not None
                    else DEFAULT_IRREGULARITY[label])

    center_r, center_c, semi_r, semi_c, amps, phases = _lesion_geometry(config, label)
    r = np.arange(config.rows, dtype=np.float64)[:, None]
    c = np.arange(config.cols, dtype=np.float64)[None, :]
    u = (r - center_r) / semi_r
    v = (c - center_c) / semi_c
    rho = np.hypot(u, v)
    theta = np.arctan2(u, v)
    perturb = np.zeros_like(theta)
    for mode, amp, phase in zip(_BOUNDARY_MODES, amps, phases):
        perturb += amp * np.sin(mode * theta + phase)
    interior = rho <= 1.0 + irregularity * perturb
    mask = rho <= 1.0  # the radiologist outline stays the clean ellipse

    rng = np.random.default_rng(derive_seed(config.seed, f"speckle-{label}", scan_index))
    occupied = rng.random((config.rows, config.cols)) < config.scatterer_density
    amplitudes = rng.standard_normal((config.rows, config.cols))
    field = np.where(occupied, amplitudes, 0.0)

    contrast_db = config.lesion_contrast_db
    if label == LABEL_MALIGNANT:
        contrast_db += MALIGNANT_CONTRAST_OFFSET_DB
    field = np.where(interior, field * 10.0 ** (contrast_db / 20.0), field)

    rf = fftconvolve(field, _pulse(config)[:, None], mode="same")
    frame = RfFrame(samples=rf, geometry=config.geometry,
                    scan_id=f"phantom_seed{config.seed}_{label}_scan{scan_index}")
    return frame, RoiMask(mask=mask)


def synth_dataset(n_benign: int, n_malignant: int, base_config: PhantomConfig,
                  seed: int, *, workers: int = 1) -> Dataset:
    """A dataset of single-lesion patients; base_config.seed is ignored
    in favor of per-lesion seeds derived from ``seed``."""
    if n_benign < 1 or n_malignant < 1:
        raise ValidationError("need at least one lesion of each class")
    labels = [LABEL_BENIGN] * n_benign + [LABEL_MALIGNANT] * n_malignant

    def build(index: int) -> LesionRecord:
        label = labels[index]
        config = replace(base_config, seed=derive_seed(seed, "lesion", index))
        scans = tuple(synth_lesion_rf(config, label, scan_index=k) for k in (0, 1))
        return LesionRecord(lesion_id=f"les{index:04d}", patient_id=f"pat{index:04d}",
                            label=label, scans=scans)

    if workers <= 1:
        lesions = [build(i) for i in range(len(labels))]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            lesions = list(pool.map(build, range(len(labels))))
    return Dataset(lesions=tuple(lesions),
                   name=f"phantom_{n_benign}b_{n_malignant}m_seed{seed}")
