"""RF-to-B-mode reconstruction.

Each scan line gets an analytic-signal envelope (FFT with one-sided
spectrum weighting), the envelope is log-compressed relative to the
frame's peak amplitude, and the dB values are mapped linearly onto
[0, 255] with a configurable dynamic-range threshold.  Pixels at or
below ``-threshold_db`` saturate to 0, a pixel at the peak maps to 255.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data_io import Dataset, PixelGeometry, RfFrame
from .errors import DegenerateInputError, ValidationError

AMAX_PER_FRAME = "per_frame"
AMAX_PER_DATASET = "per_dataset"

STANDARD_THRESHOLDS_DB = (40.0, 50.0, 60.0)


@dataclass(frozen=True)
class CompressionConfig:
    """Dynamic-range settings for the dB-to-byte mapping."""

    threshold_db: float
    a_max_scope: str = AMAX_PER_FRAME
    a_max_override: float | None = None

    def __post_init__(self):
        if not (np.isfinite(self.threshold_db) and self.threshold_db > 0):
            raise ValidationError(f"threshold_db must be > 0, got {self.threshold_db!r}")
        if self.a_max_scope not in (AMAX_PER_FRAME, AMAX_PER_DATASET):
            raise ValidationError(f"unknown a_max_scope {self.a_max_scope!r}")
        if self.a_max_override is not None and not (
                np.isfinite(self.a_max_override) and self.a_max_override > 0):
            raise ValidationError(f"a_max_override must be > 0, got {self.a_max_override!r}")


@dataclass(frozen=True)
class BModeImage:
    """8-bit B-mode image with the geometry of its source frame."""

    pixels: np.ndarray
    geometry: PixelGeometry
    threshold_db: float
    scan_id: str
    lesion_id: str = ""

    def __post_init__(self):
        p = self.pixels
        if p.ndim != 2 or p.dtype != np.uint8:
            raise ValidationError("BModeImage pixels must be a 2-D uint8 array")

    @property
    def shape(self) -> tuple[int, int]:
        return self.pixels.shape


def analytic_envelope(line: np.ndarray) -> np.ndarray:
    """Envelope of one or more scan lines via the analytic signal.

    Accepts a 1-D line or a 2-D frame whose columns are scan lines.
    The analytic signal is built in the frequency domain: DC and
    Nyquist keep weight 1, positive frequencies are doubled, negative
    frequencies zeroed.
    """
    x = np.asarray(line, dtype=np.float64)
    if x.ndim not in (1, 2):
        raise ValidationError(f"expected 1-D or 2-D input, got ndim={x.ndim}")
    n = x.shape[0]
    if n < 2:
        raise ValidationError(f"scan line needs at least 2 samples, got {n}")
    if not np.all(np.isfinite(x)):
        raise ValidationError("scan line contains NaN or Inf")

    weights = np.zeros(n)
    weights[0] = 1.0
    if n % 2 == 0:
        weights[1:n // 2] = 2.0
        weights[n // 2] = 1.0
    else:
        weights[1:(n + 1) // 2] = 2.0
    if x.ndim == 2:
        weights = weights[:, np.newaxis]
    spectrum = np.fft.fft(x, axis=0) * weights
    return np.abs(np.fft.ifft(spectrum, axis=0))


def log_compress(envelope: np.ndarray | float, a_max: float) -> np.ndarray | float:
    """Amplitude to dB relative to ``a_max``: 20*log10(A / a_max).

    Zero amplitudes come back as ``-inf``; the quantizer clamps them to 0.
    """
    if not (np.isfinite(a_max) and a_max > 0):
        raise ValidationError(f"a_max must be > 0, got {a_max!r}")
    env = np.asarray(envelope, dtype=np.float64)
    with np.errstate(divide="ignore"):
        db = 20.0 * np.log10(env / a_max)
    return db if np.ndim(envelope) else float(db)


def quantize(db_image: np.ndarray | float, threshold_db: float) -> np.ndarray | int:
    """Map dB values onto [0, 255] over the (-threshold, 0] range.

    round(255 * (1 + db/threshold)), half away from zero, clamped.
    """
    if not (np.isfinite(threshold_db) and threshold_db > 0):
        raise ValidationError(f"threshold_db must be > 0, got {threshold_db!r}")
    db = np.asarray(db_image, dtype=np.float64)
    scaled = 255.0 * (1.0 + db / threshold_db)
    rounded = np.copysign(np.floor(np.abs(scaled) + 0.5), scaled)
    pixels = np.clip(rounded, 0.0, 255.0).astype(np.uint8)
    return pixels if np.ndim(db_image) else int(pixels)


def reconstruct_bmode(frame: RfFrame, config: CompressionConfig, *,
                      lesion_id: str = "") -> BModeImage:
    """Envelope + log compression + quantization for one RF frame."""
    envelope = analytic_envelope(frame.samples)
    if config.a_max_override is not None:
        a_max = float(config.a_max_override)
    elif config.a_max_scope == AMAX_PER_FRAME:
        a_max = float(envelope.max())
    else:
        raise ValidationError(
            "per-dataset a_max needs a_max_override; compute it with dataset_a_max()"
        )
    if a_max <= 0.0:
        raise DegenerateInputError(f"frame {frame.scan_id!r} is all zeros; cannot normalize")
    pixels = quantize(log_compress(envelope, a_max), config.threshold_db)
    return BModeImage(pixels=pixels, geometry=frame.geometry,
                      threshold_db=float(config.threshold_db),
                      scan_id=frame.scan_id, lesion_id=lesion_id)


def dataset_a_max(dataset: Dataset) -> float:
    """Peak envelope amplitude across every scan of the dataset."""
    peak = 0.0
    for lesion in dataset.lesions:
        for frame, _ in lesion.scans:
            peak = max(peak, float(analytic_envelope(frame.samples).max()))
    if peak <= 0.0:
        raise DegenerateInputError("dataset envelope peak is zero")
    return peak


def reconstruct_dataset(dataset: Dataset, config: CompressionConfig
                        ) -> dict[str, tuple[BModeImage, BModeImage]]:
    """B-mode images for every lesion, keyed by lesion id.

    Resolves the per-dataset a_max scope by scanning the whole dataset
    once before reconstructing.
    """
    if config.a_max_scope == AMAX_PER_DATASET and config.a_max_override is None:
        config = CompressionConfig(config.threshold_db, config.a_max_scope,
                                   dataset_a_max(dataset))
    out: dict[str, tuple[BModeImage, BModeImage]] = {}
    for lesion in dataset.lesions:
        images = tuple(
            reconstruct_bmode(frame, config, lesion_id=lesion.lesion_id)
            for frame, _ in lesion.scans
        )
        out[lesion.lesion_id] = images
    return out
