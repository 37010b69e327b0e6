"""Lesion cropping, bicubic resizing and network-input preparation.

A lesion variant is one (scan, margin, threshold) combination: the scan's
B-mode image is cropped around the ROI with a physical margin, resized to
the target network's square input, replicated to three channels and run
through that network's preprocessing mode.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .data_io import LesionRecord, RoiMask
from .errors import (DataFormatError, DegenerateInputError,
                     DimensionMismatchError, ValidationError)
from .reconstruct import BModeImage, analytic_envelope, log_compress, quantize

MODE_SCALE_SYMMETRIC = "scale_symmetric"
MODE_MEAN_SUBTRACT = "mean_subtract"

STANDARD_MARGINS_MM = (2.0, 5.0, 10.0)


@dataclass(frozen=True)
class NetworkPreprocessSpec:
    """Input geometry and scaling convention of a feature network."""

    name: str
    input_size: int
    mode: str
    channel_means: tuple[float, float, float] | None = None
    channel_order: str = "rgb"

    def __post_init__(self):
        if not isinstance(self.input_size, int) or self.input_size <= 0:
            raise ValidationError(f"input_size must be a positive integer, got {self.input_size!r}")
        if self.mode not in (MODE_SCALE_SYMMETRIC, MODE_MEAN_SUBTRACT):
            raise ValidationError(f"unknown preprocessing mode {self.mode!r}")
        if self.channel_order not in ("rgb", "bgr"):
            raise ValidationError(f"channel_order must be 'rgb' or 'bgr', got {self.channel_order!r}")
        if self.mode == MODE_MEAN_SUBTRACT:
            if self.channel_means is None or len(self.channel_means) != 3:
                raise ValidationError("mean_subtract mode needs exactly 3 channel means")
            if not all(np.isfinite(m) for m in self.channel_means):
                raise ValidationError(f"non-finite channel means: {self.channel_means!r}")


@dataclass(frozen=True)
class ImageVariant:
    """One preprocessed network input for a (scan, margin, threshold) combo."""

    lesion_id: str
    scan_index: int
    threshold_db: float
    margin_mm: float
    pixels: np.ndarray

    def __post_init__(self):
        p = self.pixels
        if p.ndim != 3 or p.shape[0] != p.shape[1] or p.shape[2] != 3:
            raise ValidationError(f"variant pixels must be square x 3 channels, got {p.shape}")
        if not np.all(np.isfinite(p)):
            raise ValidationError(f"variant {self.key!r} has non-finite pixels")
        if self.scan_index not in (0, 1):
            raise ValidationError(f"scan_index must be 0 or 1, got {self.scan_index}")

    @property
    def key(self) -> str:
        """Stable identifier, used for caching and ordering."""
        return (f"{self.lesion_id}|s{self.scan_index}"
                f"|m{self.margin_mm:g}|t{self.threshold_db:g}")


def load_preprocess_specs(path: str | Path) -> dict[str, NetworkPreprocessSpec]:
    """Read a JSON list of preprocessing specs, keyed by name."""
    path = Path(path)
    try:
        entries = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise DataFormatError(f"cannot read preprocess specs {path}: {exc}") from exc
    if not isinstance(entries, list):
        raise DataFormatError(f"{path}: expected a JSON list of spec objects")
    out: dict[str, NetworkPreprocessSpec] = {}
    for entry in entries:
        try:
            spec = NetworkPreprocessSpec(
                name=entry["name"],
                input_size=int(entry["input_size"]),
                mode=entry["mode"],
                channel_means=(tuple(float(m) for m in entry["channel_means"])
                               if entry.get("channel_means") is not None else None),
                channel_order=entry.get("channel_order", "rgb"),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise DataFormatError(f"{path}: malformed spec entry {entry!r}: {exc}") from exc
        if spec.name in out:
            raise DataFormatError(f"{path}: duplicate spec name {spec.name!r}")
        out[spec.name] = spec
    return out


def builtin_preprocess_specs() -> dict[str, NetworkPreprocessSpec]:
    """Specs shipped with the package (inception_v3, vgg19, baseline)."""
    ref = resources.files("bmodelab").joinpath("configs/preprocess.json")
    with resources.as_file(ref) as path:
        return load_preprocess_specs(path)


def crop_with_margin(image: BModeImage, mask: RoiMask, margin_mm: float) -> np.ndarray:
    """Cut the ROI bounding box plus a physical margin out of a B-mode image.

    The margin converts to pixels with ceil (the requested tissue band is
    never shortened) and the box is clamped at the image border, so crops
    near an edge come back smaller than nominal rather than padded.
    """
    if not (np.isfinite(margin_mm) and margin_mm >= 0):
        raise ValidationError(f"margin_mm must be >= 0, got {margin_mm!r}")
    m = mask.mask
    if m.shape != image.pixels.shape:
        raise DimensionMismatchError(
            f"mask shape {m.shape} does not match image shape {image.pixels.shape}")
    rows = np.flatnonzero(m.any(axis=1))
    cols = np.flatnonzero(m.any(axis=0))
    expand_r = math.ceil(margin_mm / image.geometry.axial_mm_per_sample)
    expand_c = math.ceil(margin_mm / image.geometry.lateral_mm_per_line)
    r0 = max(0, int(rows[0]) - expand_r)
    r1 = min(m.shape[0], int(rows[-1]) + 1 + expand_r)
    c0 = max(0, int(cols[0]) - expand_c)
    c1 = min(m.shape[1], int(cols[-1]) + 1 + expand_c)
    return image.pixels[r0:r1, c0:c1].copy()


def _cubic_weights(src: int, dst: int) -> tuple[np.ndarray, np.ndarray]:
    """Catmull-Rom sample indices and weights for one resize axis.

    Source coordinates are half-pixel centered; indices clamp at the
    borders, which replicates the edge rows/columns.
    """
    out = np.arange(dst, dtype=np.float64)
    s = (out + 0.5) * (src / dst) - 0.5
    base = np.floor(s).astype(np.int64)
    t = s - base
    offsets = np.array([-1, 0, 1, 2])
    idx = base[:, None] + offsets[None, :]
    d = np.abs(t[:, None] - offsets[None, :])
    # piecewise cubic, a = -0.5
    w = np.where(d <= 1.0,
                 (1.5 * d - 2.5) * d * d + 1.0,
                 np.where(d < 2.0, ((-0.5 * d + 2.5) * d - 4.0) * d + 2.0, 0.0))
    idx = np.clip(idx, 0, src - 1)
    return idx, w


def bicubic_resize(patch: np.ndarray, target: int) -> np.ndarray:
    """Separable bicubic resize of a 2-D patch to target x target.

    Output is float64, clamped to [0, 255] (cubic kernels overshoot near
    sharp edges).
    """
    p = np.asarray(patch, dtype=np.float64)
    if p.ndim != 2:
        raise ValidationError(f"patch must be 2-D, got ndim={p.ndim}")
    if p.shape[0] < 2 or p.shape[1] < 2:
        raise DegenerateInputError(f"patch too small to resize: {p.shape}")
    if not isinstance(target, int) or target <= 0:
        raise ValidationError(f"target size must be a positive integer, got {target!r}")

    idx_r, w_r = _cubic_weights(p.shape[0], target)
    rows = np.einsum("ok,okc->oc", w_r, p[idx_r, :])
    idx_c, w_c = _cubic_weights(p.shape[1], target)
    resized = np.einsum("ok,rok->ro", w_c, rows[:, idx_c])
    return np.clip(resized, 0.0, 255.0)


def to_network_input(resized: np.ndarray, spec: NetworkPreprocessSpec) -> np.ndarray:
    """Replicate a grayscale image to 3 channels and apply network scaling."""
    r = np.asarray(resized, dtype=np.float64)
    if r.shape != (spec.input_size, spec.input_size):
        raise DimensionMismatchError(
            f"resized image is {r.shape}, spec {spec.name!r} wants "
            f"({spec.input_size}, {spec.input_size})")
    stacked = np.repeat(r[:, :, np.newaxis], 3, axis=2)
    if spec.mode == MODE_SCALE_SYMMETRIC:
        return stacked / 127.5 - 1.0
    means = np.asarray(spec.channel_means, dtype=np.float64)
    if spec.channel_order == "bgr":
        means = means[::-1]
    return stacked - means[np.newaxis, np.newaxis, :]


def resize_for_network(patch: np.ndarray, spec: NetworkPreprocessSpec, *,
                       preserve_aspect: bool = False) -> np.ndarray:
    """Resize a crop to the network's square input.

    Default stretches to square. With ``preserve_aspect`` the longer side
    maps to the full input and the shorter side is centered on a black
    letterbox.
    """
    size = spec.input_size
    if not preserve_aspect:
        return bicubic_resize(patch, size)
    p = np.asarray(patch, dtype=np.float64)
    if p.ndim != 2 or min(p.shape) < 2:
        raise DegenerateInputError(f"patch too small to resize: {p.shape}")
    # resize the full patch to size x size, then sample the scaled grid
    # of the shorter side only; simpler: scale both axes by the same factor
    scale = size / max(p.shape)
    out_r = max(2, int(round(p.shape[0] * scale)))
    out_c = max(2, int(round(p.shape[1] * scale)))
    idx_r, w_r = _cubic_weights(p.shape[0], out_r)
    rows = np.einsum("ok,okc->oc", w_r, p[idx_r, :])
    idx_c, w_c = _cubic_weights(p.shape[1], out_c)
    core = np.clip(np.einsum("ok,rok->ro", w_c, rows[:, idx_c]), 0.0, 255.0)
    canvas = np.zeros((size, size))
    r0 = (size - out_r) // 2
    c0 = (size - out_c) // 2
    canvas[r0:r0 + out_r, c0:c0 + out_c] = core
    return canvas


def enumerate_variants(record: LesionRecord, thresholds, margins,
                       spec: NetworkPreprocessSpec, *,
                       a_max_override: float | None = None,
                       preserve_aspect: bool = False) -> list[ImageVariant]:
    """All (scan, margin, threshold) network inputs for one lesion.

    Deterministic order: scan index, then margin ascending, then
    threshold ascending.  The envelope and dB image are computed once
    per scan and requantized per threshold.
    """
    thresholds = sorted({float(t) for t in thresholds})
    margins = sorted({float(m) for m in margins})
    if not thresholds or not margins:
        raise ValidationError("need at least one threshold and one margin")

    bmodes: dict[tuple[int, float], BModeImage] = {}
    for s, (frame, _) in enumerate(record.scans):
        envelope = analytic_envelope(frame.samples)
        a_max = float(envelope.max()) if a_max_override is None else float(a_max_override)
        if a_max <= 0.0:
            raise DegenerateInputError(
                f"lesion {record.lesion_id!r} scan {s}: zero envelope, cannot normalize")
        db = log_compress(envelope, a_max)
        for t in thresholds:
            bmodes[(s, t)] = BModeImage(pixels=quantize(db, t), geometry=frame.geometry,
                                        threshold_db=t, scan_id=frame.scan_id,
                                        lesion_id=record.lesion_id)

    variants: list[ImageVariant] = []
    for s, (_, mask) in enumerate(record.scans):
        for m in margins:
            crops = {t: crop_with_margin(bmodes[(s, t)], mask, m) for t in thresholds}
            for t in thresholds:
                resized = resize_for_network(crops[t], spec,
                                             preserve_aspect=preserve_aspect)
                pixels = to_network_input(resized, spec)
                variants.append(ImageVariant(lesion_id=record.lesion_id, scan_index=s,
                                             threshold_db=t, margin_mm=m, pixels=pixels))
    return variants
