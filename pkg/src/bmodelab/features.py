"""Feature extraction from preprocessed lesion images.

Two extractor kinds share one interface: an adapter that runs exported
network graphs (TensorFlow SavedModel or ONNX, described by a JSON
manifest) and a fast built-in baseline that needs no model file.  A
binary feature cache keeps grid experiments from recomputing inference.
"""

from __future__ import annotations

import json
import struct
import threading
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (DataFormatError, DegenerateInputError,
                     DimensionMismatchError, ValidationError)

KIND_PORTABLE = "portable_model"
KIND_BASELINE = "baseline"

BASELINE_ID = "baseline"
BASELINE_DIM = 64
_HIST_BINS = 32
_THUMB = 8
_PROJECTION_SEED = 1234
# 32 histogram + 5 moments/entropy/gradient + 4 range fractions + projection = 64
_PROJECTION_DIM = BASELINE_DIM - (_HIST_BINS + 5 + 4)
_PROJECTION = np.random.default_rng(_PROJECTION_SEED).standard_normal(
    (_PROJECTION_DIM, _THUMB * _THUMB))

_CACHE_MAGIC = b"BMLFC001"


@dataclass(frozen=True)
class FeatureVector:
    """A fixed-length real vector tagged with its extractor."""

    values: np.ndarray
    extractor_id: str
    dim: int

    def __post_init__(self):
        v = self.values
        if v.ndim != 1 or v.shape[0] != self.dim:
            raise ValidationError(
                f"feature vector claims dim {self.dim} but holds shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValidationError(f"extractor {self.extractor_id!r} produced non-finite values")


@dataclass(frozen=True)
class ExtractorSpec:
    """Which extractor to run and what output dimension to demand."""

    extractor_id: str
    kind: str
    expected_dim: int
    model_path: str | None = None

    def __post_init__(self):
        if self.kind not in (KIND_PORTABLE, KIND_BASELINE):
            raise ValidationError(f"unknown extractor kind {self.kind!r}")
        if self.kind == KIND_PORTABLE and not self.model_path:
            raise ValidationError("portable_model extractor needs model_path")
        if self.expected_dim <= 0:
            raise ValidationError(f"expected_dim must be positive, got {self.expected_dim}")


def baseline_spec() -> ExtractorSpec:
    return ExtractorSpec(extractor_id=BASELINE_ID, kind=KIND_BASELINE,
                         expected_dim=BASELINE_DIM)


def _block_mean_thumbnail(x: np.ndarray, size: int) -> np.ndarray:
    """size x size means over a regular block partition of the image."""
    h, w = x.shape
    r_edges = [(i * h) // size for i in range(size + 1)]
    c_edges = [(j * w) // size for j in range(size + 1)]
    out = np.empty((size, size))
    for i in range(size):
        for j in range(size):
            out[i, j] = x[r_edges[i]:r_edges[i + 1], c_edges[j]:c_edges[j + 1]].mean()
    return out


def baseline_extract(image: np.ndarray) -> FeatureVector:
    """Deterministic 64-dim descriptor of channel 0 of a square image.

    Layout: 32-bin normalized intensity histogram over [min, max], mean,
    standard deviation, skewness proxy, histogram entropy, mean gradient
    magnitude, four below-range-mark fractions, then a seeded random
    projection of the 8x8 block-mean thumbnail.
    """
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValidationError(f"expected an h x w x 3 image, got shape {img.shape}")
    if img.shape[0] != img.shape[1]:
        raise ValidationError(f"expected a square image, got {img.shape[:2]}")
    if not np.all(np.isfinite(img)):
        raise ValidationError("image contains NaN or Inf")
    x = img[:, :, 0]
    if min(x.shape) < _THUMB:
        raise DegenerateInputError(
            f"image side {min(x.shape)} too small for a {_THUMB}x{_THUMB} thumbnail")

    lo, hi = float(x.min()), float(x.max())
    if hi > lo:
        counts, _ = np.histogram(x, bins=_HIST_BINS, range=(lo, hi))
        hist = counts / x.size
    else:
        hist = np.zeros(_HIST_BINS)
        hist[0] = 1.0

    mean = float(x.mean())
    std = float(x.std())
    if std > 0.0:
        skew = float(np.mean(((x - mean) / std) ** 3))
    else:
        skew = 0.0
    positive = hist[hist > 0]
    entropy = float(-np.sum(positive * np.log(positive)))
    gy, gx = np.gradient(x)
    grad_mean = float(np.mean(np.hypot(gy, gx)))
    fractions = [float(np.mean(x < lo + q * (hi - lo)))
                 for q in (0.10, 0.25, 0.75, 0.90)]

    thumb = _block_mean_thumbnail(x, _THUMB).ravel()
    projected = _PROJECTION @ thumb

    values = np.concatenate([hist, [mean, std, skew, entropy, grad_mean],
                             fractions, projected])
    return FeatureVector(values=values, extractor_id=BASELINE_ID, dim=BASELINE_DIM)


class _PortableModelSession:
    """One loaded inference graph; calls are serialized with a lock."""

    def __init__(self, manifest_path: Path):
        try:
            manifest = json.loads(manifest_path.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise DataFormatError(f"cannot read model manifest {manifest_path}: {exc}") from exc
        for field in ("extractor_id", "format", "model", "expected_dim"):
            if field not in manifest:
                raise DataFormatError(f"{manifest_path}: manifest missing {field!r}")
        self.manifest = manifest
        self.expected_dim = int(manifest["expected_dim"])
        self.layout = manifest.get("layout", "nhwc")
        if self.layout not in ("nhwc", "nchw"):
            raise DataFormatError(f"{manifest_path}: unknown layout {self.layout!r}")
        self.lock = threading.Lock()
        model_path = (manifest_path.parent / manifest["model"]).resolve()
        if not model_path.exists():
            raise DataFormatError(f"{manifest_path}: model file {model_path} does not exist")
        fmt = manifest["format"]
        if fmt == "tf_saved_model":
            self._infer = self._load_tf(model_path)
        elif fmt == "onnx":
            self._infer = self._load_onnx(model_path)
        else:
            raise DataFormatError(f"{manifest_path}: unsupported model format {fmt!r}")

    @staticmethod
    def _load_tf(model_path: Path):
        try:
            import tensorflow as tf
        except ImportError as exc:
            raise DataFormatError("tensorflow is required for tf_saved_model extractors") from exc
        loaded = tf.saved_model.load(str(model_path))
        try:
            signature = loaded.signatures["serving_default"]
        except KeyError as exc:
            raise DataFormatError(f"{model_path}: SavedModel has no serving_default signature") from exc

        def run(batch: np.ndarray) -> np.ndarray:
            outputs = signature(tf.constant(batch))
            if len(outputs) != 1:
                raise DataFormatError(f"{model_path}: expected a single output tensor, "
                                      f"got {sorted(outputs)}")
            (value,) = outputs.values()
            return np.asarray(value)

        return run

    @staticmethod
    def _load_onnx(model_path: Path):
        try:
            import onnxruntime as ort
        except ImportError as exc:
            raise DataFormatError("onnxruntime is required for onnx extractors; "
                                  "install the 'onnx' extra") from exc
        session = ort.InferenceSession(str(model_path), providers=["CPUExecutionProvider"])
        input_name = session.get_inputs()[0].name

        def run(batch: np.ndarray) -> np.ndarray:
            (value,) = session.run(None, {input_name: batch})
            return np.asarray(value)

        return run

    def infer(self, image: np.ndarray) -> np.ndarray:
        batch = np.asarray(image, dtype=np.float32)[np.newaxis, ...]
        if self.layout == "nchw":
            batch = np.transpose(batch, (0, 3, 1, 2))
        with self.lock:
            return self._infer(np.ascontiguousarray(batch))


_SESSIONS: dict[str, _PortableModelSession] = {}
_SESSIONS_LOCK = threading.Lock()


def _session_for(spec: ExtractorSpec) -> _PortableModelSession:
    path = Path(spec.model_path)
    if path.is_dir():
        path = path / "manifest.json"
    key = str(path.resolve())
    with _SESSIONS_LOCK:
        if key not in _SESSIONS:
            _SESSIONS[key] = _PortableModelSession(path)
        return _SESSIONS[key]


def extract_features(image: np.ndarray, spec: ExtractorSpec) -> FeatureVector:
    """Run one extractor on one preprocessed image."""
    if spec.kind == KIND_BASELINE:
        vec = baseline_extract(image)
        if vec.dim != spec.expected_dim:
            raise DimensionMismatchError(
                f"baseline produces {vec.dim} features, spec expects {spec.expected_dim}")
        return vec
    session = _session_for(spec)
    raw = session.infer(image).ravel().astype(np.float64)
    if raw.size != spec.expected_dim:
        raise DimensionMismatchError(
            f"extractor {spec.extractor_id!r} returned {raw.size} values, "
            f"expected {spec.expected_dim}")
    if not np.all(np.isfinite(raw)):
        raise DataFormatError(f"extractor {spec.extractor_id!r} produced non-finite output")
    return FeatureVector(values=raw, extractor_id=spec.extractor_id,
                         dim=spec.expected_dim)


class FeatureCache:
    """In-memory feature store with a compact binary file format.

    Layout: magic, u32 entry count, a header table of (u16 key length,
    UTF-8 key, u32 dim) records, then the f32 little-endian payloads in
    header order.  Keys are sorted on save so files are reproducible.
    """

    def __init__(self):
        self._data: dict[str, np.ndarray] = {}

    def __len__(self) -> int:
        return len(self._data)

    def __contains__(self, key: str) -> bool:
        return key in self._data

    def get(self, key: str) -> np.ndarray | None:
        hit = self._data.get(key)
        return None if hit is None else hit.copy()

    def put(self, key: str, values: np.ndarray) -> None:
        arr = np.asarray(values, dtype=np.float32).ravel()
        if not np.all(np.isfinite(arr)):
            raise ValidationError(f"cache entry {key!r} has non-finite values")
        self._data[key] = arr

    def save(self, path: str | Path) -> None:
        path = Path(path)
        keys = sorted(self._data)
        parts = [_CACHE_MAGIC, struct.pack("<I", len(keys))]
        for key in keys:
            raw = key.encode("utf-8")
            if len(raw) > 0xFFFF:
                raise ValidationError(f"cache key too long: {key[:60]!r}...")
            parts.append(struct.pack("<H", len(raw)))
            parts.append(raw)
            parts.append(struct.pack("<I", self._data[key].size))
        for key in keys:
            parts.append(self._data[key].astype("<f4").tobytes())
        path.write_bytes(b"".join(parts))

    @classmethod
    def load(cls, path: str | Path) -> "FeatureCache":
        path = Path(path)
        try:
            blob = path.read_bytes()
        except OSError as exc:
            raise DataFormatError(f"cannot read feature cache {path}: {exc}") from exc
        if blob[:8] != _CACHE_MAGIC:
            raise DataFormatError(f"{path}: bad cache magic {blob[:8]!r}")
        try:
            (count,) = struct.unpack_from("<I", blob, 8)
            pos = 12
            headers: list[tuple[str, int]] = []
            for _ in range(count):
                (klen,) = struct.unpack_from("<H", blob, pos)
                pos += 2
                key = blob[pos:pos + klen].decode("utf-8")
                pos += klen
                (dim,) = struct.unpack_from("<I", blob, pos)
                pos += 4
                headers.append((key, dim))
            cache = cls()
            for key, dim in headers:
                nbytes = dim * 4
                if pos + nbytes > len(blob):
                    raise DataFormatError(f"{path}: truncated payload for {key!r}")
                cache._data[key] = np.frombuffer(blob, dtype="<f4", count=dim,
                                                 offset=pos).copy()
                pos += nbytes
            if pos != len(blob):
                raise DataFormatError(f"{path}: {len(blob) - pos} trailing bytes")
        except (struct.error, UnicodeDecodeError) as exc:
            raise DataFormatError(f"{path}: malformed cache file: {exc}") from exc
        return cache


def cache_key(variant_key: str, extractor_id: str) -> str:
    return f"{variant_key}|{extractor_id}"


def extract_for_variant(variant, spec: ExtractorSpec,
                        cache: FeatureCache | None = None) -> FeatureVector:
    """Cache-aware extraction for an ImageVariant.

    Values are rounded through f32 (the cache precision) whether or not
    a cache is supplied, so cold and warm runs are bit-identical.
    """
    key = cache_key(variant.key, spec.extractor_id)
    if cache is not None:
        hit = cache.get(key)
        if hit is not None:
            if hit.size != spec.expected_dim:
                raise DimensionMismatchError(
                    f"cache entry {key!r} holds {hit.size} values, "
                    f"spec expects {spec.expected_dim}")
            return FeatureVector(values=hit.astype(np.float64),
                                 extractor_id=spec.extractor_id,
                                 dim=spec.expected_dim)
    vec = extract_features(variant.pixels, spec)
    if cache is not None:
        cache.put(key, vec.values)
    rounded = vec.values.astype(np.float32).astype(np.float64)
    return FeatureVector(values=rounded, extractor_id=vec.extractor_id, dim=vec.dim)
