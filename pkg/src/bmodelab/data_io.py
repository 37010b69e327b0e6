"""Dataset ingestion, validation and bit-exact image output.

The native on-disk format is a UTF-8 JSON manifest plus one raw
little-endian float32 blob per RF frame and one uint8 blob (0/1) per ROI
mask.  Shapes live in the manifest; the blobs carry no header.  Masks may
alternatively be given as half-open bounding boxes ``[r0, c0, r1, c1]``
which are expanded to rectangular masks at load time.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from .errors import DataFormatError, ValidationError

SPEED_OF_SOUND_DEFAULT = 1540.0

LABEL_BENIGN = "benign"
LABEL_MALIGNANT = "malignant"
LABELS = (LABEL_BENIGN, LABEL_MALIGNANT)

MIN_FRAME_ROWS = 64
MIN_FRAME_COLS = 64

_CONNECT4 = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool)


@dataclass(frozen=True)
class PixelGeometry:
    """Physical spacing of an RF frame.

    The axial spacing is tied to the acquisition: one sample covers
    ``c / (2 * fs)`` metres of depth (two-way travel).
    """

    axial_mm_per_sample: float
    lateral_mm_per_line: float
    sampling_rate_hz: float
    speed_of_sound_m_s: float = SPEED_OF_SOUND_DEFAULT

    def __post_init__(self):
        for name in ("axial_mm_per_sample", "lateral_mm_per_line",
                     "sampling_rate_hz", "speed_of_sound_m_s"):
            value = getattr(self, name)
            if not (np.isfinite(value) and value > 0):
                raise ValidationError(f"PixelGeometry.{name} must be strictly positive, got {value!r}")
        expected = self.speed_of_sound_m_s / (2.0 * self.sampling_rate_hz) * 1000.0
        if abs(self.axial_mm_per_sample - expected) > 1e-9 * expected:
            raise ValidationError(
                "axial_mm_per_sample inconsistent with sampling rate and speed of sound: "
                f"got {self.axial_mm_per_sample!r}, expected {expected!r}"
            )

    @classmethod
    def from_acquisition(cls, sampling_rate_hz: float, lateral_mm_per_line: float,
                         speed_of_sound_m_s: float = SPEED_OF_SOUND_DEFAULT) -> "PixelGeometry":
        """Build a geometry with the axial spacing derived from the acquisition."""
        axial = speed_of_sound_m_s / (2.0 * sampling_rate_hz) * 1000.0
        return cls(axial, lateral_mm_per_line, sampling_rate_hz, speed_of_sound_m_s)


@dataclass(frozen=True)
class RfFrame:
    """Raw RF sample matrix; rows are axial samples, columns are scan lines."""

    samples: np.ndarray
    geometry: PixelGeometry
    scan_id: str

    def __post_init__(self):
        s = self.samples
        if s.ndim != 2:
            raise ValidationError(f"RfFrame samples must be 2-D, got ndim={s.ndim}")
        if s.shape[0] < MIN_FRAME_ROWS or s.shape[1] < MIN_FRAME_COLS:
            raise ValidationError(
                f"RfFrame must be at least {MIN_FRAME_ROWS}x{MIN_FRAME_COLS}, got {s.shape}"
            )
        if not np.all(np.isfinite(s)):
            raise ValidationError(f"RfFrame {self.scan_id!r} contains non-finite samples")

    @property
    def shape(self) -> tuple[int, int]:
        return self.samples.shape


@dataclass(frozen=True)
class RoiMask:
    """Boolean lesion mask, same shape as the owning frame."""

    mask: np.ndarray

    def __post_init__(self):
        m = self.mask
        if m.ndim != 2 or m.dtype != bool:
            raise ValidationError("RoiMask must be a 2-D boolean array")
        if not m.any():
            raise ValidationError("RoiMask has no true pixels")
        _, n_components = ndimage.label(m, structure=_CONNECT4)
        if n_components != 1:
            raise ValidationError(f"RoiMask must be a single 4-connected region, found {n_components}")


@dataclass(frozen=True)
class LesionRecord:
    """One lesion: identity, class label and its two orthogonal scans."""

    lesion_id: str
    patient_id: str
    label: str
    scans: tuple[tuple[RfFrame, RoiMask], ...]

    def __post_init__(self):
        if self.label not in LABELS:
            raise ValidationError(f"lesion {self.lesion_id!r}: unknown label {self.label!r}")
        if len(self.scans) != 2:
            raise ValidationError(f"lesion {self.lesion_id!r}: expected exactly 2 scans, got {len(self.scans)}")
        for k, (frame, roi) in enumerate(self.scans):
            if roi.mask.shape != frame.samples.shape:
                raise ValidationError(
                    f"lesion {self.lesion_id!r} scan {k}: mask shape {roi.mask.shape} "
                    f"does not match frame shape {frame.samples.shape}"
                )


@dataclass(frozen=True)
class Dataset:
    """A named collection of lesion records."""

    lesions: tuple[LesionRecord, ...]
    name: str = "dataset"

    def __post_init__(self):
        ids = [les.lesion_id for les in self.lesions]
        if len(set(ids)) != len(ids):
            dupes = sorted({i for i in ids if ids.count(i) > 1})
            raise ValidationError(f"duplicate lesion_id(s): {dupes}")
        labels = {les.label for les in self.lesions}
        if set(LABELS) - labels:
            raise ValidationError(f"dataset {self.name!r} must contain both classes, found {sorted(labels)}")

    def by_id(self, lesion_id: str) -> LesionRecord:
        for les in self.lesions:
            if les.lesion_id == lesion_id:
                return les
        raise KeyError(lesion_id)

    @property
    def patients(self) -> dict[str, list[LesionRecord]]:
        out: dict[str, list[LesionRecord]] = {}
        for les in self.lesions:
            out.setdefault(les.patient_id, []).append(les)
        return out


def _read_blob_f32(path: Path, shape: tuple[int, int], lesion_id: str) -> np.ndarray:
    if not path.is_file():
        raise DataFormatError(f"lesion {lesion_id!r}: missing RF blob {path}")
    raw = np.fromfile(path, dtype="<f4")
    expected = shape[0] * shape[1]
    if raw.size != expected:
        raise DataFormatError(
            f"lesion {lesion_id!r}: RF blob {path} holds {raw.size} samples, expected {expected}"
        )
    return raw.reshape(shape).astype(np.float64)


def _read_blob_u8(path: Path, shape: tuple[int, int], lesion_id: str) -> np.ndarray:
    if not path.is_file():
        raise DataFormatError(f"lesion {lesion_id!r}: missing mask blob {path}")
    raw = np.fromfile(path, dtype=np.uint8)
    expected = shape[0] * shape[1]
    if raw.size != expected:
        raise DataFormatError(
            f"lesion {lesion_id!r}: mask blob {path} holds {raw.size} bytes, expected {expected} "
            f"(mask shape must equal frame shape {shape})"
        )
    return raw.reshape(shape) != 0


def _bbox_mask(bbox: list, shape: tuple[int, int], lesion_id: str) -> np.ndarray:
    if len(bbox) != 4:
        raise DataFormatError(f"lesion {lesion_id!r}: mask_bbox must be [r0, c0, r1, c1], got {bbox}")
    r0, c0, r1, c1 = (int(v) for v in bbox)
    if not (0 <= r0 < r1 <= shape[0] and 0 <= c0 < c1 <= shape[1]):
        raise DataFormatError(f"lesion {lesion_id!r}: mask_bbox {bbox} outside frame shape {shape}")
    mask = np.zeros(shape, dtype=bool)
    mask[r0:r1, c0:c1] = True
    return mask


def load_dataset(manifest_path: str | Path) -> Dataset:
    """Load a dataset from a native JSON manifest.

    Every referenced blob is read and shape-checked; all type invariants
    are enforced before the dataset is returned.
    """
    manifest_path = Path(manifest_path)
    if not manifest_path.is_file():
        raise DataFormatError(f"manifest not found: {manifest_path}")
    try:
        doc = json.loads(manifest_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DataFormatError(f"manifest {manifest_path} is not valid JSON: {exc}") from exc

    base = manifest_path.parent
    lesions = []
    for entry in doc.get("lesions", []):
        lesion_id = str(entry.get("lesion_id", "<missing>"))
        patient_id = str(entry.get("patient_id", "<missing>"))
        label = entry.get("label")
        if label not in LABELS:
            raise DataFormatError(f"lesion {lesion_id!r} in {manifest_path}: unknown label {label!r}")
        scans = []
        for k, scan in enumerate(entry.get("scans", [])):
            shape = tuple(int(v) for v in scan["shape"])
            geo = scan["geometry"]
            geometry = PixelGeometry.from_acquisition(
                sampling_rate_hz=float(geo["sampling_rate_hz"]),
                lateral_mm_per_line=float(geo["lateral_mm_per_line"]),
                speed_of_sound_m_s=float(geo.get("speed_of_sound_m_s", SPEED_OF_SOUND_DEFAULT)),
            )
            samples = _read_blob_f32(base / scan["rf"], shape, lesion_id)
            if "mask" in scan:
                mask = _read_blob_u8(base / scan["mask"], shape, lesion_id)
            elif "mask_bbox" in scan:
                mask = _bbox_mask(scan["mask_bbox"], shape, lesion_id)
            else:
                raise DataFormatError(f"lesion {lesion_id!r} scan {k}: neither 'mask' nor 'mask_bbox' given")
            frame = RfFrame(samples=samples, geometry=geometry, scan_id=f"{lesion_id}_scan{k}")
            scans.append((frame, RoiMask(mask=mask)))
        lesions.append(LesionRecord(lesion_id=lesion_id, patient_id=patient_id,
                                    label=label, scans=tuple(scans)))
    return Dataset(lesions=tuple(lesions), name=str(doc.get("name", manifest_path.stem)))


def save_dataset(dataset: Dataset, out_dir: str | Path) -> Path:
    """Write a dataset in the native manifest format; returns the manifest path.

    Output is deterministic: identical datasets produce byte-identical
    manifest and blob files.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for les in dataset.lesions:
        scans = []
        for k, (frame, roi) in enumerate(les.scans):
            rf_name = f"{les.lesion_id}_scan{k}.rf.f32"
            mask_name = f"{les.lesion_id}_scan{k}.mask.u8"
            frame.samples.astype("<f4").tofile(out_dir / rf_name)
            roi.mask.astype(np.uint8).tofile(out_dir / mask_name)
            scans.append({
                "rf": rf_name,
                "shape": [int(frame.shape[0]), int(frame.shape[1])],
                "mask": mask_name,
                "geometry": {
                    "sampling_rate_hz": frame.geometry.sampling_rate_hz,
                    "speed_of_sound_m_s": frame.geometry.speed_of_sound_m_s,
                    "lateral_mm_per_line": frame.geometry.lateral_mm_per_line,
                },
            })
        entries.append({
            "lesion_id": les.lesion_id,
            "patient_id": les.patient_id,
            "label": les.label,
            "scans": scans,
        })
    manifest = {"name": dataset.name, "lesions": entries}
    manifest_path = out_dir / "manifest.json"
    manifest_path.write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    return manifest_path


def write_pgm(image, path: str | Path) -> None:
    """Write an 8-bit image as binary PGM (P5, maxval 255), bit-exact.

    ``image`` is either a :class:`~bmodelab.reconstruct.BModeImage` or a
    bare 2-D array with values in [0, 255].
    """
    pixels = np.asarray(getattr(image, "pixels", image))
    if pixels.ndim != 2:
        raise ValidationError("PGM output requires a 2-D image")
    if pixels.dtype != np.uint8:
        if pixels.min() < 0 or pixels.max() > 255:
            raise ValidationError("PGM output requires values in [0, 255]")
        pixels = pixels.astype(np.uint8)
    rows, cols = pixels.shape
    header = f"P5\n{cols} {rows}\n255\n".encode("ascii")
    path = Path(path)
    try:
        with open(path, "wb") as fh:
            fh.write(header)
            fh.write(pixels.tobytes(order="C"))
    except OSError as exc:
        raise ValidationError(f"cannot write PGM to {path}: {exc}") from exc


def read_pgm(path: str | Path) -> np.ndarray:
    """Read a binary PGM (P5, maxval <= 255) into a uint8 array."""
    data = Path(path).read_bytes()
    if not data.startswith(b"P5"):
        raise DataFormatError(f"{path}: not a binary PGM (P5) file")
    # header = magic, width, height, maxval, single whitespace, then payload
    fields: list[bytes] = []
    pos = 2
    while len(fields) < 3:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise DataFormatError(f"{path}: truncated PGM header")
        fields.append(data[start:pos])
    pos += 1  # the single whitespace byte after maxval
    width, height, maxval = (int(f) for f in fields)
    if maxval > 255:
        raise DataFormatError(f"{path}: 16-bit PGM not supported")
    payload = data[pos:pos + width * height]
    if len(payload) != width * height:
        raise DataFormatError(f"{path}: PGM payload truncated")
    return np.frombuffer(payload, dtype=np.uint8).reshape(height, width).copy()
