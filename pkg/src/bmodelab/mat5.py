"""Minimal read-only MAT-v5 parser.

Supports the subset needed to ingest OASBUD-style archives: uncompressed
and zlib-compressed ``miMATRIX`` elements holding 2-D real double, single
or int16 arrays.  Everything else (cells, structs, char arrays, complex or
higher-dimensional data) is skipped and reported in the result's
``skipped`` list.  The parser never raises anything but
:class:`~bmodelab.errors.Mat5Error` on malformed bytes.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data_io import (LABELS, LesionRecord, PixelGeometry, RfFrame, RoiMask,
                      SPEED_OF_SOUND_DEFAULT)
from .errors import Mat5Error

MI_COMPRESSED = 15
MI_MATRIX = 14

# storage-type code -> numpy dtype character
_STORAGE_DTYPES = {
    1: "i1", 2: "u1", 3: "i2", 4: "u2", 5: "i4", 6: "u4",
    7: "f4", 9: "f8", 12: "i8", 13: "u8",
}

# array-class code -> result dtype (the supported subset)
_CLASS_DTYPES = {6: np.float64, 7: np.float32, 10: np.int16}

_CLASS_NAMES = {
    1: "cell", 2: "struct", 3: "object", 4: "char", 5: "sparse",
    6: "double", 7: "single", 8: "int8", 9: "uint8", 10: "int16",
    11: "uint16", 12: "int32", 13: "uint32", 14: "int64", 15: "uint64",
}


@dataclass
class Mat5File:
    """Parsed arrays plus a description of every skipped element."""

    arrays: dict[str, np.ndarray] = field(default_factory=dict)
    skipped: list[str] = field(default_factory=list)


def _read_tag(buf: bytes, pos: int, bo: str) -> tuple[int, int, int, int]:
    """Read an element tag; returns (type, nbytes, data_start, next_pos)."""
    if pos + 8 > len(buf):
        raise Mat5Error(f"truncated element tag at offset {pos}")
    word = int.from_bytes(buf[pos:pos + 4], bo)
    if word >> 16:
        # small data element: size and type packed into the first word
        nbytes = word >> 16
        if nbytes > 4:
            raise Mat5Error(f"small element at offset {pos} claims {nbytes} bytes")
        return word & 0xFFFF, nbytes, pos + 4, pos + 8
    nbytes = int.from_bytes(buf[pos + 4:pos + 8], bo)
    data_start = pos + 8
    next_pos = data_start + nbytes
    next_pos += (-next_pos) % 8
    return word, nbytes, data_start, next_pos


def _read_subelement(buf: bytes, pos: int, bo: str) -> tuple[int, bytes, int]:
    mtype, nbytes, start, nxt = _read_tag(buf, pos, bo)
    if start + nbytes > len(buf):
        raise Mat5Error(f"truncated element data at offset {pos}")
    return mtype, buf[start:start + nbytes], nxt


def _parse_matrix(body: bytes, bo: str, out: Mat5File) -> None:
    pos = 0
    mtype, flags_raw, pos = _read_subelement(body, pos, bo)
    if mtype != 6 or len(flags_raw) != 8:  # array flags are always miUINT32 x2
        raise Mat5Error("malformed array-flags subelement")
    word1 = int.from_bytes(flags_raw[0:4], bo)
    array_class = word1 & 0xFF
    flag_bits = (word1 >> 8) & 0xFF
    is_complex = bool(flag_bits & 0x08)

    mtype, dims_raw, pos = _read_subelement(body, pos, bo)
    if mtype != 5 or len(dims_raw) % 4:
        raise Mat5Error("malformed dimensions subelement")
    dims = [int.from_bytes(dims_raw[i:i + 4], bo, signed=True)
            for i in range(0, len(dims_raw), 4)]

    mtype, name_raw, pos = _read_subelement(body, pos, bo)
    if mtype != 1:
        raise Mat5Error("malformed array-name subelement")
    name = name_raw.rstrip(b"\x00").decode("ascii", errors="replace")

    if array_class not in _CLASS_DTYPES:
        out.skipped.append(f"{name or '<unnamed>'}: unsupported class "
                           f"{_CLASS_NAMES.get(array_class, array_class)}")
        return
    if is_complex:
        out.skipped.append(f"{name}: complex arrays not supported")
        return
    if len(dims) != 2 or any(d < 0 for d in dims):
        out.skipped.append(f"{name}: only 2-D arrays supported, got dims {dims}")
        return

    mtype, data_raw, pos = _read_subelement(body, pos, bo)
    dtype_char = _STORAGE_DTYPES.get(mtype)
    if dtype_char is None:
        out.skipped.append(f"{name}: unsupported storage type {mtype}")
        return
    prefix = "<" if bo == "little" else ">"
    stored = np.frombuffer(data_raw, dtype=np.dtype(prefix + dtype_char))
    count = dims[0] * dims[1]
    if stored.size != count:
        raise Mat5Error(f"array {name!r}: payload holds {stored.size} values, dims say {count}")
    arr = stored.reshape(dims, order="F").astype(_CLASS_DTYPES[array_class])
    out.arrays[name] = arr


def parse_mat5(data: bytes) -> Mat5File:
    """Parse a MAT-v5 byte string into named numeric arrays.

    Returns the supported arrays plus a ``skipped`` list describing every
    element that was recognised but not in the supported subset.
    """
    if len(data) < 128:
        raise Mat5Error(f"not a MAT-v5 file: header needs 128 bytes, got {len(data)}")
    endian = bytes(data[126:128])
    if endian == b"IM":
        bo = "little"
    elif endian == b"MI":
        bo = "big"
    else:
        raise Mat5Error(f"bad endian indicator {endian!r} (expected b'IM' or b'MI')")
    version = int.from_bytes(data[124:126], bo)
    if version != 0x0100:
        raise Mat5Error(f"unsupported MAT-file version 0x{version:04x}")

    out = Mat5File()
    try:
        pos = 128
        while pos < len(data):
            remaining = data[pos:]
            if len(remaining) < 8:
                if remaining.strip(b"\x00"):
                    raise Mat5Error(f"trailing garbage at offset {pos}")
                break
            mtype, nbytes, start, nxt = _read_tag(data, pos, bo)
            if start + nbytes > len(data):
                raise Mat5Error(f"truncated element at offset {pos}")
            payload = data[start:start + nbytes]
            if mtype == MI_COMPRESSED:
                try:
                    body = zlib.decompress(payload)
                except zlib.error as exc:
                    raise Mat5Error(f"bad zlib stream at offset {pos}: {exc}") from exc
                inner_type, inner_n, inner_start, _ = _read_tag(body, 0, bo)
                if inner_type != MI_MATRIX:
                    out.skipped.append(f"compressed element of type {inner_type}")
                elif inner_start + inner_n > len(body):
                    raise Mat5Error(f"truncated compressed element at offset {pos}")
                else:
                    _parse_matrix(body[inner_start:inner_start + inner_n], bo, out)
                pos = start + nbytes  # compressed payloads are not padded
            elif mtype == MI_MATRIX:
                _parse_matrix(payload, bo, out)
                pos = nxt
            else:
                out.skipped.append(f"top-level element of type {mtype}")
                pos = nxt
    except Mat5Error:
        raise
    except (ValueError, IndexError, OverflowError, UnicodeDecodeError) as exc:
        raise Mat5Error(f"malformed MAT-v5 content: {exc}") from exc
    return out


def load_mat5(path: str | Path) -> Mat5File:
    """Read and parse a MAT-v5 file from disk."""
    path = Path(path)
    if not path.is_file():
        raise Mat5Error(f"MAT file not found: {path}")
    return parse_mat5(path.read_bytes())


def lesion_from_mat(path: str | Path, *, lesion_id: str, patient_id: str,
                    label_map: dict[int, str],
                    sampling_rate_hz: float, lateral_mm_per_line: float,
                    speed_of_sound_m_s: float = SPEED_OF_SOUND_DEFAULT,
                    rf_vars: tuple[str, str] = ("rf1", "rf2"),
                    mask_vars: tuple[str, str] = ("roi1", "roi2"),
                    label_var: str = "class") -> LesionRecord:
    """Build a lesion record from a MAT archive holding two scans.

    Variable names are configurable because archive layouts differ; the
    geometry must be supplied by the caller (MAT archives carry none).
    """
    parsed = load_mat5(path)
    required = list(rf_vars) + list(mask_vars) + [label_var]
    for var in required:
        if var not in parsed.arrays:
            hint = "; ".join(s for s in parsed.skipped if s.startswith(f"{var}:"))
            raise Mat5Error(
                f"{path}: required variable {var!r} not available"
                + (f" ({hint})" if hint else "")
            )
    raw_label = parsed.arrays[label_var]
    key = int(np.asarray(raw_label).flat[0])
    if key not in label_map:
        raise Mat5Error(f"{path}: label value {key} not covered by label map {label_map}")
    label = label_map[key]
    if label not in LABELS:
        raise Mat5Error(f"{path}: mapped label {label!r} is not one of {LABELS}")

    geometry = PixelGeometry.from_acquisition(sampling_rate_hz, lateral_mm_per_line,
                                              speed_of_sound_m_s)
    scans = []
    for k, (rf_var, mask_var) in enumerate(zip(rf_vars, mask_vars)):
        rf = parsed.arrays[rf_var].astype(np.float64)
        mask = parsed.arrays[mask_var] != 0
        frame = RfFrame(samples=rf, geometry=geometry, scan_id=f"{lesion_id}_scan{k}")
        scans.append((frame, RoiMask(mask=mask)))
    return LesionRecord(lesion_id=lesion_id, patient_id=patient_id, label=label,
                        scans=tuple(scans))
