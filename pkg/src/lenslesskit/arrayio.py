"""Binary array files, PNG import/export, and CSV helpers.

The native array container is a minimal fixed-header format so files stay
portable across implementations:

===========  =====  ========================================================
field        size   meaning
===========  =====  ========================================================
magic        4      ``b"LLIA"``
version      u8     format version, currently 1
dtype        u8     0 = float32, 1 = float64 (parameter blobs)
ndim         u8     always 3
pad          u8     reserved, 0
dims         3xu32  little-endian height, width, channels
payload      --     row-major channel-last scalars, little-endian
===========  =====  ========================================================

Measurement/scene data is written as float32; float64 is reserved for
learnable-parameter blobs where round-trip exactness matters.
"""

import csv
import struct

import numpy as np
from PIL import Image

from .errors import ArrayIOError, BadDimsError, BadMagicError

MAGIC = b"LLIA"
VERSION = 1
_HEADER = struct.Struct("<4sBBBB3I")
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_DTYPE_CODES = {"float32": 0, "float64": 1}


def write_array(path, t, dtype="float32"):
    """Write a (H, W, C) array; lossless round-trip at the stored dtype."""
    t = np.asarray(t)
    if t.ndim != 3 or min(t.shape) < 1:
        raise BadDimsError(f"array must be (H, W, C) with dims >= 1, got {t.shape}")
    if dtype not in _DTYPE_CODES:
        raise ArrayIOError(f"unsupported dtype {dtype!r}")
    code = _DTYPE_CODES[dtype]
    header = _HEADER.pack(MAGIC, VERSION, code, 3, 0, *t.shape)
    payload = np.ascontiguousarray(t, dtype=_DTYPES[code]).tobytes()
    try:
        with open(path, "wb") as f:
            f.write(header)
            f.write(payload)
    except OSError as e:
        raise ArrayIOError(f"cannot write {path}: {e}") from e


def read_array(path):
    """Read an array file, returning float64 (exact upcast from float32)."""
    try:
        with open(path, "rb") as f:
            raw = f.read()
    except OSError as e:
        raise ArrayIOError(f"cannot read {path}: {e}") from e
    if len(raw) < _HEADER.size:
        raise BadMagicError(f"{path}: file shorter than header")
    magic, version, code, ndim, _, h, w, c = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise BadMagicError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise ArrayIOError(f"{path}: unsupported version {version}")
    if code not in _DTYPES:
        raise BadDimsError(f"{path}: unknown dtype code {code}")
    if ndim != 3 or min(h, w, c) < 1:
        raise BadDimsError(f"{path}: invalid dims ndim={ndim}, shape=({h}, {w}, {c})")
    dt = _DTYPES[code]
    expected = h * w * c * dt.itemsize
    payload = raw[_HEADER.size :]
    if len(payload) != expected:
        raise BadDimsError(
            f"{path}: payload length {len(payload)} != expected {expected}"
        )
    arr = np.frombuffer(payload, dtype=dt).reshape(h, w, c)
    return arr.astype(np.float64)


def write_png(path, t, bit_depth=8):
    """Export an image to PNG, linearly mapping [0, 1] to integer levels.

    8-bit supports 1 or 3 channels; 16-bit is single-channel (PNG ``I;16``).
    Values are clipped to [0, 1] first.
    """
    t = np.asarray(t, dtype=np.float64)
    if t.ndim == 2:
        t = t[:, :, None]
    if t.ndim != 3:
        raise BadDimsError(f"image must be (H, W[, C]), got shape {t.shape}")
    t = np.clip(t, 0.0, 1.0)
    if bit_depth == 8:
        data = np.round(t * 255.0).astype(np.uint8)
        if data.shape[2] == 1:
            img = Image.fromarray(data[:, :, 0], mode="L")
        elif data.shape[2] == 3:
            img = Image.fromarray(data, mode="RGB")
        else:
            raise BadDimsError(f"8-bit PNG supports 1 or 3 channels, got {data.shape[2]}")
    elif bit_depth == 16:
        if t.shape[2] != 1:
            raise BadDimsError("16-bit PNG export is single-channel only")
        data = np.round(t[:, :, 0] * 65535.0).astype(np.uint16)
        img = Image.fromarray(data)  # uint16 maps to mode I;16
    else:
        raise ArrayIOError(f"unsupported bit depth {bit_depth}")
    try:
        img.save(path, format="PNG")
    except OSError as e:
        raise ArrayIOError(f"cannot write {path}: {e}") from e


def read_png(path):
    """Import a PNG as a float64 (H, W, C) array linearly mapped to [0, 1]."""
    try:
        img = Image.open(path)
        img.load()
    except OSError as e:
        raise ArrayIOError(f"cannot read {path}: {e}") from e
    if img.mode in ("I;16", "I"):
        arr = np.asarray(img, dtype=np.float64) / 65535.0
        arr = arr[:, :, None]
    else:
        if img.mode not in ("L", "RGB"):
            img = img.convert("RGB")
        arr = np.asarray(img, dtype=np.float64) / 255.0
        if arr.ndim == 2:
            arr = arr[:, :, None]
    return arr


def write_csv(path, rows, fieldnames):
    """Write dict rows with repr-exact floats (bit-stable across runs)."""

    def fmt(v):
        if isinstance(v, float):
            return repr(v)
        if isinstance(v, np.floating):
            return repr(float(v))
        return v

    try:
        with open(path, "w", newline="") as f:
            writer = csv.DictWriter(f, fieldnames=fieldnames)
            writer.writeheader()
            for row in rows:
                writer.writerow({k: fmt(row.get(k, "")) for k in fieldnames})
    except OSError as e:
        raise ArrayIOError(f"cannot write {path}: {e}") from e
