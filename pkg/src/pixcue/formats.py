"""Binary and text file formats.

``.pxi``   image: ``PIXI``, u32 version, u32 rows, u32 cols, u8 dtype
           (0 real float32, 1 interleaved complex float32), payload.
``.pxp``   probability volume: ``PIXP``, u32 version, u32 rows, u32 cols,
           u32 D, then a float32 D-vector per pixel, row-major.
``.mask``  text: ``N`` on line 1, comma-separated sampled rows on line 2.
``.pgm``   plain (P2) 8-bit grayscale rendering of a real map.

All binary fields are little-endian. Writers go through a temporary file
and rename, so a reader never sees a partial file.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from .forward_model import SamplingMask

IMAGE_MAGIC = b"PIXI"
PROB_MAGIC = b"PIXP"
FORMAT_VERSION = 1
DTYPE_REAL = 0
DTYPE_COMPLEX = 1


class FormatError(ValueError):
    """A file does not follow the expected layout."""


def atomic_write(path, data: bytes | str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    mode = "w" if isinstance(data, str) else "wb"
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, mode, **({"encoding": "utf-8", "newline": "\n"} if mode == "w" else {})) as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def _read_exact(buf: bytes, offset: int, size: int, what: str) -> bytes:
    if offset + size > len(buf):
        raise FormatError(f"truncated file while reading {what}")
    return buf[offset : offset + size]


# --- images ----------------------------------------------------------------


def encode_image(img: np.ndarray, complex_valued: bool | None = None) -> bytes:
    img = np.asarray(img)
    if img.ndim != 2:
        raise ValueError("images must be 2D")
    if complex_valued is None:
        complex_valued = bool(np.iscomplexobj(img) and np.any(np.imag(img) != 0))
    rows, cols = img.shape
    header = IMAGE_MAGIC + struct.pack("<IIIB", FORMAT_VERSION, rows, cols, DTYPE_COMPLEX if complex_valued else DTYPE_REAL)
    if complex_valued:
        payload = np.stack([np.real(img), np.imag(img)], axis=-1).astype("<f4")
    else:
        payload = np.real(img).astype("<f4")
    return header + payload.tobytes()


def decode_image(buf: bytes) -> np.ndarray:
    if _read_exact(buf, 0, 4, "magic") != IMAGE_MAGIC:
        raise FormatError("not a .pxi image (bad magic bytes)")
    version, rows, cols, dtype = struct.unpack("<IIIB", _read_exact(buf, 4, 13, "header"))
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported .pxi version {version}")
    if dtype not in (DTYPE_REAL, DTYPE_COMPLEX):
        raise FormatError(f"unknown .pxi dtype code {dtype}")
    width = 2 if dtype == DTYPE_COMPLEX else 1
    body = _read_exact(buf, 17, rows * cols * width * 4, "pixel payload")
    data = np.frombuffer(body, dtype="<f4").astype(np.float32)
    if dtype == DTYPE_COMPLEX:
        data = data.reshape(rows, cols, 2)
        return (data[..., 0] + 1j * data[..., 1]).astype(np.complex64)
    return data.reshape(rows, cols)


def save_image(path, img: np.ndarray, complex_valued: bool | None = None) -> Path:
    return atomic_write(path, encode_image(img, complex_valued))


def load_image(path) -> np.ndarray:
    return decode_image(Path(path).read_bytes())


# --- probability volumes ---------------------------------------------------


def encode_probabilities(p: np.ndarray) -> bytes:
    p = np.asarray(p)
    if p.ndim != 3:
        raise ValueError("probability volumes must be (rows, cols, D)")
    rows, cols, d = p.shape
    return PROB_MAGIC + struct.pack("<IIII", FORMAT_VERSION, rows, cols, d) + p.astype("<f4").tobytes()


def decode_probabilities(buf: bytes) -> np.ndarray:
    if _read_exact(buf, 0, 4, "magic") != PROB_MAGIC:
        raise FormatError("not a .pxp probability volume (bad magic bytes)")
    version, rows, cols, d = struct.unpack("<IIII", _read_exact(buf, 4, 16, "header"))
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported .pxp version {version}")
    body = _read_exact(buf, 20, rows * cols * d * 4, "probability payload")
    return np.frombuffer(body, dtype="<f4").astype(np.float32).reshape(rows, cols, d)


def save_probabilities(path, p: np.ndarray) -> Path:
    return atomic_write(path, encode_probabilities(p))


def load_probabilities(path) -> np.ndarray:
    return decode_probabilities(Path(path).read_bytes())


# --- masks -------------------------------------------------------------------


def encode_mask(mask: SamplingMask) -> str:
    return f"{mask.n_lines}\n{','.join(str(i) for i in mask.sampled)}\n"


def decode_mask(text: str) -> SamplingMask:
    lines = text.splitlines()
    if not lines:
        raise FormatError("empty mask file")
    try:
        n = int(lines[0].strip())
        body = lines[1].strip() if len(lines) > 1 else ""
        idx = [int(t) for t in body.split(",")] if body else []
    except ValueError as exc:
        raise FormatError(f"malformed mask file: {exc}") from None
    if idx != sorted(idx):
        raise FormatError("mask indices must be sorted")
    try:
        return SamplingMask(n, tuple(idx))
    except ValueError as exc:
        raise FormatError(str(exc)) from None


def save_mask(path, mask: SamplingMask) -> Path:
    return atomic_write(path, encode_mask(mask))


def load_mask(path) -> SamplingMask:
    return decode_mask(Path(path).read_text(encoding="utf-8"))


# --- misc ------------------------------------------------------------------


def save_json(path, obj) -> Path:
    return atomic_write(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


def load_json(path):
    return json.loads(Path(path).read_text(encoding="utf-8"))


def to_gray8(values: np.ndarray) -> np.ndarray:
    """Min-max normalise to 0..255 (round half up); constant maps become 0."""
    v = np.asarray(values, dtype=float)
    lo, hi = float(v.min()), float(v.max())
    if hi == lo:
        return np.zeros(v.shape, dtype=np.uint8)
    return np.floor((v - lo) / (hi - lo) * 255.0 + 0.5).astype(np.uint8)


def encode_pgm(values: np.ndarray) -> str:
    g = to_gray8(values)
    rows, cols = g.shape
    body = "\n".join(" ".join(str(int(px)) for px in row) for row in g)
    return f"P2\n{cols} {rows}\n255\n{body}\n"


def save_pgm(path, values: np.ndarray) -> Path:
    return atomic_write(path, encode_pgm(values))


def read_pgm(path) -> np.ndarray:
    tokens = [t for line in Path(path).read_text().splitlines() if not line.startswith("#") for t in line.split()]
    if not tokens or tokens[0] != "P2":
        raise FormatError("not a plain PGM file")
    cols, rows, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    if maxval != 255:
        raise FormatError("only 8-bit PGM is supported")
    return np.array(tokens[4 : 4 + rows * cols], dtype=np.uint8).reshape(rows, cols)
