"""File formats: MRF1 rasters, 8-bit PGM and the JSON run report.

MRF1 layout (all little-endian)::

    offset  size  field
    0       4     magic  b"MRF1"
    4       1     dtype  0 = float32, 1 = uint8
    5       1     channels  1 = scalar/mask, 2 = vector (u, v interleaved per pixel)
    6       4     width   uint32
    10      4     height  uint32
    14      ...   payload, row-major

Masks are written as uint8 scalar rasters; any uint8 raster is read back as a
mask and must contain only 0 and 1.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .core import InvariantError, MetaRegError, as_scalar

MAGIC = b"MRF1"
HEADER = struct.Struct("<4sBBII")
DTYPE_F32 = 0
DTYPE_U8 = 1
_DTYPES = {DTYPE_F32: np.dtype("<f4"), DTYPE_U8: np.dtype("u1")}


class FormatError(MetaRegError, ValueError):
    pass


class RasterIOError(MetaRegError, OSError):
    pass


def _write_bytes(path, data: bytes) -> None:
    try:
        Path(path).write_bytes(data)
    except OSError as exc:
        raise RasterIOError(f"cannot write {path}: {exc}") from exc


def _read_bytes(path) -> bytes:
    try:
        return Path(path).read_bytes()
    except OSError as exc:
        raise RasterIOError(f"cannot read {path}: {exc}") from exc


def encode_raster(field: np.ndarray) -> bytes:
    a = np.asarray(field)
    if a.dtype == bool:
        h, w = a.shape
        return HEADER.pack(MAGIC, DTYPE_U8, 1, w, h) + a.astype("u1").tobytes()
    if a.ndim == 2:
        h, w = a.shape
        return HEADER.pack(MAGIC, DTYPE_F32, 1, w, h) + a.astype("<f4").tobytes()
    if a.ndim == 3 and a.shape[0] == 2:
        _, h, w = a.shape
        interleaved = np.moveaxis(a, 0, -1).astype("<f4")
        return HEADER.pack(MAGIC, DTYPE_F32, 2, w, h) + interleaved.tobytes()
    raise FormatError(f"cannot encode array of shape {a.shape} and dtype {a.dtype}")


def decode_raster(data: bytes, source: str = "<bytes>") -> np.ndarray:
    if len(data) < HEADER.size:
        raise FormatError(f"{source}: truncated header")
    magic, dtype, channels, w, h = HEADER.unpack_from(data)
    if magic != MAGIC:
        raise FormatError(f"{source}: bad magic {magic!r}")
    if dtype not in _DTYPES or channels not in (1, 2) or (dtype == DTYPE_U8 and channels != 1):
        raise FormatError(f"{source}: unsupported dtype/channels {dtype}/{channels}")
    if w == 0 or h == 0:
        raise FormatError(f"{source}: empty raster {w}x{h}")
    dt = _DTYPES[dtype]
    expected = w * h * channels * dt.itemsize
    payload = data[HEADER.size :]
    if len(payload) != expected:
        raise FormatError(f"{source}: payload is {len(payload)} bytes, expected {expected}")
    arr = np.frombuffer(payload, dtype=dt)
    if dtype == DTYPE_U8:
        arr = arr.reshape(h, w)
        if not np.all(arr <= 1):
            raise InvariantError(f"{source}: mask raster holds values other than 0/1")
        return arr == 1
    arr = arr.astype(np.float64)
    if channels == 1:
        return arr.reshape(h, w)
    return np.moveaxis(arr.reshape(h, w, 2), -1, 0).copy()


def write_raster(path, field: np.ndarray) -> None:
    """Write a scalar field, vector field or boolean mask as MRF1."""
    _write_bytes(path, encode_raster(field))


def read_raster(path) -> np.ndarray:
    """Read an MRF1 file: float64 ``(H, W)``, float64 ``(2, H, W)`` or bool ``(H, W)``."""
    return decode_raster(_read_bytes(path), str(path))


def write_pgm(path, img) -> None:
    """Binary 8-bit PGM; [0, 1] maps to [0, 255], rounding half up."""
    img = as_scalar(img, "img")
    h, w = img.shape
    q = np.clip(np.floor(img * 255.0 + 0.5), 0, 255).astype("u1")
    _write_bytes(path, f"P5\n{w} {h}\n255\n".encode("ascii") + q.tobytes())


def _pgm_tokens(data: bytes, count: int):
    tokens, pos = [], 0
    while len(tokens) < count:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FormatError("truncated PGM header")
        tokens.append(data[start:pos])
    # exactly one whitespace byte separates maxval from the raster
    return tokens, pos + 1


def read_pgm(path) -> np.ndarray:
    data = _read_bytes(path)
    if data[:2] != b"P5":
        raise FormatError(f"{path}: only binary P5 PGM is supported")
    tokens, start = _pgm_tokens(data, 4)
    try:
        w, h, maxval = (int(t) for t in tokens[1:4])
    except ValueError as exc:
        raise FormatError(f"{path}: malformed PGM header") from exc
    if not 0 < maxval <= 255:
        raise FormatError(f"{path}: only 8-bit PGM is supported (maxval {maxval})")
    raw = data[start : start + w * h]
    if len(raw) != w * h:
        raise FormatError(f"{path}: truncated PGM payload")
    return np.frombuffer(raw, dtype="u1").reshape(h, w).astype(np.float64) / maxval


REPORT_KEYS = (
    "mode",
    "steps",
    "kappa",
    "lambdas",
    "lr",
    "max_iters",
    "tol_rel",
    "seed",
    "iterations_run",
    "converged",
    "ssd_total",
    "ssd_healthy",
    "foldings",
    "runtime_ms",
    "dice",
    "field_err_max",
    "energy_trace",
    "files",
)


def build_report(cfg, result, metrics=None, files: dict | None = None) -> dict:
    """Report dict: config echo, metrics (flat), energy trace and artifact paths.

    ``metrics`` overrides ``result.metrics`` (the CLI passes metrics recomputed
    from the rasters it wrote).
    """
    metrics = metrics if metrics is not None else result.metrics
    report = dict(cfg.as_dict())
    report["iterations_run"] = result.iterations_run
    report["converged"] = result.converged
    report.update(metrics.as_dict())
    report["energy_trace"] = [e.as_dict() for e in result.energy_trace]
    report["files"] = dict(files or {})
    return {k: report[k] for k in REPORT_KEYS if k in report}


def write_report(path, cfg, result, metrics=None, files: dict | None = None) -> dict:
    report = build_report(cfg, result, metrics, files)
    _write_bytes(path, (json.dumps(report, indent=2) + "\n").encode("utf-8"))
    return report


def read_report(path) -> dict:
    try:
        return json.loads(_read_bytes(path))
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid JSON report") from exc
