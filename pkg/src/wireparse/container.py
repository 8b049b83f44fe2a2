"""Flat binary container for grids and weight vectors, plus a lossless text dump.

Layout (little endian)::

    magic     4 bytes  b"WPGR"
    version   uint16
    dtype     uint16   4 -> float32, 8 -> float64
    image_w   uint32   \
    image_h   uint32    > grid spec, zeros for non-grid payloads
    downsample uint32  /
    ndim      uint32
    shape     ndim * uint32
    payload   row-major values
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .geom import GridSpec

MAGIC = b"WPGR"
VERSION = 1
_HEAD = struct.Struct("<4sHHIIII")


class ContainerError(ValueError):
    pass


def write_grid(path, values, spec: GridSpec | None = None, dtype=np.float32) -> None:
    values = np.ascontiguousarray(values, dtype=dtype)
    itemsize = np.dtype(dtype).itemsize
    if itemsize not in (4, 8):
        raise ContainerError(f"unsupported dtype {dtype}")
    if spec is not None and values.shape[-2:] != spec.shape:
        raise ContainerError(f"grid shape {values.shape} does not match spec {spec.shape}")
    w, h, b = (spec.image_w, spec.image_h, spec.downsample) if spec else (0, 0, 0)
    header = _HEAD.pack(MAGIC, VERSION, itemsize, w, h, b, values.ndim)
    header += struct.pack(f"<{values.ndim}I", *values.shape)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(values.astype(values.dtype.newbyteorder("<"), copy=False).tobytes())


def read_grid(path) -> tuple[np.ndarray, GridSpec | None]:
    """Return the payload as float64 and the grid spec (None for plain vectors)."""
    raw = Path(path).read_bytes()
    if len(raw) < _HEAD.size or raw[:4] != MAGIC:
        raise ContainerError(f"{path}: not a grid container")
    magic, version, itemsize, w, h, b, ndim = _HEAD.unpack_from(raw)
    if version != VERSION or itemsize not in (4, 8):
        raise ContainerError(f"{path}: unsupported version {version} / itemsize {itemsize}")
    off = _HEAD.size
    shape = struct.unpack_from(f"<{ndim}I", raw, off)
    off += 4 * ndim
    dtype = np.dtype("<f4" if itemsize == 4 else "<f8")
    count = int(np.prod(shape)) if shape else 1
    if len(raw) - off != count * itemsize:
        raise ContainerError(f"{path}: payload size mismatch")
    values = np.frombuffer(raw, dtype=dtype, count=count, offset=off).reshape(shape).astype(float)
    spec = GridSpec(w, h, b) if b else None
    return values, spec


def dump_text(values, spec: GridSpec | None = None) -> str:
    """Human readable dump; ``repr`` of each float round-trips exactly."""
    values = np.asarray(values, dtype=float)
    lines = []
    if spec is not None:
        lines.append(f"# spec {spec.image_w} {spec.image_h} {spec.downsample}")
    lines.append("# shape " + " ".join(str(n) for n in values.shape))
    flat = values.reshape(-1, values.shape[-1]) if values.ndim > 1 else values.reshape(1, -1)
    for row in flat:
        lines.append(" ".join(repr(float(v)) for v in row))
    return "\n".join(lines) + "\n"


def load_text(text: str) -> tuple[np.ndarray, GridSpec | None]:
    spec = None
    shape = None
    rows = []
    for line in text.splitlines():
        if line.startswith("# spec"):
            spec = GridSpec(*(int(v) for v in line.split()[2:]))
        elif line.startswith("# shape"):
            shape = tuple(int(v) for v in line.split()[2:])
        elif line.strip():
            rows.append([float(v) for v in line.split()])
    if shape is None:
        raise ContainerError("missing shape line")
    return np.array(rows, dtype=float).reshape(shape), spec
