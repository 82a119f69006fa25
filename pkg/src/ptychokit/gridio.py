"""PTGRID v1 file format: one JSON header line + raw little-endian f32 payload.

Complex grids are stored with a trailing dimension of extent 2 (re, im).
"""

import json

import numpy as np

MAGIC = "PTGRID"
VERSION = 1


class GridFormatError(ValueError):
    """Malformed header, truncated payload, or shape/dtype mismatch."""


def write_grid(path, grid):
    arr = np.ascontiguousarray(grid, dtype=np.float32)
    if not np.all(np.isfinite(arr)):
        raise ValueError("refusing to write non-finite grid")
    header = {
        "magic": MAGIC,
        "version": VERSION,
        "shape": list(arr.shape),
        "dtype": "f32le",
        "order": "row-major",
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header).encode("utf-8") + b"\n")
        fh.write(arr.astype("<f4").tobytes())


def read_grid(path):
    with open(path, "rb") as fh:
        line = fh.readline()
        try:
            header = json.loads(line.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise GridFormatError(f"{path}: malformed header") from exc
        if header.get("magic") != MAGIC or header.get("version") != VERSION:
            raise GridFormatError(f"{path}: bad magic/version")
        if header.get("dtype") != "f32le" or header.get("order") != "row-major":
            raise GridFormatError(f"{path}: unsupported dtype/order")
        shape = tuple(header.get("shape", ()))
        if not shape or any(int(s) <= 0 for s in shape):
            raise GridFormatError(f"{path}: bad shape {shape}")
        count = int(np.prod(shape))
        payload = fh.read(count * 4 + 1)
    if len(payload) != count * 4:
        raise GridFormatError(f"{path}: payload size {len(payload)} != {count * 4}")
    return np.frombuffer(payload, dtype="<f4").reshape(shape).copy()


def write_complex_grid(path, grid):
    """Store a physics.ComplexGrid as H x W x 2 (re, im)."""
    write_grid(path, np.stack([grid.re, grid.im], axis=-1))


def read_complex_grid(path):
    from .physics import ComplexGrid

    arr = read_grid(path)
    if arr.ndim != 3 or arr.shape[-1] != 2:
        raise GridFormatError(f"{path}: expected trailing (re, im) dimension")
    return ComplexGrid(arr[..., 0], arr[..., 1])
