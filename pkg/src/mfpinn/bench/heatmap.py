"""16-bit binary PGM export of 2-D fields (or axis slices of 3-D fields)."""
from __future__ import annotations

from pathlib import Path

import numpy as np

MAXVAL = 65535


def to_pixels(values) -> tuple[np.ndarray, float, float]:
    """Min-max map onto 0..65535 with round-half-even; a constant field maps to the mid value."""
    a = np.asarray(values, float)
    if not np.all(np.isfinite(a)):
        raise ValueError("field has non-finite values")
    lo, hi = float(a.min()), float(a.max())
    if hi == lo:
        return np.full(a.shape, np.rint(MAXVAL / 2), dtype=np.uint16), lo, hi
    return np.rint((a - lo) / (hi - lo) * MAXVAL).astype(np.uint16), lo, hi


def central_slice(values, axis: int = 2, index: int | None = None) -> np.ndarray:
    a = np.asarray(values)
    if a.ndim != 3:
        raise ValueError("slicing needs a 3-D grid")
    index = a.shape[axis] // 2 if index is None else index
    return np.take(a, index, axis=axis)


def sidecar_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".minmax.txt")


def export_heatmap(values, path, axis: int | None = None, index: int | None = None) -> Path:
    """Write ``values`` (row-major, first axis = image rows) as a P5 PGM.

    A 3-D grid needs ``axis`` and is cut at ``index`` (the central index by
    default). The min/max used for the scaling go to ``<path>.minmax.txt``.
    """
    a = np.asarray(values, float)
    if a.ndim == 3:
        if axis is None:
            raise ValueError("a 3-D grid needs a slice axis")
        a = central_slice(a, axis, index)
    if a.ndim != 2:
        raise ValueError(f"expected a 2-D grid, got shape {a.shape}")
    px, lo, hi = to_pixels(a)
    rows, cols = px.shape
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{cols} {rows}\n{MAXVAL}\n".encode("ascii"))
        fh.write(px.astype(">u2").tobytes())
    sidecar_path(path).write_text(f"min {lo!r}\nmax {hi!r}\n")
    return path


def read_pgm(path) -> np.ndarray:
    """Read back a 16-bit P5 file written by :func:`export_heatmap`."""
    data = Path(path).read_bytes()
    fields, pos = [], 0
    while len(fields) < 4:
        while data[pos:pos + 1].isspace():
            pos += 1
        end = pos
        while not data[end:end + 1].isspace():
            end += 1
        fields.append(data[pos:end].decode("ascii"))
        pos = end
    pos += 1
    if fields[0] != "P5":
        raise ValueError("not a binary PGM")
    cols, rows, maxval = int(fields[1]), int(fields[2]), int(fields[3])
    dtype = ">u2" if maxval > 255 else "u1"
    return np.frombuffer(data[pos:], dtype=dtype, count=rows * cols).reshape(rows, cols).astype(np.uint16)


def read_minmax(path) -> tuple[float, float]:
    vals = dict(line.split() for line in sidecar_path(path).read_text().splitlines() if line.strip())
    return float(vals["min"]), float(vals["max"])
