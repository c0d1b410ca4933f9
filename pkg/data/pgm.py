"""
16-bit binary PGM export of single bands and dictionary atoms.
"""

import os
from pathlib import Path

import numpy as np

from tensor.core import as_tensor
from utils.report import atomic_write_bytes

MAXVAL = 65535


def encode_pgm(plane: np.ndarray) -> bytes:
    """P5 with maxval 65535; rows of the image are the first array axis."""
    plane = np.asarray(plane, dtype=np.float64)
    if plane.ndim != 2:
        raise ValueError(f"PGM export needs a 2-D plane, got shape {plane.shape}")
    if not np.all(np.isfinite(plane)):
        raise ValueError("PGM export needs finite values")
    levels = np.rint(np.clip(plane, 0.0, 1.0) * MAXVAL).astype(">u2")
    rows, cols = plane.shape
    return f"P5\n{cols} {rows}\n{MAXVAL}\n".encode("ascii") + levels.tobytes()


def export_band_pgm(msi, band: int, path: str | os.PathLike) -> None:
    msi = as_tensor(msi, "msi")
    if not 0 <= band < msi.shape[2]:
        raise ValueError(f"band {band} out of range for {msi.shape[2]} bands")
    atomic_write_bytes(path, encode_pgm(msi[:, :, band]))


def read_pgm(path: str | os.PathLike) -> np.ndarray:
    """Read a P5 file written by `encode_pgm` back into [0, 1] values."""
    data = Path(path).read_bytes()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos])
    if tokens[0] != b"P5":
        raise ValueError(f"{path} is not a binary PGM")
    cols, rows, maxval = (int(t) for t in tokens[1:])
    dtype = ">u2" if maxval > 255 else "u1"
    pixels = np.frombuffer(data, dtype=dtype, count=rows * cols, offset=pos + 1)
    return pixels.reshape(rows, cols).astype(np.float64) / maxval


def export_atom_tiles(d: np.ndarray, tile_shape: tuple[int, int], path: str | os.PathLike, pad: int = 1) -> None:
    """Lay out dictionary columns as min-max scaled tiles of `tile_shape` in one image."""
    d = np.asarray(d, dtype=np.float64)
    h, w = tile_shape
    if h * w != d.shape[0]:
        raise ValueError(f"tile {tile_shape} does not match atom length {d.shape[0]}")
    n = d.shape[1]
    grid_cols = int(np.ceil(np.sqrt(n)))
    grid_rows = int(np.ceil(n / grid_cols))
    canvas = np.ones((grid_rows * (h + pad) + pad, grid_cols * (w + pad) + pad))
    for j in range(n):
        atom = d[:, j].reshape((h, w), order="F")
        lo, hi = atom.min(), atom.max()
        atom = (atom - lo) / (hi - lo) if hi > lo else np.full_like(atom, 0.5)
        r, c = divmod(j, grid_cols)
        top, left = pad + r * (h + pad), pad + c * (w + pad)
        canvas[top:top + h, left:left + w] = atom
    atomic_write_bytes(path, encode_pgm(canvas))
