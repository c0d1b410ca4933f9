"""
LTDL tensor container.

Layout (all little-endian):

    offset 0   b"LTDL"
    offset 4   u16 format version (1)
    offset 6   u16 order N
    offset 8   N x u32 dims
    then       prod(dims) float64 values, mode-1 fastest

Flat band-stacked files (.raw, .bin) hold raw float64 values next to a
sidecar text header holding "L W H".
"""

import logging
import os
import struct
from pathlib import Path

import numpy as np

from data.pgm import read_pgm
from utils.report import atomic_write_bytes

log = logging.getLogger(__name__)

MAGIC = b"LTDL"
FLAT_SUFFIXES = (".raw", ".bin")
VERSION = 1
_PREAMBLE = struct.Struct("<4sHH")
_PAYLOAD_DTYPE = np.dtype("<f8")


class ContainerFormatError(ValueError):
    """Malformed container or flat binary file."""


def encode_tensor(t) -> bytes:
    t = np.asarray(t, dtype=np.float64)
    if t.ndim < 1 or t.ndim > 0xFFFF:
        raise ValueError(f"cannot store a tensor of order {t.ndim}")
    if any(d > 0xFFFFFFFF for d in t.shape):
        raise ValueError(f"dimension too large for the container: {t.shape}")
    header = _PREAMBLE.pack(MAGIC, VERSION, t.ndim) + struct.pack(f"<{t.ndim}I", *t.shape)
    payload = np.asarray(t, dtype=_PAYLOAD_DTYPE).ravel(order="F").tobytes()
    return header + payload


def decode_tensor(data: bytes) -> np.ndarray:
    if len(data) < _PREAMBLE.size:
        raise ContainerFormatError(f"file ends at byte {len(data)} inside the {_PREAMBLE.size}-byte preamble")
    magic, version, order = _PREAMBLE.unpack_from(data, 0)
    if magic != MAGIC:
        raise ContainerFormatError(f"bad magic {magic!r} at byte 0, expected {MAGIC!r}")
    if version != VERSION:
        raise ContainerFormatError(f"unsupported format version {version} at byte 4")
    if order == 0:
        raise ContainerFormatError("tensor order 0 at byte 6")
    dims_end = _PREAMBLE.size + 4 * order
    if len(data) < dims_end:
        raise ContainerFormatError(f"file ends at byte {len(data)} inside the dims list ending at byte {dims_end}")
    dims = struct.unpack_from(f"<{order}I", data, _PREAMBLE.size)
    expected = 8 * int(np.prod(dims, dtype=np.int64))
    actual = len(data) - dims_end
    if actual != expected:
        raise ContainerFormatError(
            f"payload at byte {dims_end} has {actual} bytes, expected {expected} for dims {tuple(dims)}")
    values = np.frombuffer(data, dtype=_PAYLOAD_DTYPE, offset=dims_end)
    return values.astype(np.float64).reshape(dims, order="F")


def save_tensor(t, path: str | os.PathLike) -> None:
    """Write a container file, or a flat binary with sidecar for .raw and .bin paths."""
    if Path(path).suffix.lower() in FLAT_SUFFIXES:
        save_flat_binary(t, path)
    else:
        atomic_write_bytes(path, encode_tensor(t))


def load_tensor(path: str | os.PathLike) -> np.ndarray:
    """Read a container file.

    Flat binaries with a sidecar header are imported too, and a binary PGM
    becomes a one-band cube.
    """
    path = Path(path)
    data = path.read_bytes()
    if data[:2] == b"P5":
        return read_pgm(path)[:, :, None]
    if data[:4] != MAGIC and sidecar_path(path).exists():
        return load_flat_binary(path)
    t = decode_tensor(data)
    log.debug("loaded %s with dims %s", path, t.shape)
    return t


def sidecar_path(path: str | os.PathLike) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".hdr")


def load_flat_binary(path: str | os.PathLike, header_path: str | os.PathLike | None = None) -> np.ndarray:
    """Band-stacked float64 cube (L*W*H values, mode-1 fastest) with an "L W H" sidecar."""
    path = Path(path)
    header_path = Path(header_path) if header_path is not None else sidecar_path(path)
    fields = header_path.read_text().split()
    try:
        dims = tuple(int(f) for f in fields)
    except ValueError:
        raise ContainerFormatError(f"sidecar {header_path} must hold three integers, got {fields!r}") from None
    if len(dims) != 3 or min(dims) < 1:
        raise ContainerFormatError(f"sidecar {header_path} must hold three positive integers, got {fields!r}")
    data = path.read_bytes()
    expected = 8 * dims[0] * dims[1] * dims[2]
    if len(data) != expected:
        raise ContainerFormatError(f"flat file {path} has {len(data)} bytes from byte 0, expected {expected}")
    return np.frombuffer(data, dtype=_PAYLOAD_DTYPE).astype(np.float64).reshape(dims, order="F")


def save_flat_binary(t, path: str | os.PathLike) -> None:
    t = np.asarray(t, dtype=np.float64)
    if t.ndim != 3:
        raise ValueError(f"flat binary export needs a 3-order tensor, got shape {t.shape}")
    atomic_write_bytes(path, t.astype(_PAYLOAD_DTYPE).ravel(order="F").tobytes())
    atomic_write_bytes(sidecar_path(path), " ".join(str(d) for d in t.shape).encode() + b"\n")
