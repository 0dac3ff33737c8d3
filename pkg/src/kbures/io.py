"""Binary measure files (``.kbm``).

Layout, little-endian::

    offset 0   magic  b"KBM1"
    offset 4   u8     version (1)
    offset 5   u8     spatial dimension d in {1, 2, 3}
    offset 6   u16    reserved (0)
    offset 8   u32    cells per axis n
    offset 12  f64[]  n^d * d(d+1)/2 values: cells in row-major order, per
                      cell the upper triangle of G row by row

Files hold transport-ready measures, so the matrix size equals ``d``.
"""

import struct
from pathlib import Path

import numpy as np

from .errors import FormatError, InputError
from .measures import GridSpec, MatrixMeasure

MAGIC = b"KBM1"
VERSION = 1
HEADER = struct.Struct("<4sBBHI")


def _triu(d):
    return np.triu_indices(d)


def encode_measure(G):
    d = G.grid.d
    if G.k != d:
        raise InputError("measure files store d x d densities")
    rows, cols = _triu(d)
    payload = np.ascontiguousarray(G.values[..., rows, cols], dtype="<f8")
    return HEADER.pack(MAGIC, VERSION, d, 0, G.grid.n) + payload.tobytes()


def decode_measure(data):
    """Parse bytes into a measure; errors carry the byte offset of the problem."""
    if len(data) < HEADER.size:
        raise FormatError(f"file shorter than the {HEADER.size}-byte header", len(data))
    magic, version, d, reserved, n = HEADER.unpack_from(data)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}", 0)
    if version != VERSION:
        raise FormatError(f"unsupported version {version}", 4)
    if d not in (1, 2, 3):
        raise FormatError(f"spatial dimension {d} not in 1..3", 5)
    if reserved != 0:
        raise FormatError("reserved field must be zero", 6)
    if n < 2:
        raise InputError(f"cells per axis must be at least 2, got {n}")
    try:
        grid = GridSpec(d, n)
    except InputError as exc:
        raise FormatError(str(exc), 8) from exc
    per_cell = d * (d + 1) // 2
    count = grid.cells * per_cell
    expected = HEADER.size + 8 * count
    if len(data) < expected:
        raise FormatError(f"payload truncated: expected {expected} bytes, got {len(data)}", len(data))
    if len(data) > expected:
        raise FormatError(f"{len(data) - expected} trailing bytes after payload", expected)
    flat = np.frombuffer(data, dtype="<f8", count=count, offset=HEADER.size).reshape(grid.shape + (per_cell,))
    values = np.zeros(grid.shape + (d, d))
    rows, cols = _triu(d)
    values[..., rows, cols] = flat
    values[..., cols, rows] = flat
    return MatrixMeasure(grid, values)


def save_measure(G, path):
    Path(path).write_bytes(encode_measure(G))


def load_measure(path):
    return decode_measure(Path(path).read_bytes())
