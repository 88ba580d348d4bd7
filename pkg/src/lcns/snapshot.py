"""Binary field snapshots.

Byte layout (little endian), see ``docs/snapshot_format.md``::

    offset  type        content
    0       4 bytes     magic b"LCNS"
    4       u32         format version (1)
    8       u32         dim
    12      u32         ncomp (1 for scalar fields, dim for vector fields)
    16      dim x u32   extents (cells per axis)
    ..      dim x f64   spacing
    ..      f64         time stamp
    ..      f64 * N     values, row-major, N = ncomp * prod(extents + 1)

A trajectory file is several snapshot records written back to back.
"""
import struct

import numpy as np

from .grid import Grid

MAGIC = b"LCNS"
VERSION = 1


def pack_snapshot(grid, values, time=0.0):
    values = np.ascontiguousarray(values, dtype="<f8")
    ncomp = 1 if values.shape == grid.shape else values.shape[0]
    if values.size != ncomp * grid.size:
        raise ValueError("value count does not match the grid")
    head = MAGIC + struct.pack("<III", VERSION, grid.dim, ncomp)
    head += struct.pack(f"<{grid.dim}I", *grid.extents)
    head += struct.pack(f"<{grid.dim}d", *grid.spacing)
    head += struct.pack("<d", float(time))
    return head + values.tobytes()


def _unpack_one(buf, offset):
    if buf[offset:offset + 4] != MAGIC:
        raise ValueError("bad magic bytes, not an LCNS snapshot")
    version, dim, ncomp = struct.unpack_from("<III", buf, offset + 4)
    if version != VERSION:
        raise ValueError(f"unsupported snapshot version {version}")
    pos = offset + 16
    extents = struct.unpack_from(f"<{dim}I", buf, pos)
    pos += 4 * dim
    spacing = struct.unpack_from(f"<{dim}d", buf, pos)
    pos += 8 * dim
    (time,) = struct.unpack_from("<d", buf, pos)
    pos += 8
    grid = Grid(extents, tuple(h * n for h, n in zip(spacing, extents)))
    count = ncomp * grid.size
    values = np.frombuffer(buf, dtype="<f8", count=count, offset=pos).copy()
    shape = grid.shape if ncomp == 1 else (ncomp,) + grid.shape
    return grid, values.reshape(shape), time, pos + 8 * count


def unpack_snapshot(buf):
    grid, values, time, _ = _unpack_one(buf, 0)
    return grid, values, time


def write_sequence(path, grid, frames, times):
    with open(path, "wb") as fh:
        for f, t in zip(frames, times):
            fh.write(pack_snapshot(grid, f, t))


def read_sequence(path):
    """Return ``(grid, frames, times)`` for a file of concatenated snapshots."""
    with open(path, "rb") as fh:
        buf = fh.read()
    frames, times, offset, grid = [], [], 0, None
    while offset < len(buf):
        grid, values, t, offset = _unpack_one(buf, offset)
        frames.append(values)
        times.append(t)
    return grid, np.array(frames), np.array(times)
