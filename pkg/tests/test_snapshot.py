import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lcns.grid import Grid
from lcns.snapshot import pack_snapshot, read_sequence, unpack_snapshot, write_sequence


def test_header_layout_is_byte_exact():
    g = Grid((64,))
    buf = pack_snapshot(g, np.arange(65.0), time=0.25)
    assert len(buf) == 36 + 8 * 65
    assert buf[:4] == b"LCNS"
    assert struct.unpack_from("<IIII", buf, 4) == (1, 1, 1, 64)
    assert struct.unpack_from("<dd", buf, 20) == (1 / 64, 0.25)
    assert struct.unpack_from("<d", buf, 36 + 8 * 3)[0] == 3.0


def test_vector_component_major_c_order():
    g = Grid((4, 5))
    v = np.arange(2 * 5 * 6, dtype=float).reshape((2, 5, 6))
    buf = pack_snapshot(g, v)
    head = 24 + 12 * 2
    # component 1, node (2, 3)
    idx = 1 * 30 + 2 * 6 + 3
    assert struct.unpack_from("<d", buf, head + 8 * idx)[0] == v[1, 2, 3]


def test_bad_magic_rejected():
    buf = bytearray(pack_snapshot(Grid((4,)), np.zeros(5)))
    buf[0] = ord("X")
    with pytest.raises(ValueError):
        unpack_snapshot(bytes(buf))


@settings(max_examples=30, deadline=None)
@given(st.integers(4, 9), st.integers(4, 9), st.floats(0.1, 10.0), st.floats(-1e3, 1e3),
       st.integers(0, 2 ** 32 - 1))
def test_roundtrip(nx, ny, L, t, seed):
    g = Grid((nx, ny), (L, 1.0))
    v = np.random.default_rng(seed).standard_normal((2,) + g.shape)
    g2, v2, t2 = unpack_snapshot(pack_snapshot(g, v, t))
    assert g2.extents == g.extents and np.allclose(g2.lengths, g.lengths)
    assert np.array_equal(v2, v) and t2 == t


def test_sequence_roundtrip(tmp_path):
    g = Grid((6,))
    frames = np.random.default_rng(0).standard_normal((4,) + g.shape)
    p = tmp_path / "s.lcns"
    write_sequence(p, g, frames, [0.0, 0.1, 0.2, 0.3])
    g2, f2, t2 = read_sequence(p)
    assert np.array_equal(f2, frames) and np.allclose(t2, [0, 0.1, 0.2, 0.3])
