import struct

import numpy as np
import pytest

from kbures.errors import FormatError, InputError
from kbures.io import HEADER, decode_measure, encode_measure, load_measure, save_measure
from kbures.measures import GridSpec, MatrixMeasure, synth_measure


@pytest.mark.parametrize("d,n", [(1, 8), (2, 4), (3, 2)])
def test_round_trip_is_bitwise(tmp_path, d, n):
    G = synth_measure(GridSpec(d, n), "random", seed=d)
    path = tmp_path / "g.kbm"
    save_measure(G, path)
    back = load_measure(path)
    assert back.grid == G.grid
    assert back.values.tobytes() == G.values.tobytes()


def test_layout_is_little_endian_upper_triangle():
    g = GridSpec(2, 2)
    values = np.zeros((2, 2, 2, 2))
    values[..., 0, 0] = 1.0
    values[..., 0, 1] = values[..., 1, 0] = 2.0
    values[..., 1, 1] = 3.0
    values[1, 1] *= 10
    data = encode_measure(MatrixMeasure(g, values))
    assert data[:4] == b"KBM1"
    assert data[4:12] == bytes([1, 2, 0, 0, 2, 0, 0, 0])
    payload = struct.unpack("<12d", data[12:])
    assert payload[:3] == (1.0, 2.0, 3.0)
    assert payload[-3:] == (10.0, 20.0, 30.0)


def test_truncated_file_reports_offset():
    data = encode_measure(synth_measure(GridSpec(1, 4), "constant"))
    with pytest.raises(FormatError) as info:
        decode_measure(data[:-3])
    assert info.value.offset == len(data) - 3
    with pytest.raises(FormatError) as info:
        decode_measure(data[:7])
    assert info.value.offset == 7
    with pytest.raises(FormatError):
        decode_measure(data + b"\0")


@pytest.mark.parametrize(
    "patch,offset",
    [((0, b"KBM2"), 0), ((4, b"\x02"), 4), ((5, b"\x04"), 5), ((6, b"\x01"), 6)],
)
def test_bad_header_fields(patch, offset):
    data = bytearray(encode_measure(synth_measure(GridSpec(1, 4), "constant")))
    at, raw = patch
    data[at : at + len(raw)] = raw
    with pytest.raises(FormatError) as info:
        decode_measure(bytes(data))
    assert info.value.offset == offset


def test_tiny_grid_is_input_error():
    for n in (0, 1):
        with pytest.raises(InputError):
            decode_measure(HEADER.pack(b"KBM1", 1, 1, 0, n))


def test_encoder_needs_transport_shape():
    with pytest.raises(InputError):
        encode_measure(MatrixMeasure(GridSpec(1, 4), np.ones((4, 2, 2))))
