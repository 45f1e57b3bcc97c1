import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from mspad.tensorio import MAGIC, TensorFormatError, decode_blob, encode_blob, read_blob, write_blob


def test_single_value(tmp_path):
    a = np.array([[[4095]]], dtype=np.uint16)
    write_blob(tmp_path / "a.tns", a)
    b = read_blob(tmp_path / "a.tns")
    assert b.dtype == np.uint16 and b.shape == (1, 1, 1) and b[0, 0, 0] == 4095


def test_full_frame_payload_size(tmp_path):
    a = np.zeros((7, 1026, 1282), dtype=np.uint16)
    path = tmp_path / "z.tns"
    write_blob(path, a)
    header = 8 + 4 + 1 + 1 + 3 * 4
    assert path.stat().st_size == header + 7 * 1026 * 1282 * 2
    assert np.array_equal(read_blob(path), a)


def test_header_layout():
    buf = encode_blob(np.arange(6, dtype=np.float32).reshape(2, 3))
    assert buf[:8] == MAGIC
    assert buf[8:12] == (1).to_bytes(4, "little")
    assert buf[12] == 2 and buf[13] == 2
    assert buf[14:22] == (2).to_bytes(4, "little") + (3).to_bytes(4, "little")


def test_wrong_magic(tmp_path):
    buf = bytearray(encode_blob(np.ones((2, 2), np.uint8)))
    buf[0:8] = b"NOTMAGIC"
    with pytest.raises(TensorFormatError, match="magic"):
        decode_blob(bytes(buf))


def test_truncated_and_version():
    buf = encode_blob(np.ones((3, 3), np.uint16))
    with pytest.raises(TensorFormatError, match="truncated"):
        decode_blob(buf[:-1])
    bad = bytearray(buf)
    bad[8] = 9
    with pytest.raises(TensorFormatError, match="version"):
        decode_blob(bytes(bad))


def test_rejects_bad_input():
    with pytest.raises(TypeError):
        encode_blob(np.ones(3, np.int64))
    with pytest.raises(ValueError):
        encode_blob(np.ones((0, 3), np.uint8))


dtypes = st.sampled_from([np.uint8, np.uint16, np.float32])
shapes = st.lists(st.integers(1, 6), min_size=1, max_size=4).map(tuple)


@settings(max_examples=150, deadline=None)
@given(dtypes.flatmap(lambda dt: arrays(dt, shapes)))
def test_round_trip_property(a):
    b = decode_blob(encode_blob(a))
    assert b.dtype == a.dtype and b.shape == a.shape
    assert b.tobytes() == a.tobytes()  # bitwise, NaN payloads included


def test_deterministic_bytes(tmp_path, rng):
    a = rng.integers(0, 65535, (3, 5, 7)).astype(np.uint16)
    write_blob(tmp_path / "1.tns", a)
    write_blob(tmp_path / "2.tns", a.copy())
    assert (tmp_path / "1.tns").read_bytes() == (tmp_path / "2.tns").read_bytes()
