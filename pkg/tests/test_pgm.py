import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from pointvst import pgm
from pointvst.errors import FormatError


def test_mask_header():
    buf = pgm.encode(np.zeros((128, 128), dtype=np.uint8))
    assert buf.startswith(b"P5\n128 128\n255\n")
    assert len(buf) == len(b"P5\n128 128\n255\n") + 128 * 128


def test_depth_is_big_endian_16_bit():
    buf = pgm.encode(np.array([[1.0, 0.0, 0.5]]))
    assert buf.startswith(b"P5\n3 1\n65535\n")
    assert buf[-6:] == b"\xff\xff\x00\x00\x80\x00"


@given(arrays(np.uint8, st.tuples(st.integers(1, 20), st.integers(1, 20)), elements=st.integers(0, 1)))
def test_binary_round_trip(img):
    out = pgm.decode(pgm.encode(img))
    assert out.dtype == np.uint8 and np.array_equal(out, img)


@given(arrays(np.float64, st.tuples(st.integers(1, 20), st.integers(1, 20)), elements=st.floats(0, 1)))
def test_depth_round_trip(img):
    once = pgm.decode(pgm.encode(img, "depth"))
    assert np.abs(once - img).max() <= 0.5 / 65535 + 1e-15
    assert np.array_equal(pgm.decode(pgm.encode(once, "depth")), once)


def test_file_round_trip(tmp_path, rng):
    img = (rng.random((16, 8)) < 0.3).astype(np.uint8)
    pgm.write_image(tmp_path / "m.pgm", img)
    assert np.array_equal(pgm.read_image(tmp_path / "m.pgm"), img)


def test_header_comment_skipped():
    buf = b"P5\n# note\n2 1\n255\n" + bytes([0, 255])
    assert pgm.decode(buf).tolist() == [[0, 1]]


@pytest.mark.parametrize("buf", [
    b"P6\n2 1\n255\n\x00\x00",
    b"P5\n2 x\n255\n\x00\x00",
    b"P5\n2 1\n255\n\x00",
    b"P5\n2 1\n65535\n\x00\x00",
    b"P5\n2 1\n100\n\x00\x00",
    b"P5\n2 1",
    b"P5\n2 1\n255\n\x00\x07",
])
def test_malformed_rejected(buf):
    with pytest.raises(FormatError):
        pgm.decode(buf)


def test_encode_rejects_bad_values():
    with pytest.raises(FormatError):
        pgm.encode(np.array([[2]], dtype=np.uint8))
    with pytest.raises(FormatError):
        pgm.encode(np.array([[1.5]]))
    with pytest.raises(FormatError):
        pgm.encode(np.zeros(4))
