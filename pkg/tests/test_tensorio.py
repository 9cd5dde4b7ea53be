import struct

import numpy as np
import pytest

from headwave.tensorio import (
    BadMagicError,
    ShapeError,
    TruncatedFileError,
    read_tensor,
    write_tensor,
)


def test_roundtrip_survey_sized_tensor(tmp_path):
    rng = np.random.default_rng(0)
    data = rng.standard_normal((5001, 50, 50)).astype(np.float32)
    path = tmp_path / "channel.t"
    write_tensor(path, data)
    back = read_tensor(path)
    assert back.shape == (5001, 50, 50)
    assert np.array_equal(back, data)


def test_roundtrip_2d(tmp_path):
    data = np.arange(12, dtype=np.float32).reshape(3, 4)
    path = tmp_path / "img.t"
    write_tensor(path, data)
    assert np.array_equal(read_tensor(path), data)


def test_write_rejects_bad_rank(tmp_path):
    with pytest.raises(ShapeError):
        write_tensor(tmp_path / "x.t", np.zeros(5, dtype=np.float32))
    with pytest.raises(ShapeError):
        write_tensor(tmp_path / "x.t", np.zeros((2, 2, 2, 2), dtype=np.float32))


def test_write_rejects_empty(tmp_path):
    with pytest.raises(ShapeError):
        write_tensor(tmp_path / "x.t", np.zeros((0, 4), dtype=np.float32))


def test_truncated_payload(tmp_path):
    path = tmp_path / "x.t"
    write_tensor(path, np.ones((4, 4), dtype=np.float32))
    raw = path.read_bytes()
    path.write_bytes(raw[:-4])  # drop one float
    with pytest.raises(TruncatedFileError):
        read_tensor(path)


def test_bad_magic(tmp_path):
    path = tmp_path / "x.t"
    write_tensor(path, np.ones((4, 4), dtype=np.float32))
    raw = bytearray(path.read_bytes())
    raw[:4] = b"XXXX"
    path.write_bytes(bytes(raw))
    with pytest.raises(BadMagicError):
        read_tensor(path)


def test_payload_longer_than_shape(tmp_path):
    path = tmp_path / "x.t"
    write_tensor(path, np.ones((4, 4), dtype=np.float32))
    with open(path, "ab") as fh:
        fh.write(b"\x00\x00\x00\x00")
    with pytest.raises(ShapeError):
        read_tensor(path)


def test_header_is_little_endian(tmp_path):
    path = tmp_path / "x.t"
    write_tensor(path, np.array([[1.0, 2.0]], dtype=np.float32))
    raw = path.read_bytes()
    magic, version, rank, d0, d1, d2 = struct.unpack("<8sII3Q24x", raw[:64])
    assert magic == b"HWTENSR\x00"
    assert (version, rank, d0, d1, d2) == (1, 2, 1, 2, 0)
    # payload: two little-endian float32
    assert np.frombuffer(raw[64:], dtype="<f4").tolist() == [1.0, 2.0]


def test_write_is_atomic_no_temp_left(tmp_path):
    path = tmp_path / "x.t"
    write_tensor(path, np.ones((2, 2), dtype=np.float32))
    leftovers = [p for p in tmp_path.iterdir() if p.name.startswith(".tensor-")]
    assert leftovers == []


def test_reads_float64_input_as_float32(tmp_path):
    data = np.array([[1.5, 2.5]], dtype=np.float64)
    path = tmp_path / "x.t"
    write_tensor(path, data)
    back = read_tensor(path)
    assert back.dtype == np.float32
    assert np.array_equal(back, data.astype(np.float32))
