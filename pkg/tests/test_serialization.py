"""EVPT tensor files, EVPC checkpoint archives, checksums, PNM import."""

import numpy as np
import pytest

from evp.errors import FormatError
from evp.serialization import (
    checkpoint_from_bytes,
    checkpoint_to_bytes,
    read_checkpoint,
    read_evpt,
    read_pnm,
    state_checksum,
    tensor_from_bytes,
    tensor_to_bytes,
    write_checkpoint,
    write_evpt,
)


def test_evpt_round_trip_dtypes(tmp_path):
    rng = np.random.default_rng(41)
    for dtype in (np.float32, np.float64):
        for shape in ((), (5,), (2, 3), (3, 4, 4)):
            arr = rng.standard_normal(shape).astype(dtype)
            p = tmp_path / "a.evpt"
            write_evpt(p, arr)
            back = read_evpt(p)
            assert back.dtype == dtype
            assert back.shape == arr.shape
            np.testing.assert_array_equal(back, arr)


def test_evpt_deterministic_bytes():
    arr = np.arange(6, dtype=np.float32).reshape(2, 3)
    assert tensor_to_bytes(arr) == tensor_to_bytes(arr.copy())


def test_evpt_header_layout():
    blob = tensor_to_bytes(np.zeros((2, 3), dtype=np.float32))
    assert blob[:4] == b"EVPT"
    assert blob[4] == 1          # version
    assert blob[5] == 0          # f32 code
    assert blob[6] == 2          # rank
    assert len(blob) == 7 + 8 + 24


def test_evpt_writable_after_read(tmp_path):
    p = tmp_path / "w.evpt"
    write_evpt(p, np.ones((2, 2), dtype=np.float64))
    arr = read_evpt(p)
    arr[0, 0] = 5.0  # must not raise: reader returns an owned copy


def test_evpt_error_cases(tmp_path):
    good = tensor_to_bytes(np.ones((2, 2), dtype=np.float32))
    with pytest.raises(FormatError):
        tensor_from_bytes(b"NOPE" + good[4:])
    with pytest.raises(FormatError):
        tensor_from_bytes(good[:5])                 # truncated header
    with pytest.raises(FormatError):
        tensor_from_bytes(good[:-3])                # truncated payload
    bad_version = bytes([good[0], good[1], good[2], good[3], 9]) + good[5:]
    with pytest.raises(FormatError):
        tensor_from_bytes(bad_version)
    with pytest.raises(FormatError):
        tensor_to_bytes(np.ones((2, 2), dtype=np.int32))
    p = tmp_path / "trail.evpt"
    p.write_bytes(good + b"xx")
    with pytest.raises(FormatError):
        read_evpt(p)


def test_checkpoint_round_trip(tmp_path):
    rng = np.random.default_rng(42)
    named = {
        "backbone.stage0.block0.attn.wq": rng.standard_normal((8, 8)).astype(np.float32),
        "decoder.head.w": rng.standard_normal((4, 1)).astype(np.float64),
        "prompt.stage0.up.b": np.zeros(8, dtype=np.float32),
    }
    p = tmp_path / "m.evpc"
    write_checkpoint(p, named)
    back = read_checkpoint(p)
    assert set(back) == set(named)
    for k in named:
        np.testing.assert_array_equal(back[k], named[k])
        assert back[k].dtype == named[k].dtype


def test_checkpoint_error_cases():
    named = {"a": np.ones(2, dtype=np.float32)}
    blob = checkpoint_to_bytes(named)
    with pytest.raises(FormatError):
        checkpoint_from_bytes(b"EVPX" + blob[4:])
    with pytest.raises(FormatError):
        checkpoint_from_bytes(blob[:-2])
    with pytest.raises(FormatError):
        checkpoint_from_bytes(blob + b"junk")
    two = checkpoint_to_bytes({"a": np.ones(1, dtype=np.float32),
                               "b": np.ones(1, dtype=np.float32)})
    # splice record b's name to 'a' to build a duplicate
    dup = bytearray(two)
    idx = dup.find(b"b", 9)
    dup[idx] = ord("a")
    with pytest.raises(FormatError):
        checkpoint_from_bytes(bytes(dup))


def test_checksum_properties():
    a = {"x": np.ones((2, 2), dtype=np.float32), "y": np.zeros(3, dtype=np.float32)}
    b = {"y": np.zeros(3, dtype=np.float32), "x": np.ones((2, 2), dtype=np.float32)}
    assert state_checksum(a) == state_checksum(b)  # insertion order irrelevant
    c = {"x": np.ones((2, 2), dtype=np.float32), "y": np.zeros(3, dtype=np.float64)}
    assert state_checksum(a) != state_checksum(c)  # dtype is hashed
    d = {"x": np.ones((2, 2), dtype=np.float32), "y": np.full(3, 1e-9, dtype=np.float32)}
    assert state_checksum(a) != state_checksum(d)  # payload bits are hashed
    e = {"x": np.ones((4,), dtype=np.float32), "y": np.zeros(3, dtype=np.float32)}
    assert state_checksum(a) != state_checksum(e)  # shape is hashed


def test_pnm_gray_and_rgb(tmp_path):
    pgm = tmp_path / "g.pgm"
    pgm.write_bytes(b"P5\n# comment\n3 2\n255\n" + bytes([0, 128, 255, 10, 20, 30]))
    g = read_pnm(pgm)
    assert g.shape == (2, 3)
    assert g.dtype == np.float32
    assert g[0, 2] == 1.0 and g[0, 0] == 0.0

    ppm = tmp_path / "c.ppm"
    ppm.write_bytes(b"P6\n2 1\n255\n" + bytes([255, 0, 0, 0, 0, 255]))
    c = read_pnm(ppm)
    assert c.shape == (3, 1, 2)
    assert c[0, 0, 0] == 1.0 and c[2, 0, 1] == 1.0


def test_pnm_error_cases(tmp_path):
    p = tmp_path / "bad.pgm"
    p.write_bytes(b"P4\n2 2\n255\n" + bytes(4))
    with pytest.raises(FormatError):
        read_pnm(p)
    p.write_bytes(b"P5\n2 2\n65535\n" + bytes(8))
    with pytest.raises(FormatError):
        read_pnm(p)
    p.write_bytes(b"P5\n2 2\n255\n" + bytes(3))
    with pytest.raises(FormatError):
        read_pnm(p)
