import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from metareg import io as mio
from metareg.core import InvariantError
from metareg.optim import RegConfig, register


def test_scalar_zeros_bytes(tmp_path):
    p = tmp_path / "z.mrf"
    mio.write_raster(p, np.zeros((2, 2)))
    data = p.read_bytes()
    assert len(data) == 14 + 16
    assert data[:4] == b"MRF1"
    assert data[4:14] == bytes([0, 1, 2, 0, 0, 0, 2, 0, 0, 0])
    assert data[14:] == bytes(16)


def test_mask_bytes(tmp_path):
    p = tmp_path / "m.mrf"
    mio.write_raster(p, np.array([[1, 0], [0, 1]], bool))
    data = p.read_bytes()
    assert data[4] == 1 and data[5] == 1
    assert data[14:] == b"\x01\x00\x00\x01"
    np.testing.assert_array_equal(mio.read_raster(p), [[True, False], [False, True]])


def test_vector_interleaving():
    v = np.zeros((2, 1, 2))
    v[0] = [[1.0, 3.0]]
    v[1] = [[2.0, 4.0]]
    payload = mio.encode_raster(v)[14:]
    np.testing.assert_array_equal(np.frombuffer(payload, "<f4"), [1, 2, 3, 4])
    np.testing.assert_array_equal(mio.decode_raster(mio.encode_raster(v)), v)


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 5), st.integers(1, 5)), elements=st.floats(-1e6, 1e6)))
def test_scalar_round_trip_within_float32(a):
    back = mio.decode_raster(mio.encode_raster(a))
    np.testing.assert_array_equal(back, a.astype(np.float32).astype(np.float64))


@settings(max_examples=30, deadline=None)
@given(arrays(bool, st.tuples(st.integers(1, 5), st.integers(1, 5))))
def test_mask_round_trip_exact(m):
    np.testing.assert_array_equal(mio.decode_raster(mio.encode_raster(m)), m)


def test_bad_inputs(tmp_path):
    good = mio.encode_raster(np.zeros((2, 2)))
    with pytest.raises(mio.FormatError):
        mio.decode_raster(b"XXXX" + good[4:])
    with pytest.raises(mio.FormatError):
        mio.decode_raster(good[:-1])
    with pytest.raises(mio.FormatError):
        mio.decode_raster(good[:10])
    bad_mask = mio.encode_raster(np.zeros((1, 2), bool))[:-1] + b"\x02"
    with pytest.raises(InvariantError):
        mio.decode_raster(bad_mask)
    with pytest.raises(mio.RasterIOError):
        mio.read_raster(tmp_path / "missing.mrf")


def test_pgm_quantization(tmp_path):
    p = tmp_path / "a.pgm"
    mio.write_pgm(p, np.full((2, 3), 0.5))
    data = p.read_bytes()
    assert data.startswith(b"P5\n3 2\n255\n")
    assert data[-6:] == bytes([128] * 6)
    np.testing.assert_array_equal(mio.read_pgm(p), 128 / 255)
    mio.write_pgm(p, np.zeros((2, 2)))
    assert not mio.read_pgm(p).any()


def test_pgm_rejects_ascii_and_16bit(tmp_path):
    p = tmp_path / "a.pgm"
    p.write_bytes(b"P2\n2 1\n255\n0 1\n")
    with pytest.raises(mio.FormatError):
        mio.read_pgm(p)
    p.write_bytes(b"P5\n1 1\n65535\n\x00\x00")
    with pytest.raises(mio.FormatError):
        mio.read_pgm(p)


def test_pgm_header_comment(tmp_path):
    p = tmp_path / "c.pgm"
    p.write_bytes(b"P5\n# made by hand\n2 1\n255\n\x00\xff")
    np.testing.assert_array_equal(mio.read_pgm(p), [[0.0, 1.0]])


def test_report_schema(tmp_path):
    img = np.random.default_rng(0).random((6, 6))
    cfg = RegConfig(max_iters=5)
    res = register(img, img, np.zeros((6, 6), bool), cfg)
    rep = mio.write_report(tmp_path / "r.json", cfg, res, files={"phi": "phi.mrf"})
    loaded = json.loads((tmp_path / "r.json").read_text())
    assert loaded == rep
    assert {"mode", "lambdas", "ssd_total", "ssd_healthy", "foldings", "runtime_ms"} <= set(loaded)
    assert loaded["lambdas"] == [1.0, 1.0, 0.001]
    assert loaded["ssd_total"] <= 1e-10
    assert "dice" not in loaded
    assert list(loaded) == [k for k in mio.REPORT_KEYS if k in loaded]


def test_report_diffeo_without_mask(tmp_path):
    img = np.random.default_rng(0).random((6, 6))
    cfg = RegConfig(mode="diffeo", max_iters=3)
    rep = mio.build_report(cfg, register(img, img, None, cfg))
    assert rep["mode"] == "diffeo" and "dice" not in rep
