import struct

import numpy as np
import pytest

from ipsr.srnet import (
    NetworkSpec,
    Node,
    QuantizedNetwork,
    WeightFileError,
    build_network,
    calibrate_and_quantize,
    init_weights,
    load_model,
    load_weights,
    save_weights,
)
from ipsr.srnet.io import decode_weights, encode_weights


@pytest.fixture
def model(rng):
    spec = build_network(4, 2, 3, anchor=True)
    w = init_weights(spec, seed=3)
    q = calibrate_and_quantize(spec, w, [rng.random((3, 8, 8)) for _ in range(3)])
    return spec, w, q


def test_float_round_trip(tmp_path, model):
    spec, w, _ = model
    save_weights(tmp_path / "a.ipsr", spec, w)
    spec2, w2, q2 = load_model(tmp_path / "a.ipsr")
    assert q2 is None and spec2.arch == spec.arch
    for k in w:
        np.testing.assert_array_equal(w2[k][0], w[k][0])
    save_weights(tmp_path / "b.ipsr", spec2, w2)
    assert (tmp_path / "a.ipsr").read_bytes() == (tmp_path / "b.ipsr").read_bytes()


def test_quantized_round_trip(tmp_path, model, rng):
    spec, w, q = model
    save_weights(tmp_path / "q.ipsr", spec, w, q)
    spec2, w2, q2 = load_model(tmp_path / "q.ipsr")
    assert isinstance(q2, QuantizedNetwork)
    assert q2.act == q.act
    x = rng.random((1, 3, 7, 9))
    np.testing.assert_array_equal(q2.run_quantized(x), q.run_quantized(x))
    assert encode_weights(spec2, w2, q2) == (tmp_path / "q.ipsr").read_bytes()
    assert isinstance(load_weights(tmp_path / "q.ipsr"), QuantizedNetwork)


def test_header_flag_and_layout(model):
    spec, w, q = model
    f, qf = encode_weights(spec, w), encode_weights(spec, w, q)
    assert f[:4] == b"IPSR" and qf[:4] == b"IPSR"
    assert struct.unpack("<HH", f[4:8]) == (1, 0)
    assert struct.unpack("<HH", qf[4:8]) == (1, 1)
    assert struct.unpack("<HHHB", f[8:15]) == (4, 2, 3, 1)
    assert len(f) == 15 + 4 * spec.parameter_count()
    assert qf[: len(f)][8:] == f[8:]


def test_every_truncation_is_rejected(model):
    spec, w, q = model
    data = encode_weights(spec, w, q)
    for n in list(range(0, 40)) + list(range(len(data) - 30, len(data))):
        with pytest.raises(WeightFileError):
            decode_weights(data[:n])
    with pytest.raises(WeightFileError):
        decode_weights(data + b"\0")


def test_bad_header_fields(model):
    spec, w, _ = model
    data = bytearray(encode_weights(spec, w))
    for off, val, msg in [(0, b"IPSX", "magic"), (4, struct.pack("<H", 2), "version"),
                          (6, struct.pack("<H", 4), "flags"), (8, struct.pack("<H", 0), "architecture")]:
        bad = bytearray(data)
        bad[off : off + len(val)] = val
        with pytest.raises(WeightFileError, match=msg):
            decode_weights(bytes(bad))


def test_architecture_mismatch(tmp_path, model):
    spec, w, _ = model
    save_weights(tmp_path / "a.ipsr", spec, w)
    with pytest.raises(WeightFileError, match="does not match"):
        load_model(tmp_path / "a.ipsr", build_network(4, 2, 3, anchor=False))
    load_model(tmp_path / "a.ipsr", build_network(4, 2, 3, anchor=True))


def test_corrupt_values(model):
    spec, w, q = model
    data = bytearray(encode_weights(spec, w))
    data[15:19] = np.float32(np.nan).tobytes()
    with pytest.raises(WeightFileError, match="non-finite"):
        decode_weights(bytes(data))
    qdata = bytearray(encode_weights(spec, w, q))
    start = len(encode_weights(spec, w))
    qdata[start : start + 4] = np.float32(0.5).tobytes()  # inconsistent head weight scale
    with pytest.raises(WeightFileError, match="disagree"):
        decode_weights(bytes(qdata))


def test_custom_graphs_cannot_be_saved(tmp_path):
    spec = NetworkSpec([Node("c", "conv2d", ("input",), {"c_in": 3, "c_out": 3, "k": 1})])
    with pytest.raises(WeightFileError):
        save_weights(tmp_path / "x", spec, init_weights(spec))
