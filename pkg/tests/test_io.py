import struct
import time

import numpy as np
import pytest

from tawsvd import io
from tawsvd.baselines import vanilla_svd_compress
from tawsvd.errors import FormatError
from tawsvd.model import generate_toy_model


def test_round_trip_bit_exact(tmp_path, rng):
    m = rng.standard_normal((5, 7))
    io.write_tensor(tmp_path / "a.lrt", m)
    back = io.read_tensor(tmp_path / "a.lrt")
    assert back.dtype == np.float64 and back.shape == (5, 7)
    assert back.tobytes() == m.tobytes()


def test_header_layout(rng):
    buf = io.encode_tensor(np.arange(6.0).reshape(2, 3))
    assert buf[:4] == b"LRT1" and buf[4] == 1
    assert struct.unpack("<QQ", buf[5:21]) == (2, 3)
    assert struct.unpack("<d", buf[21 + 8:21 + 16])[0] == 1.0
    assert len(buf) == 21 + 6 * 8


def test_special_values_survive(tmp_path):
    m = np.array([[0.0, -0.0, 1e-300], [np.inf, -np.inf, 5e-324]])
    io.write_tensor(tmp_path / "s.lrt", m)
    assert io.read_tensor(tmp_path / "s.lrt").tobytes() == m.tobytes()


@pytest.mark.parametrize("cut", [0, 3, 20, 21, 50])
def test_truncated_file(tmp_path, rng, cut):
    buf = io.encode_tensor(rng.standard_normal((3, 3)))
    (tmp_path / "t.lrt").write_bytes(buf[:cut])
    with pytest.raises(FormatError) as info:
        io.read_tensor(tmp_path / "t.lrt")
    assert info.value.offset is not None


def test_bad_magic_and_version(rng):
    buf = bytearray(io.encode_tensor(rng.standard_normal((2, 2))))
    with pytest.raises(FormatError, match="magic"):
        io.decode_tensor(b"XXXX" + bytes(buf[4:]))
    buf[4] = 9
    with pytest.raises(FormatError, match="version"):
        io.decode_tensor(bytes(buf))


def test_big_round_trip_is_fast(tmp_path, rng):
    m = rng.standard_normal((1024, 1024))
    t0 = time.perf_counter()
    io.write_tensor(tmp_path / "big.lrt", m)
    back = io.read_tensor(tmp_path / "big.lrt")
    elapsed = time.perf_counter() - t0
    assert back.tobytes() == m.tobytes()
    assert elapsed < 1.0


def test_model_round_trip(tmp_path, rng):
    model = generate_toy_model(3, [6, 5, 4, 3], "tanh", seed=9)
    model = model.with_layer(1, vanilla_svd_compress(model.layers[1].weight, 2))
    io.save_model(model, tmp_path / "m")
    back = io.load_model(tmp_path / "m")
    assert back.names == model.names and back.activation == model.activation
    x = rng.standard_normal((6, 4))
    assert back.forward(x).tobytes() == model.forward(x).tobytes()
    manifest = io.read_manifest(tmp_path / "m")
    assert [e["kind"] for e in manifest["layers"]] == ["dense", "factored", "dense"]
    assert manifest["layers"][1]["rank"] == 2


def test_manifest_shape_mismatch(tmp_path, rng):
    model = generate_toy_model(1, [3, 2], seed=0)
    io.save_model(model, tmp_path)
    io.write_tensor(tmp_path / "layer0.weight.lrt", rng.standard_normal((2, 4)))
    with pytest.raises(FormatError, match="manifest says"):
        io.load_model(tmp_path)


def test_bad_manifest(tmp_path):
    (tmp_path / "manifest.json").write_text("{not json")
    with pytest.raises(FormatError):
        io.load_model(tmp_path)


def test_atomic_write_leaves_no_temp(tmp_path, rng):
    io.write_tensor(tmp_path / "x.lrt", rng.standard_normal((2, 2)))
    assert [p.name for p in tmp_path.iterdir()] == ["x.lrt"]
