import numpy as np
import pytest

from micromotion.net3d import init_from_1d
from micromotion.netio import load_network, save_network
from micromotion.nn1d import Network1D, build_network1d
from micromotion.tensor_io import BadMagicError, FormatError, TruncatedFileError


def test_network1d_round_trip_bit_exact(tmp_path):
    net = build_network1d(3)
    path = tmp_path / "net.mmn"
    save_network(net, path)
    back = load_network(path)
    assert isinstance(back, Network1D)
    assert back.dtype == net.dtype
    for a, b in zip(net.layers, back.layers):
        assert a.weights.tobytes() == b.weights.tobytes()
        assert a.bias.tobytes() == b.bias.tobytes()
        assert (a.dilation, a.activation) == (b.dilation, b.activation)


def test_network3d_round_trip_bit_exact(tmp_path, rng):
    net = init_from_1d(build_network1d(1, dtype=np.float64), 4, 3)
    net.dense_weights[...] = rng.standard_normal((4, 3, 3))
    path = tmp_path / "net3.mmn"
    save_network(net, path)
    back = load_network(path)
    assert back.dense_weights.tobytes() == net.dense_weights.tobytes()
    assert back.dense_bias.tobytes() == net.dense_bias.tobytes()
    assert back.dropout_p == net.dropout_p
    assert back.dtype == np.float64


def test_save_load_save_is_stable(tmp_path):
    net = build_network1d(5)
    a = tmp_path / "a.mmn"
    b = tmp_path / "b.mmn"
    save_network(net, a)
    save_network(load_network(a), b)
    assert a.read_bytes() == b.read_bytes()


def test_bad_magic(tmp_path):
    path = tmp_path / "x.mmn"
    path.write_bytes(b"NOPE" + bytes(32))
    with pytest.raises(BadMagicError):
        load_network(path)


def test_truncated(tmp_path):
    net = build_network1d(0)
    path = tmp_path / "t.mmn"
    save_network(net, path)
    path.write_bytes(path.read_bytes()[:-10])
    with pytest.raises(TruncatedFileError):
        load_network(path)


def test_trailing_bytes(tmp_path):
    net = build_network1d(0)
    path = tmp_path / "t.mmn"
    save_network(net, path)
    path.write_bytes(path.read_bytes() + b"xx")
    with pytest.raises(FormatError):
        load_network(path)
