import numpy as np
import pytest

from sfnn import Architecture, RngStream, init_params
from sfnn.network import (
    CheckpointFormatError,
    check_shapes,
    copy_params,
    load_checkpoint,
    save_checkpoint,
    zero_params,
    zeros_like_params,
)


def test_layer_size_validation():
    with pytest.raises(ValueError):
        Architecture((5, 3), "softmax")
    with pytest.raises(ValueError):
        Architecture((5, 0, 2), "softmax")
    with pytest.raises(ValueError):
        Architecture((5, 3, 2), "nonsense")
    with pytest.raises(ValueError):
        Architecture((5, 3, 2), "softmax", "nonsense")


def test_hybrid_split_validation():
    with pytest.raises(ValueError):
        Architecture((5, 4, 2), "softmax", "hybrid")  # missing split
    with pytest.raises(ValueError):
        Architecture((5, 4, 2), "softmax", "hybrid", hybrid_split=((2, 3),))
    with pytest.raises(ValueError):
        Architecture((5, 4, 4, 2), "softmax", "hybrid", hybrid_split=((2, 2),))
    with pytest.raises(ValueError):
        Architecture((5, 4, 2), "softmax", "stochastic", hybrid_split=((2, 2),))
    with pytest.raises(ValueError):
        Architecture((5, 4, 2), "softmax", "stochastic", output_reads_stochastic=True)


def test_shape_properties():
    arch = Architecture((7, 5, 4, 3), "bernoulli")
    assert arch.d_in == 7 and arch.d_out == 3
    assert arch.n_hidden == 2 and arch.hidden_sizes == (5, 4)
    assert arch.stochastic_unit_count() == 9
    assert arch.feed_dim(1) == 7 and arch.feed_dim(2) == 5
    assert arch.top_feature_dim() == 4


def test_hybrid_layout_packs_within_layer_weights():
    arch = Architecture((6, 5, 5, 4), "bernoulli", "hybrid",
                        hybrid_split=((2, 3), (2, 3)))
    layout = dict((w, (r, c)) for w, _, r, c in arch.param_layout())
    assert layout["Ws1"] == (2, 6)
    assert layout["Wd1"] == (3, 6 + 2)       # trailing cols read the s units
    assert layout["Ws2"] == (2, 3)           # layer 2 reads only d units below
    assert layout["Wd2"] == (3, 3 + 2)
    assert layout["V"] == (4, 3)
    assert arch.stochastic_unit_count() == 4


def test_hybrid_fixed_has_no_stochastic_params():
    arch = Architecture((6, 5, 4), "bernoulli", "hybrid-fixed",
                        hybrid_split=((2, 3),))
    names = [w for w, _, _, _ in arch.param_layout()]
    assert names == ["Wd1", "V"]


def test_output_reads_stochastic_widens_v():
    arch = Architecture((6, 5, 4), "bernoulli", "hybrid",
                        hybrid_split=((2, 3),), output_reads_stochastic=True)
    layout = dict((w, (r, c)) for w, _, r, c in arch.param_layout())
    assert layout["V"] == (4, 5)
    assert arch.top_feature_dim() == 5


def test_init_params_shapes_and_determinism():
    arch = Architecture((7, 5, 4, 3), "softmax")
    a = init_params(arch, RngStream(3))
    b = init_params(arch, RngStream(3))
    c = init_params(arch, RngStream(4))
    for w_name, b_name, rows, cols in arch.param_layout():
        assert a[w_name].shape == (rows, cols)
        assert a[b_name].shape == (rows,)
        assert not a[b_name].any()  # biases start at zero
        bound = np.sqrt(6.0 / (rows + cols))
        assert np.abs(a[w_name]).max() <= bound
        assert np.array_equal(a[w_name], b[w_name])
        assert not np.array_equal(a[w_name], c[w_name])
    check_shapes(arch, a)


def test_zero_params_and_copies():
    arch = Architecture((4, 3, 2), "softmax")
    z = zero_params(arch)
    assert all(not v.any() for v in z.values())
    p = init_params(arch, RngStream(0))
    q = copy_params(p)
    q["W1"][0, 0] += 1.0
    assert p["W1"][0, 0] != q["W1"][0, 0]
    g = zeros_like_params(p)
    assert set(g) == set(p) and all(not v.any() for v in g.values())


def test_check_shapes_rejects_mismatch():
    arch = Architecture((4, 3, 2), "softmax")
    p = init_params(arch, RngStream(0))
    p["W1"] = p["W1"][:, :-1]
    with pytest.raises(ValueError):
        check_shapes(arch, p)


@pytest.mark.parametrize("arch", [
    Architecture((5, 4, 3), "softmax"),
    Architecture((5, 4, 4, 6), "gaussian", "det-stochastic-eval"),
    Architecture((5, 6, 3), "bernoulli", "hybrid", hybrid_split=((2, 4),)),
    Architecture((5, 6, 3), "bernoulli", "hybrid-fixed", hybrid_split=((3, 3),)),
])
def test_checkpoint_roundtrip_is_exact(tmp_path, arch):
    params = init_params(arch, RngStream(12))
    path = tmp_path / "net.ckpt"
    save_checkpoint(path, arch, params)
    arch2, params2 = load_checkpoint(path)
    assert arch2 == arch
    assert set(params2) == set(params)
    for k in params:
        assert np.array_equal(params[k], params2[k])


def test_checkpoint_bad_magic(tmp_path):
    path = tmp_path / "net.ckpt"
    arch = Architecture((4, 3, 2), "softmax")
    save_checkpoint(path, arch, init_params(arch, RngStream(0)))
    raw = bytearray(path.read_bytes())
    raw[:4] = b"JUNK"
    path.write_bytes(bytes(raw))
    with pytest.raises(CheckpointFormatError):
        load_checkpoint(path)


def test_checkpoint_bad_version(tmp_path):
    path = tmp_path / "net.ckpt"
    arch = Architecture((4, 3, 2), "softmax")
    save_checkpoint(path, arch, init_params(arch, RngStream(0)))
    raw = bytearray(path.read_bytes())
    raw[4] = 99
    path.write_bytes(bytes(raw))
    with pytest.raises(CheckpointFormatError):
        load_checkpoint(path)


def test_checkpoint_truncation(tmp_path):
    path = tmp_path / "net.ckpt"
    arch = Architecture((4, 3, 2), "softmax")
    save_checkpoint(path, arch, init_params(arch, RngStream(0)))
    raw = path.read_bytes()
    path.write_bytes(raw[: len(raw) - 7])
    with pytest.raises(CheckpointFormatError):
        load_checkpoint(path)


def test_checkpoint_trailing_bytes(tmp_path):
    path = tmp_path / "net.ckpt"
    arch = Architecture((4, 3, 2), "softmax")
    save_checkpoint(path, arch, init_params(arch, RngStream(0)))
    path.write_bytes(path.read_bytes() + b"\x00\x01")
    with pytest.raises(CheckpointFormatError):
        load_checkpoint(path)


def test_arch_json_roundtrip():
    arch = Architecture((5, 6, 3), "bernoulli", "hybrid",
                        hybrid_split=((2, 4),), output_reads_stochastic=True)
    assert Architecture.from_json_dict(arch.to_json_dict()) == arch
