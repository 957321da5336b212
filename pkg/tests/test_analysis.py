import numpy as np
import pytest

from sfnn import Architecture, RngStream, TaskSplit, forward_sample, init_params
from sfnn.analysis import (
    build_sample_grid,
    draw_samples,
    load_pgm,
    pairwise_distances,
    particle_curve,
    scan_centering,
    write_pgm,
)
from sfnn.estimators import responsibilities
from sfnn.mathutils import log_sum_exp

from conftest import scaled_params


def make_net(sizes, kind, variant="stochastic", seed=5, scale=2.0, **kw):
    arch = Architecture(sizes, kind, variant, **kw)
    return arch, scaled_params(arch, RngStream(seed), scale)


@pytest.fixture
def small_split():
    rng = RngStream(2)
    x = (rng.substream("x").uniform((12, 6)) < 0.5).astype(float)
    y = (rng.substream("y").uniform((12, 6)) < 0.5).astype(float)
    return TaskSplit(x, y)


def test_particle_curve_matches_prefix_recomputation(small_split):
    arch, params = make_net((6, 5, 6), "bernoulli")
    m_values = (1, 2, 4, 8)
    curve = particle_curve(params, arch, small_split, m_values, RngStream(9))
    assert tuple(curve.m_values) == m_values
    assert curve.per_example.shape == (12, 4)
    assert curve.mean.shape == (4,)

    # independent recomputation: one forward pass at max M with the same
    # per-example evaluation streams, prefix log-mean-exp by hand
    root = RngStream(9)
    streams = [root.substream(i) for i in range(12)]
    trace = forward_sample(params, arch, small_split.inputs, 8, streams,
                           y=small_split.targets, phase="test")
    for j, m in enumerate(m_values):
        expect = log_sum_exp(trace.log_py[:, :m], axis=1) - np.log(m)
        np.testing.assert_allclose(curve.per_example[:, j], expect, rtol=1e-12)


def test_particle_curve_mean_is_nondecreasing_in_expectation(small_split):
    arch, params = make_net((6, 5, 6), "bernoulli")
    curve = particle_curve(params, arch, small_split, (1, 4, 16, 64),
                           RngStream(3))
    se = curve.se
    diffs = np.diff(curve.mean)
    assert (diffs >= -2 * (se[1:] + se[:-1])).all()


def test_particle_curve_flat_for_deterministic_nets(small_split):
    arch, params = make_net((6, 5, 6), "bernoulli", "deterministic")
    curve = particle_curve(params, arch, small_split, (1, 5, 25), RngStream(3))
    np.testing.assert_array_equal(curve.per_example[:, 0],
                                  curve.per_example[:, 1])
    np.testing.assert_array_equal(curve.mean, np.full(3, curve.mean[0]))


def test_particle_curve_respects_max_examples(small_split):
    arch, params = make_net((6, 5, 6), "bernoulli")
    curve = particle_curve(params, arch, small_split, (1, 2), RngStream(3),
                           max_examples=5)
    assert curve.per_example.shape == (5, 2)


def test_scan_centering_matches_direct_norms(small_split):
    arch, params = make_net((6, 5, 6), "bernoulli")
    m = 4
    cm_values = (0.0, 1.0, 2.0)
    rows = scan_centering(params, arch, small_split, m, cm_values,
                          RngStream(5), n_examples=6)
    assert [r["cm"] for r in rows] == list(cm_values)

    # direct recomputation of E ||dW1||_F: the layer-1 weight gradient for
    # one example is (sum_m coeff_m eps_m) outer x, whose Frobenius norm
    # factorizes into vector norms
    root = RngStream(5)
    streams = [root.substream("scan", i) for i in range(6)]
    trace = forward_sample(params, arch, small_split.inputs[:6], m, streams,
                           y=small_split.targets[:6], phase="test")
    w = responsibilities(trace)
    eps = trace.act[0] - trace.prob[0]
    for row in rows:
        coeff = w - row["cm"] / m
        s = np.einsum("bm,bmn->bn", coeff, eps)
        norms = np.linalg.norm(s, axis=1) * np.linalg.norm(
            small_split.inputs[:6], axis=1)
        np.testing.assert_allclose(row["mean_norm"], norms.mean(), rtol=1e-10)
        np.testing.assert_allclose(
            row["se"], norms.std(ddof=1) / np.sqrt(len(norms)), rtol=1e-10)


def test_scan_centering_rejects_unsupported_setups(small_split):
    det_arch, det_params = make_net((6, 5, 6), "bernoulli", "deterministic")
    with pytest.raises(ValueError):
        scan_centering(det_params, det_arch, small_split, 4, (1.0,),
                       RngStream(0))
    hyb_arch, hyb_params = make_net((6, 6, 6), "bernoulli", "hybrid",
                                    hybrid_split=((3, 3),))
    with pytest.raises(ValueError):
        scan_centering(hyb_params, hyb_arch, small_split, 4, (1.0,),
                       RngStream(0))
    arch, params = make_net((6, 5, 6), "bernoulli")
    with pytest.raises(ValueError):
        scan_centering(params, arch, small_split, 1, (1.0,), RngStream(0))


def test_pairwise_distances_hand_case():
    samples = np.array([[0.0, 0.0], [3.0, 4.0], [0.0, 0.0]])
    d = pairwise_distances(samples)
    np.testing.assert_allclose(sorted(d), [0.0, 5.0, 5.0])


def test_draw_samples_shapes_and_determinism(small_split):
    arch, params = make_net((6, 5, 6), "bernoulli")
    x = small_split.inputs[0]
    a = draw_samples(params, arch, x, 5, RngStream(4))
    b = draw_samples(params, arch, x, 5, RngStream(4))
    assert a.shape == (5, 6)
    np.testing.assert_array_equal(a, b)
    assert ((a >= 0) & (a <= 1)).all()


def test_draw_samples_deterministic_net_collapses(small_split):
    arch, params = make_net((6, 5, 6), "bernoulli", "deterministic")
    s = draw_samples(params, arch, small_split.inputs[0], 4, RngStream(4))
    assert np.ptp(s, axis=0).max() == 0.0
    assert pairwise_distances(s).mean() == 0.0


def test_sample_grid_layout(tmp_path, small_split):
    # 6-wide rows: tiny 2x3 "images" whose top half is the input row
    rng = RngStream(2)
    x = (rng.substream("x").uniform((4, 3)) < 0.5).astype(float)
    y = (rng.substream("y").uniform((4, 3)) < 0.5).astype(float)
    split = TaskSplit(x, y)
    arch, params = make_net((3, 4, 3), "bernoulli")
    grid, samples = build_sample_grid(params, arch, split, indices=(0, 2),
                                      n_samples=3, rng=RngStream(1),
                                      height=2, width=3, gap=1)
    assert samples.shape == (2, 3, 3)
    cells_per_row = 2 + 3
    assert grid.shape == (2 * 2 + 3 * 1, cells_per_row * 3 + 6 * 1)
    assert grid.dtype == np.uint8

    path = tmp_path / "grid.pgm"
    write_pgm(path, grid)
    back = load_pgm(path)
    np.testing.assert_array_equal(back, grid)
    assert path.read_bytes().startswith(b"P2")


def test_pgm_roundtrip_gradient_image(tmp_path):
    img = np.arange(255, dtype=np.uint8).reshape(15, 17)
    path = tmp_path / "img.pgm"
    write_pgm(path, img)
    np.testing.assert_array_equal(load_pgm(path), img)
