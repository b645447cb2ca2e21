import os
import subprocess
import sys

import numpy as np
import pytest

from gaussholo.oracles import brute_rasterize
from gaussholo.params import GaussianSet, activate_opacity, inverse_activate_position
from gaussholo.raster import build_tile_index, cull_extent, rasterize_backward, rasterize_forward

from _helpers import fd_check, random_gaussians


def single(x, y, w, h, pre_scale=(0.0, 0.0), amp=1.0, phase=0.0, pre_opacity=0.0, rotation=0.0):
    return GaussianSet(
        pre_position=inverse_activate_position(np.array([[x, y]]), w, h),
        pre_scale=np.array([pre_scale]),
        rotation=np.array([rotation]),
        amplitude=np.array([[amp]]),
        phase=np.array([[phase]]),
        pre_opacity=np.array([pre_opacity]),
    )


def test_empty_set_renders_zero():
    f = rasterize_forward(GaussianSet.empty(3), 20, 10)
    assert f.shape == (3, 10, 20)
    assert not f.real.any() and not f.imag.any()


def test_zero_size_image_is_an_error():
    rng = np.random.default_rng(0)
    with pytest.raises(ValueError):
        rasterize_forward(random_gaussians(rng, 2, 1), 0, 8)


def test_center_pixel_value():
    gs = single(10.0, 7.0, 32, 32, pre_opacity=0.3)
    f = rasterize_forward(gs, 32, 32)
    alpha = activate_opacity(0.3)
    assert f.real[0, 7, 10] == pytest.approx(min(0.99, alpha), abs=1e-12)
    assert abs(f.imag[0, 7, 10]) < 1e-15


def test_center_value_saturates():
    f = rasterize_forward(single(5.0, 5.0, 16, 16, pre_opacity=8.0), 16, 16)
    assert f.real[0, 5, 5] == pytest.approx(0.99, abs=1e-12)


def test_tile_index_single_tile():
    gs = single(8.0, 8.0, 64, 64, pre_scale=(-2.0, -2.0))
    idx = build_tile_index(gs, 64, 64)
    assert idx.num_pairs == 1
    assert idx.tile_ids[0] == 0


def test_tile_index_four_tiles():
    gs = single(16.0, 16.0, 64, 64, pre_scale=(-2.0, -2.0))
    idx = build_tile_index(gs, 64, 64)
    assert idx.num_pairs == 4
    np.testing.assert_array_equal(idx.tile_ids, [0, 1, 4, 5])


def test_tile_index_ranges_partition_pairs():
    rng = np.random.default_rng(3)
    gs = random_gaussians(rng, 40, 1)
    idx = build_tile_index(gs, 70, 50)
    assert idx.ranges.shape == (idx.tiles_x * idx.tiles_y, 2)
    assert idx.ranges[0, 0] == 0 and idx.ranges[-1, 1] == idx.num_pairs
    np.testing.assert_array_equal(idx.ranges[1:, 0], idx.ranges[:-1, 1])
    for t, (a, b) in enumerate(idx.ranges):
        assert np.all(idx.tile_ids[a:b] == t)
        ids = idx.gauss_ids[a:b]
        assert np.all(np.diff(ids) > 0)  # each gaussian at most once, ascending


def test_cull_extent_covers_three_sigma():
    cov = np.array([[4.0, 0.0, 9.0]])
    ext = cull_extent(cov, np.array([0.2]))
    assert np.all(ext[0] >= 3.0 * np.sqrt([4.0, 9.0]))
    assert np.all(cull_extent(cov, np.array([0.5 / 255.0])) < 0)


@pytest.mark.parametrize("seed", range(6))
def test_forward_matches_oracle(seed):
    rng = np.random.default_rng(100 + seed)
    c = 1 if seed % 2 else 3
    gs = random_gaussians(rng, 8, c, max_logit=6.0)
    f = rasterize_forward(gs, 32, 32)
    ref = brute_rasterize(gs.arrays(), 32, 32)
    assert np.abs(f.to_complex() - ref).max() <= 1e-6


def test_forward_off_canvas_gaussians():
    rng = np.random.default_rng(7)
    gs = random_gaussians(rng, 10, 1)
    gs.pre_position[:] = rng.choice([-4.0, 4.0], size=(10, 2))
    ref = brute_rasterize(gs.arrays(), 24, 20)
    np.testing.assert_allclose(rasterize_forward(gs, 24, 20).to_complex(), ref, atol=1e-6)


def test_linearity():
    rng = np.random.default_rng(11)
    a, b = random_gaussians(rng, 6, 3), random_gaussians(rng, 5, 3)
    both = rasterize_forward(GaussianSet.concat(a, b), 40, 33).to_complex()
    split = rasterize_forward(a, 40, 33).to_complex() + rasterize_forward(b, 40, 33).to_complex()
    assert np.abs(both - split).max() <= 1e-6


def test_phase_equivariance():
    rng = np.random.default_rng(12)
    gs = random_gaussians(rng, 9, 3)
    base = rasterize_forward(gs, 30, 30).to_complex()
    shifted = gs.copy()
    shifted.phase += 0.7
    rot = rasterize_forward(shifted, 30, 30).to_complex() * np.exp(-0.7j)
    assert np.abs(rot - base).max() <= 1e-6


def test_forward_is_bit_deterministic():
    rng = np.random.default_rng(13)
    gs = random_gaussians(rng, 30, 3)
    a = rasterize_forward(gs, 64, 48)
    b = rasterize_forward(gs, 64, 48)
    assert np.array_equal(a.real, b.real) and np.array_equal(a.imag, b.imag)
    ga = rasterize_backward(gs, a.real, a.imag).as_dict()
    gb = rasterize_backward(gs, a.real, a.imag).as_dict()
    for k in ga:
        assert np.array_equal(ga[k], gb[k])


def test_zero_upstream_gives_zero_gradients():
    rng = np.random.default_rng(14)
    gs = random_gaussians(rng, 5, 3)
    z = np.zeros((3, 20, 20))
    for g in rasterize_backward(gs, z, z).as_dict().values():
        assert not g.any()


def test_phase_gradient_example():
    gs = single(9.0, 9.0, 20, 20, pre_scale=(0.5, 0.2), amp=0.8, pre_opacity=0.5)
    gi = np.random.default_rng(15).normal(size=(1, 20, 20))
    grads = rasterize_backward(gs, np.zeros_like(gi), gi)
    f = rasterize_forward(gs, 20, 20)
    # at phi = 0 the field is c * alpha_eff, so sum(c * alpha_eff * g_im) is sum(field * g_im)
    assert grads.phase[0, 0] == pytest.approx(float((f.real * gi).sum()), rel=1e-12)


def test_backward_shape_mismatch():
    rng = np.random.default_rng(16)
    gs = random_gaussians(rng, 3, 3)
    with pytest.raises(ValueError):
        rasterize_backward(gs, np.zeros((1, 8, 8)), np.zeros((1, 8, 8)))


def test_saturated_gaussian_has_no_opacity_gradient():
    gs = single(8.0, 8.0, 16, 16, pre_scale=(3.0, 3.0), pre_opacity=9.0)
    ones = np.zeros((1, 16, 16))
    ones[0, 7:10, 7:10] = 1.0  # only pixels where alpha * G >= 0.99
    g = rasterize_backward(gs, ones, ones)
    assert g.pre_opacity[0] == 0.0
    assert np.all(g.pre_scale == 0.0) and g.rotation[0] == 0.0
    assert g.amplitude[0, 0] > 0


def test_amplitude_gradient_zero_outside_clamp():
    gs = single(8.0, 8.0, 16, 16, amp=1.3)
    ones = np.ones((1, 16, 16))
    assert rasterize_backward(gs, ones, ones).amplitude[0, 0] == 0.0


@pytest.mark.parametrize("channels", [1, 3])
def test_gradients_match_finite_differences(channels):
    rng = np.random.default_rng(20 + channels)
    gs = random_gaussians(rng, 4, channels)
    worst, checked = fd_check(gs, 24, 24, rng)
    assert checked >= 0.8 * gs.num_scalars
    assert worst <= 1e-4


def test_thread_count_does_not_change_result(tmp_path):
    rng = np.random.default_rng(21)
    gs = random_gaussians(rng, 60, 3)
    np.savez(tmp_path / "gs.npz", **gs.arrays())
    script = (
        "import sys, numpy as np\n"
        "from gaussholo._threads import configure_threading\n"
        "from gaussholo.params import GaussianSet\n"
        "from gaussholo.raster import rasterize_forward\n"
        "configure_threading(4)\n"
        "d = np.load(sys.argv[1])\n"
        "f = rasterize_forward(GaussianSet(**{k: d[k] for k in d.files}), 80, 64)\n"
        "np.save(sys.argv[2], f.to_complex())\n"
    )
    env = dict(os.environ, NUMBA_NUM_THREADS="4")
    subprocess.run([sys.executable, "-c", script, str(tmp_path / "gs.npz"), str(tmp_path / "f.npy")],
                   check=True, env=env)
    multi = np.load(tmp_path / "f.npy")
    single_thread = rasterize_forward(gs, 80, 64).to_complex()
    assert np.abs(multi - single_thread).max() <= 1e-5
