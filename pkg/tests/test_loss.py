import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from gaussholo.loss import (
    DepthPlaneSet,
    TargetStack,
    build_masks,
    loss_mse,
    loss_recon,
    loss_ssim,
    ssim_map,
    training_loss,
)
from gaussholo.oracles import FiniteDiffSpec, finite_diff_grad, loop_mse, loop_recon, sliding_ssim

from _helpers import rel_err


def make_target(rng, planes, c, h, w):
    return TargetStack.from_image(rng.uniform(0, 1, (c, h, w)), rng.uniform(0, 1, (h, w)), planes)


def test_plane_distances():
    p = DepthPlaneSet(4, 3e-3, 1e-3)
    np.testing.assert_allclose(p.distances, [1.5e-3, 2.5e-3, 3.5e-3, 4.5e-3], rtol=1e-12)
    assert abs(p.distances.mean() - 3e-3) <= 1e-12
    np.testing.assert_allclose(np.diff(p.distances), 1e-3, rtol=1e-9)
    np.testing.assert_allclose(DepthPlaneSet(1, 2e-3, 5e-3).distances, [2e-3])
    with pytest.raises(ValueError):
        DepthPlaneSet(0, 1e-3, 1e-3)


def test_single_plane_mask():
    m = build_masks(np.random.default_rng(0).uniform(size=(5, 6)), 1)
    assert m.shape == (1, 5, 6) and m.all()


def test_quarter_depth_goes_to_first_plane():
    m = build_masks(np.full((4, 4), 0.25), 2, near_is_high=False)
    assert m[0].all() and not m[1].any()
    # default orientation treats high depth values as near
    m = build_masks(np.full((4, 4), 0.25), 2)
    assert m[1].all()


def test_ramp_gives_equal_bands():
    w = 30
    depth = np.tile(np.linspace(0, 1, w), (4, 1))
    m = build_masks(depth, 3, near_is_high=False)
    widths = m[:, 0, :].sum(axis=1)
    assert np.all(np.abs(widths - w / 3) <= 1)
    for l in range(3):
        cols = np.nonzero(m[l, 0])[0]
        assert np.all(np.diff(cols) == 1)  # contiguous band
    assert m[0, 0, 0] and m[2, 0, -1]


def test_mask_errors():
    with pytest.raises(ValueError):
        build_masks(np.zeros((2, 2)), 0)
    with pytest.raises(ValueError):
        build_masks(np.full((2, 2), 1.5), 2)


@given(arrays(np.float64, (6, 7), elements=st.floats(0, 1)), st.integers(1, 6), st.booleans())
def test_masks_partition(depth, planes, near_is_high):
    m = build_masks(depth, planes, near_is_high)
    np.testing.assert_array_equal(m.sum(axis=0), 1)


def test_target_validation():
    with pytest.raises(ValueError):
        TargetStack(np.full((1, 2, 2), 1.5), np.zeros((2, 2)), np.ones((1, 2, 2), bool))
    with pytest.raises(ValueError):
        TargetStack(np.zeros((1, 2, 2)), np.zeros((2, 2)), np.zeros((2, 2, 2), bool))


def test_mse_examples():
    t = TargetStack(np.full((1, 1, 1), 0.25), np.zeros((1, 1)), np.ones((1, 1, 1), bool))
    assert loss_mse(np.full((1, 1, 1, 1), 0.5), t) == pytest.approx(0.0625, abs=1e-15)
    rng = np.random.default_rng(1)
    t = make_target(rng, 2, 3, 8, 8)
    assert loss_mse(np.stack([t.intensity] * 2), t) == 0.0


def test_mse_matches_loop_oracle():
    rng = np.random.default_rng(2)
    t = make_target(rng, 2, 1, 4, 4)
    recon = rng.uniform(0, 1.2, (2, 1, 4, 4))
    assert abs(loss_mse(recon, t) - loop_mse(recon, t.intensity)) <= 1e-10


def test_recon_matches_loop_oracle():
    rng = np.random.default_rng(3)
    for c in (1, 3):
        t = make_target(rng, 2, c, 4, 4)
        recon = rng.uniform(0, 1.2, (2, c, 4, 4))
        assert abs(loss_recon(recon, t) - loop_recon(recon, t.intensity, t.masks)) <= 1e-10


def test_recon_zero_target_drops_third_term():
    rng = np.random.default_rng(4)
    t = TargetStack.from_image(np.zeros((1, 5, 5)), rng.uniform(size=(5, 5)), 2)
    recon = rng.uniform(size=(2, 1, 5, 5))
    expected = np.mean([np.mean(r**2) + np.mean((r * m) ** 2) for r, m in zip(recon, t.masks[:, None])])
    assert loss_recon(recon, t) == pytest.approx(expected, rel=1e-12)
    assert loss_recon(np.zeros_like(recon), t) == 0.0


def test_shape_mismatch():
    rng = np.random.default_rng(5)
    t = make_target(rng, 2, 1, 4, 4)
    for fn in (loss_mse, loss_recon):
        with pytest.raises(ValueError):
            fn(np.zeros((3, 1, 4, 4)), t)


def test_ssim_identical_is_zero():
    rng = np.random.default_rng(6)
    t = make_target(rng, 2, 3, 16, 16)
    assert loss_ssim(np.stack([t.intensity] * 2), t) == pytest.approx(0.0, abs=1e-15)


def test_ssim_constant_offset_closed_form():
    mu1, mu2 = 0.4, 0.401
    c1 = 0.01**2
    x = np.full((1, 20, 20), mu1)
    y = np.full((1, 20, 20), mu2)
    expected = 1.0 - (2 * mu1 * mu2 + c1) / (mu1**2 + mu2**2 + c1)
    assert loss_ssim(x, y) == pytest.approx(expected, rel=1e-6)


def test_ssim_matches_sliding_window_oracle():
    rng = np.random.default_rng(7)
    x, y = rng.uniform(size=(32, 32)), rng.uniform(size=(32, 32))
    assert abs(float(ssim_map(x, y).mean()) - sliding_ssim(x, y)) <= 1e-6
    assert abs(loss_ssim(x[None], y[None]) - (1.0 - sliding_ssim(x, y))) <= 1e-6


def test_ssim_too_small():
    with pytest.raises(ValueError):
        loss_ssim(np.zeros((1, 8, 20)), np.zeros((1, 8, 20)))


def test_training_loss_is_weighted_sum():
    rng = np.random.default_rng(8)
    t = make_target(rng, 2, 1, 16, 16)
    recon = rng.uniform(size=(2, 1, 16, 16))
    expected = loss_recon(recon, t) + 0.005 * loss_ssim(recon, t)
    assert abs(training_loss(recon, t) - expected) <= 1e-12
    assert training_loss(np.stack([t.intensity] * 2), t) == pytest.approx(0.0, abs=1e-15)
    assert 0.1 + 0.005 * 0.2 == pytest.approx(0.101)


@pytest.mark.parametrize("fn", [loss_mse, loss_recon, loss_ssim, training_loss])
def test_gradients_match_finite_differences(fn):
    rng = np.random.default_rng(9)
    t = make_target(rng, 2, 1, 12, 13)
    recon = rng.uniform(0.1, 0.9, (2, 1, 12, 13))
    _, grad = fn(recon, t, return_grad=True)
    fd = finite_diff_grad(lambda r: fn(r, t), recon, FiniteDiffSpec(h=1e-5))
    assert np.max(rel_err(grad, fd, floor=1e-3 * np.abs(fd).max())) <= 1e-5


@given(st.integers(0, 2**31 - 1))
@settings(max_examples=25, deadline=None)
def test_losses_nonnegative_and_mse_permutation_invariant(seed):
    rng = np.random.default_rng(seed)
    t = make_target(rng, 2, 1, 11, 11)
    recon = rng.uniform(0, 1, (2, 1, 11, 11))
    for fn in (loss_mse, loss_recon, training_loss):
        assert fn(recon, t) >= 0
    perm = rng.permutation(121)
    tp = TargetStack.from_image(t.intensity.reshape(1, -1)[:, perm].reshape(1, 11, 11), t.depth, 2)
    rp = recon.reshape(2, 1, -1)[..., perm].reshape(2, 1, 11, 11)
    assert loss_mse(rp, tp) == pytest.approx(loss_mse(recon, t), rel=1e-12)
