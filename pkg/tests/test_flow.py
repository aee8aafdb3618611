import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from regionmotion import flow as fl
from regionmotion import heatmap as hm
from regionmotion.errors import ChannelMismatch, GridMismatch, GridTooSmall, RegionCountMismatch
from regionmotion.motion import AffineMotion, MotionSet
from regionmotion.tensor_io import Grid2

GRID = Grid2(6, 7)


def translation(tx, ty):
    return AffineMotion(np.eye(2), [tx, ty])


def full_assign(k, region):
    a = np.zeros((k + 1,) + GRID)
    a[region] = 1
    return a


def test_single_region_translation():
    out = fl.synthesize_flow(MotionSet((translation(3, -2),)), full_assign(1, 1))
    np.testing.assert_array_equal(out, fl.identity_flow(GRID) + [3, -2])


def test_background_identity():
    out = fl.synthesize_flow(MotionSet((translation(3, -2),)), full_assign(1, 0))
    np.testing.assert_array_equal(out, fl.identity_flow(GRID))


def test_half_half_blend():
    a = np.full((2,) + GRID, 0.5)
    out = fl.synthesize_flow(MotionSet((translation(2, 0),), AffineMotion.identity()), a)
    np.testing.assert_allclose(out, fl.identity_flow(GRID) + [1, 0])


def test_assignment_count_mismatch():
    with pytest.raises(RegionCountMismatch):
        fl.synthesize_flow(MotionSet((translation(1, 1),)), np.zeros((3,) + GRID))


def test_all_identity_motions_give_identity_flow():
    rng = np.random.default_rng(0)
    a = rng.uniform(size=(4,) + GRID)
    a /= a.sum(axis=0)
    mset = MotionSet((AffineMotion.identity(),) * 3, AffineMotion.identity())
    np.testing.assert_allclose(fl.synthesize_flow(mset, a), fl.identity_flow(GRID), atol=1e-12)


def test_flow_is_affine_exact_per_region():
    m = AffineMotion([[1.1, 0.3], [-0.2, 0.9]], [2.5, -1.0])
    out = fl.synthesize_flow(MotionSet((AffineMotion.identity(), m)), full_assign(2, 2))
    ys, xs = np.mgrid[0 : GRID.height, 0 : GRID.width]
    expect_x = 1.1 * xs + 0.3 * ys + 2.5
    expect_y = -0.2 * xs + 0.9 * ys - 1.0
    np.testing.assert_allclose(out[..., 0], expect_x, atol=1e-12)
    np.testing.assert_allclose(out[..., 1], expect_y, atol=1e-12)


# ---------------------------------------------------------------------------
# oracle assignment


def test_disjoint_masks():
    a = np.zeros(GRID)
    b = np.zeros(GRID)
    a[:, :3] = 1
    b[:, 3:] = 1
    w = fl.oracle_assignment([a, b])
    np.testing.assert_array_equal(w[1], a)
    np.testing.assert_array_equal(w[2], b)
    assert np.all(w[0] == 0)


def test_low_mass_pixel_is_background():
    h = np.zeros((1, 2))
    h[0, 0] = 0.0005
    h[0, 1] = 0.5
    w = fl.oracle_assignment([h], bg_threshold=0.001)
    assert w[0, 0, 0] == 1 and w[1, 0, 0] == 0
    assert w[1, 0, 1] == 1


def test_threshold_boundary_is_foreground():
    h = np.full((1, 1), 0.001)
    w = fl.oracle_assignment([h], bg_threshold=0.001)
    assert w[1, 0, 0] == 1 and w[0, 0, 0] == 0


def test_equal_overlap_splits():
    m = np.ones((2, 2))
    w = fl.oracle_assignment([m, m])
    np.testing.assert_array_equal(w[1], 0.5)
    np.testing.assert_array_equal(w[2], 0.5)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 5))
def test_assignment_partition_of_unity(seed, k):
    rng = np.random.default_rng(seed)
    maps = rng.uniform(size=(k,) + GRID) * (rng.uniform(size=(k,) + GRID) > 0.5) * 0.01
    w = fl.oracle_assignment(list(maps))
    assert np.all((w >= 0) & (w <= 1))
    np.testing.assert_allclose(w.sum(axis=0), 1.0, atol=1e-6)


# ---------------------------------------------------------------------------
# flow input


def _blob_heatmaps(k, grid):
    hs = []
    for i in range(k):
        mu = [3.0 + (i % 4) * 1.5, 3.0 + (i // 4) * 1.2]
        hs.append(hm.normalize(hm.rasterize_gaussian(mu, np.diag([3.0, 1.5]), grid)))
    return hs


def test_flow_input_dims():
    grid = Grid2(64, 64)
    src = np.random.default_rng(0).uniform(size=(64, 64, 3))
    mset = MotionSet((translation(1, 2), translation(-1, 0)), translation(0.5, 0.5))
    out = fl.build_flow_input(src, mset, _blob_heatmaps(2, grid))
    assert out.shape == (64, 64, 11)
    assert out.dtype == np.float32


def test_flow_input_identity_blocks_equal_source():
    grid = Grid2(8, 9)
    src = np.random.default_rng(1).uniform(size=(8, 9, 3))
    mset = MotionSet((AffineMotion.identity(),) * 2)
    out = fl.build_flow_input(src, mset, _blob_heatmaps(2, grid))
    for start in (0, 4, 8):
        np.testing.assert_allclose(out[..., start : start + 3], src, atol=1e-7)
    np.testing.assert_allclose(out[..., 3], fl.gaussian_channel(_blob_heatmaps(2, grid)[0]), atol=1e-7)


def test_flow_input_rejects_gray_and_count_mismatch():
    grid = Grid2(8, 8)
    with pytest.raises(ChannelMismatch):
        fl.build_flow_input(np.zeros((8, 8, 1)), MotionSet((AffineMotion.identity(),)), _blob_heatmaps(1, grid))
    with pytest.raises(RegionCountMismatch):
        fl.build_flow_input(np.zeros((8, 8, 3)), MotionSet((AffineMotion.identity(),)), _blob_heatmaps(2, grid))


# ---------------------------------------------------------------------------
# warping


def test_identity_warp_is_exact():
    img = np.random.default_rng(2).uniform(size=(5, 6, 3))
    assert np.array_equal(fl.warp_image(img, fl.identity_flow(Grid2(5, 6))), img)


def test_integer_shift():
    img = np.random.default_rng(3).uniform(size=(5, 6))
    out = fl.warp_image(img, fl.identity_flow(Grid2(5, 6)) + [1, 0])
    np.testing.assert_allclose(out[:, :-1], img[:, 1:])
    np.testing.assert_allclose(out[:, -1], img[:, -1])  # clamped border


def test_bilinear_midpoint():
    img = np.array([[0.0, 1.0]])
    flow = np.array([[[0.5, 0.0], [0.5, 0.0]]])
    np.testing.assert_allclose(fl.warp_image(img, flow), [[0.5, 0.5]])


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(-3, 3), st.floats(-3, 3))
def test_warp_is_linear(seed, a, b):
    rng = np.random.default_rng(seed)
    i1, i2 = rng.uniform(size=(2, 6, 5, 3))
    flow = fl.identity_flow(Grid2(6, 5)) + rng.normal(scale=2.0, size=(6, 5, 2))
    lhs = fl.warp_image(a * i1 + b * i2, flow)
    rhs = a * fl.warp_image(i1, flow) + b * fl.warp_image(i2, flow)
    np.testing.assert_allclose(lhs, rhs, atol=1e-6)


def test_warp_grid_mismatch():
    with pytest.raises(GridMismatch):
        fl.warp_image(np.zeros((3, 3)), np.zeros((3, 4, 2)))


# ---------------------------------------------------------------------------
# confidence


def test_confidence():
    img = np.full((2, 2, 3), 0.8)
    np.testing.assert_array_equal(fl.apply_confidence(img, np.ones((2, 2))), img)
    np.testing.assert_array_equal(fl.apply_confidence(img, np.zeros((2, 2))), 0)
    np.testing.assert_allclose(fl.apply_confidence(img, np.full((2, 2), 0.5)), 0.4)
    with pytest.raises(ValueError):
        fl.apply_confidence(img, np.full((2, 2), 1.5))


# ---------------------------------------------------------------------------
# loss


def test_loss_zero_on_identical():
    img = np.random.default_rng(4).uniform(size=(16, 16, 3))
    for levels in (1, 2, 4):
        assert fl.reconstruction_loss(img, img, levels=levels) == 0.0


def test_loss_constant_images():
    a = np.full((4, 4), 0.2)
    b = np.full((4, 4), 0.5)
    assert fl.reconstruction_loss(a, b, levels=1) == pytest.approx(0.3)


def test_loss_shifted_two_levels_against_direct_sum():
    img = np.arange(16, dtype=float).reshape(4, 4) / 15
    shifted = np.empty_like(img)
    for y in range(4):
        for x in range(4):
            shifted[y, x] = img[y, min(x + 1, 3)]
    np.testing.assert_array_equal(fl.warp_image(img, fl.identity_flow(Grid2(4, 4)) + [1, 0]), shifted)

    def pool(a):
        return np.array([[a[2 * i : 2 * i + 2, 2 * j : 2 * j + 2].mean() for j in range(2)] for i in range(2)])

    oracle = np.abs(img - shifted).mean() + np.abs(pool(img) - pool(shifted)).mean()
    assert fl.reconstruction_loss(img, shifted, levels=2) == pytest.approx(oracle, abs=1e-12)


def test_loss_custom_features():
    def two_layer(x):
        return [x, 2 * x]

    a = np.full((4, 4), 0.2)
    b = np.full((4, 4), 0.5)
    assert fl.reconstruction_loss(a, b, levels=1, features=two_layer) == pytest.approx(0.9)


def test_loss_grid_too_small():
    with pytest.raises(GridTooSmall):
        fl.reconstruction_loss(np.zeros((2, 2)), np.zeros((2, 2)), levels=3)


def test_odd_grid_pooling_crops():
    img = np.arange(15, dtype=float).reshape(3, 5)
    np.testing.assert_allclose(fl.avg_pool2(img), [[(0 + 1 + 5 + 6) / 4, (2 + 3 + 7 + 8) / 4]])


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_loss_nonnegative(seed):
    rng = np.random.default_rng(seed)
    a, b = rng.uniform(size=(2, 8, 8, 3))
    assert fl.reconstruction_loss(a, b, levels=3) > 0
