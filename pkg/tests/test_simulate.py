import numpy as np
import pytest

from isofuse.errors import ConfigError, DataError
from isofuse.simulate import (
    DegradationSpec,
    PhantomSpec,
    degrade,
    make_phantom,
    rotate_volume,
    rotation_about_x,
    simulate_pair,
)
from isofuse.volume import Volume, trilinear_sample


def smooth_volume(size=64):
    """Analytically smooth test data (no structure edges)."""
    ax = np.linspace(0, 1, size)
    x, y, z = np.meshgrid(ax, ax, ax, indexing="ij")
    data = 0.5 + 0.3 * np.sin(2 * np.pi * x) * np.cos(np.pi * y) + 0.2 * z * z
    return Volume(data.astype(np.float32), np.eye(4))


# ----------------------------------------------------------------- phantom


def test_phantom_deterministic():
    a = make_phantom(PhantomSpec(seed=11))
    b = make_phantom(PhantomSpec(seed=11))
    assert a.data.tobytes() == b.data.tobytes()
    assert not np.array_equal(a.data, make_phantom(PhantomSpec(seed=12)).data)


def test_phantom_geometry_and_range():
    vol = make_phantom(PhantomSpec(size=48))
    assert vol.dims == (48, 48, 48)
    np.testing.assert_array_equal(vol.affine, np.eye(4))
    assert vol.data.min() >= 0.0 and vol.data.max() <= 1.0


def test_phantom_histogram_matches_structure_count():
    # texture off -> piecewise constant: background plus one level per shell
    for k in (1, 3, 4, 6):
        vol = make_phantom(PhantomSpec(size=64, seed=5, ellipsoids=k, texture_octaves=0))
        assert np.unique(vol.data).size == k + 1


def test_phantom_collapsed_contrast_is_constant():
    vol = make_phantom(
        PhantomSpec(seed=2, contrast=(0.5, 0.5), texture_octaves=0)
    )
    assert np.unique(vol.data).size == 1


def test_phantom_texture_adds_detail_inside_only():
    flat = make_phantom(PhantomSpec(seed=3, texture_octaves=0))
    textured = make_phantom(PhantomSpec(seed=3, texture_octaves=2))
    assert np.unique(textured.data).size > np.unique(flat.data).size
    background = flat.data == flat.data[0, 0, 0]
    np.testing.assert_array_equal(textured.data[background], flat.data[background])


def test_phantom_size_floor():
    with pytest.raises(ConfigError):
        PhantomSpec(size=8)


# ----------------------------------------------------------------- rotation


def test_rotate_zero_is_identity():
    vol = make_phantom(PhantomSpec(size=32, seed=1))
    out = rotate_volume(vol, 0.0)
    np.testing.assert_array_equal(out.data, vol.data)
    np.testing.assert_array_equal(out.affine, vol.affine)


def test_rotate_round_trip_exact():
    # content is carried on the rotated grid, so the inverse rotation
    # restores the original volume with zero interpolation error — inside
    # any empirical double-resample bound
    vol = make_phantom(PhantomSpec(size=32, seed=4))
    back = rotate_volume(rotate_volume(vol, 0.1), -0.1)
    np.testing.assert_array_equal(back.data, vol.data)
    np.testing.assert_allclose(back.affine, vol.affine, atol=1e-12)


def test_rotate_moves_landmark_world_position():
    vol = make_phantom(PhantomSpec(size=32, seed=4))
    probe = np.array([15.5, 15.5, 15.5])
    rotated = rotate_volume(vol, 0.1)
    expect = rotation_about_x(0.1)[:3, :3] @ vol.voxel_to_world(probe)
    np.testing.assert_allclose(rotated.voxel_to_world(probe), expect, atol=1e-12)


def test_rotate_rejects_nonfinite():
    vol = make_phantom(PhantomSpec(size=16, seed=0))
    with pytest.raises(ConfigError):
        rotate_volume(vol, np.nan)


# ----------------------------------------------------------------- degrade


def test_degrade_factor_one_is_identity():
    vol = smooth_volume(16)
    out = degrade(vol, DegradationSpec(factor=1), "axial")
    np.testing.assert_array_equal(out.data, vol.data)
    np.testing.assert_array_equal(out.affine, vol.affine)


def test_degrade_constant_stays_constant():
    vol = Volume(np.full((8, 8, 8), 3.25, dtype=np.float32), np.eye(4))
    out = degrade(vol, DegradationSpec(factor=4), "axial")
    np.testing.assert_array_equal(out.data, np.full((8, 8, 2), 3.25, dtype=np.float32))


def test_degrade_block_mean_ramp():
    ramp = np.broadcast_to(
        np.arange(8, dtype=np.float32), (8, 8, 8)
    ).copy()  # varies along z
    vol = Volume(ramp, np.eye(4))
    out = degrade(vol, DegradationSpec(factor=4), "axial")
    np.testing.assert_allclose(out.data[:, :, 0], 1.5)
    np.testing.assert_allclose(out.data[:, :, 1], 5.5)

    ramp_y = np.transpose(ramp, (0, 2, 1))  # varies along y
    out_y = degrade(Volume(ramp_y, np.eye(4)), DegradationSpec(factor=4), "coronal")
    np.testing.assert_allclose(out_y.data[:, 0, :], 1.5)
    np.testing.assert_allclose(out_y.data[:, 1, :], 5.5)


def test_degrade_preserves_global_mean():
    vol = make_phantom(PhantomSpec(size=64, seed=6))
    out = degrade(vol, DegradationSpec(factor=4), "axial")
    assert abs(float(out.data.mean()) - float(vol.data.mean())) < 1e-6


def test_degrade_subsample_mode():
    ramp = np.broadcast_to(np.arange(8, dtype=np.float32), (8, 8, 8)).copy()
    vol = Volume(ramp, np.eye(4))
    out = degrade(vol, DegradationSpec(factor=4, slice_model="subsample"), "axial")
    np.testing.assert_array_equal(out.data[:, :, 0], 0.0)
    np.testing.assert_array_equal(out.data[:, :, 1], 4.0)
    # slice 0 keeps its world position: origin unchanged
    np.testing.assert_array_equal(out.affine[:3, 3], vol.affine[:3, 3])
    np.testing.assert_array_equal(out.affine[:3, 2], [0, 0, 4])


def test_degrade_geometry_block_mean():
    vol = smooth_volume(16)
    out = degrade(vol, DegradationSpec(factor=4), "axial")
    # thick voxel (i, j, k) sits at the centre of its source slice group
    got = out.voxel_to_world([2.0, 3.0, 1.0])
    np.testing.assert_allclose(got, vol.voxel_to_world([2.0, 3.0, 5.5]))


def test_degrade_non_divisible_rejected():
    vol = smooth_volume(18)
    with pytest.raises(DataError, match="does not divide"):
        degrade(vol, DegradationSpec(factor=4), "axial")


def test_degrade_unknown_view_rejected():
    with pytest.raises(ConfigError, match="unknown view"):
        degrade(smooth_volume(16), DegradationSpec(), "sagittal")


def test_bad_specs_rejected():
    with pytest.raises(ConfigError):
        DegradationSpec(factor=0)
    with pytest.raises(ConfigError):
        DegradationSpec(rotation=float("inf"))
    with pytest.raises(ConfigError):
        DegradationSpec(slice_model="fourier")


# ----------------------------------------------------------------- pair


def test_pair_dims_at_factor_four():
    phantom = make_phantom(PhantomSpec(size=64, seed=7))
    axial, coronal, truth = simulate_pair(phantom, DegradationSpec(factor=4))
    assert axial.dims == (64, 64, 16)
    assert coronal.dims == (64, 16, 64)
    assert truth.dims == (64, 64, 64)


def test_pair_coronal_affine_encodes_rotation():
    phantom = make_phantom(PhantomSpec(size=64, seed=8))
    _, coronal, _ = simulate_pair(phantom, DegradationSpec(factor=4, rotation=0.1))
    rot = rotation_about_x(0.1)
    probe = np.array([10.0, 3.0, 40.0])
    # undo the through-plane regrouping, then the remaining map is R @ eye
    fine_index = probe * [1, 4, 1] + [0, 1.5, 0]
    expect = (rot[:3, :3] @ phantom.voxel_to_world(fine_index)) + rot[:3, 3]
    np.testing.assert_allclose(coronal.voxel_to_world(probe), expect, atol=1e-10)


def test_pair_requires_real_downsampling():
    phantom = make_phantom(PhantomSpec(size=16, seed=0))
    with pytest.raises(ConfigError):
        simulate_pair(phantom, DegradationSpec(factor=1))


def test_aligned_views_agree_at_shared_world_points():
    vol = smooth_volume(64)
    spec = DegradationSpec(factor=4, rotation=0.0)
    axial, coronal, truth = simulate_pair(vol, spec)

    rng = np.random.default_rng(9)
    pts = rng.uniform(8, 55, size=(300, 3))
    a, ia = trilinear_sample(axial, pts)
    c, ic = trilinear_sample(coronal, pts)
    g, ig = trilinear_sample(truth, pts)
    assert ia.all() and ic.all() and ig.all()

    err_a = float(np.max(np.abs(a - g)))
    err_c = float(np.max(np.abs(c - g)))
    # each view deviates from truth only by its own resampling error,
    # so the views agree within twice the larger single-view error
    assert np.max(np.abs(a - c)) <= 2 * max(err_a, err_c)
    data_range = float(truth.data.max() - truth.data.min())
    assert max(err_a, err_c) < 0.05 * data_range


def test_misaligned_views_disagree():
    # same check with the 0.1 rad rotation: the headers no longer explain
    # the content, so agreement collapses
    vol = smooth_volume(64)
    aligned = simulate_pair(vol, DegradationSpec(factor=4, rotation=0.0))
    rotated = simulate_pair(vol, DegradationSpec(factor=4, rotation=0.1))

    rng = np.random.default_rng(10)
    pts = rng.uniform(12, 50, size=(300, 3))

    def view_gap(pair):
        a, ia = trilinear_sample(pair[0], pts)
        c, ic = trilinear_sample(pair[1], pts)
        keep = ia & ic
        assert keep.sum() > 100
        return float(np.mean(np.abs(a[keep] - c[keep])))

    assert view_gap(rotated) > 3 * view_gap(aligned)
