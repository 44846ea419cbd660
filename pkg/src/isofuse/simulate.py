"""Synthetic ground truth and its degradation into two anisotropic views.

The phantom is a stack of nested ellipsoids (coarse structure) carrying
band-limited texture (fine detail). A view pair is produced by rotating
the phantom about the world x-axis — moving its content in world space
while the two headers keep disagreeing about it, which is exactly the
misalignment the registration phase has to recover — and then collapsing
resolution along each view's through-plane axis.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError
from .volume import Volume, trilinear_sample

THROUGH_PLANE_AXIS = {"axial": 2, "coronal": 1}


@dataclass(frozen=True)
class PhantomSpec:
    size: int = 64
    seed: int = 0
    ellipsoids: int = 4
    texture_octaves: int = 2
    texture_amp: float = 0.05
    contrast: tuple[float, float] = (0.2, 0.95)

    def __post_init__(self):
        if self.size < 16:
            raise ConfigError(f"phantom size must be >= 16, got {self.size}")
        if self.ellipsoids < 1:
            raise ConfigError("need at least one ellipsoid")
        if self.texture_octaves < 0 or self.texture_amp < 0:
            raise ConfigError("texture octaves/amplitude must be non-negative")


@dataclass(frozen=True)
class DegradationSpec:
    """Protocol for turning one isotropic volume into a view pair.

    ``simulate_pair`` additionally requires ``factor >= 2``; a factor of 1
    is accepted here so ``degrade`` can express the identity case.
    """

    factor: int = 4
    rotation: float = 0.1
    slice_model: str = "block_mean"

    def __post_init__(self):
        if self.factor < 1:
            raise ConfigError(f"downsample factor must be >= 1, got {self.factor}")
        if not np.isfinite(self.rotation):
            raise ConfigError("inter-view rotation must be finite")
        if self.slice_model not in ("block_mean", "subsample"):
            raise ConfigError(f"unknown slice model {self.slice_model!r}")


def rotation_about_x(angle: float) -> np.ndarray:
    """Homogeneous rotation about the world x-axis through the origin."""
    c, s = np.cos(angle), np.sin(angle)
    out = np.eye(4)
    out[1, 1] = out[2, 2] = c
    out[2, 1] = s
    out[1, 2] = -s
    return out


def _upsampled_noise(rng, coarse: int, size: int) -> np.ndarray:
    """One texture octave: low-res Gaussian noise blown up trilinearly."""
    low = Volume(
        rng.standard_normal((coarse, coarse, coarse)).astype(np.float32),
        np.diag([(size - 1) / (coarse - 1)] * 3 + [1.0]),
    )
    grid = np.stack(
        np.meshgrid(*([np.arange(size, dtype=np.float64)] * 3), indexing="ij"),
        axis=-1,
    ).reshape(-1, 3)
    # The affine inverse can push the outermost grid points an ulp past
    # the low-res box at some size ratios; edge mode keeps the boundary
    # sample there instead of NaN.
    values, _ = trilinear_sample(low, grid, mode="edge")
    return values.reshape(size, size, size).astype(np.float64)


def make_phantom(spec: PhantomSpec) -> Volume:
    """Nested-ellipsoid phantom in [0, 1] on an identity-affine grid.

    With texture off the volume is piecewise constant over exactly
    ``ellipsoids + 1`` intensity levels (background included); each
    ellipsoid is strictly contained in the previous one by construction so
    every level survives painting.
    """
    rng = np.random.default_rng(spec.seed)
    size = spec.size
    lo, hi = spec.contrast
    values = np.linspace(lo, hi, spec.ellipsoids + 1)

    coords = np.stack(
        np.meshgrid(*([np.arange(size, dtype=np.float64)] * 3), indexing="ij"),
        axis=-1,
    )
    center = (size - 1) / 2.0
    base_axes = 0.38 * size

    data = np.full((size, size, size), values[0], dtype=np.float64)
    outer_mask = None
    for e in range(spec.ellipsoids):
        jitter = rng.uniform(-1.5, 1.5, size=3)
        squeeze = rng.uniform(0.9, 1.0, size=3)
        axes = base_axes * (0.78**e) * squeeze
        offset = (coords - (center + jitter)) / axes
        mask = (offset**2).sum(axis=-1) <= 1.0
        data[mask] = values[e + 1]
        if outer_mask is None:
            outer_mask = mask

    if spec.texture_octaves > 0 and spec.texture_amp > 0:
        texture = np.zeros_like(data)
        for octave in range(spec.texture_octaves):
            coarse = max(3, size // 2 ** (spec.texture_octaves + 1 - octave))
            texture += (0.5**octave) * _upsampled_noise(rng, coarse, size)
        data += spec.texture_amp * texture * outer_mask

    return Volume(np.clip(data, 0.0, 1.0).astype(np.float32), np.eye(4))


def rotate_volume(volume: Volume, angle: float) -> Volume:
    """Rotate the volume's content about the world x-axis.

    The rotated content is represented on the correspondingly rotated
    grid, so the voxel array is carried over unchanged (no interpolation
    loss) and only the affine moves: a landmark at world point p ends up
    at R p. Downstream consumers that trust the original header will see
    the content displaced — the simulated inter-scan motion.
    """
    if not np.isfinite(angle):
        raise ConfigError("rotation angle must be finite")
    return Volume(volume.data, rotation_about_x(angle) @ volume.affine)


def degrade(volume: Volume, spec: DegradationSpec, view: str) -> Volume:
    """Collapse resolution along the view's through-plane axis."""
    if view not in THROUGH_PLANE_AXIS:
        raise ConfigError(f"unknown view {view!r}, expected one of {list(THROUGH_PLANE_AXIS)}")
    axis = THROUGH_PLANE_AXIS[view]
    factor = spec.factor
    if factor == 1:
        return volume
    n = volume.dims[axis]
    if n % factor:
        raise DataError(
            f"factor {factor} does not divide the {view} through-plane dim {n}"
        )

    if spec.slice_model == "block_mean":
        shape = list(volume.dims)
        shape[axis] = n // factor
        shape.insert(axis + 1, factor)
        data = (
            volume.data.reshape(shape)
            .mean(axis=axis + 1, dtype=np.float64)
            .astype(np.float32)
        )
    else:
        index = [slice(None)] * 3
        index[axis] = slice(0, n, factor)
        data = volume.data[tuple(index)]

    affine = volume.affine.copy()
    affine[:3, axis] *= factor
    if spec.slice_model == "block_mean":
        # the first thick slice is centred on the original group of slices
        affine[:3, 3] += volume.affine[:3, axis] * (factor - 1) / 2.0
    return Volume(data, affine)


def simulate_pair(
    phantom: Volume, spec: DegradationSpec
) -> tuple[Volume, Volume, Volume]:
    """(axial, coronal, ground truth) per the two-view protocol.

    The axial view is degraded along z as-is; the coronal view is rotated
    first, then degraded along y. Ground truth is the untouched phantom.
    """
    if spec.factor < 2:
        raise ConfigError("the view-pair protocol needs a downsample factor >= 2")
    axial = degrade(phantom, spec, "axial")
    coronal = degrade(rotate_volume(phantom, spec.rotation), spec, "coronal")
    return axial, coronal, phantom
