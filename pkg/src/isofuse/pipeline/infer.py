"""Dense evaluation of a trained intensity network on a voxel grid."""

from __future__ import annotations

import numpy as np

from ..errors import ConfigError
from ..volume import NormalizationFrame, Volume
from .networks import IntensityNet


def default_grid(view: Volume, through_axis: int = 2) -> tuple[float, np.ndarray, np.ndarray]:
    """Reference-view default target: its world box at its finest
    in-plane spacing (the isotropic resolution the fusion aims for)."""
    if not 0 <= through_axis <= 2:
        raise ConfigError("through_axis must be 0, 1, or 2")
    in_plane = np.delete(view.spacing, through_axis)
    corners = view.corner_world_points()
    return float(in_plane.min()), corners.min(axis=0), corners.max(axis=0)


def plan_grid(
    frame: NormalizationFrame | None,
    spacing: float,
    box_lo: np.ndarray | None = None,
    box_hi: np.ndarray | None = None,
) -> tuple[tuple[int, int, int], np.ndarray]:
    """Isotropic grid dims and affine covering a world box.

    The grid starts at the box's low corner and places voxel centers
    every `spacing` mm; the last center lands on (or just inside) the
    high corner. The box defaults to the frame's; passing both corners
    explicitly makes the frame optional.
    """
    if not np.isfinite(spacing) or spacing <= 0:
        raise ConfigError("grid spacing must be a positive length in mm")
    if frame is None and (box_lo is None or box_hi is None):
        raise ConfigError("plan_grid needs a frame or both box corners")
    lo = np.asarray(frame.box_lo if box_lo is None else box_lo, dtype=np.float64)
    hi = np.asarray(frame.box_hi if box_hi is None else box_hi, dtype=np.float64)
    if lo.shape != (3,) or hi.shape != (3,) or not np.all(hi > lo):
        raise ConfigError("grid box must satisfy hi > lo componentwise")
    extent = hi - lo
    dims = tuple(int(np.floor(e / spacing + 1e-9)) + 1 for e in extent)
    affine = np.diag([spacing, spacing, spacing, 1.0])
    affine[:3, 3] = lo
    return dims, affine


def infer_grid(
    net: IntensityNet,
    frame: NormalizationFrame,
    *,
    spacing: float | None = None,
    box_lo=None,
    box_hi=None,
    like: Volume | None = None,
    eval_batch: int = 65_536,
    memory_budget: int = 2**30,
) -> Volume:
    """Evaluate the network at every voxel center of a target grid.

    Either pass `like` to copy an existing volume's dims and affine
    (useful for voxel-exact comparisons against a reference), or a
    `spacing` in mm with an optional world box (default: the
    normalization frame's box). Evaluation is chunked, so memory use is
    bounded by the output array plus one chunk of intermediates.
    """
    if eval_batch < 1:
        raise ConfigError("eval_batch must be at least 1")
    if like is not None:
        dims = like.dims
        affine = like.affine.copy()
        to_world = like.voxel_to_world
    elif spacing is not None:
        dims, affine = plan_grid(frame, spacing, box_lo, box_hi)
        lo = affine[:3, 3]

        def to_world(idx):
            return idx * spacing + lo

    else:
        raise ConfigError("infer_grid needs either `like` or a `spacing`")

    n_voxels = int(np.prod(dims))
    out_bytes = n_voxels * np.dtype(np.float32).itemsize
    if out_bytes > memory_budget:
        raise ConfigError(
            f"output grid {dims} needs {out_bytes} bytes, over the "
            f"memory budget of {memory_budget}; use a coarser spacing or "
            f"raise memory_budget (evaluation itself is already chunked "
            f"by eval_batch={eval_batch})"
        )

    flat = np.empty(n_voxels, dtype=np.float32)
    in_dtype = net.store.dtype
    for start in range(0, n_voxels, eval_batch):
        stop = min(start + eval_batch, n_voxels)
        lin = np.arange(start, stop)
        idx = np.stack(np.unravel_index(lin, dims), axis=1).astype(np.float64)
        world = to_world(idx)
        coords = frame.world_to_normalized(world).astype(in_dtype)
        pred = net.forward(coords).data
        flat[start:stop] = frame.denormalize_intensity(pred).astype(np.float32)
    return Volume(flat.reshape(dims), affine)
