"""Ground-truth evaluation: MAE, PSNR, volumetric SSIM, and the
unregistered interpolation-fusion baseline they are compared against.

Every metric runs on intensities rescaled to [0, 1] by the *reference*
volume's min/max, so the first argument fixes the data range; that
rescaling convention is the only source of asymmetry (MAE and SSIM are
otherwise symmetric) and is recorded in each report. SSIM uses the
classic Gaussian window (sigma 1.5, 11^3 support) extended to three
dimensions and averages over interior voxels only, where the window has
full support.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import correlate1d, minimum_filter

from .errors import ConfigError, DataError
from .pipeline.infer import plan_grid
from .volume import Volume, trilinear_sample

WINDOW = 11
SIGMA = 1.5
MARGIN = WINDOW // 2
_K1 = 0.01
_K2 = 0.03

RANGE_CONVENTION = "reference min/max rescaled to [0, 1]"


def _rescaled_pair(reference: Volume, test: Volume) -> tuple[np.ndarray, np.ndarray]:
    if reference.dims != test.dims:
        raise DataError(
            f"volumes must share dims, got {reference.dims} vs {test.dims}"
        )
    a = reference.data.astype(np.float64)
    if not np.isfinite(a).all():
        raise DataError("reference volume has non-finite intensities")
    lo, hi = float(a.min()), float(a.max())
    if hi <= lo:
        raise DataError("reference volume has zero intensity range")
    b = test.data.astype(np.float64)
    return (a - lo) / (hi - lo), (b - lo) / (hi - lo)


def _resolved_mask(mask, dims) -> np.ndarray:
    if mask is None:
        return np.ones(dims, dtype=bool)
    m = np.asarray(mask)
    if m.dtype != bool or m.shape != tuple(dims):
        raise DataError(f"mask must be a bool array of shape {tuple(dims)}")
    if not m.any():
        raise DataError("evaluation mask is empty")
    return m


def _checked_values(diffable: np.ndarray, m: np.ndarray) -> np.ndarray:
    picked = diffable[m]
    if not np.isfinite(picked).all():
        raise DataError(
            "test volume has non-finite values inside the evaluation mask; "
            "mask out uncovered voxels (e.g. baseline coverage gaps)"
        )
    return picked


def foreground_mask(reference: Volume, fraction: float = 0.05) -> np.ndarray:
    """Voxels brighter than `fraction` of the reference's range above its min."""
    if not 0.0 <= fraction < 1.0:
        raise ConfigError("foreground fraction must lie in [0, 1)")
    a = reference.data.astype(np.float64)
    lo, hi = float(a.min()), float(a.max())
    if hi <= lo:
        raise DataError("reference volume has zero intensity range")
    return a > lo + fraction * (hi - lo)


def mae(reference: Volume, test: Volume, mask=None) -> float:
    """Mean absolute error over the mask, in [0, 1]-rescaled units."""
    a, b = _rescaled_pair(reference, test)
    m = _resolved_mask(mask, reference.dims)
    return float(np.abs(_checked_values(b, m) - a[m]).mean())


def psnr(reference: Volume, test: Volume, mask=None, data_range: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB; identical inputs give math.inf."""
    if not np.isfinite(data_range) or data_range <= 0:
        raise ConfigError("data_range must be a positive number")
    a, b = _rescaled_pair(reference, test)
    m = _resolved_mask(mask, reference.dims)
    mse = float(((_checked_values(b, m) - a[m]) ** 2).mean())
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(data_range**2 / mse)


def _gaussian_window(values: np.ndarray) -> np.ndarray:
    offsets = np.arange(WINDOW, dtype=np.float64) - MARGIN
    kernel = np.exp(-0.5 * (offsets / SIGMA) ** 2)
    kernel /= kernel.sum()
    out = values
    for axis in range(3):
        out = correlate1d(out, kernel, axis=axis, mode="constant")
    return out


def ssim3d(reference: Volume, test: Volume, mask=None) -> float:
    """Mean structural similarity over voxels with fully valid windows.

    The mask picks which voxels are *averaged* (interest); window
    statistics draw on every finite test voxel regardless of the mask.
    A voxel contributes only when its entire 11^3 window fits inside the
    volume and contains no non-finite test values, so with the default
    full-grid mask this is exactly the margin-5 interior.
    """
    a, b = _rescaled_pair(reference, test)
    if min(reference.dims) < WINDOW:
        raise DataError(
            f"volume dims {reference.dims} are smaller than the "
            f"{WINDOW}^3 SSIM window"
        )
    m = _resolved_mask(mask, reference.dims)
    valid = np.isfinite(b)
    b = np.where(valid, b, 0.0)

    mu_a = _gaussian_window(a)
    mu_b = _gaussian_window(b)
    var_a = _gaussian_window(a * a) - mu_a * mu_a
    var_b = _gaussian_window(b * b) - mu_b * mu_b
    cov = _gaussian_window(a * b) - mu_a * mu_b
    c1 = _K1**2
    c2 = _K2**2
    ssim_map = ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) / (
        (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    )

    picked = m & minimum_filter(
        valid.astype(np.uint8), size=WINDOW, mode="constant", cval=0
    ).astype(bool)
    if not picked.any():
        raise DataError(
            "no masked voxel has a fully valid SSIM window "
            "(volume too small, mask outside the interior, or coverage gaps)"
        )
    return float(ssim_map[picked].mean())


def fuse_baseline(
    axial: Volume,
    coronal: Volume,
    *,
    like: Volume | None = None,
    spacing: float | None = None,
    box_lo=None,
    box_hi=None,
    chunk: int = 262_144,
) -> Volume:
    """Average of both views trilinearly resampled in world space.

    Only the header affines position the views — no estimated alignment —
    which is what makes this the ordering baseline. The target grid
    copies `like`'s dims and affine, or covers a world box (default: the
    union of both views' corner boxes) at an isotropic `spacing`. Where
    one view covers a point, its value is used alone; where neither does,
    the voxel is NaN (invalid), so downstream metrics must mask coverage.
    """
    if chunk < 1:
        raise ConfigError("chunk must be at least 1")
    if like is not None:
        dims: tuple[int, int, int] = like.dims
        affine = like.affine.copy()
    elif spacing is not None:
        if box_lo is None or box_hi is None:
            corners = np.vstack(
                [axial.corner_world_points(), coronal.corner_world_points()]
            )
            box_lo = corners.min(axis=0) if box_lo is None else box_lo
            box_hi = corners.max(axis=0) if box_hi is None else box_hi
        dims, affine = plan_grid(None, spacing, box_lo, box_hi)
    else:
        raise ConfigError("fuse_baseline needs either `like` or a `spacing`")

    rotation = affine[:3, :3]
    origin = affine[:3, 3]
    n_voxels = int(np.prod(dims))
    flat = np.empty(n_voxels, dtype=np.float32)
    for start in range(0, n_voxels, chunk):
        stop = min(start + chunk, n_voxels)
        lin = np.arange(start, stop)
        idx = np.stack(np.unravel_index(lin, dims), axis=1).astype(np.float64)
        world = idx @ rotation.T + origin
        val_a, in_a = trilinear_sample(axial, world)
        val_c, in_c = trilinear_sample(coronal, world)
        total = np.where(in_a, val_a, 0.0) + np.where(in_c, val_c, 0.0)
        count = in_a.astype(np.int64) + in_c.astype(np.int64)
        flat[start:stop] = np.where(
            count > 0, total / np.maximum(count, 1), np.nan
        ).astype(np.float32)
    return Volume(flat.reshape(dims), affine)


def resample_like(volume: Volume, like: Volume, chunk: int = 262_144) -> Volume:
    """Trilinear resampling of `volume` onto `like`'s grid (NaN outside)."""
    if chunk < 1:
        raise ConfigError("chunk must be at least 1")
    dims = like.dims
    n_voxels = int(np.prod(dims))
    flat = np.empty(n_voxels, dtype=np.float32)
    for start in range(0, n_voxels, chunk):
        stop = min(start + chunk, n_voxels)
        lin = np.arange(start, stop)
        idx = np.stack(np.unravel_index(lin, dims), axis=1).astype(np.float64)
        values, _ = trilinear_sample(volume, like.voxel_to_world(idx))
        flat[start:stop] = values
    return Volume(flat.reshape(dims), like.affine.copy())


@dataclass(frozen=True)
class MetricReport:
    """Evaluation summary for one (reference, test) volume pair."""

    reference: str
    test: str
    mask: str
    data_range: str
    values: dict[str, float]

    @staticmethod
    def _format(value: float) -> str:
        if math.isinf(value):
            return "infinite"
        return f"{value:.6f}"

    def to_text(self) -> str:
        lines = [
            f"reference = {self.reference}",
            f"test = {self.test}",
            f"mask = {self.mask}",
            f"data_range = {self.data_range}",
        ]
        lines += [f"{k} = {self._format(v)}" for k, v in self.values.items()]
        return "\n".join(lines) + "\n"

    @staticmethod
    def _csv(cells: list[str]) -> str:
        buffer = io.StringIO()
        csv.writer(buffer, lineterminator="").writerow(cells)
        return buffer.getvalue()

    def csv_header(self) -> str:
        return self._csv(["reference", "test", "mask", "data_range", *self.values])

    def to_csv_row(self) -> str:
        cells = [self.reference, self.test, self.mask, self.data_range]
        cells += [self._format(v) for v in self.values.values()]
        return self._csv(cells)


def evaluate_volumes(
    reference: Volume,
    test: Volume,
    *,
    mask=None,
    mask_description: str = "full grid",
    reference_name: str = "reference",
    test_name: str = "test",
) -> MetricReport:
    """All three metrics bundled into a report."""
    values = {
        "mae": mae(reference, test, mask),
        "psnr": psnr(reference, test, mask),
        "ssim": ssim3d(reference, test, mask),
    }
    return MetricReport(
        reference=reference_name,
        test=test_name,
        mask=mask_description,
        data_range=RANGE_CONVENTION,
        values=values,
    )
