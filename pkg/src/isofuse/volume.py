"""Scalar volumes with voxel-to-world geometry.

Covers reading/writing a deliberate subset of NIfTI-1 (3D, single-file,
uint8/int16/float32/float64, optional gzip), joint coordinate/intensity
normalization across views, and continuous trilinear sampling in world
space. Files are written little-endian float32 with the affine in the
sform; both byte orders are accepted on read.
"""

from __future__ import annotations

import gzip
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError

_HEADER = np.dtype(
    [
        ("sizeof_hdr", "i4"),
        ("data_type", "S10"),
        ("db_name", "S18"),
        ("extents", "i4"),
        ("session_error", "i2"),
        ("regular", "S1"),
        ("dim_info", "u1"),
        ("dim", "i2", (8,)),
        ("intent_p1", "f4"),
        ("intent_p2", "f4"),
        ("intent_p3", "f4"),
        ("intent_code", "i2"),
        ("datatype", "i2"),
        ("bitpix", "i2"),
        ("slice_start", "i2"),
        ("pixdim", "f4", (8,)),
        ("vox_offset", "f4"),
        ("scl_slope", "f4"),
        ("scl_inter", "f4"),
        ("slice_end", "i2"),
        ("slice_code", "u1"),
        ("xyzt_units", "u1"),
        ("cal_max", "f4"),
        ("cal_min", "f4"),
        ("slice_duration", "f4"),
        ("toffset", "f4"),
        ("glmax", "i4"),
        ("glmin", "i4"),
        ("descrip", "S80"),
        ("aux_file", "S24"),
        ("qform_code", "i2"),
        ("sform_code", "i2"),
        ("quatern_b", "f4"),
        ("quatern_c", "f4"),
        ("quatern_d", "f4"),
        ("qoffset_x", "f4"),
        ("qoffset_y", "f4"),
        ("qoffset_z", "f4"),
        ("srow_x", "f4", (4,)),
        ("srow_y", "f4", (4,)),
        ("srow_z", "f4", (4,)),
        ("intent_name", "S16"),
        ("magic", "S4"),
    ]
)
assert _HEADER.itemsize == 348

_DTYPE_CODES = {2: np.uint8, 4: np.int16, 16: np.float32, 64: np.float64}
_CODE_FOR = {np.dtype(v): k for k, v in _DTYPE_CODES.items()}


@dataclass(frozen=True)
class Volume:
    """An immutable 3D scalar image with a voxel-index-to-world-mm affine."""

    data: np.ndarray
    affine: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float32)
        affine = np.asarray(self.affine, dtype=np.float64)
        if data.ndim != 3 or min(data.shape) < 1:
            raise DataError(f"volume data must be 3D, got shape {data.shape}")
        if affine.shape != (4, 4):
            raise DataError(f"affine must be 4x4, got {affine.shape}")
        if abs(np.linalg.det(affine[:3, :3])) < 1e-12:
            raise DataError("affine rotation/scaling block is singular")
        data = data.copy()
        data.flags.writeable = False
        affine = affine.copy()
        affine.flags.writeable = False
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "affine", affine)

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.data.shape

    @property
    def spacing(self) -> np.ndarray:
        """Column norms of the affine: voxel edge lengths in mm."""
        return np.linalg.norm(self.affine[:3, :3], axis=0)

    def voxel_to_world(self, index) -> np.ndarray:
        """Map (possibly fractional) voxel indices (..., 3) to world mm."""
        idx = np.asarray(index, dtype=np.float64)
        return idx @ self.affine[:3, :3].T + self.affine[:3, 3]

    def world_to_voxel(self, points) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64)
        inv = np.linalg.inv(self.affine[:3, :3])
        return (pts - self.affine[:3, 3]) @ inv.T

    def corner_world_points(self) -> np.ndarray:
        """World positions of the 8 outermost voxel centers."""
        nx, ny, nz = self.dims
        corners = [
            (i, j, k)
            for i in (0, nx - 1)
            for j in (0, ny - 1)
            for k in (0, nz - 1)
        ]
        return self.voxel_to_world(np.array(corners, dtype=np.float64))


def _quaternion_affine(hdr) -> np.ndarray:
    b = float(hdr["quatern_b"])
    c = float(hdr["quatern_c"])
    d = float(hdr["quatern_d"])
    a = np.sqrt(max(0.0, 1.0 - b * b - c * c - d * d))
    rot = np.array(
        [
            [a * a + b * b - c * c - d * d, 2 * (b * c - a * d), 2 * (b * d + a * c)],
            [2 * (b * c + a * d), a * a + c * c - b * b - d * d, 2 * (c * d - a * b)],
            [2 * (b * d - a * c), 2 * (c * d + a * b), a * a + d * d - b * b - c * c],
        ]
    )
    pixdim = np.asarray(hdr["pixdim"], dtype=np.float64)
    qfac = -1.0 if pixdim[0] < 0 else 1.0
    scales = np.array([pixdim[1], pixdim[2], pixdim[3] * qfac])
    affine = np.eye(4)
    affine[:3, :3] = rot * scales
    affine[:3, 3] = [hdr["qoffset_x"], hdr["qoffset_y"], hdr["qoffset_z"]]
    return affine


def _read_bytes(path: Path) -> bytes:
    with open(path, "rb") as fh:
        head = fh.read(2)
        fh.seek(0)
        if head == b"\x1f\x8b":
            with gzip.open(fh) as gz:
                return gz.read()
        return fh.read()


def read_volume(path) -> Volume:
    """Load a single-file NIfTI-1 image (optionally gzipped)."""
    path = Path(path)
    if not path.is_file():
        raise DataError(f"no such file: {path}")
    raw = _read_bytes(path)
    if len(raw) < 352:
        raise DataError(f"{path}: too short to hold a NIfTI-1 header")

    order = None
    for candidate in ("<", ">"):
        if int(np.frombuffer(raw, f"{candidate}i4", count=1)[0]) == 348:
            order = candidate
            break
    if order is None:
        raise DataError(f"{path}: not a NIfTI-1 file (sizeof_hdr != 348)")
    hdr = np.frombuffer(raw, dtype=_HEADER.newbyteorder(order), count=1)[0]

    magic = bytes(hdr["magic"]).rstrip(b"\x00")
    if magic == b"ni1":
        raise DataError(f"{path}: detached .hdr/.img pairs are not supported")
    if magic != b"n+1":
        raise DataError(f"{path}: bad NIfTI magic {magic!r}")

    ndim = int(hdr["dim"][0])
    dims = [int(v) for v in hdr["dim"][1 : max(ndim, 1) + 1]]
    if ndim < 3 or any(v < 1 for v in dims):
        raise DataError(f"{path}: expected a 3D image, got dim={dims}")
    if ndim > 3:
        if int(np.prod(dims[3:])) != 1:
            raise DataError(f"{path}: 4D images are not supported (dim={dims})")
        dims = dims[:3]
    nx, ny, nz = dims

    code = int(hdr["datatype"])
    if code not in _DTYPE_CODES:
        raise DataError(f"{path}: unsupported NIfTI datatype code {code}")
    dtype = np.dtype(_DTYPE_CODES[code]).newbyteorder(order)

    offset = int(round(float(hdr["vox_offset"])))
    if offset < 348:
        raise DataError(f"{path}: corrupt vox_offset {offset}")
    count = nx * ny * nz
    if len(raw) < offset + count * dtype.itemsize:
        raise DataError(f"{path}: file truncated before end of voxel data")
    voxels = np.frombuffer(raw, dtype=dtype, count=count, offset=offset)
    data = voxels.reshape((nx, ny, nz), order="F").astype(np.float32)

    slope = float(hdr["scl_slope"])
    inter = float(hdr["scl_inter"])
    if np.isfinite(slope) and slope != 0.0 and (slope, inter) != (1.0, 0.0):
        data = data * np.float32(slope) + np.float32(inter)

    if int(hdr["sform_code"]) > 0:
        affine = np.eye(4)
        affine[0] = hdr["srow_x"]
        affine[1] = hdr["srow_y"]
        affine[2] = hdr["srow_z"]
    elif int(hdr["qform_code"]) > 0:
        affine = _quaternion_affine(hdr)
    else:
        pixdim = np.asarray(hdr["pixdim"][1:4], dtype=np.float64)
        pixdim[pixdim == 0] = 1.0
        affine = np.diag([*pixdim, 1.0])
    return Volume(data, affine)


def write_volume(volume: Volume, path, *, dtype=np.float32) -> None:
    """Write a little-endian single-file NIfTI-1 with sform = affine.

    Voxels are stored as float32 unless another supported dtype is named;
    integer dtypes only make sense for integral data. Gzip output (with a
    fixed mtime, so bytes are reproducible) is selected by a ``.gz`` suffix.
    """
    path = Path(path)
    dtype = np.dtype(dtype)
    if dtype not in _CODE_FOR:
        raise DataError(f"unsupported output dtype {dtype}")
    hdr = np.zeros((), dtype=_HEADER.newbyteorder("<"))
    hdr["sizeof_hdr"] = 348
    hdr["regular"] = b"r"
    nx, ny, nz = volume.dims
    hdr["dim"] = [3, nx, ny, nz, 1, 1, 1, 1]
    hdr["datatype"] = _CODE_FOR[dtype]
    hdr["bitpix"] = dtype.itemsize * 8
    hdr["pixdim"] = [1.0, *volume.spacing, 0.0, 0.0, 0.0, 0.0]
    hdr["vox_offset"] = 352.0
    hdr["scl_slope"] = 1.0
    hdr["scl_inter"] = 0.0
    hdr["sform_code"] = 1
    hdr["qform_code"] = 0
    hdr["srow_x"] = volume.affine[0]
    hdr["srow_y"] = volume.affine[1]
    hdr["srow_z"] = volume.affine[2]
    hdr["magic"] = b"n+1"

    payload = volume.data.astype(dtype.newbyteorder("<")).tobytes(order="F")
    blob = hdr.tobytes() + b"\x00\x00\x00\x00" + payload
    if path.suffix == ".gz":
        with open(path, "wb") as fh:
            with gzip.GzipFile(fileobj=fh, filename="", mode="wb", mtime=0) as gz:
                gz.write(blob)
    else:
        path.write_bytes(blob)


@dataclass(frozen=True)
class NormalizationFrame:
    """Shared world-box and intensity bounds mapping both views to [-1, 1]."""

    box_lo: np.ndarray
    box_hi: np.ndarray
    lo: float
    hi: float

    def __post_init__(self):
        lo = np.asarray(self.box_lo, dtype=np.float64).reshape(3)
        hi = np.asarray(self.box_hi, dtype=np.float64).reshape(3)
        if not np.all(hi > lo):
            raise DataError(f"world box has non-positive extent: {hi - lo}")
        if not self.hi > self.lo:
            raise DataError("constant-intensity input: intensity hi must exceed lo")
        object.__setattr__(self, "box_lo", lo)
        object.__setattr__(self, "box_hi", hi)

    def world_to_normalized(self, points) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64)
        return 2.0 * (pts - self.box_lo) / (self.box_hi - self.box_lo) - 1.0

    def normalized_to_world(self, coords) -> np.ndarray:
        x = np.asarray(coords, dtype=np.float64)
        return self.box_lo + (x + 1.0) * 0.5 * (self.box_hi - self.box_lo)

    def normalize_intensity(self, values) -> np.ndarray:
        v = np.asarray(values, dtype=np.float64)
        return 2.0 * (v - self.lo) / (self.hi - self.lo) - 1.0

    def denormalize_intensity(self, values) -> np.ndarray:
        v = np.asarray(values, dtype=np.float64)
        return self.lo + (v + 1.0) * 0.5 * (self.hi - self.lo)

    def to_array(self) -> np.ndarray:
        return np.array([*self.box_lo, *self.box_hi, self.lo, self.hi])

    @classmethod
    def from_array(cls, arr) -> "NormalizationFrame":
        arr = np.asarray(arr, dtype=np.float64).reshape(8)
        return cls(arr[0:3], arr[3:6], float(arr[6]), float(arr[7]))


def build_normalization(
    views: list[Volume], *, percentile_clip: bool = False
) -> NormalizationFrame:
    """Joint frame over all views: union world box, shared intensity bounds.

    Intensity bounds are the joint min/max by default; with
    ``percentile_clip`` the 0.1/99.9 percentiles are used instead to shrug
    off hot voxels in real acquisitions.
    """
    if not views:
        raise DataError("need at least one view to build a normalization frame")
    corners = np.concatenate([v.corner_world_points() for v in views], axis=0)
    box_lo = corners.min(axis=0)
    box_hi = corners.max(axis=0)
    if percentile_clip:
        joint = np.concatenate([v.data.reshape(-1) for v in views])
        lo, hi = (float(x) for x in np.percentile(joint, [0.1, 99.9]))
    else:
        lo = float(min(v.data.min() for v in views))
        hi = float(max(v.data.max() for v in views))
    return NormalizationFrame(box_lo, box_hi, lo, hi)


def trilinear_sample(volume: Volume, points, mode: str = "nan") -> tuple[np.ndarray, np.ndarray]:
    """Sample at world points (N, 3): returns (values, inside) arrays.

    A point is inside when every fractional voxel index lies in
    [0, dim - 1]. With the default ``mode="nan"`` outside points carry
    NaN in ``values`` so accidental use without the mask is loud rather
    than silently zero-filled; ``mode="edge"`` keeps the clamped boundary
    sample instead (for callers whose points only leave the box by
    rounding error).
    """
    if mode not in ("nan", "edge"):
        raise DataError(f"unknown sampling mode {mode!r}")
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise DataError(f"expected (N, 3) world points, got {pts.shape}")
    vox = volume.world_to_voxel(pts)
    dims = np.array(volume.dims, dtype=np.float64)
    inside = np.all((vox >= 0.0) & (vox <= dims - 1.0), axis=1)

    clipped = np.clip(vox, 0.0, dims - 1.0)
    base = np.minimum(np.floor(clipped), np.maximum(dims - 2.0, 0.0)).astype(np.int64)
    frac = clipped - base
    data = volume.data
    upper = (np.array(volume.dims) - 1).astype(np.int64)

    values = np.zeros(pts.shape[0], dtype=np.float64)
    for dx in (0, 1):
        for dy in (0, 1):
            for dz in (0, 1):
                ii = np.minimum(base[:, 0] + dx, upper[0])
                jj = np.minimum(base[:, 1] + dy, upper[1])
                kk = np.minimum(base[:, 2] + dz, upper[2])
                w = (
                    (frac[:, 0] if dx else 1.0 - frac[:, 0])
                    * (frac[:, 1] if dy else 1.0 - frac[:, 1])
                    * (frac[:, 2] if dz else 1.0 - frac[:, 2])
                )
                values += w * data[ii, jj, kk]
    out = values.astype(np.float32)
    if mode == "nan":
        out[~inside] = np.nan
    return out, inside
