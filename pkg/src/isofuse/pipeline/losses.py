"""Training losses: masked reconstruction error, batch-global NCC, and a
finite-difference bending-energy penalty."""

from __future__ import annotations

import numpy as np

from ..engine import (
    Tensor,
    absolute,
    add,
    add_scaled,
    constant,
    div,
    mean_all,
    mul,
    rows,
    scale,
    sqrt,
    square,
    sub,
    sum_all,
)
from ..errors import ConfigError, DataError, NumericalError


def reconstruction_loss(pred: Tensor, batch, kind: str = "mse") -> Tensor:
    """Mean squared (or absolute) error over the batch's valid entries."""
    n_valid = int(batch.valid.sum())
    if n_valid == 0:
        raise DataError("reconstruction batch has no valid entries")
    residual = sub(pred, constant(batch.targets, dtype=pred.dtype))
    if kind == "mse":
        per_point = square(residual)
    elif kind == "l1":
        per_point = absolute(residual)
    else:
        raise ConfigError(f"unknown reconstruction loss {kind!r}")
    if bool(batch.valid.all()):
        return mean_all(per_point)
    keep = constant(batch.valid.astype(pred.dtype))
    return scale(sum_all(mul(per_point, keep)), 1.0 / n_valid)


def _centered(x: Tensor) -> tuple[Tensor, Tensor]:
    m = mean_all(x)
    centered = add_scaled(x, m, -1.0)
    std = sqrt(mean_all(square(centered)))
    return centered, std


def ncc(a: Tensor, b: Tensor) -> Tensor:
    """Pearson-style normalized cross-correlation over the whole batch.

    Computed globally (point batches have no window structure). A signal
    whose batch standard deviation vanishes has no correlation to measure,
    so that raises rather than returning a made-up value.
    """
    if a.data.size < 2 or a.data.shape != b.data.shape:
        raise ConfigError(
            f"ncc needs two equal-length vectors of >= 2 entries, "
            f"got {a.data.shape} and {b.data.shape}"
        )
    ca, sa = _centered(a)
    cb, sb = _centered(b)
    for name, tensor, s in (("first", a, sa), ("second", b, sb)):
        # Below sqrt(eps) of the signal's own scale, the batch is constant
        # up to rounding and the correlation would be pure noise.
        eps = np.finfo(tensor.data.dtype).eps
        tol = np.sqrt(eps) * (1.0 + abs(float(tensor.data.mean())))
        if float(s.data) < tol:
            raise NumericalError(f"constant signal under NCC ({name} argument)")
    return div(mean_all(mul(ca, cb)), mul(sa, sb))


_AXES = np.eye(3)
_MIXED_PAIRS = ((0, 1), (0, 2), (1, 2))


def bending_energy(net, points: np.ndarray, h: float = 1e-3, dtype=np.float64) -> Tensor:
    """Mean curvature penalty of the displacement field at probe points.

    Second derivatives of each displacement component are estimated by
    central finite differences with step ``h``; the penalty per point is
    the sum of squared pure terms plus twice the squared mixed terms,
    averaged over the probe set. Probe points are pulled inward so every
    stencil evaluation stays inside [-1, 1]^3.

    With ``dtype`` float32, ``h`` should be raised (1e-2 rather than the
    float64 default of 1e-3) so the second differences stay well above
    evaluation rounding noise.
    """
    if h <= 0:
        raise ConfigError("finite-difference step must be positive")
    pts = np.clip(np.asarray(points, dtype=np.float64), -1.0 + 2 * h, 1.0 - 2 * h)
    n = pts.shape[0]
    if n == 0:
        raise ConfigError("bending energy needs at least one probe point")

    # All 19 stencil shifts evaluated as one batched forward pass:
    # [center, +x, -x, +y, -y, +z, -z, then (++, +-, --, -+) per axis pair].
    offsets = [np.zeros(3)]
    for a in range(3):
        offsets += [h * _AXES[a], -h * _AXES[a]]
    for a, b in _MIXED_PAIRS:
        ea, eb = h * _AXES[a], h * _AXES[b]
        offsets += [ea + eb, ea - eb, -ea - eb, -ea + eb]
    stacked = (pts[None, :, :] + np.asarray(offsets)[:, None, :]).reshape(-1, 3)
    field = net.displacement(constant(stacked.astype(dtype)))

    def block(i: int) -> Tensor:
        return rows(field, i * n, (i + 1) * n)

    center = block(0)
    inv_h2 = 1.0 / (h * h)
    total: Tensor | None = None

    def accumulate(term: Tensor, weight: float):
        nonlocal total
        piece = scale(sum_all(square(term)), weight)
        total = piece if total is None else add(total, piece)

    for a in range(3):
        plus, minus = block(1 + 2 * a), block(2 + 2 * a)
        second = scale(add(sub(plus, scale(center, 2.0)), minus), inv_h2)
        accumulate(second, 1.0)

    inv_4h2 = 1.0 / (4.0 * h * h)
    for pair in range(3):
        pp, pm, mm, mp = (block(7 + 4 * pair + j) for j in range(4))
        mixed = scale(add(sub(pp, pm), sub(mm, mp)), inv_4h2)
        accumulate(mixed, 2.0)

    return scale(total, 1.0 / n)
