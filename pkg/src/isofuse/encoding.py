"""Coordinate encoders: a learnable multi-resolution hash grid and a fixed
sinusoidal feature map used as an ablation alternative.

Both encoders map normalized coordinates in [-1, 1]^3 to a ``levels *
features`` wide vector and support masking out the finest levels during
early training. The hash grid carries its feature tables in a
:class:`~isofuse.engine.ParamStore` so gradients flow into them; the
sinusoidal map is frozen by construction.
"""

from __future__ import annotations

import math

import numpy as np

from .engine.params import ParamStore
from .engine.tape import Tensor, _node, constant
from .errors import ConfigError

_PRIMES = (1, 2654435761, 805459861)
_CORNERS = [(dx, dy, dz) for dx in (0, 1) for dy in (0, 1) for dz in (0, 1)]


def level_resolution(level: int, n_min: int, n_max: int, levels: int) -> int:
    """Per-axis grid resolution of one level under geometric growth.

    The growth factor is chosen so the coarsest level lands on ``n_min`` and
    the finest on ``n_max``; the small epsilon keeps the top level from
    flooring to ``n_max - 1`` when the float product rounds down.
    """
    if levels == 1:
        return int(n_max)
    growth = math.exp((math.log(n_max) - math.log(n_min)) / (levels - 1))
    return int(math.floor(n_min * growth**level + 1e-9))


def hash_index(cells: np.ndarray, resolution: int, table_size: int) -> np.ndarray:
    """Rows of one level's table for integer lattice coordinates.

    Levels whose full lattice fits in the table are indexed densely (and so
    collision-free); finer levels fold through an XOR-of-primes spatial
    hash. All arithmetic is int64, exact for any supported resolution.
    """
    cells = np.asarray(cells, dtype=np.int64)
    side = resolution + 1
    if side**3 <= table_size:
        return cells[..., 0] + side * cells[..., 1] + side * side * cells[..., 2]
    h = cells[..., 0] * _PRIMES[0]
    h = np.bitwise_xor(h, cells[..., 1] * _PRIMES[1])
    h = np.bitwise_xor(h, cells[..., 2] * _PRIMES[2])
    return h % table_size


def _as_points(coords) -> Tensor:
    t = coords if isinstance(coords, Tensor) else constant(np.asarray(coords))
    if t.data.ndim != 2 or t.data.shape[1] != 3:
        raise ConfigError(f"expected (batch, 3) coordinates, got {t.data.shape}")
    return t


class HashGrid:
    """Multi-resolution hash encoding over [-1, 1]^3.

    Each of ``levels`` lattices has a ``table_size x features`` learnable
    table; a point is encoded per level by trilinearly blending the table
    rows of the 8 corners of its enclosing cell, and the level slices are
    concatenated coarsest-first. Coordinates outside [-1, 1] are clamped
    and counted in ``clamp_count``.
    """

    def __init__(
        self,
        store: ParamStore,
        rng: np.random.Generator,
        *,
        levels: int = 16,
        features: int = 32,
        table_size: int = 2**19,
        n_min: int = 16,
        n_max: int = 2048,
        prefix: str = "encoder",
    ):
        if levels < 1 or features < 1 or table_size < 8:
            raise ConfigError("hash grid needs levels >= 1, features >= 1, table_size >= 8")
        if n_min < 1 or n_max < n_min:
            raise ConfigError(f"bad resolution span [{n_min}, {n_max}]")
        self.levels = levels
        self.features = features
        self.table_size = table_size
        self.n_min = n_min
        self.n_max = n_max
        self.resolutions = [
            level_resolution(l, n_min, n_max, levels) for l in range(levels)
        ]
        if levels > 1 and any(
            b <= a for a, b in zip(self.resolutions, self.resolutions[1:])
        ):
            raise ConfigError(
                f"level resolutions must be strictly increasing, got {self.resolutions}"
            )
        self.tables = [
            store.add(
                f"{prefix}.level{l:02d}",
                rng.uniform(-1e-4, 1e-4, size=(table_size, features)),
            )
            for l in range(levels)
        ]
        self.clamp_count = 0

    @property
    def width(self) -> int:
        return self.levels * self.features

    def encode(self, coords, active_levels: int | None = None) -> Tensor:
        x = _as_points(coords)
        k = self.levels if active_levels is None else int(active_levels)
        if not 1 <= k <= self.levels:
            raise ConfigError(f"active level count {k} outside [1, {self.levels}]")

        pts = x.data
        clamped = np.clip(pts, -1.0, 1.0)
        hit_clamp = clamped != pts
        n_clamped = int(np.count_nonzero(np.any(hit_clamp, axis=1)))
        self.clamp_count += n_clamped

        batch = pts.shape[0]
        dtype = self.tables[0].data.dtype
        feats = self.features
        out = np.zeros((batch, self.width), dtype=dtype)
        saved = []
        for l in range(k):
            n = self.resolutions[l]
            u = (clamped.astype(dtype, copy=False) + 1.0) * dtype.type(0.5 * n)
            cell = np.floor(u).astype(np.int64)
            np.clip(cell, 0, n - 1, out=cell)
            frac = (u - cell).astype(dtype, copy=False)
            table = self.tables[l].data
            level_out = np.zeros((batch, feats), dtype=dtype)
            rows = np.empty((8, batch), dtype=np.int64)
            weights = np.empty((8, batch), dtype=dtype)
            for c, offset in enumerate(_CORNERS):
                idx = hash_index(cell + offset, n, self.table_size)
                w = np.ones(batch, dtype=dtype)
                for axis, on in enumerate(offset):
                    w = w * (frac[:, axis] if on else 1.0 - frac[:, axis])
                level_out += w[:, None] * table[idx]
                rows[c] = idx
                weights[c] = w
            out[:, l * feats : (l + 1) * feats] = level_out
            saved.append((n, frac, rows, weights))

        parents = [x] + [self.tables[l] for l in range(k)]
        pass_through = None if n_clamped == 0 else ~hit_clamp

        def vjp(g):
            grads: list = [None] * len(parents)
            gx = np.zeros((batch, 3), dtype=g.dtype) if x.requires_grad else None
            for l in range(k):
                n, frac, rows, weights = saved[l]
                gl = g[:, l * feats : (l + 1) * feats]
                table = self.tables[l].data
                if self.tables[l].requires_grad:
                    flat_rows = rows.reshape(-1)
                    flat_w = weights.reshape(-1)
                    gt = np.empty_like(table)
                    for j in range(feats):
                        gt[:, j] = np.bincount(
                            flat_rows,
                            weights=flat_w * np.tile(gl[:, j], 8),
                            minlength=self.table_size,
                        )
                    grads[1 + l] = gt
                if gx is not None:
                    half_n = 0.5 * n
                    fax = [(1.0 - frac[:, a], frac[:, a]) for a in range(3)]
                    for c, (dx, dy, dz) in enumerate(_CORNERS):
                        r = (table[rows[c]] * gl).sum(axis=1)
                        wx, wy, wz = fax[0][dx], fax[1][dy], fax[2][dz]
                        sx = 1.0 if dx else -1.0
                        sy = 1.0 if dy else -1.0
                        sz = 1.0 if dz else -1.0
                        gx[:, 0] += (sx * half_n) * wy * wz * r
                        gx[:, 1] += (sy * half_n) * wx * wz * r
                        gx[:, 2] += (sz * half_n) * wx * wy * r
            if gx is not None:
                if pass_through is not None:
                    gx *= pass_through
                grads[0] = gx.astype(x.data.dtype, copy=False)
            return grads

        return _node(out, parents, vjp)


class FourierFeatures:
    """Fixed Gaussian random feature map matching the hash grid's layout.

    ``levels * features / 2`` frequency rows are drawn once from N(0, sigma)
    and sorted by magnitude, so masking the finest levels removes the
    highest-frequency bands — the same coarse-to-fine semantics as the hash
    grid. Each level slice is [sin(2*pi*B_l x), cos(2*pi*B_l x)].
    """

    def __init__(
        self,
        rng: np.random.Generator,
        *,
        levels: int = 16,
        features: int = 32,
        sigma: float = 10.0,
    ):
        if levels < 1 or features < 2 or features % 2:
            raise ConfigError("sinusoidal map needs levels >= 1 and even features >= 2")
        rows = levels * features // 2
        freq = rng.normal(0.0, sigma, size=(rows, 3))
        order = np.argsort(np.linalg.norm(freq, axis=1), kind="stable")
        self.frequencies = freq[order]
        self.levels = levels
        self.features = features
        self.clamp_count = 0

    @property
    def width(self) -> int:
        return self.levels * self.features

    def encode(self, coords, active_levels: int | None = None) -> Tensor:
        x = _as_points(coords)
        k = self.levels if active_levels is None else int(active_levels)
        if not 1 <= k <= self.levels:
            raise ConfigError(f"active level count {k} outside [1, {self.levels}]")

        pts = x.data
        clamped = np.clip(pts, -1.0, 1.0)
        hit_clamp = clamped != pts
        self.clamp_count += int(np.count_nonzero(np.any(hit_clamp, axis=1)))

        dtype = pts.dtype
        batch = pts.shape[0]
        half = self.features // 2
        bands = (2.0 * np.pi * self.frequencies[: k * half]).astype(dtype)
        phase = clamped @ bands.T  # (batch, k*half)
        out = np.zeros((batch, self.width), dtype=dtype)
        for l in range(k):
            cols = slice(l * half, (l + 1) * half)
            base = l * self.features
            out[:, base : base + half] = np.sin(phase[:, cols])
            out[:, base + half : base + self.features] = np.cos(phase[:, cols])

        pass_through = None if not hit_clamp.any() else ~hit_clamp

        def vjp(g):
            if not x.requires_grad:
                return [None]
            gphase = np.empty((batch, k * half), dtype=g.dtype)
            for l in range(k):
                cols = slice(l * half, (l + 1) * half)
                base = l * self.features
                gphase[:, cols] = g[:, base : base + half] * np.cos(phase[:, cols]) - g[
                    :, base + half : base + self.features
                ] * np.sin(phase[:, cols])
            gx = gphase @ bands
            if pass_through is not None:
                gx *= pass_through
            return [gx.astype(x.data.dtype, copy=False)]

        return _node(out, [x], vjp)
