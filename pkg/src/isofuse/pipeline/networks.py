"""The two coordinate networks: intensity model and displacement model."""

from __future__ import annotations

import numpy as np

from ..encoding import FourierFeatures, HashGrid
from ..engine import (
    ParamStore,
    Tensor,
    add,
    add_bias,
    concat,
    constant,
    matmul,
    relu,
    reshape,
    sine,
)
from ..errors import ConfigError


def _linear_params(store, rng, prefix, fan_in, fan_out, *, bound=None, zero=False):
    if zero:
        w = np.zeros((fan_in, fan_out))
        b = np.zeros(fan_out)
    else:
        if bound is None:
            bound = np.sqrt(6.0 / fan_in)
        w = rng.uniform(-bound, bound, size=(fan_in, fan_out))
        b = np.zeros(fan_out)
    return store.add(f"{prefix}.w", w), store.add(f"{prefix}.b", b)


class IntensityNet:
    """Coordinate-to-intensity model: encoder features + raw coordinates
    through a ReLU MLP with one linear output unit.

    The MLP input width is encoder width + 3, the raw normalized
    coordinates being appended after the encoded features.
    """

    def __init__(
        self,
        rng: np.random.Generator,
        *,
        encoder: str = "hash",
        levels: int = 16,
        features: int = 32,
        table_size: int = 2**19,
        n_min: int = 16,
        n_max: int = 2048,
        fourier_sigma: float = 10.0,
        hidden: tuple[int, ...] = (1024, 1024, 1024, 1024),
        dtype=np.float32,
    ):
        if not hidden:
            raise ConfigError("intensity MLP needs at least one hidden layer")
        self.store = ParamStore(dtype)
        if encoder == "hash":
            self.encoder = HashGrid(
                self.store,
                rng,
                levels=levels,
                features=features,
                table_size=table_size,
                n_min=n_min,
                n_max=n_max,
            )
        elif encoder == "fourier":
            self.encoder = FourierFeatures(
                rng, levels=levels, features=features, sigma=fourier_sigma
            )
        else:
            raise ConfigError(f"unknown encoder kind {encoder!r}")
        self.hidden = tuple(hidden)
        self.levels = levels

        widths = [self.encoder.width + 3, *hidden, 1]
        self.layers = [
            _linear_params(self.store, rng, f"mlp.{i}", widths[i], widths[i + 1])
            for i in range(len(widths) - 1)
        ]

    @property
    def input_width(self) -> int:
        return self.encoder.width + 3

    def forward(self, coords, active_levels: int | None = None) -> Tensor:
        """Predicted normalized intensity per coordinate, shape (n,)."""
        x = coords if isinstance(coords, Tensor) else constant(coords)
        feats = self.encoder.encode(x, active_levels)
        h = concat([feats, x], axis=1)
        last = len(self.layers) - 1
        for i, (w, b) in enumerate(self.layers):
            h = add_bias(matmul(h, w), b)
            if i != last:
                h = relu(h)
        return reshape(h, (h.shape[0],))

    def frozen_copy(self, dtype=np.float64) -> "IntensityNet":
        """A non-trainable twin in another dtype (hash tables included).

        Used by the registration phase, which needs the intensity model's
        values and input-coordinate gradients but must never update it.
        """
        twin = object.__new__(IntensityNet)
        twin.store = ParamStore(dtype)
        twin.hidden = self.hidden
        twin.levels = self.levels
        if isinstance(self.encoder, HashGrid):
            src = self.encoder
            twin.encoder = HashGrid(
                twin.store,
                np.random.default_rng(0),
                levels=src.levels,
                features=src.features,
                table_size=src.table_size,
                n_min=src.n_min,
                n_max=src.n_max,
            )
            for mine, theirs in zip(twin.encoder.tables, src.tables):
                mine.data[...] = theirs.data
        else:
            twin.encoder = self.encoder  # frequency rows are dtype-agnostic
        twin.layers = []
        for i, (w, b) in enumerate(self.layers):
            twin.layers.append(
                (
                    twin.store.add(f"mlp.{i}.w", w.data),
                    twin.store.add(f"mlp.{i}.b", b.data),
                )
            )
        twin.store.set_trainable(False)
        return twin


class DisplacementNet:
    """Sine-activated displacement field g: x -> delta, with x' = x + delta.

    The final layer starts at exactly zero so the transform is the identity
    at initialization. First-layer weights are uniform in +-1/fan_in and
    hidden layers in +-sqrt(6/fan_in)/omega0.
    """

    def __init__(
        self,
        rng: np.random.Generator,
        *,
        hidden: tuple[int, ...] = (256, 256, 256),
        omega0: float = 32.0,
        dtype=np.float64,
    ):
        if not hidden:
            raise ConfigError("displacement net needs at least one hidden layer")
        if omega0 <= 0:
            raise ConfigError("omega0 must be positive")
        self.omega0 = float(omega0)
        self.hidden = tuple(hidden)
        self.store = ParamStore(dtype)
        widths = [3, *hidden, 3]
        self.layers = []
        for i in range(len(widths) - 1):
            first = i == 0
            final = i == len(widths) - 2
            self.layers.append(
                _linear_params(
                    self.store,
                    rng,
                    f"siren.{i}",
                    widths[i],
                    widths[i + 1],
                    bound=None if final else (
                        1.0 / widths[i] if first else np.sqrt(6.0 / widths[i]) / omega0
                    ),
                    zero=final,
                )
            )

    def displacement(self, coords) -> Tensor:
        x = coords if isinstance(coords, Tensor) else constant(coords)
        h = x
        last = len(self.layers) - 1
        for i, (w, b) in enumerate(self.layers):
            h = add_bias(matmul(h, w), b)
            if i != last:
                h = sine(h, self.omega0)
        return h

    def transform(self, coords) -> Tensor:
        """x' = x + g(x)."""
        x = coords if isinstance(coords, Tensor) else constant(coords)
        return add(x, self.displacement(x))
