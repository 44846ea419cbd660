"""Named parameter storage with per-parameter gradient and moment buffers."""

from __future__ import annotations

import numpy as np

from .tape import Tensor
from ..errors import ConfigError


class ParamStore:
    """Flat registry of named parameter arrays plus optimizer state.

    Every entry owns a gradient buffer of identical shape and two moment
    buffers for Adam-style updates. One integer step counter is shared by
    all entries, matching a single optimizer instance driving the store.
    """

    def __init__(self, dtype=np.float32):
        self.dtype = np.dtype(dtype)
        self._params: dict[str, Tensor] = {}
        self._moments: dict[str, tuple[np.ndarray, np.ndarray]] = {}
        self.step_count = 0

    def add(self, name: str, array: np.ndarray) -> Tensor:
        if name in self._params:
            raise ConfigError(f"duplicate parameter name {name!r}")
        # np.array keeps 0-d shapes; ascontiguousarray would promote to 1-d
        data = np.array(array, dtype=self.dtype, order="C", copy=True)
        t = Tensor(data, requires_grad=True, name=name)
        t.grad = np.zeros_like(data)
        self._params[name] = t
        self._moments[name] = (np.zeros_like(data), np.zeros_like(data))
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def names(self) -> list[str]:
        return list(self._params)

    def tensors(self) -> list[Tensor]:
        return list(self._params.values())

    def moments(self, name: str) -> tuple[np.ndarray, np.ndarray]:
        return self._moments[name]

    @property
    def n_params(self) -> int:
        return sum(t.data.size for t in self._params.values())

    def zero_grad(self) -> None:
        for t in self._params.values():
            t.grad.fill(0)

    def reset_optimizer_state(self) -> None:
        """Clear moments and the step counter (a fresh optimizer restart)."""
        for m, v in self._moments.values():
            m.fill(0)
            v.fill(0)
        self.step_count = 0

    def set_trainable(self, flag: bool) -> None:
        """Freeze or unfreeze every parameter (phase boundaries)."""
        for t in self._params.values():
            t.requires_grad = flag

    def state_dict(self) -> dict[str, np.ndarray]:
        """Arrays for checkpointing: values, moments, and the step counter."""
        out: dict[str, np.ndarray] = {}
        for name, t in self._params.items():
            m, v = self._moments[name]
            out[name] = t.data
            out[name + ".m"] = m
            out[name + ".v"] = v
        out["__step__"] = np.asarray(self.step_count, dtype=np.int64)
        return out

    def load_state_dict(self, arrays: dict[str, np.ndarray]) -> None:
        for name, t in self._params.items():
            for key, buf in ((name, t.data),) + tuple(
                zip((name + ".m", name + ".v"), self._moments[name])
            ):
                if key not in arrays:
                    raise ConfigError(f"state is missing parameter {key!r}")
                src = arrays[key]
                if src.shape != buf.shape:
                    raise ConfigError(
                        f"parameter {key!r}: stored shape {src.shape} does not "
                        f"match architecture shape {buf.shape}"
                    )
                np.copyto(buf, src.astype(self.dtype, copy=False))
        self.step_count = int(arrays["__step__"])
