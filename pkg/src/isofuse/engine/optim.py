"""Adam and decoupled-weight-decay Adam with cosine learning-rate annealing."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .params import ParamStore
from ..errors import ConfigError, NumericalError

KIND_ADAM = "adam"
KIND_ADAMW = "adamw"

SCHEDULE_CONSTANT = "constant"
SCHEDULE_COSINE = "cosine"


@dataclass(frozen=True)
class OptimizerSpec:
    """Hyperparameters of one optimizer instance."""

    kind: str = KIND_ADAMW
    lr: float = 1e-3
    weight_decay: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    schedule: str = SCHEDULE_CONSTANT
    total_steps: int = 0
    lr_floor: float = 0.0

    def __post_init__(self):
        if self.kind not in (KIND_ADAM, KIND_ADAMW):
            raise ConfigError(f"unknown optimizer kind {self.kind!r}")
        if not 0.0 < self.beta1 < 1.0 or not 0.0 < self.beta2 < 1.0:
            raise ConfigError("betas must lie strictly inside (0, 1)")
        if self.eps <= 0.0:
            raise ConfigError("eps must be positive")
        if self.lr <= 0.0:
            raise ConfigError("learning rate must be positive")
        if self.weight_decay < 0.0:
            raise ConfigError("weight decay must be non-negative")
        if self.kind == KIND_ADAM and self.weight_decay != 0.0:
            raise ConfigError("plain adam does not take a weight-decay term")
        if self.schedule not in (SCHEDULE_CONSTANT, SCHEDULE_COSINE):
            raise ConfigError(f"unknown schedule {self.schedule!r}")


def scheduled_lr(spec: OptimizerSpec, step: int, total_steps: int | None = None) -> float:
    """Learning rate at `step` of `total_steps` (constant or half-cosine decay)."""
    if spec.schedule == SCHEDULE_CONSTANT:
        return spec.lr
    total = spec.total_steps if total_steps is None else total_steps
    if total <= 0:
        raise ConfigError("cosine schedule needs a positive total step count")
    frac = min(max(step / total, 0.0), 1.0)
    return spec.lr_floor + (spec.lr - spec.lr_floor) * 0.5 * (1.0 + math.cos(math.pi * frac))


class Optimizer:
    """Applies bias-corrected moment updates to every entry of a ParamStore.

    Weight decay, when present (adamw kind), multiplies parameters directly by
    (1 - lr_t * decay) and never enters the moment estimates.
    """

    def __init__(self, store: ParamStore, spec: OptimizerSpec):
        self.store = store
        self.spec = spec

    def step(self) -> float:
        """One update over all parameters; returns the learning rate used."""
        spec = self.spec
        lr_t = scheduled_lr(spec, self.store.step_count)
        t = self.store.step_count + 1
        c1 = 1.0 - spec.beta1**t
        c2 = 1.0 - spec.beta2**t
        for name in self.store.names():
            p = self.store[name]
            if not p.requires_grad:
                continue  # frozen entries are never stepped nor decayed
            g = p.grad
            if not np.isfinite(g).all():
                raise NumericalError(
                    f"non-finite gradient in parameter {name!r} at step {t}"
                )
            m, v = self.store.moments(name)
            m *= spec.beta1
            m += (1.0 - spec.beta1) * g
            v *= spec.beta2
            v += (1.0 - spec.beta2) * (g * g)
            if spec.kind == KIND_ADAMW and spec.weight_decay != 0.0:
                p.data *= 1.0 - lr_t * spec.weight_decay
            p.data -= (lr_t / c1) * m / (np.sqrt(v / c2) + spec.eps)
        self.store.step_count = t
        return lr_t

    def state_arrays(self) -> dict[str, np.ndarray]:
        return self.store.state_dict()
