"""Run configuration for the fusion pipeline.

A single flat dataclass holds every tunable: network architecture,
per-phase optimizer settings, batch shapes, and the regularizer weight.
Two presets are provided — ``paper()`` for full-resolution clinical
volumes and ``phantom()`` scaled down for the synthetic test protocol.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass

import numpy as np

from ..engine import OptimizerSpec
from ..errors import ConfigError

_ENCODERS = ("hash", "fourier")
_RECON_LOSSES = ("mse", "l1")


@dataclass(frozen=True)
class PipelineConfig:
    """Everything a pipeline run needs besides the two input volumes."""

    seed: int = 0

    # --- intensity network -------------------------------------------------
    encoder: str = "hash"
    levels: int = 16
    features: int = 32
    table_size: int = 2**19
    n_min: int = 16
    n_max: int = 2048
    fourier_sigma: float = 10.0
    hidden: tuple[int, ...] = (1024, 1024, 1024, 1024)

    # --- displacement network ----------------------------------------------
    siren_hidden: tuple[int, ...] = (256, 256, 256)
    siren_omega: float = 32.0
    # Precision of the registration phase. float32 is considerably faster
    # on SIMD hardware; pair it with a larger bending_step so the
    # finite-difference curvature probes stay above rounding noise.
    registration_dtype: str = "float64"

    # --- schedule ----------------------------------------------------------
    batch_size: int = 50_000
    steps_phase1: int = 20_000
    steps_phase2: int = 10_000
    steps_phase3: int = 10_000
    lr_intensity: float = 1.2e-3
    weight_decay: float = 5e-5
    lr_floor: float = 0.0
    lr_displacement: float = 1e-5
    unlock_fraction: float = 0.5
    unlock_phase3: bool = False

    # --- losses ------------------------------------------------------------
    recon_loss: str = "mse"
    alpha: float = 1000.0
    coronal_fraction: float = 0.5
    bending_points: int = 1000
    bending_step: float = 1e-3

    # --- data handling -----------------------------------------------------
    percentile_clip: bool = False
    eval_batch: int = 65_536
    memory_budget: int = 2**30

    def __post_init__(self) -> None:
        if self.encoder not in _ENCODERS:
            raise ConfigError(
                f"unknown encoder {self.encoder!r}; expected one of {_ENCODERS}"
            )
        if self.recon_loss not in _RECON_LOSSES:
            raise ConfigError(
                f"unknown recon_loss {self.recon_loss!r}; "
                f"expected one of {_RECON_LOSSES}"
            )
        for name in ("batch_size", "steps_phase1", "steps_phase2",
                     "steps_phase3", "bending_points", "eval_batch"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be at least 1")
        if not 0.0 < self.unlock_fraction <= 1.0:
            raise ConfigError("unlock_fraction must lie in (0, 1]")
        if not 0.0 <= self.coronal_fraction <= 1.0:
            raise ConfigError("coronal_fraction must lie in [0, 1]")
        if self.alpha < 0.0:
            raise ConfigError("alpha must be non-negative")
        if self.bending_step <= 0.0:
            raise ConfigError("bending_step must be positive")
        if self.memory_budget < 2**20:
            raise ConfigError("memory_budget below 1 MiB is not workable")
        if self.registration_dtype not in ("float32", "float64"):
            raise ConfigError(
                "registration_dtype must be 'float32' or 'float64', "
                f"got {self.registration_dtype!r}"
            )
        # Architecture fields are re-validated by the encoder/network
        # constructors; catch the obvious ones early for better messages.
        for name in ("levels", "features", "table_size", "n_min", "n_max"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be at least 1")
        if not all(h >= 1 for h in self.hidden) or not self.hidden:
            raise ConfigError("hidden must be a non-empty tuple of widths >= 1")
        if not all(h >= 1 for h in self.siren_hidden) or not self.siren_hidden:
            raise ConfigError(
                "siren_hidden must be a non-empty tuple of widths >= 1"
            )

    # --- presets -----------------------------------------------------------

    @classmethod
    def paper(cls, **overrides) -> "PipelineConfig":
        """Full-scale settings for clinical-resolution volumes."""
        return cls(**overrides)

    @classmethod
    def phantom(cls, **overrides) -> "PipelineConfig":
        """Reduced settings sized for the synthetic phantom protocol."""
        base = dict(
            levels=8,
            features=4,
            table_size=2**15,
            n_min=8,
            n_max=128,
            hidden=(64, 64, 64),
            siren_hidden=(128, 128, 128),
            batch_size=10_000,
            steps_phase1=4000,
            steps_phase2=2000,
            steps_phase3=3000,
            bending_points=250,
            registration_dtype="float32",
            bending_step=1e-2,
        )
        base.update(overrides)
        return cls(**base)

    @property
    def registration_np_dtype(self):
        return np.float32 if self.registration_dtype == "float32" else np.float64

    # --- derived optimizer specs --------------------------------------------

    def intensity_optimizer(self, total_steps: int) -> OptimizerSpec:
        return OptimizerSpec(
            kind="adamw",
            lr=self.lr_intensity,
            weight_decay=self.weight_decay,
            schedule="cosine",
            total_steps=total_steps,
            lr_floor=self.lr_floor,
        )

    def displacement_optimizer(self) -> OptimizerSpec:
        return OptimizerSpec(
            kind="adam",
            lr=self.lr_displacement,
            schedule="constant",
        )

    # --- serialization -------------------------------------------------------

    def to_json(self) -> str:
        payload = dataclasses.asdict(self)
        payload["hidden"] = list(self.hidden)
        payload["siren_hidden"] = list(self.siren_hidden)
        return json.dumps(payload, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "PipelineConfig":
        try:
            payload = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc
        if not isinstance(payload, dict):
            raise ConfigError("config JSON must be an object")
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(payload) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        for key in ("hidden", "siren_hidden"):
            if key in payload:
                payload[key] = tuple(payload[key])
        return cls(**payload)
