"""Checkpoint container for pipeline state.

A checkpoint is a single ``.npz`` archive holding the run configuration
(as JSON bytes), the normalization frame, a stage marker saying how far
training got, and the parameter/optimizer state of both networks under
``theta/`` (intensity) and ``phi/`` (displacement) prefixes.
"""

from __future__ import annotations

import zipfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..errors import ConfigError, DataError
from ..volume import NormalizationFrame
from .config import PipelineConfig

FORMAT_VERSION = 1

# Fields that must agree between a stored config and the one used to
# rebuild the networks; everything else (step counts, batch sizes...)
# may differ freely between the saving and the resuming run.
ARCHITECTURE_FIELDS = (
    "encoder",
    "levels",
    "features",
    "table_size",
    "n_min",
    "n_max",
    "fourier_sigma",
    "hidden",
    "siren_hidden",
    "siren_omega",
    "registration_dtype",
    "seed",
)

STAGE_NAMES = {1: "intensity_fit", 2: "registration", 3: "joint_refinement"}


@dataclass(frozen=True)
class CheckpointPayload:
    stage: int
    config: PipelineConfig
    frame: NormalizationFrame
    theta: dict[str, np.ndarray]
    phi: dict[str, np.ndarray] | None


def save_checkpoint(
    path,
    *,
    config: PipelineConfig,
    frame: NormalizationFrame,
    stage: int,
    theta: dict[str, np.ndarray],
    phi: dict[str, np.ndarray] | None = None,
) -> None:
    if stage not in STAGE_NAMES:
        raise ConfigError(f"stage must be one of {sorted(STAGE_NAMES)}, got {stage}")
    arrays: dict[str, np.ndarray] = {
        "__version__": np.asarray(FORMAT_VERSION, dtype=np.int64),
        "__stage__": np.asarray(stage, dtype=np.int64),
        "__config__": np.frombuffer(config.to_json().encode("utf-8"), dtype=np.uint8),
        "__frame__": frame.to_array(),
    }
    for name, arr in theta.items():
        arrays["theta/" + name] = arr
    if phi is not None:
        for name, arr in phi.items():
            arrays["phi/" + name] = arr
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path) -> CheckpointPayload:
    path = Path(path)
    if not path.exists():
        raise DataError(f"checkpoint not found: {path}")
    try:
        with np.load(path) as z:
            arrays = {name: z[name] for name in z.files}
    except (zipfile.BadZipFile, ValueError, OSError) as exc:
        raise DataError(f"could not read checkpoint {path}: {exc}") from exc

    for required in ("__version__", "__stage__", "__config__", "__frame__"):
        if required not in arrays:
            raise DataError(f"checkpoint {path} is missing {required!r}")
    version = int(arrays["__version__"])
    if version != FORMAT_VERSION:
        raise DataError(
            f"checkpoint format version {version} is not supported "
            f"(expected {FORMAT_VERSION})"
        )

    config = PipelineConfig.from_json(bytes(arrays["__config__"].tobytes()).decode("utf-8"))
    frame = NormalizationFrame.from_array(arrays["__frame__"])
    stage = int(arrays["__stage__"])
    if stage not in STAGE_NAMES:
        raise DataError(f"checkpoint {path} carries unknown stage {stage}")

    theta = {k[len("theta/"):]: v for k, v in arrays.items() if k.startswith("theta/")}
    phi = {k[len("phi/"):]: v for k, v in arrays.items() if k.startswith("phi/")}
    if not theta:
        raise DataError(f"checkpoint {path} holds no intensity parameters")
    return CheckpointPayload(
        stage=stage, config=config, frame=frame, theta=theta, phi=phi or None
    )


def check_architecture(stored: PipelineConfig, requested: PipelineConfig) -> None:
    """Reject resume attempts whose config would build different networks."""
    mismatched = [
        name
        for name in ARCHITECTURE_FIELDS
        if getattr(stored, name) != getattr(requested, name)
    ]
    if mismatched:
        detail = ", ".join(
            f"{n}: checkpoint={getattr(stored, n)!r} vs requested={getattr(requested, n)!r}"
            for n in mismatched
        )
        raise ConfigError(f"checkpoint architecture mismatch ({detail})")
