"""Three-phase training schedule.

Phase 1 fits the intensity network to the axial view alone, unlocking
encoder levels coarse-to-fine. Phase 2 freezes that network and trains a
displacement field aligning the coronal view to it (correlation plus a
bending-energy penalty, in the configured registration precision).
Phase 3 freezes the displacement field and fine-tunes the intensity
network on both views, routing coronal samples through the frozen
deformation.

Randomness is split once per run into independent child streams, so a
run resumed from any phase boundary replays the remaining phases with
bit-identical draws.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from ..engine import Optimizer, add, backward, constant, neg, scale
from ..errors import ConfigError, NumericalError
from ..volume import NormalizationFrame, Volume, build_normalization
from .checkpoint import check_architecture, load_checkpoint, save_checkpoint
from .config import PipelineConfig
from .losses import bending_energy, ncc, reconstruction_loss
from .networks import DisplacementNet, IntensityNet

Logger = Callable[[dict], None]


def seed_streams(seed: int) -> dict[str, np.random.Generator]:
    """Independent child generators for each consumer of randomness.

    The split is part of the on-disk contract: resuming from a phase
    boundary recreates the later streams exactly, so the remaining
    phases draw the same batches as an uninterrupted run.
    """
    children = np.random.SeedSequence(seed).spawn(5)
    return {
        "init": np.random.default_rng(children[0]),
        "phase1": np.random.default_rng(children[1]),
        "phase2": np.random.default_rng(children[2]),
        "phase3": np.random.default_rng(children[3]),
        "reserved": np.random.default_rng(children[4]),
    }


@dataclass(frozen=True)
class TrainBatch:
    """Sampled voxel centers in normalized coordinates with intensities."""

    coords: np.ndarray   # (n, 3) in [-1, 1]^3
    targets: np.ndarray  # (n,) normalized intensities
    valid: np.ndarray    # (n,) bool


def sample_batch(
    view: Volume,
    frame: NormalizationFrame,
    n: int,
    rng: np.random.Generator,
    dtype=np.float32,
) -> TrainBatch:
    """Uniformly sampled voxel centers of `view` (with replacement)."""
    if n < 1:
        raise ConfigError("batch size must be at least 1")
    idx = rng.integers(0, view.dims, size=(n, 3))
    world = view.voxel_to_world(idx)
    coords = frame.world_to_normalized(world).astype(dtype)
    raw = view.data[idx[:, 0], idx[:, 1], idx[:, 2]]
    targets = frame.normalize_intensity(raw).astype(dtype)
    return TrainBatch(coords, targets, np.ones(n, dtype=bool))


def active_levels(step: int, total_steps: int, unlock_fraction: float, levels: int) -> int:
    """How many coarse encoder levels are unlocked at `step`.

    Levels unlock linearly over the first `unlock_fraction` of training:
    at least one from the very first step, all of them from
    `unlock_fraction * total_steps` onward.
    """
    if total_steps < 1:
        raise ConfigError("total_steps must be at least 1")
    if not 0.0 < unlock_fraction <= 1.0:
        raise ConfigError("unlock_fraction must lie in (0, 1]")
    k = int(np.ceil(levels * step / (unlock_fraction * total_steps)))
    return max(1, min(levels, k))


def build_intensity_net(config: PipelineConfig, rng: np.random.Generator) -> IntensityNet:
    return IntensityNet(
        rng,
        encoder=config.encoder,
        levels=config.levels,
        features=config.features,
        table_size=config.table_size,
        n_min=config.n_min,
        n_max=config.n_max,
        fourier_sigma=config.fourier_sigma,
        hidden=config.hidden,
    )


def _check_finite(value: float, phase: int, step: int) -> None:
    if not np.isfinite(value):
        raise NumericalError(f"phase {phase} loss is not finite at step {step}")


def phase1_train(
    axial: Volume,
    frame: NormalizationFrame,
    config: PipelineConfig,
    *,
    rng_init: np.random.Generator | None = None,
    rng_batch: np.random.Generator | None = None,
    log: Logger | None = None,
) -> tuple[IntensityNet, list[dict]]:
    """Fit the intensity network to the axial view alone."""
    if rng_init is None or rng_batch is None:
        streams = seed_streams(config.seed)
        rng_init = rng_init or streams["init"]
        rng_batch = rng_batch or streams["phase1"]
    net = build_intensity_net(config, rng_init)
    opt = Optimizer(net.store, config.intensity_optimizer(config.steps_phase1))
    records: list[dict] = []
    for step in range(config.steps_phase1):
        k = active_levels(step, config.steps_phase1, config.unlock_fraction, config.levels)
        batch = sample_batch(axial, frame, config.batch_size, rng_batch)
        net.store.zero_grad()
        loss = reconstruction_loss(net.forward(batch.coords, k), batch, config.recon_loss)
        value = float(loss.data)
        _check_finite(value, 1, step)
        backward(loss)
        lr = opt.step()
        record = {"phase": 1, "step": step, "loss": value, "lr": lr, "levels": k}
        records.append(record)
        if log is not None:
            log(record)
    return net, records


def phase2_train(
    intensity: IntensityNet,
    coronal: Volume,
    frame: NormalizationFrame,
    config: PipelineConfig,
    *,
    rng: np.random.Generator | None = None,
    log: Logger | None = None,
) -> tuple[DisplacementNet, list[dict]]:
    """Train the displacement field against the frozen intensity model.

    The working precision comes from ``config.registration_dtype``:
    float64 is the conservative default, float32 trades a little
    numerical headroom for a large speedup on SIMD hardware (gradients
    are analytic, so single precision is adequate; only the bending
    finite differences need the coarser step that float32 presets set).
    """
    if rng is None:
        rng = seed_streams(config.seed)["phase2"]
    dtype = config.registration_np_dtype
    frozen = intensity.frozen_copy(dtype)
    disp = DisplacementNet(
        rng, hidden=config.siren_hidden, omega0=config.siren_omega, dtype=dtype
    )
    opt = Optimizer(disp.store, config.displacement_optimizer())
    records: list[dict] = []
    step = 0
    resampled = False
    while step < config.steps_phase2:
        batch = sample_batch(coronal, frame, config.batch_size, rng, dtype=dtype)
        probes = rng.uniform(
            -1.0 + 2 * config.bending_step,
            1.0 - 2 * config.bending_step,
            size=(config.bending_points, 3),
        )
        disp.store.zero_grad()
        warped = disp.transform(constant(batch.coords))
        pred = frozen.forward(warped)
        try:
            similarity = ncc(pred, constant(batch.targets))
        except NumericalError:
            if resampled:
                raise
            resampled = True  # one fresh draw is allowed; a repeat is fatal
            continue
        smoothness = bending_energy(disp, probes, config.bending_step, dtype=dtype)
        loss = add(neg(similarity), scale(smoothness, config.alpha))
        value = float(loss.data)
        _check_finite(value, 2, step)
        backward(loss)
        lr = opt.step()
        record = {
            "phase": 2,
            "step": step,
            "loss": value,
            "ncc": float(similarity.data),
            "bending": float(smoothness.data),
            "lr": lr,
        }
        records.append(record)
        if log is not None:
            log(record)
        step += 1
    return disp, records


def phase3_train(
    intensity: IntensityNet,
    displacement: DisplacementNet | None,
    axial: Volume,
    coronal: Volume,
    frame: NormalizationFrame,
    config: PipelineConfig,
    *,
    rng: np.random.Generator | None = None,
    log: Logger | None = None,
) -> tuple[IntensityNet, list[dict]]:
    """Fine-tune the intensity network on both views jointly.

    Coronal samples are mapped through the frozen displacement field
    before querying; the displacement parameters receive no gradients
    (their output enters the graph as plain data). The optimizer state
    is reset so the cosine schedule restarts from its full rate.
    """
    if rng is None:
        rng = seed_streams(config.seed)["phase3"]
    n_coronal = int(round(config.batch_size * config.coronal_fraction))
    n_coronal = min(max(n_coronal, 0), config.batch_size)
    n_axial = config.batch_size - n_coronal

    intensity.store.reset_optimizer_state()
    opt = Optimizer(intensity.store, config.intensity_optimizer(config.steps_phase3))
    records: list[dict] = []
    for step in range(config.steps_phase3):
        if config.unlock_phase3:
            k = active_levels(step, config.steps_phase3, config.unlock_fraction, config.levels)
        else:
            k = config.levels
        parts_coords: list[np.ndarray] = []
        parts_targets: list[np.ndarray] = []
        if n_axial > 0:
            ax = sample_batch(axial, frame, n_axial, rng)
            parts_coords.append(ax.coords)
            parts_targets.append(ax.targets)
        if n_coronal > 0:
            cor = sample_batch(coronal, frame, n_coronal, rng, dtype=np.float64)
            if displacement is None:
                warped = cor.coords
            else:
                pts = cor.coords.astype(displacement.store.dtype)
                warped = displacement.transform(pts).data
            parts_coords.append(warped.astype(np.float32))
            parts_targets.append(cor.targets.astype(np.float32))
        batch = TrainBatch(
            np.concatenate(parts_coords, axis=0),
            np.concatenate(parts_targets, axis=0),
            np.ones(config.batch_size, dtype=bool),
        )
        intensity.store.zero_grad()
        loss = reconstruction_loss(
            intensity.forward(batch.coords, k), batch, config.recon_loss
        )
        value = float(loss.data)
        _check_finite(value, 3, step)
        backward(loss)
        lr = opt.step()
        record = {"phase": 3, "step": step, "loss": value, "lr": lr, "levels": k}
        records.append(record)
        if log is not None:
            log(record)
    return intensity, records


def displacement_summary(
    displacement: DisplacementNet,
    frame: NormalizationFrame,
    out_path=None,
    grid: int = 9,
) -> dict:
    """Field magnitude stats on a coarse probe grid (optionally saved)."""
    axis = np.linspace(-0.9, 0.9, grid)
    gx, gy, gz = np.meshgrid(axis, axis, axis, indexing="ij")
    pts = np.stack([gx.ravel(), gy.ravel(), gz.ravel()], axis=1)
    delta = displacement.displacement(constant(pts)).data
    half_extent = (frame.box_hi - frame.box_lo) / 2.0
    delta_mm = delta * half_extent
    norms = np.linalg.norm(delta_mm, axis=1)
    stats = {
        "points": int(pts.shape[0]),
        "mean_mm": float(norms.mean()),
        "max_mm": float(norms.max()),
    }
    if out_path is not None:
        np.savez(out_path, coords=pts, displacement=delta, displacement_mm=delta_mm)
    return stats


@dataclass
class PipelineResult:
    intensity: IntensityNet
    displacement: DisplacementNet | None
    frame: NormalizationFrame
    config: PipelineConfig
    records: dict[str, list[dict]]
    paths: dict[str, str]


def run_pipeline(
    axial: Volume,
    coronal: Volume,
    config: PipelineConfig,
    out_dir=None,
    *,
    skip_registration: bool = False,
    resume_from=None,
    progress: Logger | None = None,
) -> PipelineResult:
    """Run the full schedule, wiring up logging, checkpoints, and resume.

    With `out_dir` set, the directory receives `config.json` (written
    before any compute), a `run.log` with one JSON record per line, a
    checkpoint at each phase boundary, and a coarse displacement-field
    dump. `resume_from` loads a phase-boundary checkpoint and runs only
    the phases after its stage; later-phase batches are drawn from the
    same streams an uninterrupted run would have used.
    """
    out = None
    paths: dict[str, str] = {}
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.json").write_text(config.to_json() + "\n", encoding="utf-8")
        paths["config"] = str(out / "config.json")

    intensity: IntensityNet | None = None
    displacement: DisplacementNet | None = None
    frame: NormalizationFrame
    completed = 0
    if resume_from is not None:
        payload = load_checkpoint(resume_from)
        check_architecture(payload.config, config)
        frame = payload.frame
        streams = seed_streams(config.seed)
        intensity = build_intensity_net(config, streams["init"])
        intensity.store.load_state_dict(payload.theta)
        if payload.phi is not None:
            displacement = DisplacementNet(
                np.random.default_rng(0),
                hidden=config.siren_hidden,
                omega0=config.siren_omega,
                dtype=config.registration_np_dtype,
            )
            displacement.store.load_state_dict(payload.phi)
        completed = payload.stage
    else:
        frame = build_normalization(
            [axial, coronal], percentile_clip=config.percentile_clip
        )
        streams = seed_streams(config.seed)

    log_fh = None
    records: dict[str, list[dict]] = {"phase1": [], "phase2": [], "phase3": []}

    def emit(record: dict) -> None:
        if log_fh is not None:
            log_fh.write(json.dumps(record, sort_keys=True) + "\n")
        if progress is not None:
            progress(record)

    try:
        if out is not None:
            mode = "a" if resume_from is not None else "w"
            log_fh = open(out / "run.log", mode, encoding="utf-8")
            paths["log"] = str(out / "run.log")

        if completed < 1:
            emit({"event": "phase_start", "phase": 1, "steps": config.steps_phase1})
            intensity, records["phase1"] = phase1_train(
                axial,
                frame,
                config,
                rng_init=streams["init"],
                rng_batch=streams["phase1"],
                log=emit,
            )
            if out is not None:
                p = out / "checkpoint_phase1.npz"
                save_checkpoint(
                    p,
                    config=config,
                    frame=frame,
                    stage=1,
                    theta=intensity.store.state_dict(),
                )
                paths["checkpoint_phase1"] = str(p)

        if skip_registration:
            displacement = None
            emit({"event": "registration_skipped"})
        elif completed < 2:
            emit({"event": "phase_start", "phase": 2, "steps": config.steps_phase2})
            displacement, records["phase2"] = phase2_train(
                intensity,
                coronal,
                frame,
                config,
                rng=streams["phase2"],
                log=emit,
            )
            field_path = out / "displacement_coarse.npz" if out is not None else None
            stats = displacement_summary(displacement, frame, field_path)
            if field_path is not None:
                paths["displacement_field"] = str(field_path)
            emit({"event": "displacement_summary", **stats})
            if out is not None:
                p = out / "checkpoint_phase2.npz"
                save_checkpoint(
                    p,
                    config=config,
                    frame=frame,
                    stage=2,
                    theta=intensity.store.state_dict(),
                    phi=displacement.store.state_dict(),
                )
                paths["checkpoint_phase2"] = str(p)

        if completed < 3:
            emit({"event": "phase_start", "phase": 3, "steps": config.steps_phase3})
            intensity, records["phase3"] = phase3_train(
                intensity,
                displacement,
                axial,
                coronal,
                frame,
                config,
                rng=streams["phase3"],
                log=emit,
            )
            if out is not None:
                p = out / "checkpoint_phase3.npz"
                save_checkpoint(
                    p,
                    config=config,
                    frame=frame,
                    stage=3,
                    theta=intensity.store.state_dict(),
                    phi=None if displacement is None else displacement.store.state_dict(),
                )
                paths["checkpoint_phase3"] = str(p)
    finally:
        if log_fh is not None:
            log_fh.close()

    return PipelineResult(
        intensity=intensity,
        displacement=displacement,
        frame=frame,
        config=config,
        records=records,
        paths=paths,
    )
