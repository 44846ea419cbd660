"""Self-supervised fusion of two orthogonal anisotropic views.

The pipeline trains a coordinate network to represent one isotropic
volume from two thick-slice acquisitions: fit on the first view, align
the second view to the fit with a smooth displacement field, then
fine-tune on both views through that alignment. `run_pipeline` wires the
phases together; `infer_grid` renders the result onto any voxel grid.
"""

from .checkpoint import (
    CheckpointPayload,
    check_architecture,
    load_checkpoint,
    save_checkpoint,
)
from .config import PipelineConfig
from .infer import default_grid, infer_grid, plan_grid
from .losses import bending_energy, ncc, reconstruction_loss
from .networks import DisplacementNet, IntensityNet
from .train import (
    PipelineResult,
    TrainBatch,
    active_levels,
    build_intensity_net,
    displacement_summary,
    phase1_train,
    phase2_train,
    phase3_train,
    run_pipeline,
    sample_batch,
    seed_streams,
)

__all__ = [
    "CheckpointPayload",
    "DisplacementNet",
    "IntensityNet",
    "PipelineConfig",
    "PipelineResult",
    "TrainBatch",
    "active_levels",
    "bending_energy",
    "build_intensity_net",
    "check_architecture",
    "default_grid",
    "displacement_summary",
    "infer_grid",
    "load_checkpoint",
    "ncc",
    "phase1_train",
    "phase2_train",
    "phase3_train",
    "plan_grid",
    "reconstruction_loss",
    "run_pipeline",
    "sample_batch",
    "save_checkpoint",
    "seed_streams",
]
