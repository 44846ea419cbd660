"""Command-line entry point: simulate a view pair, run the fusion, evaluate.

Every run directory gets a `provenance.json` (command, arguments, library
versions) next to the command's own artifacts, so a run can be reproduced
from its outputs alone. Exit codes: 0 success, 2 configuration error,
3 data error, 4 numerical abort, 5 ran without metrics (evaluate was not
given a ground truth).
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import platform
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ConfigError, DataError, NumericalError
from .metrics import (
    evaluate_volumes,
    foreground_mask,
    fuse_baseline,
    resample_like,
)
from .pipeline import PipelineConfig, default_grid, infer_grid, run_pipeline
from .simulate import DegradationSpec, PhantomSpec, make_phantom, simulate_pair
from .volume import read_volume, write_volume

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERICAL = 4
EXIT_NO_METRICS = 5

_PIPELINE_OVERRIDES = (
    "seed",
    "encoder",
    "batch_size",
    "steps_phase1",
    "steps_phase2",
    "steps_phase3",
    "alpha",
    "coronal_fraction",
    "registration_dtype",
)


def _write_provenance(out: Path, command: str, args: argparse.Namespace) -> None:
    arguments = {
        k: v for k, v in sorted(vars(args).items()) if k != "func" and v is not None
    }
    payload = {
        "command": command,
        "package": {"name": "isofuse", "version": __version__},
        "python": platform.python_version(),
        "numpy": np.__version__,
        "arguments": arguments,
    }
    text = json.dumps(payload, indent=2, sort_keys=True) + "\n"
    (out / "provenance.json").write_text(text, encoding="utf-8")


def _out_dir(args: argparse.Namespace) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_simulate(args: argparse.Namespace) -> int:
    spec = PhantomSpec(
        size=args.size,
        seed=args.seed,
        ellipsoids=args.ellipsoids,
        texture_octaves=args.texture_octaves,
        texture_amp=args.texture_amp,
    )
    degradation = DegradationSpec(
        factor=args.factor, rotation=args.rotation, slice_model=args.slice_model
    )
    out = _out_dir(args)
    phantom = make_phantom(spec)
    axial, coronal, truth = simulate_pair(phantom, degradation)
    for name, volume in (("truth", truth), ("axial", axial), ("coronal", coronal)):
        path = out / f"{name}.nii.gz"
        write_volume(volume, path)
        print(f"wrote {path} dims={volume.dims} spacing={volume.spacing.round(3).tolist()}")
    _write_provenance(out, "simulate", args)
    return EXIT_OK


def _pipeline_config(args: argparse.Namespace) -> PipelineConfig:
    if args.config is not None:
        path = Path(args.config)
        if not path.is_file():
            raise DataError(f"no such config file: {path}")
        base = PipelineConfig.from_json(path.read_text(encoding="utf-8"))
    elif args.preset == "phantom":
        base = PipelineConfig.phantom()
    else:
        base = PipelineConfig.paper()
    overrides = {
        name: getattr(args, name)
        for name in _PIPELINE_OVERRIDES
        if getattr(args, name, None) is not None
    }
    return dataclasses.replace(base, **overrides)


def _progress_printer(record: dict) -> None:
    if record.get("event") == "phase_start":
        print(f"phase {record['phase']}: {record['steps']} steps")
    elif record.get("event") == "displacement_summary":
        print(
            f"displacement field: mean {record['mean_mm']:.3f} mm, "
            f"max {record['max_mm']:.3f} mm over {record['points']} probes"
        )
    elif "step" in record and (record["step"] + 1) % 1000 == 0:
        print(
            f"  phase {record['phase']} step {record['step'] + 1}: "
            f"loss {record['loss']:.3e}"
        )


def cmd_superres(args: argparse.Namespace) -> int:
    config = _pipeline_config(args)
    axial = read_volume(args.axial)
    coronal = read_volume(args.coronal)
    out = _out_dir(args)
    if args.grid_like is not None and args.grid_spacing is not None:
        raise ConfigError("pass either --grid-like or --grid-spacing, not both")

    result = run_pipeline(
        axial,
        coronal,
        config,
        out,
        skip_registration=args.skip_registration,
        resume_from=args.resume_from,
        progress=_progress_printer if not args.quiet else None,
    )

    if args.grid_like is not None:
        reconstruction = infer_grid(
            result.intensity,
            result.frame,
            like=read_volume(args.grid_like),
            eval_batch=config.eval_batch,
            memory_budget=config.memory_budget,
        )
    else:
        if args.grid_spacing is not None:
            spacing = args.grid_spacing
            _, box_lo, box_hi = default_grid(axial)
        else:
            spacing, box_lo, box_hi = default_grid(axial)
        reconstruction = infer_grid(
            result.intensity,
            result.frame,
            spacing=spacing,
            box_lo=box_lo,
            box_hi=box_hi,
            eval_batch=config.eval_batch,
            memory_budget=config.memory_budget,
        )
    recon_path = out / "reconstruction.nii.gz"
    write_volume(reconstruction, recon_path)
    _write_provenance(out, "superres", args)
    print(
        f"wrote {recon_path} dims={reconstruction.dims} "
        f"spacing={reconstruction.spacing.round(3).tolist()}"
    )
    return EXIT_OK


def cmd_evaluate(args: argparse.Namespace) -> int:
    reconstruction = read_volume(args.recon)
    out = _out_dir(args)
    if args.truth is None:
        _write_provenance(out, "evaluate", args)
        print("warning: no ground truth given; metrics skipped", file=sys.stderr)
        return EXIT_NO_METRICS
    truth = read_volume(args.truth)
    if (args.axial is None) != (args.coronal is None):
        raise ConfigError("baseline comparison needs both --axial and --coronal")

    on_grid = reconstruction
    if reconstruction.dims != truth.dims or not np.allclose(
        reconstruction.affine, truth.affine
    ):
        on_grid = resample_like(reconstruction, truth)
    mask = np.isfinite(on_grid.data)
    mask_description = "reconstruction coverage"
    if args.foreground:
        mask &= foreground_mask(truth)
        mask_description += " & truth foreground (5% of range)"

    sections: list[tuple[str, object]] = []
    comparison: dict[str, str] = {}
    if args.axial is not None:
        baseline = fuse_baseline(
            read_volume(args.axial), read_volume(args.coronal), like=truth
        )
        mask &= np.isfinite(baseline.data)
        mask_description += " & baseline coverage"
        recon_report = evaluate_volumes(
            truth,
            on_grid,
            mask=mask,
            mask_description=mask_description,
            reference_name=str(args.truth),
            test_name=str(args.recon),
        )
        base_report = evaluate_volumes(
            truth,
            baseline,
            mask=mask,
            mask_description=mask_description,
            reference_name=str(args.truth),
            test_name="interpolation-fusion baseline",
        )
        sections = [("reconstruction", recon_report), ("baseline", base_report)]
        better = (
            recon_report.values["mae"] < base_report.values["mae"]
            and recon_report.values["ssim"] > base_report.values["ssim"]
            and recon_report.values["psnr"] > base_report.values["psnr"]
        )
        margin = recon_report.values["psnr"] - base_report.values["psnr"]
        comparison = {
            "psnr_margin_db": f"{margin:.6f}",
            "model_beats_baseline": "pass" if better else "fail",
        }
    else:
        recon_report = evaluate_volumes(
            truth,
            on_grid,
            mask=mask,
            mask_description=mask_description,
            reference_name=str(args.truth),
            test_name=str(args.recon),
        )
        sections = [("reconstruction", recon_report)]

    lines = []
    for title, report in sections:
        lines.append(f"[{title}]")
        lines.append(report.to_text().rstrip("\n"))
    if comparison:
        lines.append("[comparison]")
        lines += [f"{k} = {v}" for k, v in comparison.items()]
    text = "\n".join(lines) + "\n"
    (out / "metrics.txt").write_text(text, encoding="utf-8")

    csv_lines = [sections[0][1].csv_header()]
    csv_lines += [report.to_csv_row() for _, report in sections]
    (out / "metrics.csv").write_text("\n".join(csv_lines) + "\n", encoding="utf-8")

    _write_provenance(out, "evaluate", args)
    print(text, end="")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="isofuse",
        description="Fuse two anisotropic orthogonal-view volumes into one "
        "isotropic volume.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="generate a phantom and its view pair")
    sim.add_argument("--out", required=True, help="output directory")
    sim.add_argument("--size", type=int, default=64, help="phantom edge length")
    sim.add_argument("--seed", type=int, default=0)
    sim.add_argument("--ellipsoids", type=int, default=4)
    sim.add_argument("--texture-octaves", type=int, default=2)
    sim.add_argument("--texture-amp", type=float, default=0.05)
    sim.add_argument("--factor", type=int, default=4, help="through-plane downsampling")
    sim.add_argument(
        "--rotation", type=float, default=0.1, help="inter-view rotation (radians)"
    )
    sim.add_argument(
        "--slice-model", choices=("block_mean", "subsample"), default="block_mean"
    )
    sim.set_defaults(func=cmd_simulate)

    sup = sub.add_parser("superres", help="run the three-phase fusion")
    sup.add_argument("--axial", required=True, help="reference-view NIfTI")
    sup.add_argument("--coronal", required=True, help="moving-view NIfTI")
    sup.add_argument("--out", required=True, help="output directory")
    sup.add_argument("--config", help="JSON pipeline config (overridden by flags)")
    sup.add_argument(
        "--preset",
        choices=("paper", "phantom"),
        default="paper",
        help="base configuration when --config is not given",
    )
    sup.add_argument("--seed", type=int)
    sup.add_argument("--encoder", choices=("hash", "fourier"))
    sup.add_argument("--batch-size", type=int, dest="batch_size")
    sup.add_argument("--steps-phase1", type=int, dest="steps_phase1")
    sup.add_argument("--steps-phase2", type=int, dest="steps_phase2")
    sup.add_argument("--steps-phase3", type=int, dest="steps_phase3")
    sup.add_argument("--alpha", type=float, help="bending-energy weight")
    sup.add_argument("--coronal-fraction", type=float, dest="coronal_fraction")
    sup.add_argument(
        "--registration-dtype",
        choices=("float32", "float64"),
        dest="registration_dtype",
    )
    sup.add_argument(
        "--skip-registration",
        action="store_true",
        help="phases 1 and 3 only, identity alignment",
    )
    sup.add_argument("--resume-from", help="phase-boundary checkpoint to resume from")
    sup.add_argument(
        "--grid-like", help="NIfTI whose grid the reconstruction should copy"
    )
    sup.add_argument(
        "--grid-spacing", type=float, help="isotropic output spacing in mm"
    )
    sup.add_argument("--quiet", action="store_true", help="suppress progress lines")
    sup.set_defaults(func=cmd_superres)

    ev = sub.add_parser("evaluate", help="score a reconstruction against ground truth")
    ev.add_argument("--recon", required=True, help="reconstruction NIfTI")
    ev.add_argument("--truth", help="ground-truth NIfTI (omit: skip metrics)")
    ev.add_argument("--axial", help="reference view for the fusion baseline")
    ev.add_argument("--coronal", help="moving view for the fusion baseline")
    ev.add_argument("--out", required=True, help="output directory")
    ev.add_argument(
        "--foreground",
        action="store_true",
        help="restrict metrics to truth foreground (5%% of range)",
    )
    ev.set_defaults(func=cmd_evaluate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
