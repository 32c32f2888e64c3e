"""Command-line pipeline: simulate | pipeline | predict | eval | export.

Exit codes: 0 success, 2 usage/config error, 3 data error.  Every run
writes a manifest carrying the resolved config, its hash, and the seed, so
a run can be reproduced bit-exactly.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__, egrid_io
from .config import PipelineConfig, config_hash, load_pipeline_config, pipeline_to_dict
from .errors import BadSequenceLength, ConfigError, DogmapError
from .filter import MODE_DST, MODE_PROBABILISTIC, ParticleSet
from .grid import GridSpec
from .measurement import parse_velodyne_bin, serialize_velodyne_bin
from .pipeline import PipelineRunner
from .prediction import (
    HORIZON,
    SEED_FRAMES,
    SEQUENCE_LENGTH,
    GridSequence,
    PFSeedState,
    evaluate,
    export_sequences,
    make_pf_predictor,
    make_static_predictor,
    plot_metrics,
)
from .scene import BUILTIN_SCENES, builtin_scene, ground_truth, load_scene, scene_to_dict, simulate_frames

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3

_FRAME_NAME = "{:010d}"


def _frame_name(i: int, suffix: str) -> str:
    return _FRAME_NAME.format(i) + suffix


def cmd_simulate(args) -> int:
    scene_arg = args.scene
    if scene_arg in BUILTIN_SCENES:
        scene = builtin_scene(scene_arg)
    else:
        scene = load_scene(scene_arg)
    if args.seed is not None:
        scene = dataclasses.replace(scene, seed=args.seed)
    if args.frames is not None:
        scene = dataclasses.replace(scene, frames=args.frames)
    spec = GridSpec() if args.config is None else load_pipeline_config(args.config).grid

    out = Path(args.out)
    for sub in ("velodyne", "labels", "truth"):
        (out / sub).mkdir(parents=True, exist_ok=True)

    poses = []
    count = 0
    for state, cloud, labels in simulate_frames(scene):
        i = state.frame_index
        (out / "velodyne" / _frame_name(i, ".bin")).write_bytes(serialize_velodyne_bin(cloud))
        egrid_io.write_labels(out / "labels" / _frame_name(i, ".lbl"), labels)
        occ, vel = ground_truth(state, scene, spec)
        egrid_io.write_egrid(
            out / "truth" / _frame_name(i, ".egrid"),
            np.stack([occ.astype(np.float64), vel[0], vel[1]]),
            frame_index=i,
            timestamp=i / scene.frame_rate,
        )
        poses.append(state.ego_pose)
        count += 1
    egrid_io.write_pose_csv(out / "poses.csv", np.asarray(poses))
    (out / "scene.json").write_text(json.dumps(scene_to_dict(scene), sort_keys=True, indent=2) + "\n")
    print(f"simulated {count} frames of '{scene.name}' into {out}", file=sys.stderr)
    return EXIT_OK


def _resolved_pipeline_config(args) -> PipelineConfig:
    cfg = PipelineConfig() if args.config is None else load_pipeline_config(args.config)
    if getattr(args, "seed", None) is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    if getattr(args, "mode", None) is not None:
        cfg = dataclasses.replace(cfg, filter=dataclasses.replace(cfg.filter, mode=args.mode))
    return cfg


def cmd_pipeline(args) -> int:
    cfg = _resolved_pipeline_config(args)
    frames_dir = Path(args.frames if args.frames is not None else (cfg.frames_dir or ""))
    if not str(frames_dir):
        raise ConfigError("no frames directory given (use --frames or config frames_dir)")
    out = Path(args.out if args.out is not None else (cfg.out_dir or ""))
    if not str(out):
        raise ConfigError("no output directory given (use --out or config out_dir)")

    bin_dir = frames_dir / "velodyne" if (frames_dir / "velodyne").is_dir() else frames_dir
    bin_files = sorted(bin_dir.glob("*.bin"))
    if not bin_files:
        raise ConfigError(f"no .bin frames found under {bin_dir}")
    pose_path = frames_dir / "poses.csv"
    if not pose_path.exists():
        raise ConfigError(f"missing pose file: {pose_path}")
    poses = egrid_io.read_pose_csv(pose_path)
    if len(poses) < len(bin_files):
        raise ConfigError(f"{pose_path} holds {len(poses)} poses for {len(bin_files)} frames")

    for sub in ("dogma", "posterior", "fused", "particles", "mask"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    if args.preview:
        (out / "preview").mkdir(parents=True, exist_ok=True)

    runner = PipelineRunner(cfg)
    for i, bin_file in enumerate(bin_files):
        try:
            cloud = parse_velodyne_bin(bin_file.read_bytes(), sensor_pose=poses[i], frame_index=i)
            frame = runner.process(cloud, poses[i])
        except DogmapError as exc:
            print(f"error: frame {i} ({bin_file.name}): {exc}", file=sys.stderr)
            return EXIT_DATA
        ts = i / cfg.frame_rate
        egrid_io.write_egrid(out / "dogma" / _frame_name(i, ".egrid"), frame.step.dogma.channels, i, ts)
        egrid_io.write_evidential(out / "posterior" / _frame_name(i, ".egrid"), frame.step.posterior)
        egrid_io.write_evidential(out / "fused" / _frame_name(i, ".egrid"), frame.fused)
        p = frame.step.particles
        egrid_io.write_particles(out / "particles" / _frame_name(i, ".pf32"), p.x, p.y, p.vx, p.vy, p.w)
        egrid_io.write_egrid(
            out / "mask" / _frame_name(i, ".egrid"),
            frame.step.dynamic_mask[np.newaxis].astype(np.float64),
            i,
            ts,
        )
        if args.preview:
            egrid_io.write_pgm(out / "preview" / _frame_name(i, ".pgm"), frame.step.posterior.pignistic())

    egrid_io.write_pose_csv(out / "poses.csv", poses[: len(bin_files)])
    manifest = {
        "tool": "dogmap",
        "tool_version": __version__,
        "config": pipeline_to_dict(cfg),
        "config_sha256": config_hash(cfg),
        "seed": cfg.seed,
        "mode": cfg.filter.mode,
        "frame_count": len(bin_files),
    }
    (out / "manifest.json").write_text(json.dumps(manifest, sort_keys=True, indent=2) + "\n")
    print(f"processed {len(bin_files)} frames into {out}", file=sys.stderr)
    return EXIT_OK


def _read_manifest(run_dir: Path) -> dict:
    path = run_dir / "manifest.json"
    if not path.exists():
        raise ConfigError(f"missing manifest: {path}")
    return json.loads(path.read_text())


def _occupancy_channel(channels: np.ndarray) -> np.ndarray:
    """Comparison channel of an EGRID tensor by channel count."""
    arr = channels.astype(np.float64)
    if arr.shape[0] in (2, 4):  # evidential masses lead: [m_occ, m_free, ...]
        return arr[0] + 0.5 * (1.0 - arr[0] - arr[1])
    return arr[0]  # prob dogma / truth / plain occupancy


def _load_run_sequences(run_dir: Path, start: int, stride: int, need_pf: bool, targets_dir: Path | None):
    manifest = _read_manifest(run_dir)
    dt = 1.0 / manifest["config"]["frame_rate"]
    spec = GridSpec(
        cells_per_side=manifest["config"]["grid"]["cells_per_side"],
        side_length=manifest["config"]["grid"]["side_length"],
    )
    dogma_files = sorted((run_dir / "dogma").glob("*.egrid"))
    if not dogma_files:
        raise ConfigError(f"no dogma frames under {run_dir / 'dogma'}")
    target_files = dogma_files
    if targets_dir is not None:
        target_files = sorted(Path(targets_dir).glob("*.egrid"))
        if not target_files:
            raise ConfigError(f"no target grids under {targets_dir}")
        if len(target_files) < len(dogma_files):
            raise BadSequenceLength(
                f"{targets_dir} holds {len(target_files)} grids for {len(dogma_files)} dogma frames"
            )
    poses = egrid_io.read_pose_csv(run_dir / "poses.csv")

    sequences = []
    seq_index = 0
    frame_total = len(dogma_files)
    for s in range(start, frame_total - SEQUENCE_LENGTH + 1, stride):
        frames = []
        for k in range(s, s + SEQUENCE_LENGTH):
            if k < SEED_FRAMES + s:  # seed frames always come from the run itself
                channels, _, _ = egrid_io.read_egrid(dogma_files[k])
            else:
                channels, _, _ = egrid_io.read_egrid(target_files[k])
            frames.append(_occupancy_channel(channels))
        pf_seed = None
        if need_pf:
            seed_frame = s + SEED_FRAMES - 1
            px, py, pvx, pvy, pw = egrid_io.read_particles(
                run_dir / "particles" / _frame_name(seed_frame, ".pf32")
            )
            mask_channels, _, _ = egrid_io.read_egrid(run_dir / "mask" / _frame_name(seed_frame, ".egrid"))
            posterior = egrid_io.read_evidential(
                run_dir / "posterior" / _frame_name(seed_frame, ".egrid"), spec
            )
            pf_seed = PFSeedState(
                particles=ParticleSet(px, py, pvx, pvy, pw),
                dynamic_mask=mask_channels[0] > 0.5,
                posterior=posterior,
                ego_pose=poses[seed_frame],
            )
        sequences.append(GridSequence(spec=spec, frames=frames, pf_seed=pf_seed, index=seq_index))
        seq_index += 1
    if not sequences:
        raise BadSequenceLength(
            f"{run_dir}: {frame_total} frames yield no complete {SEQUENCE_LENGTH}-frame sequence "
            f"(start={start}, stride={stride})"
        )
    return sequences, dt


def _external_predictor(name: str, directory: Path):
    """Score externally materialized predictions (the learned-model seam)."""

    def predict(seq: GridSequence):
        grids = []
        for t in range(1, HORIZON + 1):
            path = directory / f"seq_{seq.index:04d}" / f"step_{t:02d}.egrid"
            if not path.exists():
                raise BadSequenceLength(f"{name}: missing prediction file {path}")
            channels, _, _ = egrid_io.read_egrid(path)
            grids.append(_occupancy_channel(channels))
        return grids

    return name, predict


def _build_predictors(specs: list[str], dt: float):
    predictors = []
    for item in specs:
        if item == "static":
            predictors.append(make_static_predictor())
        elif item == "pf":
            predictors.append(make_pf_predictor(dt))
        elif "=" in item:
            name, _, directory = item.partition("=")
            predictors.append(_external_predictor(name, Path(directory)))
        else:
            raise ConfigError(f"unknown predictor {item!r} (use static, pf, or NAME=DIR)")
    return predictors


def cmd_predict(args) -> int:
    run_dir = Path(args.run)
    specs = args.predictor or ["static", "pf"]
    need_pf = "pf" in specs
    sequences, dt = _load_run_sequences(run_dir, args.start, args.stride, need_pf, None)
    predictors = _build_predictors(specs, dt)
    out = Path(args.out)
    for name, fn in predictors:
        for seq in sequences:
            seq_dir = out / name / f"seq_{seq.index:04d}"
            seq_dir.mkdir(parents=True, exist_ok=True)
            preds = fn(seq)
            for t, grid in enumerate(preds, start=1):
                egrid_io.write_egrid(seq_dir / f"step_{t:02d}.egrid", grid[np.newaxis], t, t * dt)
    print(f"materialized {len(predictors)} predictor(s) over {len(sequences)} sequence(s) into {out}", file=sys.stderr)
    return EXIT_OK


def cmd_eval(args) -> int:
    run_dir = Path(args.run)
    specs = args.predictor or ["static", "pf"]
    need_pf = "pf" in specs
    targets = Path(args.targets) if args.targets is not None else None
    sequences, dt = _load_run_sequences(run_dir, args.start, args.stride, need_pf, targets)
    predictors = _build_predictors(specs, dt)
    table = evaluate(sequences, predictors)
    table.to_csv(args.out_csv)
    if args.plot is not None or args.format == "svg":
        plot_path = args.plot if args.plot is not None else str(Path(args.out_csv).with_suffix(".svg"))
        plot_metrics(table, plot_path)
        print(f"wrote {plot_path}", file=sys.stderr)
    print(f"evaluated {len(predictors)} predictor(s) on {len(sequences)} sequence(s) -> {args.out_csv}", file=sys.stderr)
    return EXIT_OK


def cmd_export(args) -> int:
    run_dir = Path(args.run)
    manifest = _read_manifest(run_dir)
    dogma_files = sorted((run_dir / "dogma").glob("*.egrid"))
    if not dogma_files:
        raise ConfigError(f"no dogma frames under {run_dir / 'dogma'}")
    tensors = []
    for s in range(args.start, len(dogma_files) - SEQUENCE_LENGTH + 1, args.stride):
        stack = []
        for k in range(s, s + SEQUENCE_LENGTH):
            channels, _, _ = egrid_io.read_egrid(dogma_files[k])
            stack.append(channels)
        tensors.append(np.stack(stack))
    if not tensors:
        raise BadSequenceLength(f"{run_dir}: no complete {SEQUENCE_LENGTH}-frame sequence to export")
    export_sequences(tensors, args.out, seed=manifest["seed"])
    print(f"exported {len(tensors)} sequence(s) to {args.out}", file=sys.stderr)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dogmap", description=__doc__)
    parser.add_argument("--version", action="version", version=f"dogmap {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="render a synthetic scene to KITTI-style frames")
    p.add_argument("--scene", required=True, help=f"scene config path or builtin name {BUILTIN_SCENES}")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--frames", type=int, default=None, help="override the scene frame count")
    p.add_argument("--seed", type=int, default=None, help="override the scene seed")
    p.add_argument("--config", default=None, help="pipeline config supplying the truth grid geometry")
    p.set_defaults(fn=cmd_simulate)

    p = sub.add_parser("pipeline", help="run ingest -> segment -> raytrace -> fuse -> filter -> dogma")
    p.add_argument("--config", default=None, help="pipeline config JSON")
    p.add_argument("--frames", default=None, help="directory of .bin frames (with poses.csv)")
    p.add_argument("--out", default=None, help="output directory")
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.add_argument("--mode", choices=[MODE_DST, MODE_PROBABILISTIC], default=None, help="override the DOGMa mode")
    p.add_argument("--preview", action="store_true", help="also write pignistic PGM previews")
    p.set_defaults(fn=cmd_pipeline)

    p = sub.add_parser("predict", help="materialize baseline predictions as EGRID files")
    p.add_argument("--run", required=True, help="a pipeline output directory")
    p.add_argument("--out", required=True, help="output directory for prediction EGRIDs")
    p.add_argument("--predictor", action="append", default=None, help="static | pf (repeatable)")
    p.add_argument("--start", type=int, default=0, help="first frame of the first sequence")
    p.add_argument("--stride", type=int, default=SEQUENCE_LENGTH, help="frame offset between sequences")
    p.set_defaults(fn=cmd_predict)

    p = sub.add_parser("eval", help="score predictors over 20-frame sequences")
    p.add_argument("--run", required=True, help="a pipeline output directory")
    p.add_argument("--targets", default=None, help="directory of target EGRIDs (defaults to the run's dogma frames)")
    p.add_argument("--predictor", action="append", default=None, help="static | pf | NAME=DIR (repeatable)")
    p.add_argument("--out-csv", required=True, help="metrics CSV path")
    p.add_argument("--plot", default=None, help="also write an MSE curve plot (SVG/PNG by extension)")
    p.add_argument("--format", choices=["csv", "svg"], default="csv", help="csv only, or csv plus an SVG plot")
    p.add_argument("--start", type=int, default=0)
    p.add_argument("--stride", type=int, default=SEQUENCE_LENGTH)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("export", help="export dogma sequences for an external predictor")
    p.add_argument("--run", required=True, help="a pipeline output directory")
    p.add_argument("--out", required=True, help="output tensor file")
    p.add_argument("--start", type=int, default=0)
    p.add_argument("--stride", type=int, default=SEQUENCE_LENGTH)
    p.set_defaults(fn=cmd_export)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on usage errors and 0 on --help; pass both through.
        return int(exc.code or 0)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DogmapError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
