"""
framesetu command line.

    python -m framesetu.cli train --config configs/toy.json
    python -m framesetu.cli synth --seed 7 --out-dir pairs/7
    python -m framesetu.cli interpolate --checkpoint ck.pt --frame0 a.png --frame1 b.png --out mid.png
    python -m framesetu.cli sweep-tau --checkpoint ck.pt --frame0 a.png --frame1 b.png --taus 0,0.1,0.3,0.8
    python -m framesetu.cli metrics --a x.png --b y.png
    python -m framesetu.cli evaluate --checkpoint ck.pt --count 100
    python -m framesetu.cli replay runs/x/manifest.json

Exit codes: 0 success, 1 usage or configuration error, 2 data or format error.
"""

import argparse
import dataclasses
import json
import logging
import os
import sys

from ..errors import (
    CheckpointError,
    ConfigError,
    DivergenceError,
    FlowFormatError,
    NumericalError,
    ShapeError,
    ValidationError,
)
from ..eval.metrics import psnr, ssim
from ..eval.sweep import evaluate_heldout, sweep_tau, write_sweep_csv
from ..io.flo import flow_to_tensor, read_flow_file, tensor_to_flow, write_flow_file
from ..io.frames import read_frame, write_frame
from ..seeding import make_generator
from ..training.checkpoint import file_digest, restore_model
from ..training.data import synth_triplet, triplet_from_scene
from ..training.trainer import TrainConfig, train
from ..training.visitors import build_visitors
from .manifest import RunManifest

logger = logging.getLogger(__name__)

CONFIG_ENV = os.getenv("FRAMESETU_CONFIG")
LOG_LEVEL = os.getenv("FRAMESETU_LOG_LEVEL", "INFO")

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2

DATA_ERRORS = (
    ShapeError, ValidationError, FlowFormatError, CheckpointError,
    DivergenceError, NumericalError, FileNotFoundError,
)


class CliParser(argparse.ArgumentParser):
    """argparse exits with 2 on bad flags; here that is a usage error (1)."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def setup_logging(log_file=None):
    handlers = [logging.StreamHandler()]
    if log_file:
        parent = os.path.dirname(log_file)
        if parent:
            os.makedirs(parent, exist_ok=True)
        handlers.insert(0, logging.FileHandler(log_file, encoding="utf-8"))
    logging.basicConfig(
        level=getattr(logging, LOG_LEVEL.upper(), logging.INFO),
        format="%(asctime)s [%(levelname)s] %(message)s",
        handlers=handlers,
        force=True,
    )


def float_list(text):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def int_list(text):
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


# ---------------------------------------------------------
# Shared helpers
# ---------------------------------------------------------
def load_train_config(path):
    path = path or CONFIG_ENV
    if not path:
        raise ConfigError("no config given: pass --config or set FRAMESETU_CONFIG")
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: not valid JSON ({e})") from e
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a JSON object")
    return TrainConfig.from_dict(data), path


def load_pair(args):
    """Frames and flows for a pair. Flows come from files, else from a shared synthetic scene tag."""
    I0, scene0 = read_frame(args.frame0)
    I1, scene1 = read_frame(args.frame1)

    if bool(args.flow01) != bool(args.flow10):
        raise ConfigError("--flow01 and --flow10 must be given together")
    if args.flow01:
        flow01 = flow_to_tensor(read_flow_file(args.flow01))
        flow10 = flow_to_tensor(read_flow_file(args.flow10))
        scene = None
    elif scene0 is not None and scene0 == scene1:
        scene = dict(scene0, t=args.t)
        triplet = triplet_from_scene(scene)
        flow01, flow10 = triplet.flow01, triplet.flow10
        logger.info("[CLI] Using exact flows of the tagged synthetic scene")
    else:
        raise ValidationError(
            "no motion available: real frames need --flow01/--flow10 (.flo files); "
            "there is no built-in flow estimator"
        )

    for name, flow in (("flow01", flow01), ("flow10", flow10)):
        if tuple(flow.shape[1:]) != tuple(I0.shape[1:]):
            raise ShapeError(f"{name} is {flow.shape[2]}×{flow.shape[1]} but frames are {I0.shape[2]}×{I0.shape[1]}")
    return I0, I1, flow01, flow10, scene


def pair_inputs(args):
    inputs = {"frame0": args.frame0, "frame1": args.frame1}
    if args.flow01:
        inputs.update(flow01=args.flow01, flow10=args.flow10)
    return inputs


# ---------------------------------------------------------
# Commands
# ---------------------------------------------------------
def cmd_train(args):
    config, path = load_train_config(args.config)
    overrides = {k: v for k, v in (
        ("output_dir", args.output_dir), ("iterations", args.iterations), ("resume", args.resume),
    ) if v is not None}
    if overrides:
        config = dataclasses.replace(config, **overrides)
    setup_logging(os.path.join(config.output_dir, "train.log"))

    RunManifest(
        command="train", argv=args.argv, config_path=path, inputs={"config": path},
        seed=config.seed, tau=config.tau, t=config.t, output_dir=config.output_dir,
    ).write()
    paths = train(config, visitors=build_visitors(config.visitors))
    if paths:
        final = paths[-1]
        logger.info(f"[CLI] Final checkpoint {final} sha1={file_digest(final)}")
    return EXIT_OK


def cmd_interpolate(args):
    model, _ = restore_model(args.checkpoint)
    I0, I1, flow01, flow10, _ = load_pair(args)
    out = model.interpolate(
        I0[None], I1[None], flow01[None], flow10[None],
        t=args.t, tau=args.tau, generator=make_generator(args.seed),
    )[0]
    write_frame(args.out, out)
    logger.info(f"[CLI] Wrote {args.out}")

    RunManifest(
        command="interpolate", argv=args.argv,
        inputs={"checkpoint": args.checkpoint, **pair_inputs(args)},
        seed=args.seed, tau=args.tau, t=args.t,
        output_dir=os.path.dirname(args.out) or ".",
    ).write()
    return EXIT_OK


def cmd_sweep_tau(args):
    if not args.taus:
        raise ConfigError("--taus must name at least one temperature")
    if not args.seeds:
        raise ConfigError("--seeds must name at least one seed")
    model, _ = restore_model(args.checkpoint)
    I0, I1, flow01, flow10, scene = load_pair(args)

    gt = None
    if args.gt:
        gt, _ = read_frame(args.gt)
    elif scene is not None:
        gt = triplet_from_scene(scene).It

    rows = sweep_tau(
        model, I0, I1, flow01, flow10, args.t, args.taus, args.seeds,
        gt=gt, out_dir=os.path.join(args.out_dir, "frames") if args.save_frames else None,
    )
    csv_path = write_sweep_csv(os.path.join(args.out_dir, "sweep.csv"), rows)
    logger.info(f"[CLI] Wrote {csv_path}")

    inputs = {"checkpoint": args.checkpoint, **pair_inputs(args)}
    if args.gt:
        inputs["gt"] = args.gt
    RunManifest(
        command="sweep-tau", argv=args.argv, inputs=inputs,
        seed=args.seeds[0], tau=args.taus, t=args.t, output_dir=args.out_dir,
    ).write()
    return EXIT_OK


def cmd_metrics(args):
    a, _ = read_frame(args.a)
    b, _ = read_frame(args.b)
    result = {"psnr": psnr(a, b), "ssim": ssim(a, b, luminance=args.luminance)}
    print(json.dumps(result))
    return EXIT_OK


def cmd_synth(args):
    triplet = synth_triplet(args.seed, args.size, t=args.t)
    out = args.out_dir
    write_frame(os.path.join(out, "frame0.png"), triplet.I0, scene=triplet.scene)
    write_frame(os.path.join(out, "frame1.png"), triplet.I1, scene=triplet.scene)
    write_frame(os.path.join(out, "frame_t.png"), triplet.It)
    write_flow_file(os.path.join(out, "flow01.flo"), tensor_to_flow(triplet.flow01))
    write_flow_file(os.path.join(out, "flow10.flo"), tensor_to_flow(triplet.flow10))
    logger.info(f"[CLI] Synthetic pair seed={args.seed} size={args.size} -> {out}")

    RunManifest(
        command="synth", argv=args.argv, inputs={}, seed=args.seed, t=args.t, output_dir=out,
    ).write()
    return EXIT_OK


def cmd_evaluate(args):
    model, _ = restore_model(args.checkpoint)
    result = evaluate_heldout(
        model, count=args.count, size=args.size, seed=args.seed, t=args.t, tau=args.tau,
    )
    print(json.dumps(result))
    if args.out_dir:
        RunManifest(
            command="evaluate", argv=args.argv, inputs={"checkpoint": args.checkpoint},
            seed=args.seed, tau=args.tau, t=args.t, output_dir=args.out_dir,
        ).write()
    return EXIT_OK


def cmd_replay(args):
    try:
        manifest = RunManifest.read(args.manifest)
    except (OSError, ValueError, TypeError) as e:
        raise ConfigError(f"cannot read manifest {args.manifest}: {e}") from e
    logger.info(f"[CLI] Replaying {manifest.command}: {' '.join(manifest.argv)}")
    return main(manifest.argv)


# ---------------------------------------------------------
# Parser
# ---------------------------------------------------------
def _add_pair_args(p):
    p.add_argument("--checkpoint", required=True, help="Checkpoint archive (.pt)")
    p.add_argument("--frame0", required=True, help="First frame (PNG)")
    p.add_argument("--frame1", required=True, help="Second frame (PNG)")
    p.add_argument("--flow01", help="Middlebury .flo file, frame0 -> frame1")
    p.add_argument("--flow10", help="Middlebury .flo file, frame1 -> frame0")
    p.add_argument("--t", type=float, default=0.5, help="Intermediate time in (0, 1)")


def build_parser():
    parser = CliParser(prog="framesetu", description="Flow-based video frame interpolation")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="Train on synthetic triplets")
    p.add_argument("--config", help="Path to JSON config file (default: $FRAMESETU_CONFIG)")
    p.add_argument("--output-dir", help="Override output_dir")
    p.add_argument("--iterations", type=int, help="Override iterations")
    p.add_argument("--resume", help="Resume from a checkpoint")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("interpolate", help="Synthesize one intermediate frame")
    _add_pair_args(p)
    p.add_argument("--tau", type=float, default=0.3, help="Sampling temperature (std scale)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="Output PNG path")
    p.set_defaults(func=cmd_interpolate)

    p = sub.add_parser("sweep-tau", help="Temperature sweep over seeds")
    _add_pair_args(p)
    p.add_argument("--taus", type=float_list, default=[0.0, 0.1, 0.3, 0.8])
    p.add_argument("--seeds", type=int_list, default=list(range(8)))
    p.add_argument("--gt", help="Ground-truth frame (defaults to the tagged scene's frame)")
    p.add_argument("--out-dir", default="sweep")
    p.add_argument("--save-frames", action="store_true", help="Also write every decoded frame")
    p.set_defaults(func=cmd_sweep_tau)

    p = sub.add_parser("metrics", help="PSNR and SSIM between two frames")
    p.add_argument("--a", required=True)
    p.add_argument("--b", required=True)
    p.add_argument("--luminance", action="store_true", help="SSIM on BT.601 luma instead of per channel")
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("synth", help="Export a tagged synthetic pair with ground truth and flows")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--t", type=float, default=0.5)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("evaluate", help="Held-out PSNR against the warp-blend baseline")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--count", type=int, default=100)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--seed", type=int, default=10_000)
    p.add_argument("--t", type=float, default=0.5)
    p.add_argument("--tau", type=float, default=0.0)
    p.add_argument("--out-dir")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("replay", help="Re-run the command recorded in a manifest")
    p.add_argument("manifest")
    p.set_defaults(func=cmd_replay)
    return parser


def main(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    args = build_parser().parse_args(argv)
    args.argv = argv
    setup_logging()
    try:
        return args.func(args)
    except ConfigError as e:
        logger.error(f"[CLI] {e}")
        return EXIT_USAGE
    except DATA_ERRORS as e:
        logger.error(f"[CLI] {e}")
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
