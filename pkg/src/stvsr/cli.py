"""Command line interface.

Every subcommand accepts ``--config file.json`` whose keys are option names
(underscored); explicit flags override config values.
"""

import argparse
import json
import sys
from pathlib import Path

import numpy as np
import torch

from . import pipeline
from .data import ingest
from .estimator import SpaceTimeSR
from .profiling import profile_memory
from .synth import write_dataset

TRAIN_PARAMS = tuple(SpaceTimeSR().get_params())


def _bool_flag(p, name, help):
    p.add_argument(f"--{name}", dest=name.replace("-", "_"), action=argparse.BooleanOptionalAction,
                   default=None, help=help)


def build_parser():
    parser = argparse.ArgumentParser(prog="stvsr", description="Continuous space-time video super-resolution")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON file of option defaults")
    common.add_argument("--seed", type=int, default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", parents=[common], help="train on a folder of HR clips")
    p.add_argument("--data", type=Path, help="dataset root (one sub-folder per clip)")
    p.add_argument("--out", type=Path, help="output folder for model.ckpt and loss_log.csv")
    p.add_argument("--mode", choices=("continuous", "fix"))
    p.add_argument("--channels", type=int)
    p.add_argument("--n-iter", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--crop-size", type=int)
    p.add_argument("--lr-init", type=float)
    p.add_argument("--lr-final", type=float)
    p.add_argument("--scale-set", type=float, nargs="+")
    p.add_argument("--rate", type=int)
    p.add_argument("--alpha", type=float)
    p.add_argument("--patch-size", type=int)
    p.add_argument("--flip-prob", type=float)
    p.add_argument("--verbose", type=int)
    _bool_flag(p, "use-fwg", "forward-warp guidance in the temporal stage")
    _bool_flag(p, "use-dcn", "deformable refinement in the temporal stage")
    _bool_flag(p, "use-fgl", "flow-guided pseudo-label loss")
    _bool_flag(p, "tied", "share weights of mirrored branches")

    p = sub.add_parser("infer", parents=[common], help="upscale a sequence")
    p.add_argument("--input", type=Path, help="image folder or raw tensor file")
    p.add_argument("--out", type=Path)
    p.add_argument("--checkpoint", type=Path)
    p.add_argument("--rate", type=int, default=2)
    p.add_argument("--scale-h", type=float, default=4.0)
    p.add_argument("--scale-w", type=float)

    p = sub.add_parser("eval", parents=[common], help="PSNR/SSIM of predictions against ground truth")
    p.add_argument("--pred", type=Path)
    p.add_argument("--gt", type=Path)
    p.add_argument("--rate", type=int, default=2)
    p.add_argument("--report", type=Path, help="write JSON lines here instead of stdout")

    p = sub.add_parser("pseudo-dump", parents=[common], help="write the pseudo label of one frame pair")
    p.add_argument("--input", type=Path, help="HR image folder or raw tensor file")
    p.add_argument("--out", type=Path)
    p.add_argument("--pair", type=int, default=0)
    p.add_argument("--rate", type=int, default=2)
    p.add_argument("--patch-size", type=int, default=4)
    p.add_argument("--checkpoint", type=Path)
    p.add_argument("--scale", type=float, default=4.0)

    p = sub.add_parser("profile", parents=[common], help="peak live-tensor memory of inference")
    p.add_argument("--frames", type=int, nargs="+", default=[4, 26])
    p.add_argument("--scales", type=float, nargs="+", default=[2.0, 4.0])
    p.add_argument("--rate", type=int, default=2)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--checkpoint", type=Path)

    p = sub.add_parser("make-synth", parents=[common], help="write the synthetic clip dataset")
    p.add_argument("--out", type=Path)
    p.add_argument("--clips", type=int, default=16)
    p.add_argument("--frames", type=int, default=7)
    p.add_argument("--size", type=int, default=64)
    return parser


def _flag_given(key, argv):
    flags = {f"--{key.replace('_', '-')}", f"--no-{key.replace('_', '-')}"}
    return any(a.split("=")[0] in flags for a in argv)


def parse_args(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config is not None:
        try:
            config = json.loads(Path(args.config).read_text())
        except (OSError, ValueError) as exc:
            parser.error(f"cannot read config {args.config}: {exc}")
        for key, value in config.items():
            key = key.replace("-", "_")
            if key in ("command", "config") or not hasattr(args, key):
                parser.error(f"unknown config key {key!r} for {args.command}")
            if not _flag_given(key, argv):
                setattr(args, key, value)
    return args


def _require(args, *names):
    missing = [f"--{n.replace('_', '-')}" for n in names if getattr(args, n) is None]
    if missing:
        raise SystemExit(f"stvsr {args.command}: missing required option(s) {' '.join(missing)}")


def _path(x):
    return None if x is None else Path(x)


def cmd_train(args):
    _require(args, "data", "out")
    params = {k: getattr(args, k) for k in TRAIN_PARAMS if getattr(args, k, None) is not None}
    params["seed"] = args.seed
    est = pipeline.train(params, _path(args.data), _path(args.out))
    last = est.loss_log_[-1] if est.loss_log_ else {}
    print(json.dumps({"checkpoint": str(Path(args.out) / "model.ckpt"), "final": last}))


def cmd_infer(args):
    _require(args, "input", "out")
    est = pipeline.load_estimator(_path(args.checkpoint), args.seed)
    n = pipeline.infer_to_dir(ingest(args.input), _path(args.out), args.rate, args.scale_h, args.scale_w, est)
    print(json.dumps({"frames": n, "out": str(args.out)}))


def cmd_eval(args):
    _require(args, "pred", "gt")
    report = pipeline.evaluate(_path(args.pred), _path(args.gt), args.rate)
    text = pipeline.write_report(report, _path(args.report))
    if args.report is None:
        sys.stdout.write(text)
    else:
        print(json.dumps({"aggregate": report["aggregate"]}))


def cmd_pseudo_dump(args):
    _require(args, "input", "out")
    est = None if args.checkpoint is None else pipeline.load_estimator(_path(args.checkpoint))
    summary = pipeline.pseudo_dump(
        ingest(args.input), _path(args.out), args.pair, args.rate, args.patch_size, est, args.scale
    )
    print(json.dumps(summary))


def cmd_profile(args):
    est = pipeline.load_estimator(_path(args.checkpoint), args.seed)
    for n in args.frames:
        for s in args.scales:
            rec = profile_memory(n, s, rate=args.rate, size=args.size, estimator=est, seed=args.seed)
            print(json.dumps(rec.as_dict()))


def cmd_make_synth(args):
    _require(args, "out")
    paths = write_dataset(_path(args.out), args.clips, args.frames, args.size, args.seed)
    print(json.dumps({"clips": len(paths), "out": str(args.out)}))


COMMANDS = {
    "train": cmd_train, "infer": cmd_infer, "eval": cmd_eval,
    "pseudo-dump": cmd_pseudo_dump, "profile": cmd_profile, "make-synth": cmd_make_synth,
}


def main(argv=None):
    args = parse_args(argv)
    torch.manual_seed(args.seed)
    np.random.seed(args.seed)
    try:
        COMMANDS[args.command](args)
    except ValueError as exc:
        raise SystemExit(f"stvsr {args.command}: error: {exc}") from None
    return 0


if __name__ == "__main__":
    sys.exit(main())
