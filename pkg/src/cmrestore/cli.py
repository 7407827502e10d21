"""Command-line interface.

Exit codes: 0 success, 1 invalid configuration or arguments, 2 I/O failure,
3 checkpoint that does not match the config or the requested mode.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace

from . import experiment
from .checkpoint import CheckpointError, CheckpointMismatch
from .config import ExperimentConfig, load_config
from .errors import ConfigurationError, NumericError, UsageError

log = logging.getLogger("cmrestore")


def _parse_indices(text: str) -> list[int]:
    """``"2:37"`` (inclusive), ``"2:37:5"`` or ``"2,5,9"``."""
    if ":" in text:
        parts = [int(p) for p in text.split(":")]
        if len(parts) not in (2, 3):
            raise argparse.ArgumentTypeError(f"bad index range {text!r}")
        lo, hi = parts[:2]
        step = parts[2] if len(parts) == 3 else 1
        return list(range(lo, hi + 1, step))
    return [int(p) for p in text.split(",") if p.strip()]


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="experiment config file (key = value sections)")
    common.add_argument("--seed", type=int, help="global seed; for eval/sweep/sample the noise seed")
    common.add_argument("--out", default=".", help="output directory (must exist)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="cmrestore", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("train-prior", parents=[common], help="train the prior and pick the restore level k")

    p = sub.add_parser("train-cm", parents=[common], help="train the consistency denoiser")
    p.add_argument("--mode", choices=["v1", "v2", "v3"], default="v3")
    p.add_argument("--prior", help="prior checkpoint (default: OUT/prior.ckpt)")

    p = sub.add_parser("eval", parents=[common], help="NFE and Frechet score per generation mode")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--mode", default="all", choices=["all", "prior", "v1", "v2", "v3", "direct"])
    p.add_argument("--eval-size", type=int, default=256)

    p = sub.add_parser("sweep", parents=[common], help="score restoration from each trajectory index")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--indices", type=_parse_indices, help="e.g. 2:37 (default: 2..k)")
    p.add_argument("--eval-size", type=int)

    p = sub.add_parser("ablate", parents=[common], help="run the four ablation settings")
    p.add_argument("--eval-size", type=int)

    p = sub.add_parser("sample", parents=[common], help="write generated patches to OUT/samples")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--mode", default="v3", choices=["prior", "v1", "v2", "v3", "direct"])
    p.add_argument("--count", type=int, default=8)
    p.add_argument("--format", choices=["csv", "pgm"], default="csv")
    return parser


def _load(args) -> ExperimentConfig:
    config = load_config(args.config) if args.config else ExperimentConfig()
    if args.seed is not None and args.command in ("train-prior", "train-cm", "ablate"):
        config = replace(config, experiment=replace(config.experiment, seed=args.seed))
    return config


def _noise_seed(args, config: ExperimentConfig) -> int:
    return config.seed if args.seed is None else args.seed


def run(args) -> int:
    config = _load(args)
    if args.command == "train-prior":
        res = experiment.cmd_train_prior(config, args.out)
        print(f"k = {res['k']}  ratio = {res['ratio']:.9g}  -> {res['path']}")
    elif args.command == "train-cm":
        res = experiment.cmd_train_cm(config, args.out, args.mode, args.prior)
        state = res["state"]
        line = f"steps = {state.step}  rejected = {state.rejected}"
        if state.scorer is not None:
            line += f"  op = {state.scorer.op}"
        print(f"{line}  -> {res['path']}")
    elif args.command == "eval":
        modes = "all" if args.mode == "all" else [args.mode]
        rows = experiment.cmd_eval(config, args.checkpoint, modes, args.eval_size,
                                   _noise_seed(args, config), args.out)
        print(f"{'mode':<8}{'NFE':>6}{'frechet':>14}{'samples/s':>14}")
        for r in rows:
            print(f"{r['mode']:<8}{r['nfe']:>6}{r['frechet']:>14.6f}{r['samples_per_second']:>14.1f}")
    elif args.command == "sweep":
        rows = experiment.cmd_sweep(config, args.checkpoint, args.indices, _noise_seed(args, config),
                                    args.eval_size, args.out)
        best = min(rows, key=lambda r: (r[2], r[0]))
        print(f"{len(rows)} indices; minimum score {best[2]:.6f} at index {best[0]} (t = {best[1]:.4g})")
    elif args.command == "ablate":
        rows = experiment.cmd_ablate(config, args.out, args.eval_size)
        for r in rows:
            print(f"{r['name']:<16}{r['nfe']:>6}{r['frechet']:>14.6f}{r['delta']:>+12.6f}")
    elif args.command == "sample":
        paths = experiment.cmd_sample(config, args.checkpoint, args.mode, args.count,
                                      _noise_seed(args, config), args.out, args.format)
        print(f"wrote {len(paths)} samples to {paths[0].parent}")
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return run(args)
    except CheckpointMismatch as err:
        print(f"error: {err}", file=sys.stderr)
        return 3
    except (ConfigurationError, UsageError, NumericError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    except (OSError, CheckpointError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
