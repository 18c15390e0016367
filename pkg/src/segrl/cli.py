"""Command line entry points: train, eval, ablate."""

import os

# Pin BLAS to one thread before numpy loads: reduction order, and therefore
# metrics bytes, must not depend on the host's core count.
for _var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS",
             "NUMEXPR_NUM_THREADS", "VECLIB_MAXIMUM_THREADS"):
    os.environ.setdefault(_var, "1")

import argparse
import json
import sys


def _key_value(pair: str) -> tuple[str, str]:
    if "=" not in pair:
        raise argparse.ArgumentTypeError(f"expected KEY=VALUE, got {pair!r}")
    key, value = pair.split("=", 1)
    return key.strip(), value.strip()


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="segrl",
        description="Episodic RL with primitive trajectories and a segment critic")
    sub = parser.add_subparsers(dest="cmd", required=True)

    tr = sub.add_parser("train", help="run the training loop")
    tr.add_argument("--config", help="flat key=value config file")
    tr.add_argument("--seed", type=int, help="override the config seed")
    tr.add_argument("--out", help="override the output directory")
    tr.add_argument("--set", dest="sets", action="append", default=[],
                    type=_key_value, metavar="KEY=VALUE",
                    help="override any config key (repeatable)")
    tr.add_argument("--resume", help="checkpoint to continue from")

    ev = sub.add_parser("eval", help="evaluate a checkpoint with the mean action")
    ev.add_argument("--ckpt", required=True)
    ev.add_argument("--episodes", type=int, default=20)
    ev.add_argument("--seed", type=int, default=0)
    ev.add_argument("--env", help="evaluate on a different task of the same shape")

    ab = sub.add_parser("ablate", help="run the config matrix for one axis")
    ab.add_argument("--config")
    ab.add_argument("--axis", required=True)
    ab.add_argument("--seed", type=int)
    ab.add_argument("--out")
    ab.add_argument("--set", dest="sets", action="append", default=[],
                    type=_key_value, metavar="KEY=VALUE")
    return parser


def _load_config(args):
    from .config import config_from_sources
    overrides = dict(args.sets)
    if args.seed is not None:
        overrides["seed"] = str(args.seed)
    if args.out is not None:
        overrides["out_dir"] = args.out
    return config_from_sources(args.config, overrides)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    from . import trainer

    if args.cmd == "train":
        return trainer.train(_load_config(args), resume=args.resume)

    if args.cmd == "eval":
        summary = trainer.evaluate(args.ckpt, args.episodes, args.seed, args.env)
        print(json.dumps(summary, indent=2, sort_keys=True))
        return 0

    results = trainer.ablate(_load_config(args), args.axis)
    for row in results:
        print(f"{row['label']}: status={row['status']} metrics={row['metrics']}")
    return max((row["status"] for row in results), default=0)


if __name__ == "__main__":
    sys.exit(main())
