"""
Command-line front end: `python -m app.cli generate|train|eval|probe|report [flags]`.

Exit codes: 0 success, 1 usage or config error, 2 runtime or numeric error.
"""

import argparse
import sys

from . import harness
from .errors import ConfigError, CtfnoError


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        print(f"[ERROR] usage: {message}", file=sys.stderr)
        sys.exit(1)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ctfno", description="Continuous-time Fourier neural operator lab")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    gen = sub.add_parser("generate", help="generate train/test trajectories")
    gen.add_argument("--problem")
    gen.add_argument("--config", help="preset name or config path (its data section)")
    gen.add_argument("--out")
    gen.add_argument("--seed", type=int)
    gen.add_argument("--n", type=int, help="grid size (PDE problems)")
    gen.add_argument("--n-train", type=int)
    gen.add_argument("--n-test", type=int)

    tr = sub.add_parser("train", help="train a model from a config")
    tr.add_argument("--config", required=True)
    tr.add_argument("--dataset")
    tr.add_argument("--out")
    tr.add_argument("--seed", type=int)
    tr.add_argument("--resume", help="checkpoint directory to continue from")

    ev = sub.add_parser("eval", help="pooled RMSE of a checkpoint")
    ev.add_argument("--checkpoint", required=True)
    ev.add_argument("--dataset", required=True)
    ev.add_argument("--resolution", type=int)
    ev.add_argument("--times-scale", type=float)
    ev.add_argument("--split", choices=["train", "test"])
    ev.add_argument("--out")

    pr = sub.add_parser("probe", help="empirical amplification against the stability bound")
    pr.add_argument("--checkpoint", required=True)
    pr.add_argument("--dataset", required=True)
    pr.add_argument("--epsilon", type=float, default=1e-3)
    pr.add_argument("--trials", type=int, default=100)
    pr.add_argument("--seed", type=int)
    pr.add_argument("--split", choices=["train", "test"])
    pr.add_argument("--out")

    rp = sub.add_parser("report", help="merge run CSVs into runs/aggregate/summary")
    rp.add_argument("inputs", nargs="+")
    rp.add_argument("--out")
    return parser


def run(args: argparse.Namespace):
    if args.command == "generate":
        return harness.cmd_generate(args.problem, args.out, seed=args.seed, config=args.config,
                                    n=args.n, n_train=args.n_train, n_test=args.n_test)
    if args.command == "train":
        return harness.cmd_train(args.config, dataset=args.dataset, out=args.out, seed=args.seed,
                                 resume=args.resume)
    if args.command == "eval":
        return harness.cmd_eval(args.checkpoint, args.dataset, resolution=args.resolution,
                                times_scale=args.times_scale, out=args.out, split=args.split)
    if args.command == "probe":
        return harness.cmd_probe_stability(args.checkpoint, args.dataset, args.epsilon, args.trials,
                                           seed=args.seed, out=args.out, split=args.split)
    return harness.cmd_report(args.inputs, args.out)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        run(args)
    except ConfigError as e:
        print(f"[ERROR] {e.kind}: {e}", file=sys.stderr)
        return 1
    except CtfnoError as e:
        print(f"[ERROR] {e.kind}: {e}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
