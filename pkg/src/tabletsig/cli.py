"""``tabletsig`` command line: gen, enroll, experiment, report."""

from __future__ import annotations

import argparse
import logging
import sys

from .errors import TabletSigError
from .hmm import TrainConfig
from .runner import RunConfig, cmd_enroll, cmd_experiment, cmd_gen, cmd_report
from .synth import GenConfig


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", default="run", help="output root directory (default: ./run)")
    common.add_argument("--workers", type=int, default=1, help="worker processes")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="tabletsig", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", parents=[common], help="generate the synthetic two-tablet corpus")
    g.add_argument("--seed", type=int, default=GenConfig.master_seed)
    g.add_argument("--users", type=int, default=GenConfig.n_users)

    e = sub.add_parser("enroll", parents=[common], help="train all enrolment models")
    e.add_argument("--states", type=int, default=TrainConfig.n_states)
    e.add_argument("--mixtures", type=int, default=TrainConfig.n_mixtures)
    e.add_argument("--iterations", type=int, default=TrainConfig.max_iterations)
    e.add_argument("--train-seed", type=int, default=TrainConfig.seed)

    x = sub.add_parser("experiment", parents=[common], help="run interoperability / fusion experiments")
    x.add_argument("--experiments", default="interop,fusion",
                   help="comma list of interop, fusion or kind:variant (e.g. fusion:multi_sensor)")

    sub.add_parser("report", parents=[common], help="rebuild the EER table from score files")
    return p


def _run(args) -> int:
    if args.command == "gen":
        run = RunConfig(args.out, gen=GenConfig(master_seed=args.seed, n_users=args.users), workers=args.workers)
        s = cmd_gen(run)
        print(f"corpus: {s['files']} files ({s['genuine']} genuine, {s['skilled_forgery']} skilled forgeries) "
              f"in {run.corpus_dir}")
    elif args.command == "enroll":
        train = TrainConfig(n_states=args.states, n_mixtures=args.mixtures,
                            max_iterations=args.iterations, seed=args.train_seed)
        run = RunConfig(args.out, train=train, workers=args.workers)
        s = cmd_enroll(run)
        print(f"models: {s['models']} for {s['users']} users in {run.models_dir}")
    elif args.command == "experiment":
        run = RunConfig(args.out, experiments=args.experiments.split(","), workers=args.workers)
        cmd_experiment(run)
        print(run.report_path.read_text(encoding="utf-8"), end="")
    elif args.command == "report":
        print(cmd_report(RunConfig(args.out, workers=args.workers)), end="")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(message)s")
    try:
        return _run(args)
    except TabletSigError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    except (ValueError, OSError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
