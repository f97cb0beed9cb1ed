"""Command line: ``bench``, ``hazard``, ``selfcheck`` and ``check``.

Exit status 0 when every check passed, 1 on a containment or correctness
failure, 2 on a usage error.
"""

import argparse
import logging
import sys

from ._types import Strategy
from .harness.workloads import WORKLOADS

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


def _csv_list(choices=None, conv=str):
    def parse(text):
        items = [conv(x.strip()) for x in text.split(",") if x.strip()]
        if not items:
            raise argparse.ArgumentTypeError("empty list")
        if choices is not None:
            bad = [x for x in items if x not in choices]
            if bad:
                raise argparse.ArgumentTypeError(
                    f"invalid choice(s) {', '.join(map(str, bad))} (choose from {', '.join(choices)})")
        return tuple(items)
    return parse


def _positive_int(text):
    n = int(text)
    if n < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return n


def _strategy(text):
    try:
        return Strategy.parse(text)
    except ValueError as e:
        raise argparse.ArgumentTypeError(str(e)) from None


STRATEGY_NAMES = [s.value for s in Strategy]


def build_parser():
    p = argparse.ArgumentParser(prog="sandstm", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    b = sub.add_parser("bench", help="time the workload x strategy x threads matrix")
    b.add_argument("--workloads", type=_csv_list(list(WORKLOADS)), default=tuple(WORKLOADS))
    b.add_argument("--strategies", type=_csv_list(STRATEGY_NAMES), default=tuple(STRATEGY_NAMES))
    b.add_argument("--threads", type=_csv_list(conv=int), default=(1, 2, 4, 8))
    b.add_argument("--confidence", type=float, default=0.90)
    b.add_argument("--ci-threshold", type=float, default=0.05)
    b.add_argument("--max-reps", type=_positive_int, default=10)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--format", choices=("csv", "json", "markdown"), default="csv")
    b.add_argument("--out", default="-", help="output file ('-' for stdout)")

    h = sub.add_parser("hazard", help="run one scripted hazard scenario")
    h.add_argument("--name", required=True,
                   choices=("privatization-fault", "doomed-loop", "stray-stack-write",
                            "clone-miss", "over-allocation"))
    h.add_argument("--strategy", type=_strategy, default=Strategy.LAZY_TIMER)
    h.add_argument("--seed", type=int, default=0)

    s = sub.add_parser("selfcheck", help="measure a kernel's characteristic buckets")
    s.add_argument("--workload", choices=list(WORKLOADS) + ["all"], default="all")
    s.add_argument("--seed", type=int, default=0)

    c = sub.add_parser("check", help="check a recorded history for serializability")
    c.add_argument("--history", required=True)
    return p


def _bench(args, parser):
    from .harness.bench import RunConfig, run_benchmark_matrix
    from .harness.report import emit_report
    from .harness.workloads import CorrectnessFailure

    if any(t < 1 for t in args.threads):
        parser.error("--threads: counts must be positive")
    if not 0 < args.confidence < 1:
        parser.error("--confidence must lie in (0, 1)")
    if args.ci_threshold <= 0:
        parser.error("--ci-threshold must be positive")
    if args.max_reps < 2:
        parser.error("--max-reps must be at least 2")
    config = RunConfig(workloads=args.workloads, strategies=args.strategies, threads=args.threads,
                       confidence=args.confidence, ci_threshold=args.ci_threshold,
                       max_reps=args.max_reps, seed=args.seed)
    try:
        report = run_benchmark_matrix(config)
    except CorrectnessFailure as e:
        print(f"correctness failure: {e}", file=sys.stderr)
        return EXIT_FAIL
    data = emit_report(report, args.format)
    if args.out == "-":
        sys.stdout.write(data.decode())
    else:
        with open(args.out, "wb") as fh:
            fh.write(data)
    return EXIT_OK


def _hazard(args, parser):
    from .harness.hazards import ContainmentFailure, run_hazard_scenario

    outcome = run_hazard_scenario(args.name, args.strategy, seed=args.seed)
    print(outcome.summary())
    try:
        outcome.raise_for_containment()
    except ContainmentFailure as e:
        print(e, file=sys.stderr)
        return EXIT_FAIL
    return EXIT_OK


def _selfcheck(args, parser):
    from .harness.workloads import self_check

    names = list(WORKLOADS) if args.workload == "all" else [args.workload]
    status = EXIT_OK
    for name in names:
        r = self_check(name, seed=args.seed)
        m = r.measured
        print(f"{name} ({r.analog}-like): tx_length={m.tx_length:.1f} rw_set={m.rw_set:.1f} "
              f"tx_time={m.tx_time:.2f} contention={m.contention:.2f}")
        for key, want in r.declared.as_dict().items():
            got = r.measured_buckets.as_dict()[key]
            print(f"  {key:<11} declared {want:<6} measured {got:<6} {'ok' if got == want else 'MISMATCH'}")
        for problem in r.problems:
            print(f"  end state: {problem}")
        if not r.ok:
            status = EXIT_FAIL
    return status


def _check(args, parser):
    from .history import History
    from .oracle import check_serializable

    try:
        history = History.load(args.history)
    except (OSError, ValueError, KeyError, TypeError) as e:
        parser.error(f"--history: cannot read {args.history}: {e}")
    verdict = check_serializable(history)
    if verdict.ok:
        print(f"ok: {len(history.commits)} committed transactions serialize in commit order")
        return EXIT_OK
    print(f"violation: {verdict.witness}")
    return EXIT_FAIL


COMMANDS = {"bench": _bench, "hazard": _hazard, "selfcheck": _selfcheck, "check": _check}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)  # exits with status 2 on usage errors
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return COMMANDS[args.command](args, parser)


if __name__ == "__main__":
    sys.exit(main())
