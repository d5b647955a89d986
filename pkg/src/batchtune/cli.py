"""Command-line entry point.

    batchtune tune --space space.json --worker-cmd "python worker.py" --algo hallucination
    batchtune bench --name branin --algo hallucination,random --iters 45 --repeats 10 --out t.csv

Exit status: 0 on success, 1 on invalid input, 2 when tuning aborts after
two consecutive empty batches (a partial result document is still written).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from typing import Optional, Sequence

from .bench import get_benchmark, run_convergence_experiment
from .domain import SpaceError, load_space
from .optimizer import ALGORITHMS, TuneAborted, TunerConfig, TuneResult, best_per_iteration, tune
from .scheduler import DEFAULT_TIMEOUT, WorkerProtocolScheduler, WorkerStartError

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_ABORTED = 2

_DEFAULTS = TunerConfig()


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # argparse would exit with 2
        self.print_usage(sys.stderr)
        raise _UsageError(f"{self.prog}: error: {message}")


def _positive(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {v}")
    return v


def _non_negative(text: str) -> int:
    v = int(text)
    if v < 0:
        raise argparse.ArgumentTypeError(f"must be >= 0, got {v}")
    return v


def _algorithms(text: str) -> list[str]:
    algos = [a.strip() for a in text.split(",") if a.strip()]
    bad = [a for a in algos if a not in ALGORITHMS]
    if not algos or bad:
        raise argparse.ArgumentTypeError(f"algorithms must be from {', '.join(ALGORITHMS)}")
    return algos


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="batchtune", description="Parallel batch GP-UCB hyperparameter tuning.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--batch", type=_positive, default=_DEFAULTS.batch_size, help="batch size")
        p.add_argument("--iters", type=_non_negative, default=_DEFAULTS.max_iterations,
                       help="number of batches after the initial design")
        p.add_argument("--init", type=_positive, default=None,
                       help="initial random evaluations (default: max(2, batch))")
        p.add_argument("--seed", type=int, default=_DEFAULTS.seed)
        p.add_argument("--mc-budget", type=int, default=None,
                       help="Monte-Carlo samples per acquisition maximisation")
        p.add_argument("-v", "--verbose", action="store_true")

    t = sub.add_parser("tune", help="tune an objective served by external worker processes")
    t.add_argument("--space", required=True, help="search-space JSON file")
    t.add_argument("--worker-cmd", required=True, help="command that starts one protocol worker")
    t.add_argument("--algo", choices=ALGORITHMS, default=_DEFAULTS.algorithm)
    t.add_argument("--direction", choices=("maximize", "minimize"), default=_DEFAULTS.direction)
    t.add_argument("--workers", type=_positive, default=1)
    t.add_argument("--timeout", type=float, default=DEFAULT_TIMEOUT, help="per-batch timeout in seconds")
    t.add_argument("--out", default=None, help="write the result document here")
    common(t)

    b = sub.add_parser("bench", help="run a convergence experiment on a built-in benchmark")
    b.add_argument("--name", required=True, choices=("branin", "branin_mixed", "quadratic"))
    b.add_argument("--algo", type=_algorithms, default=[_DEFAULTS.algorithm],
                   help="comma-separated algorithms")
    b.add_argument("--repeats", type=_positive, default=10)
    b.add_argument("--out", default=None, help="CSV output path (default: stdout)")
    common(b)
    return parser


def result_document(res: TuneResult) -> dict:
    return {
        "best_params": res.best_config,
        "best_objective": res.best_value,
        "evaluations": res.evaluations_completed,
        "best_series": [best for _, _, best in best_per_iteration(res.history)],
    }


def _write_result(res: TuneResult, path: Optional[str]) -> None:
    if path:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(result_document(res), fh, indent=2)
            fh.write("\n")


def _run_tune(args: argparse.Namespace) -> int:
    space = load_space(args.space)
    cfg = TunerConfig(
        algorithm=args.algo, batch_size=args.batch, max_iterations=args.iters,
        initial_random=args.init, mc_budget_override=args.mc_budget,
        seed=args.seed, direction=args.direction,
    )
    sched = WorkerProtocolScheduler(args.worker_cmd, workers=args.workers, timeout=args.timeout)
    try:
        res = tune(space, cfg, sched)
    except TuneAborted as exc:
        _write_result(exc.partial, args.out)
        print(f"aborted: {exc}; {exc.partial.evaluations_completed} evaluations recorded", file=sys.stderr)
        return EXIT_ABORTED
    _write_result(res, args.out)
    print(f"best_objective={res.best_value!r} evaluations={res.evaluations_completed} "
          f"best_params={json.dumps(res.best_config)}")
    return EXIT_OK


def _run_bench(args: argparse.Namespace) -> int:
    table = run_convergence_experiment(
        get_benchmark(args.name), args.algo, args.batch, args.iters, args.repeats,
        base_seed=args.seed, initial_random=args.init, mc_budget=args.mc_budget,
    )
    if args.out:
        table.write_csv(args.out)
    else:
        sys.stdout.write(table.to_csv())
    if table.incomplete:
        print(f"incomplete runs: {sorted(table.incomplete)}", file=sys.stderr)
        return EXIT_ABORTED
    return EXIT_OK


def run_cli(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_INVALID
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "tune":
            return _run_tune(args)
        return _run_bench(args)
    except (SpaceError, WorkerStartError, ValueError, OSError) as exc:
        print(f"batchtune: error: {exc}", file=sys.stderr)
        return EXIT_INVALID


def main() -> None:
    sys.exit(run_cli())
