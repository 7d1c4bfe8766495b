"""Command-line front end.

Exit codes: 0 success, 1 usage / config error or failed verification,
2 numerical breakdown (nonpositive pivot), 3 I/O error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from . import experiment
from .data import IDXError
from .persist import ModelFileError, inspect_model, save_model
from .verify import SCOPES, run_verify

EXIT_OK, EXIT_CONFIG, EXIT_BREAKDOWN, EXIT_IO = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _config(args):
    cfg = experiment.load_config(args.config)
    if args.seed is not None:
        cfg = cfg.with_(seed=args.seed)
    return cfg


def _emit(report, args):
    text = report.to_csv() if args.out == "csv" else report.to_json() + "\n"
    if args.report:
        with open(args.report, "w", newline="", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _run(args):
    cfg = _config(args)
    report = experiment.run(cfg)
    print(experiment.format_table([vars(r) for r in report.rows], experiment.SNAPSHOT_COLUMNS), file=sys.stderr)
    if report.breakdown:
        b = report.breakdown
        print(f"numerical breakdown at step {b['step']} ({b['label']}): {b['message']}", file=sys.stderr)
    _emit(report, args)
    return report.exit_code


def _bench(args):
    report = experiment.bench(_config(args))
    print(experiment.format_table(report.rows, report.columns), file=sys.stderr)
    for alg, b in report.breakdowns.items():
        if b:
            print(f"{alg}: numerical breakdown at step {b['step']}: {b['message']}", file=sys.stderr)
    _emit(report, args)
    return report.exit_code


def _train_and_save(args, steps):
    cfg = _config(args)
    if not steps:
        cfg = cfg.with_(steps=[])
    report = experiment.run(cfg)
    if report.breakdown:
        print(f"numerical breakdown: {report.breakdown['message']}", file=sys.stderr)
        return EXIT_BREAKDOWN
    save_model(report.session.state, args.model, report.session.params)
    row = report.rows[-1]
    acc = "n/a" if row.test_accuracy is None else f"{row.test_accuracy:.2f}%"
    print(f"saved {args.model}: l={row.samples} k={row.nodes} test accuracy {acc}", file=sys.stderr)
    return EXIT_OK


def _verify(args):
    perturb = os.environ.get("RIDGESTREAM_PERTURB_SEED")
    report = run_verify(
        args.scope,
        base_seed=args.seed or 0,
        perturb_seed=int(perturb) if perturb else None,
    )
    print(report.summary())
    for r in report.results:
        if not r.passed:
            print(f"  seed {r.seed} ({r.suite}): {'; '.join(r.failures[:3])}")
    return EXIT_OK if report.passed else EXIT_CONFIG


def _inspect(args):
    print(json.dumps(inspect_model(args.model), indent=2, sort_keys=True))
    return EXIT_OK


def build_parser():
    parser = _Parser(prog="ridgestream", description="Incremental ridge learners for broad learning networks.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, needs_config=True):
        if needs_config:
            p.add_argument("--config", required=True, help="experiment JSON document")
        p.add_argument("--seed", type=int, help="override the config seed")
        return p

    def output(p):
        p.add_argument("--out", choices=("csv", "json"), default="json", help="report format (default json)")
        p.add_argument("--report", help="write the report here instead of stdout")

    output(common(sub.add_parser("run", help="run a schedule and print snapshot rows")))
    output(common(sub.add_parser("bench", help="time the same schedule under each algorithm")))
    p = common(sub.add_parser("init-train", help="train the initial network and save it"))
    p.add_argument("--model", required=True)
    p = common(sub.add_parser("export-model", help="run the whole schedule and save the final state"))
    p.add_argument("--model", required=True)
    p = common(sub.add_parser("verify", help="differential checks against the direct solve"), needs_config=False)
    p.add_argument("--scope", choices=sorted(SCOPES), default="default")
    p = sub.add_parser("inspect-model", help="print the metadata of a saved model")
    p.add_argument("model")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    handlers = {
        "run": _run,
        "bench": _bench,
        "init-train": lambda a: _train_and_save(a, steps=False),
        "export-model": lambda a: _train_and_save(a, steps=True),
        "verify": _verify,
        "inspect-model": _inspect,
    }
    try:
        return handlers[args.command](args)
    except experiment.ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, IDXError, ModelFileError) as err:
        print(f"I/O error: {err}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
