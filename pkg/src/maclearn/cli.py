"""Command-line interface.

Subcommands: ``train`` runs a seeded campaign from a config file,
``evaluate`` tests a checkpoint over fresh episodes, ``export`` merges
campaigns into a plot-ready CSV, and ``report`` additionally renders the
figures. The MACLEARN_OUT environment variable sets the default output
root (default ./runs).
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

from .campaign import evaluate, run_campaign, select_best
from .config import ExperimentConfig, RunMode, load_config
from .errors import MaclearnError
from .export import SMOOTHING_WINDOW, export_curves


def _out_root() -> Path:
    return Path(os.environ.get("MACLEARN_OUT", "runs"))


def _parse_seeds(raw: str) -> tuple[int, ...]:
    return tuple(int(part) for part in raw.split(",") if part.strip())


def _split_dirs(raw: str) -> list[str]:
    return [part for part in raw.split(",") if part.strip()]


def _cmd_train(args: argparse.Namespace) -> int:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    changes = {}
    if args.mode is not None:
        changes["mode"] = RunMode(args.mode)
    if args.p is not None:
        changes["buffer_size"] = args.p
    if args.seeds is not None:
        changes["seeds"] = _parse_seeds(args.seeds)
    if args.workers is not None:
        changes["workers"] = args.workers
    if changes:
        cfg = cfg.replace(**changes)
    out = Path(args.out) if args.out else \
        _out_root() / f"{cfg.mode.value}_p{cfg.require_buffer_size()}"
    run_dir = run_campaign(cfg, out)
    best = None
    try:
        best = select_best(run_dir)
    except MaclearnError:
        pass
    print(f"campaign written to {run_dir}")
    if best is not None:
        print(f"best checkpoint: seed {best.seed} lifetime {best.lifetime} "
              f"(trailing mean {best.window_mean_pct:.2f}%) at "
              f"{best.directory}")
    return 0


def _cmd_evaluate(args: argparse.Namespace) -> int:
    out = Path(args.out) if args.out else _out_root() / "eval"
    summary = evaluate(args.checkpoint, args.episodes, out,
                       eval_seed=args.eval_seed)
    print(f"evaluated {summary.n_episodes} episodes: median "
          f"{summary.median:.1f}%, IQR [{summary.q1:.1f}, {summary.q3:.1f}], "
          f"whiskers [{summary.whisker_low:.1f}, {summary.whisker_high:.1f}],"
          f" {len(summary.outliers)} outliers")
    print(f"summary written to {out}")
    return 0


def _cmd_export(args: argparse.Namespace) -> int:
    out = Path(args.out) if args.out else _out_root() / "curves.csv"
    path = export_curves(_split_dirs(args.runs), out, args.window)
    print(f"curves written to {path}")
    return 0


def _cmd_report(args: argparse.Namespace) -> int:
    from .campaign import EvalSummary  # noqa: F401
    from .report import render_report

    out = Path(args.out) if args.out else _out_root() / "report"
    summaries = {}
    if args.eval_checkpoints:
        for spec in _split_dirs(args.eval_checkpoints):
            label, _, ckpt = spec.partition("=")
            if not ckpt:
                label, ckpt = Path(spec).name, spec
            summaries[label] = evaluate(ckpt, args.episodes)
    render_report(_split_dirs(args.runs), out, summaries or None,
                  args.window)
    print(f"report written to {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="maclearn",
        description="Multi-agent MAC protocol learning experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="run a seeded training campaign")
    p_train.add_argument("--config", help="flat key-value config file")
    p_train.add_argument("--mode",
                         choices=[m.value for m in RunMode])
    p_train.add_argument("--p", type=int,
                         help="packets per agent (buffer_size)")
    p_train.add_argument("--seeds", help="comma-separated run seeds")
    p_train.add_argument("--workers", type=int,
                         help="parallel seed workers")
    p_train.add_argument("--out", help="campaign output directory")
    p_train.set_defaults(func=_cmd_train)

    p_eval = sub.add_parser("evaluate", help="test a trained checkpoint")
    p_eval.add_argument("--checkpoint", required=True,
                        help="checkpoint directory")
    p_eval.add_argument("--episodes", type=int, default=1000)
    p_eval.add_argument("--eval-seed", type=int, default=None)
    p_eval.add_argument("--out", help="evaluation output directory")
    p_eval.set_defaults(func=_cmd_evaluate)

    p_export = sub.add_parser("export", help="merge campaigns into curves")
    p_export.add_argument("--runs", required=True,
                          help="comma-separated campaign directories")
    p_export.add_argument("--window", type=int, default=SMOOTHING_WINDOW)
    p_export.add_argument("--out", help="output CSV path")
    p_export.set_defaults(func=_cmd_export)

    p_report = sub.add_parser(
        "report", help="export curves and render figures")
    p_report.add_argument("--runs", required=True,
                          help="comma-separated campaign directories")
    p_report.add_argument("--eval-checkpoints", default=None,
                          help="comma-separated label=checkpoint pairs for "
                               "the evaluation boxplot")
    p_report.add_argument("--episodes", type=int, default=1000)
    p_report.add_argument("--window", type=int, default=SMOOTHING_WINDOW)
    p_report.add_argument("--out", help="report output directory")
    p_report.set_defaults(func=_cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except MaclearnError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
