"""Command-line entry point ``hda``.

Exit codes: 0 success, 1 usage or config error, 2 runtime failure,
3 selfcheck failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME, EXIT_SELFCHECK = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _m_list(text: str) -> List[int]:
    try:
        values = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not values:
        raise argparse.ArgumentTypeError("empty M list")
    return values


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="hda", description="Heuristic domain adaptation experiments on synthetic shifts.")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    run = sub.add_parser("run", help="train one model")
    run.add_argument("--config", required=True,
                     help="config JSON path, or a bundled name (default, moons, msda, ssda1, ssda3)")
    run.add_argument("--seed", type=int)
    run.add_argument("--method", choices=["hdan", "source_only", "dann_baseline"])
    run.add_argument("--eval-only", action="store_true", help="record the epoch-0 row and stop")
    run.add_argument("--out", help="output directory (default $HDA_OUT_DIR/<method>_seed<N>)")

    sw = sub.add_parser("sweep", help="target accuracy per number of heuristic heads")
    sw.add_argument("--config", required=True)
    sw.add_argument("--m", type=_m_list, required=True, help="e.g. 1,2,3,4,5")
    sw.add_argument("--seeds", type=_m_list, help="comma-separated seeds (default: config seed + 0,1,2)")
    sw.add_argument("--out")

    gen = sub.add_parser("gen-data", help="write a task's datasets as CSV")
    gen.add_argument("--spec", required=True, help="JSON task spec (or a full config with a 'task' section)")
    gen.add_argument("--out", required=True)
    gen.add_argument("--seed", type=int, default=None)

    pl = sub.add_parser("plot", help="SVG charts from metrics.csv")
    pl.add_argument("--metrics", required=True)
    pl.add_argument("--out", required=True)

    sc = sub.add_parser("selfcheck", help="gradient checks, bound identities, kurtosis closed forms")
    sc.add_argument("--configs", type=int, default=20, help="random configurations per gradient check")
    return p


def _cmd_run(args) -> int:
    from .runner import load_config, run_experiment

    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.method is not None:
        cfg.method = args.method
    summary = run_experiment(cfg, output_dir=args.out, eval_only=args.eval_only)
    print(json.dumps({k: summary.to_json()[k] for k in
                      ("status", "final_target_acc", "best_target_acc", "wall_clock_seconds")}))
    return EXIT_OK if summary.status == "ok" else EXIT_RUNTIME


def _cmd_sweep(args) -> int:
    from .runner import load_config, sweep_m

    cfg = load_config(args.config)
    table = sweep_m(cfg, args.m, seeds=args.seeds, output_dir=args.out)
    for row in table:
        print(f"M={row['M']} mean={row['mean_target_acc']:.4f} std={row['std_target_acc']:.4f} "
              f"n={row['n_seeds']}")
    return EXIT_OK


def _cmd_gen_data(args) -> int:
    from .data import TaskSpec, export_csv, make_task
    from .runner import ConfigError

    path = Path(args.spec)
    if not path.exists():
        raise ConfigError(f"spec file not found: {path}")
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    if isinstance(data, dict) and "task" in data:
        data = data["task"]
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected a JSON object")
    try:
        spec = TaskSpec(**data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    seed = args.seed if args.seed is not None else (spec.seed if spec.seed is not None else 0)
    task = make_task(spec, seed=seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    written = [export_csv(s, out / f"source_{j}.csv") for j, s in enumerate(task.sources)]
    written.append(export_csv(task.target_unlabeled, out / "target_unlabeled.csv"))
    written.append(export_csv(task.target_eval, out / "target_eval.csv"))
    if task.target_labeled is not None:
        written.append(export_csv(task.target_labeled, out / "target_labeled.csv"))
    for w in written:
        print(w)
    return EXIT_OK


def _cmd_plot(args) -> int:
    from .plots import plot_metrics

    for path in plot_metrics(args.metrics, args.out):
        print(path)
    return EXIT_OK


def _cmd_selfcheck(args) -> int:
    from .selfcheck import run_selfcheck

    if args.configs < 1:
        raise UsageError("hda selfcheck: --configs must be >= 1")
    report = run_selfcheck(configs=args.configs)
    print(report.format())
    return EXIT_OK if report.ok else EXIT_SELFCHECK


COMMANDS = {"run": _cmd_run, "sweep": _cmd_sweep, "gen-data": _cmd_gen_data,
            "plot": _cmd_plot, "selfcheck": _cmd_selfcheck}


def main(argv: Optional[List[str]] = None) -> int:
    from .plots import MetricsParseError
    from .runner import ConfigError

    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return EXIT_OK if not exc.code else EXIT_USAGE
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (UsageError, ConfigError) as exc:
        print(f"hda {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (MetricsParseError, OSError, RuntimeError, ValueError, FloatingPointError) as exc:
        print(f"hda {args.command}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
