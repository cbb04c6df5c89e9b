"""Command-line entry point: ``train``, ``eval``, ``simulate`` and ``stats``.

Exit codes: 0 on success, 2 for usage or configuration errors, 1 for
failures while running. Every command prints the resolved configuration
first; feeding that text back through ``--config`` reproduces the run.
"""

from __future__ import annotations

import argparse
import csv
import logging
import math
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .config import ConfigError, build_configs, format_config, read_config
from .env import TRACE_COLUMNS, simulate_cei_pair
from .evaluation import CONTROLLERS, export_metrics_csv, export_traces_csv, metric_column, run_episode, run_evaluation
from .figures import render_distribution_svg, render_traces_svg
from .policy import CheckpointError, PolicyConfig, load_checkpoint
from .stats import compare_groups, format_report
from .train import TrainingDivergedError, run_training

OUT_ROOT_ENV = "SIDEWALK_OUT_ROOT"
METRICS = ("max_normalized_risk", "cum_steering", "cum_sidestep")
SIM_CONTROLLERS = CONTROLLERS + ("cei-vs-cei",)
PAIR_COLUMNS = (
    "t",
    "first_x",
    "first_y",
    "first_psi",
    "second_x",
    "second_y",
    "second_psi",
    "first_target",
    "second_target",
    "first_risk",
    "second_risk",
)

log = logging.getLogger("sidewalk")


class UsageError(Exception):
    """Bad flags or configuration; reported with exit code 2."""


def available_cores() -> int:
    try:
        return len(os.sched_getaffinity(0))
    except AttributeError:
        return os.cpu_count() or 1


def resolve_out(out: str | None, default: str) -> Path:
    """Relative output paths live under ``$SIDEWALK_OUT_ROOT`` when it is set."""
    path = Path(out if out else default)
    root = os.environ.get(OUT_ROOT_ENV)
    if root and not path.is_absolute():
        path = Path(root) / path
    return path


def load_run_config(args):
    values = read_config(args.config) if getattr(args, "config", None) else {}
    if getattr(args, "seed", None) is not None:
        values["seed"] = args.seed
    if getattr(args, "risk_averse", False):
        values["risk_averse"] = True
    if getattr(args, "total_episodes", None) is not None:
        values["total_episodes"] = args.total_episodes
    train, env = build_configs(values)
    jobs = args.jobs if getattr(args, "jobs", None) else available_cores()
    if jobs < 1:
        raise UsageError("--jobs must be at least 1")
    return train, env, jobs


def echo_config(train, env, out_dir: Path, header: dict) -> None:
    text = format_config(train, env, header)
    sys.stdout.write(text)
    sys.stdout.flush()
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config.cfg").write_text(text)


def load_policy(path: str | None):
    if not path:
        raise UsageError("--policy is required for the rl controller")
    if not Path(path).is_file():
        raise UsageError(f"policy checkpoint not found: {path}")
    params, _, stored, _ = load_checkpoint(path, PolicyConfig())
    return params, stored


# -- commands -------------------------------------------------------------------


def cmd_train(args) -> int:
    train, env, jobs = load_run_config(args)
    train = replace(train, jobs=jobs)
    out = resolve_out(args.out, f"runs/train-{'risk-averse' if train.risk_averse else 'basic'}-seed{train.seed}")
    echo_config(train, env, out, {"command": "train", "seed": train.seed, "out": str(out), "jobs": jobs})
    run_training(train, env, out_dir=out, progress=not args.quiet)
    print(f"policy written to {out / 'policy.ckpt'}")
    return 0


def cmd_eval(args) -> int:
    if args.episodes < 1:
        raise UsageError("--episodes must be at least 1")
    train, env, jobs = load_run_config(args)
    params, policy_config = (None, PolicyConfig())
    if args.controller == "rl":
        params, policy_config = load_policy(args.policy)
    out = resolve_out(args.out, f"runs/eval-{args.controller}-seed{train.seed}")
    header = {"command": "eval", "controller": args.controller, "policy": args.policy or "", "episodes": args.episodes, "seed": train.seed, "out": str(out), "jobs": jobs}
    echo_config(train, env, out, header)

    results = run_evaluation(args.controller, args.episodes, train.seed, env, params, policy_config, record=args.traces > 0, jobs=jobs)
    rows = [r.metrics for r in results]
    export_metrics_csv(rows, out / "metrics.csv")
    figures = out / "figures"
    figures.mkdir(exist_ok=True)
    if args.traces > 0:
        traces_dir = out / "traces"
        traces_dir.mkdir(exist_ok=True)
        shown = results[: args.traces]
        for r in shown:
            export_traces_csv(r.trace, traces_dir / f"episode_{r.metrics.episode:04d}.csv")
        render_traces_svg({args.controller: [np.array(r.trace) for r in shown]}, figures / "traces.svg", env.geometry)
    for metric in METRICS:
        values = [getattr(r, metric) for r in rows]
        render_distribution_svg({args.controller: values}, figures / f"{metric}.svg", metric, threshold_line=1.0 if metric == "max_normalized_risk" else None)

    report = summary_report(args.controller, rows)
    (out / "report.txt").write_text(report)
    sys.stdout.write(report)
    return 0


def summary_report(controller: str, rows) -> str:
    n = len(rows)
    causes = {}
    for r in rows:
        causes[r.cause] = causes.get(r.cause, 0) + 1
    lines = [
        f"controller: {controller}",
        f"episodes: {n}",
        f"success: {sum(r.success for r in rows)}/{n}",
        "causes: " + ", ".join(f"{k}={v}" for k, v in sorted(causes.items())),
    ]
    for metric in METRICS:
        v = np.array([getattr(r, metric) for r in rows])
        q1, med, q3 = np.percentile(v, [25, 50, 75])
        lines.append(f"{metric}: median {med:.4f} (IQR {q1:.4f} to {q3:.4f})")
    ttg = [r.time_to_goal for r in rows if not math.isnan(r.time_to_goal)]
    if ttg:
        lines.append(f"time_to_goal: median {float(np.median(ttg)):.2f} s")
    return "\n".join(lines) + "\n"


def cmd_simulate(args) -> int:
    train, env, _ = load_run_config(args)
    out = resolve_out(args.out, f"runs/simulate-{args.controller}-seed{train.seed}")
    header = {"command": "simulate", "controller": args.controller, "policy": args.policy or "", "episode": args.episode, "seed": train.seed, "out": str(out)}
    if args.controller == "cei-vs-cei":
        header.update({"offset": args.offset, "thresholds": tuple(args.thresholds)})
        echo_config(train, env, out, header)
        return simulate_pair(args, env, out)

    params, policy_config = (None, PolicyConfig())
    if args.controller == "rl":
        params, policy_config = load_policy(args.policy)
    echo_config(train, env, out, header)
    result = run_episode(args.controller, args.episode, train.seed, env, params, policy_config, record=True)
    export_traces_csv(result.trace, out / "trace.csv")
    render_traces_svg({args.controller: [np.array(result.trace)]}, out / "trace.svg", env.geometry)
    m = result.metrics
    print(f"cause={m.cause} success={int(m.success)} max_normalized_risk={m.max_normalized_risk:.4f} cum_steering={m.cum_steering:.4f} cum_sidestep={m.cum_sidestep:.4f}")
    return 0


def simulate_pair(args, env, out: Path) -> int:
    thresholds = tuple(args.thresholds)
    for th in thresholds:
        if not 0.0 < th < 1.0:
            raise UsageError("--thresholds must lie in (0, 1)")
    result = simulate_cei_pair(args.offset, args.offset, thresholds, env.cei, env.geometry, env.dt, env.max_steps)
    with open(out / "trace.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(PAIR_COLUMNS)
        for row in result["rows"]:
            values = (row["t"], *row["first"], *row["second"], row["first_target"], row["second_target"], row["first_risk"], row["second_risk"])
            writer.writerow([repr(float(v)) for v in values])
    # draw the pair with the trace renderer: first agent as pedestrian, second as robot
    trace = np.full((len(result["rows"]), len(TRACE_COLUMNS)), np.nan)
    col = {c: i for i, c in enumerate(TRACE_COLUMNS)}
    for i, row in enumerate(result["rows"]):
        trace[i, col["ped_x"]], trace[i, col["ped_y"]] = row["first"][:2]
        trace[i, col["robot_x"]], trace[i, col["robot_y"]] = row["second"][:2]
    render_traces_svg({"cei-vs-cei": [trace]}, out / "trace.svg", env.geometry)
    same_side = sum(1 for row in result["rows"] if row["first_target"] * row["second_target"] > 0 and row["first_target"] != 0)
    print(f"cause={result['cause']} steps={len(result['rows'])} same_side_steps={same_side}")
    return 0


def cmd_stats(args) -> int:
    if len(args.metrics) < 2:
        raise UsageError("stats needs at least two metrics files")
    names = args.names or [Path(p).parent.name or Path(p).stem for p in args.metrics]
    if len(names) != len(args.metrics):
        raise UsageError("--names must match the number of metrics files")
    if len(set(names)) != len(names):
        names = [f"{n}[{i}]" for i, n in enumerate(names)]
    groups = {}
    for name, path in zip(names, args.metrics):
        if not Path(path).is_file():
            raise UsageError(f"metrics file not found: {path}")
        try:
            groups[name] = metric_column(path, args.column)
        except KeyError as exc:
            raise UsageError(str(exc.args[0])) from None
        if not groups[name]:
            raise UsageError(f"{path}: no rows")
    comparison = compare_groups(groups)
    report = format_report(args.column, comparison)
    sys.stdout.write(report)
    if args.out:
        out = resolve_out(args.out, args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / f"stats_{args.column}.txt").write_text(report)
        render_distribution_svg(groups, out / f"{args.column}.svg", args.column, comparison, threshold_line=1.0 if args.column == "max_normalized_risk" else None)
    return 0


# -- parser ---------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sidewalk", description="Robot and CEI pedestrian sidewalk encounters.")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, jobs=True):
        p.add_argument("--config", help="flat key = value configuration file")
        p.add_argument("--seed", type=int, help="master seed (overrides the config file)")
        p.add_argument("--out", help=f"output directory; relative paths go under ${OUT_ROOT_ENV} when set")
        if jobs:
            p.add_argument("--jobs", type=int, help="worker processes (default: available cores)")

    p = sub.add_parser("train", help="train a policy with REINFORCE")
    common(p)
    p.add_argument("--risk-averse", action="store_true", help="add the perceived-risk penalty to the reward")
    p.add_argument("--episodes", dest="total_episodes", type=int, help="total training episodes")
    p.add_argument("--quiet", action="store_true", help="no progress lines")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a controller against the CEI pedestrian")
    common(p)
    p.add_argument("--controller", required=True, choices=CONTROLLERS)
    p.add_argument("--policy", help="checkpoint for the rl controller")
    p.add_argument("--episodes", type=int, default=200)
    p.add_argument("--traces", type=int, default=20, help="number of episode traces to write (0 for none)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("simulate", help="run and record a single episode")
    common(p, jobs=False)
    p.add_argument("--controller", required=True, choices=SIM_CONTROLLERS)
    p.add_argument("--policy", help="checkpoint for the rl controller")
    p.add_argument("--episode", type=int, default=0, help="episode index within the master seed")
    p.add_argument("--offset", type=float, default=0.05, help="cei-vs-cei: lateral position of both agents (same side of the centreline)")
    p.add_argument("--thresholds", type=float, nargs=2, default=(0.6, 0.62), metavar=("FIRST", "SECOND"), help="cei-vs-cei: risk thresholds")
    p.set_defaults(func=cmd_simulate, jobs=1)

    p = sub.add_parser("stats", help="compare a metric across metrics files")
    p.add_argument("metrics", nargs="+", help="metrics.csv files, one per group")
    p.add_argument("--column", default="max_normalized_risk")
    p.add_argument("--names", nargs="+", help="group names (default: parent directory names)")
    p.add_argument("--out", help="directory for the report and distribution figure")
    p.set_defaults(func=cmd_stats)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="%(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (CheckpointError, TrainingDivergedError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
