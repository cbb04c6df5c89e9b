"""Batch evaluation of robot controllers against the CEI pedestrian.

Each episode runs in evaluation mode with a seed derived from the master
seed and the episode index, so results do not depend on the order or the
process in which episodes are run.
"""

from __future__ import annotations

import csv
import math
import multiprocessing as mp
from dataclasses import astuple, dataclass, fields, replace
from pathlib import Path

import numpy as np

from .env import TRACE_COLUMNS, EnvConfig, SidewalkEnv, episode_seed
from .policy import PolicyConfig, forward
from .world import RobotAction

CONTROLLERS = ("social-forces", "rl")


@dataclass(frozen=True)
class MetricsRow:
    episode: int
    controller: str
    seed: int
    success: bool
    cause: str
    max_normalized_risk: float
    cum_steering: float
    cum_sidestep: float
    time_to_goal: float

    def __post_init__(self):
        if self.max_normalized_risk < 0 or self.cum_steering < 0 or self.cum_sidestep < 0:
            raise ValueError("risk and cumulative inputs must be non-negative")


METRICS_COLUMNS = tuple(f.name for f in fields(MetricsRow))


@dataclass
class EpisodeResult:
    metrics: MetricsRow
    trace: list[tuple] | None


class EffortAccumulator:
    """Streaming maxima and integrals of the pedestrian's risk and inputs."""

    def __init__(self, threshold: float, dt: float):
        self.threshold = threshold
        self.dt = dt
        self.max_risk = 0.0
        self.steering = 0.0
        self.sidestep = 0.0

    def add(self, risk: float, u_st: float, u_ss: float) -> None:
        self.max_risk = max(self.max_risk, risk / self.threshold)
        self.steering += abs(u_st) * self.dt
        self.sidestep += abs(u_ss) * self.dt


def evaluation_config(config: EnvConfig, controller: str) -> EnvConfig:
    if controller not in CONTROLLERS:
        raise ValueError(f"unknown controller {controller!r}; expected one of {CONTROLLERS}")
    model = "point_mass" if controller == "social-forces" else "bicycle"
    return replace(config, stage="C", evaluation=True, robot_model=model)


def run_episode(
    controller: str,
    episode: int,
    master_seed: int,
    config: EnvConfig = EnvConfig(),
    params: dict | None = None,
    policy_config: PolicyConfig = PolicyConfig(),
    record: bool = False,
) -> EpisodeResult:
    """One evaluation episode; RL actions are the policy mean."""
    cfg = evaluation_config(config, controller)
    if controller == "rl" and params is None:
        raise ValueError("the rl controller needs policy parameters")
    seed = episode_seed(master_seed, episode)
    env = SidewalkEnv(cfg, record=record)
    obs = env.reset(seed)
    acc = EffortAccumulator(env.threshold, cfg.dt)
    while True:
        if controller == "rl":
            mean = forward(params, obs, policy_config).mean
            action = RobotAction(float(mean[0]), float(mean[1]))
        else:
            action = env.social_forces_action()
        out = env.step(action)
        acc.add(out.info["risk"], out.info["u_st"], out.info["u_ss"])
        obs = out.observation
        if out.terminated or out.truncated:
            break
    cause = out.cause
    time_to_goal = env.t if cause == "goal" else math.nan
    if cause == "goal":
        for risk, u_st, u_ss in env.finish_pedestrian():
            acc.add(risk, u_st, u_ss)
    success = cause == "goal" and env.pedestrian_finished
    row = MetricsRow(
        episode=episode,
        controller=controller,
        seed=seed,
        success=success,
        cause=cause,
        max_normalized_risk=acc.max_risk,
        cum_steering=acc.steering,
        cum_sidestep=acc.sidestep,
        time_to_goal=time_to_goal,
    )
    return EpisodeResult(row, env.trace if record else None)


def _episode_job(args):
    return run_episode(*args)


def run_evaluation(
    controller: str,
    n_episodes: int,
    master_seed: int,
    config: EnvConfig = EnvConfig(),
    params: dict | None = None,
    policy_config: PolicyConfig = PolicyConfig(),
    record: bool = False,
    jobs: int = 1,
) -> list[EpisodeResult]:
    """Evaluate ``n_episodes`` episodes; results are identical for any ``jobs``."""
    if n_episodes < 1:
        raise ValueError("n_episodes must be positive")
    evaluation_config(config, controller)
    tasks = [(controller, i, master_seed, config, params, policy_config, record) for i in range(n_episodes)]
    if jobs <= 1:
        return [_episode_job(t) for t in tasks]
    with mp.get_context("spawn").Pool(jobs) as pool:
        return pool.map(_episode_job, tasks, chunksize=max(1, n_episodes // (4 * jobs)))


# -- CSV export -----------------------------------------------------------------


def _fmt(value) -> str:
    if isinstance(value, bool):
        return str(int(value))
    if isinstance(value, float):
        return repr(value)
    return str(value)


def export_metrics_csv(rows: list[MetricsRow], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(METRICS_COLUMNS)
        for row in rows:
            writer.writerow([_fmt(v) for v in astuple(row)])


def read_metrics_csv(path: str | Path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def metric_column(path: str | Path, column: str) -> list[float]:
    rows = read_metrics_csv(path)
    if not rows:
        return []
    if column not in rows[0]:
        raise KeyError(f"{path}: no column {column!r}")
    return [float(r[column]) for r in rows]


def export_traces_csv(trace: list[tuple], path: str | Path) -> None:
    """One row per recorded step, ``t = 0`` included."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(TRACE_COLUMNS)
        for row in trace:
            writer.writerow([_fmt(float(v)) for v in row])


def read_trace_csv(path: str | Path) -> np.ndarray:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if tuple(header) != TRACE_COLUMNS:
            raise ValueError(f"{path}: unexpected trace header")
        return np.array([[float(v) for v in row] for row in reader])
