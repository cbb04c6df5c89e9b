"""REINFORCE training with a three-stage curriculum.

Episodes are rolled out in fixed-size lockstep groups so one batched forward
pass serves several episodes. Group membership depends only on episode
indices, never on the number of worker processes, which keeps parallel and
serial runs value-identical.
"""

from __future__ import annotations

import copy
import csv
import logging
import math
import time
from dataclasses import asdict, dataclass, field, replace
from multiprocessing import get_context
from pathlib import Path

import numpy as np

from .env import EnvConfig, SidewalkEnv, episode_seed
from .policy import (
    NonFiniteError,
    OptimizerState,
    PolicyConfig,
    adamw_step,
    backward,
    clip_by_global_norm,
    forward,
    init_params,
    log_prob,
    save_checkpoint,
)
from .world import RobotAction

log = logging.getLogger(__name__)

TRAIN_LOG_COLUMNS = ("batch", "episodes", "mean_return", "mean_length", "n_collisions", "n_oob", "n_goal", "stage")
EPISODE_LOG_COLUMNS = ("episode", "seed", "stage", "return", "length", "cause")
VALIDATION_LOG_COLUMNS = ("episodes", "mean_return", "n_goal", "n_collisions", "n_oob", "n_timeout", "selected")


class TrainingDivergedError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    total_episodes: int = 12000
    batch_size: int = 20
    lr: float = 1e-3
    gamma: float = 0.99
    weight_decay: float = 0.01
    stage_a_end: int = 1000
    stage_b_end: int = 2000
    baseline: bool = True
    grad_clip: float = 5.0
    seed: int = 0
    risk_averse: bool = False
    checkpoint_every: int = 2000
    rollout_group: int = 10
    jobs: int = 1
    init_std: float = 0.3
    # held-out deterministic validation during stage C; 0 keeps the last iterate
    validate_every: int = 500
    validate_episodes: int = 40

    def __post_init__(self):
        if self.batch_size <= 0 or self.total_episodes <= 0 or self.rollout_group <= 0:
            raise ValueError("episode counts and batch size must be positive")
        if self.validate_every < 0 or self.validate_every % self.batch_size:
            raise ValueError("validate_every must be a non-negative multiple of batch_size")
        if self.validate_every and self.validate_episodes <= 0:
            raise ValueError("validate_episodes must be positive")
        if not 0 <= self.stage_a_end <= self.stage_b_end <= self.total_episodes:
            raise ValueError("curriculum boundaries must satisfy 0 <= A end <= B end <= total")
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError("gamma must lie in [0, 1]")


@dataclass
class Episode:
    index: int
    seed: int
    stage: str
    obs: np.ndarray
    actions: np.ndarray  # raw (unclipped) samples
    rewards: np.ndarray
    log_probs: np.ndarray
    cause: str
    risks: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def length(self) -> int:
        return len(self.rewards)

    @property
    def total_return(self) -> float:
        return float(self.rewards.sum())


def compute_returns(rewards, gamma: float) -> np.ndarray:
    rewards = np.asarray(rewards, dtype=np.float64)
    out = np.empty_like(rewards)
    running = 0.0
    for t in range(len(rewards) - 1, -1, -1):
        running = rewards[t] + gamma * running
        out[t] = running
    return out


def curriculum_stage(episode_index: int, config: TrainConfig) -> str:
    if episode_index < config.stage_a_end:
        return "A"
    if episode_index < config.stage_b_end:
        return "B"
    return "C"


def validation_seed(master_seed: int, k: int) -> int:
    """Seed of validation episode ``k``; disjoint from the training stream."""
    seq = np.random.SeedSequence([int(master_seed) & 0xFFFFFFFFFFFFFFFF, int(k), 1])
    return int(seq.generate_state(1, dtype=np.uint64)[0])


def action_rng(seed: int) -> np.random.Generator:
    """Sampling stream of an episode, independent of its spawn stream."""
    return np.random.default_rng([seed, 1])


def rollout_group(
    params: dict,
    env_config: EnvConfig,
    indices: list[int],
    seeds: list[int],
    policy_config: PolicyConfig = PolicyConfig(),
    deterministic: bool = False,
) -> list[Episode]:
    """Run several episodes in lockstep with a single batched policy call per step."""
    envs = [SidewalkEnv(env_config) for _ in seeds]
    obs = [env.reset(seed) for env, seed in zip(envs, seeds)]
    rngs = [action_rng(seed) for seed in seeds]
    traj = [{"obs": [], "act": [], "rew": [], "lp": [], "risk": []} for _ in seeds]
    active = list(range(len(envs)))
    while active:
        batch = np.stack([obs[i] for i in active])
        dist = forward(params, batch, policy_config)
        if deterministic:
            raw = dist.mean.copy()
        else:
            noise = np.stack([rngs[i].standard_normal(policy_config.action_dim) for i in active])
            raw = dist.mean + dist.std * noise
        lps = log_prob(dist, raw)
        still = []
        for row, i in enumerate(active):
            a = raw[row]
            out = envs[i].step(RobotAction(float(a[0]), float(a[1])))
            tr = traj[i]
            tr["obs"].append(obs[i])
            tr["act"].append(a)
            tr["rew"].append(out.reward)
            tr["lp"].append(lps[row])
            tr["risk"].append(out.info["risk"])
            obs[i] = out.observation
            if not (out.terminated or out.truncated):
                still.append(i)
        active = still
    return [
        Episode(
            index=idx,
            seed=seed,
            stage=env_config.stage,
            obs=np.array(tr["obs"]),
            actions=np.array(tr["act"]),
            rewards=np.array(tr["rew"]),
            log_probs=np.array(tr["lp"]),
            cause=env.cause,
            risks=np.array(tr["risk"]),
        )
        for idx, seed, tr, env in zip(indices, seeds, traj, envs)
    ]


def _rollout_job(args):
    return rollout_group(*args)


class _Runner:
    """Dispatches rollout groups serially or over a process pool."""

    def __init__(self, jobs: int):
        self.jobs = max(1, jobs)
        self.pool = get_context("spawn").Pool(self.jobs) if self.jobs > 1 else None

    def map(self, tasks):
        if self.pool is None:
            return [_rollout_job(t) for t in tasks]
        return self.pool.map(_rollout_job, tasks)

    def close(self):
        if self.pool is not None:
            self.pool.close()
            self.pool.join()


def collect_batch(runner, params, env_config, indices, seeds, group, policy_config, deterministic=False):
    tasks = [
        (params, env_config, indices[k : k + group], seeds[k : k + group], policy_config, deterministic)
        for k in range(0, len(seeds), group)
    ]
    episodes = []
    for chunk in runner.map(tasks):
        episodes.extend(chunk)
    return episodes


def advantages(returns: list[np.ndarray], baseline: bool) -> np.ndarray:
    """Concatenated advantages for a batch of per-episode return arrays.

    With ``baseline`` the mean return of the episodes still running at the
    same time index is subtracted and the result is divided by its batch
    standard deviation. Reward-to-go shrinks along every episode, so a single
    batch-wide mean would leave that trend in the advantages as noise.
    """
    if not baseline:
        return np.concatenate(returns)
    longest = max(len(r) for r in returns)
    total = np.zeros(longest)
    count = np.zeros(longest)
    for r in returns:
        total[: len(r)] += r
        count[: len(r)] += 1
    mean_t = total / count
    adv = np.concatenate([r - mean_t[: len(r)] for r in returns])
    return adv / (adv.std() + 1e-8)


def reinforce_gradient(
    params: dict,
    episodes: list[Episode],
    gamma: float,
    baseline: bool,
    policy_config: PolicyConfig = PolicyConfig(),
) -> dict:
    """Gradient of ``-(1/B) sum_episodes sum_t log pi(a_t|s_t) * A_t``."""
    adv = advantages([compute_returns(ep.rewards, gamma) for ep in episodes], baseline)
    obs = np.concatenate([ep.obs for ep in episodes])
    actions = np.concatenate([ep.actions for ep in episodes])
    _, cache = forward(params, obs, policy_config, cache=True)
    return backward(params, cache, actions, adv / len(episodes), policy_config)


def run_training(
    config: TrainConfig,
    env_config: EnvConfig = EnvConfig(),
    out_dir: str | Path | None = None,
    policy_config: PolicyConfig = PolicyConfig(),
    progress: bool = False,
):
    """Train a policy; returns ``(params, log_rows)``.

    Every ``validate_every`` episodes within the last curriculum stage
    (normally C), the policy mean is run on a fixed set of held-out episodes
    of that stage; the snapshot with the highest mean validation return is
    returned. Without validation the last iterate is returned.

    When ``out_dir`` is given, writes ``train_log.csv``, ``episodes.csv``,
    ``validation.csv``, periodic ``checkpoint_<episodes>.ckpt`` files,
    ``final.ckpt`` (last iterate) and ``policy.ckpt`` (returned policy).
    """
    env_config = replace(env_config, risk_averse=config.risk_averse, evaluation=False)
    init_rng = np.random.default_rng([config.seed, 0])
    params = init_params(policy_config, init_rng, init_std=config.init_std)
    opt = OptimizerState.zeros(params)
    out = Path(out_dir) if out_dir is not None else None
    log_rows: list[dict] = []
    episode_writer = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        episode_file = open(out / "episodes.csv", "w", newline="")
        episode_writer = csv.writer(episode_file)
        episode_writer.writerow(EPISODE_LOG_COLUMNS)
        train_file = open(out / "train_log.csv", "w", newline="")
        train_writer = csv.writer(train_file)
        train_writer.writerow(TRAIN_LOG_COLUMNS)
        validation_file = open(out / "validation.csv", "w", newline="")
        validation_writer = csv.writer(validation_file)
        validation_writer.writerow(VALIDATION_LOG_COLUMNS)

    def metadata(done: int) -> dict:
        return {"episodes": done, "seed": config.seed, "risk_averse": config.risk_averse, "train_config": asdict(config)}

    runner = _Runner(config.jobs)
    started = time.time()
    # validation covers the last curriculum stage of the run, from its first episode
    final_stage = curriculum_stage(config.total_episodes - 1, config)
    final_stage_start = {"A": 0, "B": config.stage_a_end, "C": config.stage_b_end}[final_stage]
    val_indices = list(range(config.validate_episodes))
    val_seeds = [validation_seed(config.seed, k) for k in val_indices]
    best: tuple[float, int, dict, OptimizerState] | None = None
    try:
        n_batches = math.ceil(config.total_episodes / config.batch_size)
        for b in range(n_batches):
            first = b * config.batch_size
            indices = list(range(first, min(first + config.batch_size, config.total_episodes)))
            stage = curriculum_stage(first, config)
            seeds = [episode_seed(config.seed, i) for i in indices]
            stage_env = env_config.with_stage(stage)
            episodes = collect_batch(runner, params, stage_env, indices, seeds, config.rollout_group, policy_config)
            try:
                grads = reinforce_gradient(params, episodes, config.gamma, config.baseline, policy_config)
                grads, _ = clip_by_global_norm(grads, config.grad_clip)
                if not all(np.isfinite(g).all() for g in grads.values()):
                    raise NonFiniteError("non-finite gradient")
            except NonFiniteError as exc:
                if out is not None:
                    save_checkpoint(out / "diagnostic.ckpt", params, policy_config, opt, metadata(first))
                raise TrainingDivergedError(f"batch {b}: {exc}") from exc
            adamw_step(params, grads, opt, lr=config.lr, weight_decay=config.weight_decay)

            causes = [ep.cause for ep in episodes]
            row = {
                "batch": b,
                "episodes": indices[-1] + 1,
                "mean_return": float(np.mean([ep.total_return for ep in episodes])),
                "mean_length": float(np.mean([ep.length for ep in episodes])),
                "n_collisions": causes.count("collision"),
                "n_oob": causes.count("out_of_bounds"),
                "n_goal": causes.count("goal"),
                "stage": stage,
            }
            log_rows.append(row)
            if out is not None:
                train_writer.writerow([row[c] for c in TRAIN_LOG_COLUMNS])
                for ep in episodes:
                    episode_writer.writerow([ep.index, ep.seed, ep.stage, repr(ep.total_return), ep.length, ep.cause])
                train_file.flush()
                episode_file.flush()
                done = row["episodes"]
                if config.checkpoint_every and done % config.checkpoint_every == 0 and done < config.total_episodes:
                    save_checkpoint(out / f"checkpoint_{done}.ckpt", params, policy_config, opt, metadata(done))
            done = row["episodes"]
            if config.validate_every and done > final_stage_start and done % config.validate_every == 0:
                val = collect_batch(
                    runner, params, env_config.with_stage(final_stage), val_indices, val_seeds,
                    config.rollout_group, policy_config, deterministic=True,
                )
                score = float(np.mean([ep.total_return for ep in val]))
                # ties go to the later snapshot
                selected = best is None or score >= best[0]
                if selected:
                    best = (score, done, copy.deepcopy(params), copy.deepcopy(opt))
                val_causes = [ep.cause for ep in val]
                if out is not None:
                    validation_writer.writerow([
                        done, repr(score), val_causes.count("goal"), val_causes.count("collision"),
                        val_causes.count("out_of_bounds"), val_causes.count("timeout"), int(selected),
                    ])
                    validation_file.flush()
                if progress:
                    log.info("validation at %d: return %.2f goal %d/%d", done, score, val_causes.count("goal"), len(val))
            if progress and (b % 25 == 0 or b == n_batches - 1):
                log.info(
                    "batch %d/%d stage %s return %.2f len %.0f goal %d coll %d oob %d (%.0fs)",
                    b + 1, n_batches, stage, row["mean_return"], row["mean_length"],
                    row["n_goal"], row["n_collisions"], row["n_oob"], time.time() - started,
                )
    finally:
        runner.close()
        if out is not None:
            episode_file.close()
            train_file.close()
            validation_file.close()
    chosen, chosen_at, chosen_opt = params, config.total_episodes, opt
    if best is not None:
        _, chosen_at, chosen, chosen_opt = best
    if out is not None:
        save_checkpoint(out / "final.ckpt", params, policy_config, opt, metadata(config.total_episodes))
        meta = metadata(config.total_episodes)
        meta["selected_episodes"] = chosen_at
        save_checkpoint(out / "policy.ckpt", chosen, policy_config, chosen_opt, meta)
    return chosen, log_rows


# -- bandit harness ----------------------------------------------------------

BANDIT_OBS = np.full(15, 0.5)


def bandit_rewards(actions: np.ndarray, good: float = 1.0, bad: float = 0.2) -> np.ndarray:
    """Arm 1 (first action component > 0) pays ``good``, arm 0 pays ``bad``."""
    return np.where(np.asarray(actions)[..., 0] > 0.0, good, bad)


def better_arm_probability(params, policy_config: PolicyConfig = PolicyConfig()) -> float:
    from scipy.special import ndtr

    dist = forward(params, BANDIT_OBS, policy_config)
    return float(ndtr(dist.mean[0] / dist.std[0]))


def run_bandit(
    seed: int,
    episodes: int = 2000,
    batch_size: int = 20,
    lr: float = 1e-3,
    baseline: bool = True,
    policy_config: PolicyConfig = PolicyConfig(),
    init_std: float = TrainConfig.init_std,
):
    """Train on a one-step two-armed bandit; returns ``(params, prob_history)``."""
    params = init_params(policy_config, np.random.default_rng([seed, 0]), init_std=init_std)
    opt = OptimizerState.zeros(params)
    rng = np.random.default_rng([seed, 2])
    history = [better_arm_probability(params, policy_config)]
    for _ in range(episodes // batch_size):
        obs = np.tile(BANDIT_OBS, (batch_size, 1))
        dist = forward(params, obs, policy_config)
        raw = dist.mean + dist.std * rng.standard_normal(dist.mean.shape)
        rewards = bandit_rewards(raw)
        batch = [
            Episode(0, seed, "bandit", obs[i : i + 1], raw[i : i + 1], rewards[i : i + 1], np.zeros(1), "goal")
            for i in range(batch_size)
        ]
        grads = reinforce_gradient(params, batch, 0.99, baseline, policy_config)
        grads, _ = clip_by_global_norm(grads, 5.0)
        adamw_step(params, grads, opt, lr=lr)
        history.append(better_arm_probability(params, policy_config))
    return params, history
