import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sidewalk.env import (
    OBS_DIM,
    TRACE_COLUMNS,
    EnvConfig,
    EpisodeEndedError,
    RewardWeights,
    SidewalkEnv,
    episode_seed,
)
from sidewalk.world import RobotAction

STILL = {"ped_dx": 0.0, "ped_dy": 0.0, "robot_dx": 0.0, "robot_dy": 0.0}


def make(stage="C", **kw):
    return SidewalkEnv(EnvConfig(stage=stage, **kw))


def per_step_bound(w: RewardWeights, cfg: EnvConfig) -> float:
    speed = 2.5
    shaping = w.w_prog * speed * cfg.dt + w.w_vel * speed * cfg.dt + w.w_head * math.pi * cfg.dt
    # risk <= 1, so one step raises the peak normalised risk by at most 1 / threshold
    shaping += w.w_u * 2 * cfg.dt + w.w_du * 4 + w.w_risk / cfg.threshold_range[0]
    return shaping + max(abs(w.r_collision), abs(w.r_oob), abs(w.r_goal))


class TestConfig:
    def test_invalid(self):
        with pytest.raises(ValueError):
            EnvConfig(stage="D")
        with pytest.raises(ValueError):
            EnvConfig(threshold_range=(0.9, 0.6))
        with pytest.raises(ValueError):
            EnvConfig(max_steps=0)

    def test_goal_lines(self):
        cfg = EnvConfig()
        assert cfg.robot_goal_x == 0.5 and cfg.ped_goal_x == 14.5


class TestReset:
    @given(st.integers(0, 2**63))
    @settings(max_examples=50)
    def test_training_spawn(self, seed):
        env = make("C")
        env.reset(seed)
        assert 0.6 <= env.threshold <= 0.9
        for k in STILL:
            assert -0.4 <= env.spawn[k] <= 0.4

    @given(st.integers(0, 2**63))
    @settings(max_examples=50)
    def test_evaluation_spawn(self, seed):
        env = make("C", evaluation=True)
        env.reset(seed)
        assert 0.6 <= env.threshold <= 0.7
        for k in STILL:
            assert -0.1 <= env.spawn[k] <= 0.1

    def test_same_seed_same_spawn(self):
        a, b = make(), make()
        assert np.array_equal(a.reset(123), b.reset(123))
        assert a.spawn == b.spawn
        c = make()
        c.reset(124)
        assert c.spawn != a.spawn

    def test_stage_pedestrians(self):
        a = make("A")
        a.reset(0)
        assert a.ped_state() is None
        b = make("B")
        b.reset(0)
        assert b.ped_state().v_f == 0.0
        c = make("C")
        c.reset(0)
        assert c.pedestrian is not None

    def test_episode_seeds_distinct(self):
        seeds = {episode_seed(7, i) for i in range(1000)}
        assert len(seeds) == 1000
        assert episode_seed(7, 3) == episode_seed(7, 3)
        assert episode_seed(7, 3) != episode_seed(8, 3)


class TestObservation:
    def test_spawn_slots(self):
        env = make("A")
        obs = env.reset(0, spawn=STILL)
        assert obs.shape == (OBS_DIM,)
        assert obs[:6] == pytest.approx([1.0, 0.0, 0.0, -1.0, 0.536, 0.0])

    def test_stage_a_zero_fill(self):
        env = make("A")
        obs = env.reset(0)
        assert np.all(obs[6:13] == 0.0)

    def test_previous_action(self):
        env = make("C")
        env.reset(0)
        obs = env.step(RobotAction(0.3, -0.2)).observation
        assert obs[13:] == pytest.approx([0.3, -0.2])

    def test_pedestrian_slots(self):
        env = make("C")
        obs = env.reset(0, spawn=STILL)
        assert obs[6:13] == pytest.approx([0.0, 0.0, 0.0, 1.0, 1.34 / 2.5, 0.0, 0.0])


class TestStep:
    def test_straight_reward(self):
        env = make("A")
        env.reset(0, spawn=STILL)
        out = env.step(RobotAction())
        assert out.reward == pytest.approx(1.34 * 0.05, rel=1e-12)
        assert out.cause == "none" and not out.terminated and not out.truncated

    def test_collision(self):
        env = make("B")
        env.reset(0, spawn={**STILL, "ped_dx": 14.4})
        out = env.step(RobotAction())
        assert out.terminated and out.cause == "collision"
        assert out.reward < -49

    def test_goal(self):
        env = make("A")
        env.reset(0, spawn={**STILL, "robot_dx": -14.45})
        out = env.step(RobotAction())
        assert out.terminated and out.cause == "goal"
        assert out.reward == pytest.approx(20 + 0.067, abs=1e-9)

    def test_out_of_bounds(self):
        env = make("A")
        env.reset(0, spawn={**STILL, "robot_dy": 0.94})
        cause = "none"
        while cause == "none":
            out = env.step(RobotAction(0.0, -1.0))
            cause = out.cause
        assert cause == "out_of_bounds"
        assert out.reward < -49

    def test_timeout(self):
        env = make("A", max_steps=5)
        env.reset(0, spawn=STILL)
        for _ in range(4):
            assert not env.step(RobotAction(-1.0, 0.0)).truncated
        out = env.step(RobotAction(-1.0, 0.0))
        assert out.truncated and not out.terminated and out.cause == "timeout"

    def test_step_after_end(self):
        env = make("A", max_steps=1)
        env.reset(0)
        env.step(RobotAction())
        with pytest.raises(EpisodeEndedError):
            env.step(RobotAction())

    def test_risk_penalty_rate(self):
        plain = make("C")
        averse = make("C", risk_averse=True, rewards=RewardWeights(w_risk=0.2, risk_penalty="rate"))
        plain.reset(5, spawn=STILL)
        averse.reset(5, spawn=STILL)
        for _ in range(60):
            a, b = plain.step(RobotAction()), averse.step(RobotAction())
            assert b.reward == pytest.approx(a.reward - 0.2 * a.info["risk"] * 0.05, abs=1e-12)
        assert a.info["risk"] > 0

    def test_risk_penalty_peak_sums_to_peak(self):
        plain, averse = make("C"), make("C", risk_averse=True)
        plain.reset(5, spawn=STILL)
        averse.reset(5, spawn=STILL)
        charged, peak = 0.0, 0.0
        for _ in range(120):
            a, b = plain.step(RobotAction(-0.2, 0.1)), averse.step(RobotAction(-0.2, 0.1))
            step_penalty = a.reward - b.reward
            assert step_penalty >= -1e-12
            charged += step_penalty
            peak = max(peak, a.info["risk"] / averse.threshold)
            if a.terminated or a.truncated:
                break
        assert peak > 0
        assert charged == pytest.approx(averse.config.rewards.w_risk * peak, abs=1e-9)

    def test_unknown_risk_penalty(self):
        with pytest.raises(ValueError):
            RewardWeights(risk_penalty="sum")

    @settings(max_examples=10, deadline=None)
    @given(st.integers(0, 2**32), st.sampled_from("ABC"))
    def test_random_episode_invariants(self, seed, stage):
        cfg = EnvConfig(stage=stage, risk_averse=True)
        env = SidewalkEnv(cfg)
        obs = env.reset(seed)
        rng = np.random.default_rng(seed)
        bound = per_step_bound(cfg.rewards, cfg)
        steps = 0
        while True:
            out = env.step(RobotAction(*rng.uniform(-1.5, 1.5, size=2)))
            steps += 1
            assert np.all(np.isfinite(out.observation))
            assert abs(out.reward) <= bound
            assert not (out.terminated and out.truncated)
            if out.terminated or out.truncated:
                break
        assert steps <= cfg.max_steps

    def test_deterministic_episode(self):
        def run():
            env = SidewalkEnv(EnvConfig(stage="C"), record=True)
            env.reset(99)
            rng = np.random.default_rng(1)
            rewards = []
            while not env.done:
                rewards.append(env.step(RobotAction(*rng.uniform(-0.3, 0.3, size=2))).reward)
            return rewards, env.trace

        assert run() == run()

    @pytest.mark.parametrize("stage", ["B", "C"])
    def test_mirror_symmetry(self, stage):
        spawn = {"ped_dx": 0.3, "ped_dy": 0.2, "robot_dx": -0.1, "robot_dy": -0.15, "threshold": 0.7}
        mirrored = {**spawn, "ped_dy": -0.2, "robot_dy": 0.15}
        a = SidewalkEnv(EnvConfig(stage=stage), record=True)
        b = SidewalkEnv(EnvConfig(stage=stage), record=True)
        a.reset(0, spawn=spawn)
        b.reset(0, spawn=mirrored)
        rng = np.random.default_rng(4)
        while not a.done:
            a_n, s_n = rng.uniform(-0.2, 0.2, size=2)
            ra = a.step(RobotAction(a_n, s_n))
            rb = b.step(RobotAction(a_n, -s_n))
            # headings straddle +-pi, where wrapping rounds differently by an ulp
            assert ra.reward == pytest.approx(rb.reward, abs=1e-12) and ra.cause == rb.cause
        assert b.done
        col = {c: i for i, c in enumerate(TRACE_COLUMNS)}
        for row_a, row_b in zip(a.trace, b.trace):
            for name in ("robot_x", "ped_x", "robot_v", "risk", "a_n"):
                assert row_a[col[name]] == pytest.approx(row_b[col[name]], abs=1e-9)
            for name in ("robot_y", "ped_y", "s_n", "u_st", "u_ss"):
                assert row_a[col[name]] == pytest.approx(-row_b[col[name]], abs=1e-9)


class TestRecording:
    def test_trace_rows(self):
        env = SidewalkEnv(EnvConfig(stage="C"), record=True)
        env.reset(3)
        n = 0
        while not env.done:
            env.step(RobotAction())
            n += 1
        assert len(env.trace) == n + 1
        assert env.trace[0][0] == 0.0
        assert all(len(r) == len(TRACE_COLUMNS) for r in env.trace)

    def test_finish_pedestrian(self):
        env = SidewalkEnv(EnvConfig(stage="C", evaluation=True), record=True)
        env.reset(0)
        env.robot = env.robot.__class__(0.55, 0.5, math.pi, 1.34)
        out = env.step(RobotAction())
        assert out.cause == "goal"
        extra = env.finish_pedestrian()
        assert env.pedestrian_finished
        assert len(extra) > 0 and len(env.trace) == env.steps + 1
