"""Episode orchestration for the robot/pedestrian sidewalk encounter.

The robot starts at the far end (``x = length``) heading toward ``-x``; the
pedestrian starts at ``x = 0`` heading toward ``+x``. Curriculum stage ``A``
has no pedestrian, ``B`` a frozen one and ``C`` the reactive CEI pedestrian.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .cei import CeiParams, CeiPedestrian, OtherPose, rotate_half_turn
from .social_forces import SocialForcesParams, SocialForcesRobot, social_forces_control
from .world import (
    DT,
    ROBOT_SPEED_CAP,
    ROBOT_SPEED_DESIRED,
    PedestrianInput,
    PedestrianState,
    PointMassState,
    RobotAction,
    RobotState,
    SidewalkGeometry,
    check_bounds,
    check_collision,
    heading_vector,
    step_pedestrian,
    step_point_mass,
    step_robot,
    wrap_angle,
)

OBS_DIM = 15
STAGES = ("A", "B", "C")
RISK_PENALTIES = ("peak", "rate")
CAUSES = ("none", "collision", "out_of_bounds", "goal", "timeout")

TRACE_COLUMNS = (
    "t",
    "robot_x",
    "robot_y",
    "robot_psi",
    "robot_v",
    "ped_x",
    "ped_y",
    "ped_psi",
    "ped_v_f",
    "ped_v_l",
    "ped_omega",
    "a_n",
    "s_n",
    "u_st",
    "u_ss",
    "risk",
    "normalized_risk",
)


class EpisodeEndedError(RuntimeError):
    """``step`` was called on an episode that already terminated or truncated."""


@dataclass(frozen=True)
class RewardWeights:
    w_prog: float = 1.0
    w_vel: float = 2.0
    w_head: float = 0.1
    w_u: float = 0.05
    w_du: float = 0.005
    r_collision: float = -50.0
    r_oob: float = -50.0
    r_goal: float = 20.0
    w_risk: float = 25.0
    # "peak": charge increases of the episode's peak normalised risk, so the
    # episode total is w_risk times the peak; "rate": w_risk * risk * dt per step
    risk_penalty: str = "peak"

    def __post_init__(self):
        if self.risk_penalty not in RISK_PENALTIES:
            raise ValueError(f"unknown risk penalty {self.risk_penalty!r}")


@dataclass(frozen=True)
class EnvConfig:
    geometry: SidewalkGeometry = field(default_factory=SidewalkGeometry)
    dt: float = DT
    max_steps: int = 600
    stage: str = "C"
    threshold_range: tuple[float, float] = (0.6, 0.9)
    spawn_offset_range: float = 0.4
    eval_threshold_range: tuple[float, float] = (0.6, 0.7)
    eval_extra_offset_range: float = 0.1
    evaluation: bool = False
    rewards: RewardWeights = field(default_factory=RewardWeights)
    risk_averse: bool = False
    goal_margin: float = 0.5
    robot_model: str = "bicycle"
    cei: CeiParams = field(default_factory=CeiParams)
    social_forces: SocialForcesParams = field(default_factory=SocialForcesParams)

    def __post_init__(self):
        if self.stage not in STAGES:
            raise ValueError(f"unknown curriculum stage {self.stage!r}")
        if self.robot_model not in ("bicycle", "point_mass"):
            raise ValueError(f"unknown robot model {self.robot_model!r}")
        for lo, hi in (self.threshold_range, self.eval_threshold_range):
            if not 0.0 < lo <= hi < 1.0:
                raise ValueError(f"threshold range ({lo}, {hi}) not ordered inside (0, 1)")
        if self.spawn_offset_range < 0 or self.eval_extra_offset_range < 0:
            raise ValueError("offset ranges must be non-negative")
        if self.max_steps <= 0 or self.dt <= 0:
            raise ValueError("max_steps and dt must be positive")

    @property
    def robot_goal_x(self) -> float:
        return self.goal_margin

    @property
    def ped_goal_x(self) -> float:
        return self.geometry.length - self.goal_margin

    def with_stage(self, stage: str) -> EnvConfig:
        return replace(self, stage=stage)


@dataclass
class StepOutcome:
    observation: np.ndarray
    reward: float
    terminated: bool
    truncated: bool
    cause: str
    info: dict


def episode_seed(master_seed: int, episode_index: int) -> int:
    """Per-episode seed as a pure function of the run seed and the episode index."""
    seq = np.random.SeedSequence([int(master_seed) & 0xFFFFFFFFFFFFFFFF, int(episode_index)])
    return int(seq.generate_state(1, dtype=np.uint64)[0])


class SidewalkEnv:
    """One robot, at most one pedestrian, gym-like ``reset``/``step``.

    With ``robot_model="point_mass"`` the action passed to :meth:`step` is
    an acceleration vector instead of a :class:`RobotAction`; use
    :meth:`social_forces_action` to obtain it.
    """

    def __init__(self, config: EnvConfig = EnvConfig(), record: bool = False):
        self.config = config
        self.record = record
        self.robot: RobotState | None = None
        self.point_mass: PointMassState | None = None
        self.sf_robot: SocialForcesRobot | None = None
        self.pedestrian: CeiPedestrian | None = None
        self.frozen_pedestrian: PedestrianState | None = None
        self.trace: list[tuple] = []

    # -- episode lifecycle -------------------------------------------------

    def reset(self, seed: int, spawn: dict | None = None) -> np.ndarray:
        """Start an episode; ``spawn`` overrides the sampled offsets/threshold (used by tests)."""
        cfg = self.config
        rng = np.random.default_rng(seed)
        if cfg.evaluation:
            r = cfg.eval_extra_offset_range
            lo, hi = cfg.eval_threshold_range
        else:
            r = cfg.spawn_offset_range
            lo, hi = cfg.threshold_range
        offsets = rng.uniform(-r, r, size=4) if r > 0 else np.zeros(4)
        threshold = float(rng.uniform(lo, hi))
        sampled = {
            "ped_dx": float(offsets[0]),
            "ped_dy": float(offsets[1]),
            "robot_dx": float(offsets[2]),
            "robot_dy": float(offsets[3]),
            "threshold": threshold,
        }
        if spawn:
            sampled.update(spawn)
        self.spawn = sampled
        self.seed = seed

        length = cfg.geometry.length
        rx = length + sampled["robot_dx"]
        ry = sampled["robot_dy"]
        if cfg.robot_model == "bicycle":
            self.robot = RobotState(rx, ry, math.pi, ROBOT_SPEED_DESIRED, 0.0)
            self.point_mass = None
            self.sf_robot = None
        else:
            v = cfg.social_forces.v_des
            self.point_mass = PointMassState(rx, ry, -v, 0.0)
            self.sf_robot = SocialForcesRobot(cfg.social_forces, math.pi)
            self.robot = RobotState(rx, ry, math.pi, v, 0.0)

        ped_state = PedestrianState(sampled["ped_dx"], sampled["ped_dy"], 0.0)
        self.pedestrian = None
        self.frozen_pedestrian = None
        if cfg.stage == "B":
            self.frozen_pedestrian = replace(ped_state, v_f=0.0)
        elif cfg.stage == "C":
            self.pedestrian = CeiPedestrian(ped_state, cfg.cei.with_threshold(sampled["threshold"]), cfg.dt)

        self.prev_action = RobotAction()
        self.steps = 0
        self.t = 0.0
        self.done = False
        self.robot_done = False
        self.cause = "none"
        self.last_risk = 0.0
        self.peak_risk = 0.0
        self.last_ped_input = PedestrianInput()
        self.ped_out_of_bounds = False
        self.trace = []
        if self.record:
            self._record()
        return self.observe()

    @property
    def threshold(self) -> float:
        return self.pedestrian.params.risk_threshold if self.pedestrian else self.spawn["threshold"]

    def ped_state(self) -> PedestrianState | None:
        if self.pedestrian is not None:
            return self.pedestrian.state
        return self.frozen_pedestrian

    def robot_pose(self) -> OtherPose:
        r = self.robot
        return OtherPose(r.x, r.y, r.psi, r.v)

    # -- observation ---------------------------------------------------------

    def observe(self) -> np.ndarray:
        cfg = self.config
        length = cfg.geometry.length
        half = cfg.geometry.width / 2
        r = self.robot
        rc, rs = heading_vector(r.psi)
        obs = np.zeros(OBS_DIM)
        obs[0:6] = (r.x / length, r.y / half, rs, rc, r.v / ROBOT_SPEED_CAP, r.yaw_rate / 2.0)
        p = self.ped_state()
        if p is not None:
            pc, ps = heading_vector(p.psi)
            obs[6:13] = (p.x / length, p.y / half, ps, pc, p.v_f / ROBOT_SPEED_CAP, p.v_l, p.omega / 2.0)
        obs[13] = self.prev_action.a_n
        obs[14] = self.prev_action.s_n
        return obs

    # -- dynamics ------------------------------------------------------------

    def social_forces_action(self) -> tuple[float, float]:
        return social_forces_control(self.point_mass, self.ped_state(), self.config.geometry, self.config.social_forces)

    def _advance_robot(self, action) -> RobotAction:
        cfg = self.config
        if cfg.robot_model == "bicycle":
            a = action.clipped()
            self.robot = step_robot(self.robot, a, cfg.dt)
            return a
        pm = step_point_mass(self.point_mass, action, cfg.dt, cfg.social_forces.v_cap_sf)
        prev_heading = self.sf_robot.heading
        heading = self.sf_robot.update_heading(pm)
        self.point_mass = pm
        yaw_rate = wrap_angle(heading - prev_heading) / cfg.dt
        self.robot = RobotState(pm.x, pm.y, heading, math.hypot(pm.vx, pm.vy), yaw_rate)
        return RobotAction()

    def _advance_pedestrian(self) -> None:
        if self.pedestrian is None:
            self.last_risk = 0.0
            return
        ped = self.pedestrian
        u = ped.decide(self.robot_pose())
        ped.state = step_pedestrian(ped.state, u, self.config.dt)
        self.last_risk = ped.last_risk
        self.last_ped_input = u
        if check_bounds(ped.state.y, self.config.geometry):
            self.ped_out_of_bounds = True

    def _risk_penalty(self) -> float:
        w = self.config.rewards
        if w.risk_penalty == "rate":
            return w.w_risk * self.last_risk * self.config.dt
        peak = max(self.peak_risk, self.last_risk / self.threshold)
        rise, self.peak_risk = peak - self.peak_risk, peak
        return w.w_risk * rise

    def step(self, action) -> StepOutcome:
        if self.done:
            raise EpisodeEndedError("episode already ended; call reset()")
        cfg = self.config
        w = cfg.rewards
        dt = cfg.dt
        x_before = self.robot.x

        self._advance_pedestrian()
        applied = self._advance_robot(action)
        self.steps += 1
        self.t = self.steps * dt
        r = self.robot

        reward = w.w_prog * (x_before - r.x)
        reward -= w.w_vel * abs(r.v - ROBOT_SPEED_DESIRED) * dt
        # pi - |psi| equals |wrap(psi - pi)| and is exact under mirroring
        reward -= w.w_head * (math.pi - abs(r.psi)) * dt
        reward -= w.w_u * (abs(applied.a_n) + abs(applied.s_n)) * dt
        reward -= w.w_du * (abs(applied.a_n - self.prev_action.a_n) + abs(applied.s_n - self.prev_action.s_n))
        if cfg.risk_averse:
            reward -= self._risk_penalty()
        self.prev_action = applied

        terminated = truncated = False
        cause = "none"
        p = self.ped_state()
        if p is not None and check_collision((r.x, r.y), (p.x, p.y), cfg.geometry.agent_radius):
            reward += w.r_collision
            terminated, cause = True, "collision"
        elif check_bounds(r.y, cfg.geometry):
            reward += w.r_oob
            terminated, cause = True, "out_of_bounds"
        elif r.x <= cfg.robot_goal_x:
            reward += w.r_goal
            terminated, cause = True, "goal"
        elif self.steps >= cfg.max_steps:
            truncated, cause = True, "timeout"

        if self.record:
            self._record()
        self.done = terminated or truncated
        self.cause = cause
        info = {
            "risk": self.last_risk,
            "u_st": self.last_ped_input.u_st,
            "u_ss": self.last_ped_input.u_ss,
        }
        return StepOutcome(self.observe(), reward, terminated, truncated, cause, info)

    def finish_pedestrian(self) -> list[tuple[float, float, float]]:
        """Keep the pedestrian walking after the robot reached its goal.

        The robot continues straight at its last speed as a ghost the
        pedestrian can still see. Stops when the pedestrian reaches its end
        of the sidewalk or at ``max_steps``. Returns ``(risk, u_st, u_ss)``
        per extra step.
        """
        out = []
        cfg = self.config
        if self.pedestrian is None:
            return out
        while self.pedestrian.state.x < cfg.ped_goal_x and self.steps < cfg.max_steps:
            self._advance_pedestrian()
            r = self.robot
            c, s = heading_vector(r.psi)
            self.robot = replace(r, x=r.x + r.v * c * cfg.dt, y=r.y + r.v * s * cfg.dt, yaw_rate=0.0)
            if self.point_mass is not None:
                pm = self.point_mass
                self.point_mass = replace(pm, x=self.robot.x, y=self.robot.y)
            self.steps += 1
            self.t = self.steps * cfg.dt
            self.prev_action = RobotAction()
            if self.record:
                self._record()
            u = self.last_ped_input
            out.append((self.last_risk, u.u_st, u.u_ss))
        return out

    @property
    def pedestrian_finished(self) -> bool:
        p = self.ped_state()
        return p is None or self.pedestrian is None or p.x >= self.config.ped_goal_x

    def _record(self) -> None:
        r = self.robot
        p = self.ped_state()
        if p is None:
            ped = (math.nan,) * 6
        else:
            ped = (p.x, p.y, p.psi, p.v_f, p.v_l, p.omega)
        a = self.prev_action
        u = self.last_ped_input
        nr = self.last_risk / self.threshold if self.pedestrian is not None else 0.0
        self.trace.append(
            (self.t, r.x, r.y, r.psi, r.v, *ped, a.a_n, a.s_n, u.u_st, u.u_ss, self.last_risk, nr)
        )


def simulate_cei_pair(
    y_first: float,
    y_second: float,
    thresholds: tuple[float, float],
    cei: CeiParams = CeiParams(),
    geometry: SidewalkGeometry = SidewalkGeometry(),
    dt: float = DT,
    max_steps: int = 600,
    x_first: float = 0.0,
    x_second: float | None = None,
) -> dict:
    """Two CEI pedestrians walking toward each other (the sidewalk-salsa setting).

    The second agent is simulated in its own frame (walking toward ``+x``)
    and mapped to the world frame with a half-turn rotation. Returns world
    trajectories, world-frame plan targets, risks and the outcome.
    """
    length = geometry.length
    x_second = length if x_second is None else x_second
    first = CeiPedestrian(PedestrianState(x_first, y_first, 0.0), cei.with_threshold(thresholds[0]), dt)
    lx, ly, lpsi = rotate_half_turn(x_second, y_second, math.pi, length)
    second = CeiPedestrian(PedestrianState(lx, ly, lpsi), cei.with_threshold(thresholds[1]), dt)

    def world(agent):
        s = agent.state
        return s.x, s.y, s.psi

    def seen_from_other_frame(agent):
        s = agent.state
        return rotate_half_turn(s.x, s.y, s.psi, length)

    rows = []
    cause = "timeout"
    for step in range(max_steps):
        seen_second = OtherPose(*seen_from_other_frame(second), second.state.v_f)
        seen_first = OtherPose(*seen_from_other_frame(first), first.state.v_f)
        u1 = first.decide(seen_second)
        u2 = second.decide(seen_first)
        first.state = step_pedestrian(first.state, u1, dt)
        second.state = step_pedestrian(second.state, u2, dt)
        a = world(first)
        b = rotate_half_turn(*world(second), length)
        rows.append(
            {
                "t": (step + 1) * dt,
                "first": a,
                "second": b,
                "first_local": world(first),
                "second_local": world(second),
                "first_target": first.plan.target_lateral,
                "second_target": -second.plan.target_lateral,
                "first_risk": first.last_risk,
                "second_risk": second.last_risk,
            }
        )
        if check_collision(a[:2], b[:2], geometry.agent_radius):
            cause = "collision"
            break
        if first.state.x >= length - 0.5 and second.state.x >= length - 0.5:
            cause = "goal"
            break
    return {"rows": rows, "cause": cause}
