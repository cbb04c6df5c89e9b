"""Sidewalk geometry, agent dynamics and contact checks.

Coordinates: ``x`` runs along the sidewalk in ``[0, length]``, ``y`` is
lateral in ``[-width/2, width/2]`` and headings are measured from ``+x``.
All step functions are explicit Euler and pure.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

DT = 0.05

# pedestrian model
PED_SPEED = 1.34
PED_LATERAL_DAMPING = 2.0
PED_STEER_MAX = 2.0
PED_SIDESTEP_MAX = 2.0

# robot model
WHEELBASE = 0.6
ACCEL_MAX = 1.5
STEER_ANGLE_MAX = 0.5
ROBOT_SPEED_CAP = 2.5
ROBOT_SPEED_DESIRED = 1.34


class NonFiniteStateError(ValueError):
    """A state or input contained NaN or infinity."""


@dataclass(frozen=True)
class SidewalkGeometry:
    length: float = 15.0
    width: float = 2.5
    agent_radius: float = 0.3

    def __post_init__(self):
        if not (self.length > 0 and self.width > 0 and self.agent_radius > 0):
            raise ValueError("sidewalk dimensions must be positive")
        if 2 * self.agent_radius >= self.width:
            raise ValueError("agents do not fit on the sidewalk")

    @property
    def lateral_limit(self) -> float:
        """Largest |y| an agent centre may take without touching a border."""
        return self.width / 2 - self.agent_radius


@dataclass(frozen=True, slots=True)
class PedestrianState:
    x: float
    y: float
    psi: float
    v_f: float = PED_SPEED
    v_l: float = 0.0
    omega: float = 0.0

    def mirrored(self) -> PedestrianState:
        return PedestrianState(self.x, -self.y, wrap_angle(-self.psi), self.v_f, -self.v_l, -self.omega)


@dataclass(frozen=True, slots=True)
class PedestrianInput:
    u_st: float = 0.0  # yaw acceleration
    u_ss: float = 0.0  # lateral acceleration

    def mirrored(self) -> PedestrianInput:
        return PedestrianInput(-self.u_st, -self.u_ss)


@dataclass(frozen=True, slots=True)
class RobotState:
    x: float
    y: float
    psi: float
    v: float = ROBOT_SPEED_DESIRED
    yaw_rate: float = 0.0

    def mirrored(self) -> RobotState:
        return RobotState(self.x, -self.y, wrap_angle(-self.psi), self.v, -self.yaw_rate)


@dataclass(frozen=True, slots=True)
class RobotAction:
    a_n: float = 0.0
    s_n: float = 0.0

    def clipped(self) -> RobotAction:
        return RobotAction(min(1.0, max(-1.0, self.a_n)), min(1.0, max(-1.0, self.s_n)))


@dataclass(frozen=True, slots=True)
class PointMassState:
    x: float
    y: float
    vx: float = 0.0
    vy: float = 0.0


def _require_finite(*values: float) -> None:
    for v in values:
        if not math.isfinite(v):
            raise NonFiniteStateError(f"non-finite value {v!r}")


def wrap_angle(theta: float) -> float:
    """Map an angle onto (-pi, pi]."""
    if not math.isfinite(theta):
        raise NonFiniteStateError(f"cannot wrap {theta!r}")
    if -math.pi < theta <= math.pi:
        return theta
    # wrap |theta| and restore the sign so that wrap(-x) == -wrap(x) bit for bit
    mag = math.fmod(abs(theta) + math.pi, 2 * math.pi)
    if mag <= 0.0:
        mag += 2 * math.pi
    mag -= math.pi
    if theta > 0 or mag == math.pi:
        return mag
    return -mag


def heading_vector(psi: float) -> tuple[float, float]:
    """(cos, sin) of a heading, with sin(pi) snapped to zero.

    Keeps reflections about the centreline exact for agents heading along -x.
    """
    if psi == math.pi:
        return -1.0, 0.0
    return math.cos(psi), math.sin(psi)


def clamp(value: float, bound: float) -> float:
    return min(bound, max(-bound, value))


def step_pedestrian(
    s: PedestrianState,
    u: PedestrianInput,
    dt: float = DT,
    damping: float = PED_LATERAL_DAMPING,
) -> PedestrianState:
    """Advance the pedestrian one step.

    Forward speed is constant; steering acts as a yaw acceleration and
    side-stepping as a damped lateral acceleration in the body frame.
    """
    _require_finite(s.x, s.y, s.psi, s.v_f, s.v_l, s.omega, u.u_st, u.u_ss)
    if dt <= 0:
        raise ValueError("dt must be positive")
    c, sn = heading_vector(s.psi)
    x = s.x + (s.v_f * c - s.v_l * sn) * dt
    y = s.y + (s.v_f * sn + s.v_l * c) * dt
    psi = wrap_angle(s.psi + s.omega * dt)
    omega = s.omega + u.u_st * dt
    v_l = s.v_l + (u.u_ss - damping * s.v_l) * dt
    return PedestrianState(x, y, psi, s.v_f, v_l, omega)


def step_robot(
    s: RobotState,
    a: RobotAction,
    dt: float = DT,
    accel_max: float = ACCEL_MAX,
    steer_max: float = STEER_ANGLE_MAX,
    wheelbase: float = WHEELBASE,
    speed_cap: float = ROBOT_SPEED_CAP,
) -> RobotState:
    """Advance the bicycle-model robot one step from a normalised action."""
    _require_finite(s.x, s.y, s.psi, s.v, a.a_n, a.s_n)
    if dt <= 0:
        raise ValueError("dt must be positive")
    yaw_rate = s.v / wheelbase * math.tan(a.s_n * steer_max)
    c, sn = heading_vector(s.psi)
    x = s.x + s.v * c * dt
    y = s.y + s.v * sn * dt
    psi = wrap_angle(s.psi + yaw_rate * dt)
    v = min(speed_cap, max(0.0, s.v + a.a_n * accel_max * dt))
    return RobotState(x, y, psi, v, yaw_rate)


def step_point_mass(
    s: PointMassState,
    force: tuple[float, float],
    dt: float = DT,
    speed_cap: float = 1.3 * ROBOT_SPEED_DESIRED,
) -> PointMassState:
    """Semi-implicit Euler for a unit point mass with a speed cap."""
    fx, fy = force
    _require_finite(s.x, s.y, s.vx, s.vy, fx, fy)
    if dt <= 0:
        raise ValueError("dt must be positive")
    vx = s.vx + fx * dt
    vy = s.vy + fy * dt
    speed = math.hypot(vx, vy)
    if speed > speed_cap:
        scale = speed_cap / speed
        vx *= scale
        vy *= scale
    return PointMassState(s.x + vx * dt, s.y + vy * dt, vx, vy)


def check_collision(p: tuple[float, float], q: tuple[float, float], radius: float) -> bool:
    return math.hypot(p[0] - q[0], p[1] - q[1]) < 2 * radius


def check_bounds(y: float, geometry: SidewalkGeometry) -> bool:
    """True when an agent centred at ``y`` is past the lateral limit."""
    return abs(y) > geometry.lateral_limit


def mirror(state):
    """Reflect any agent state or input about the sidewalk centreline."""
    if isinstance(state, PointMassState):
        return replace(state, y=-state.y, vy=-state.vy)
    if isinstance(state, RobotAction):
        return RobotAction(state.a_n, -state.s_n)
    return state.mirrored()
