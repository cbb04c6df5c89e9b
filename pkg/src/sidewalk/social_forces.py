"""Social-forces baseline robot on point-mass dynamics.

Driving term, elliptical pedestrian repulsion and border repulsion.
Noise, view-angle weighting and attraction terms are left out.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .world import PedestrianState, PointMassState, SidewalkGeometry, heading_vector, wrap_angle

FD_STEP = 1e-4


@dataclass(frozen=True)
class SocialForcesParams:
    tau: float = 0.5
    V0: float = 2.1
    sigma: float = 0.3
    U0: float = 10.0
    R: float = 0.2
    delta_t: float = 2.0
    v_des: float = 1.34
    v_cap_sf: float = 1.3 * 1.34

    def __post_init__(self):
        values = (self.tau, self.V0, self.sigma, self.U0, self.R, self.delta_t, self.v_des, self.v_cap_sf)
        if any(not v > 0 for v in values):
            raise ValueError("social-forces parameters must be strictly positive")
        if self.v_cap_sf < self.v_des:
            raise ValueError("speed cap below desired speed")


def driving_force(s: PointMassState, goal_dir: tuple[float, float], p: SocialForcesParams) -> tuple[float, float]:
    ex, ey = goal_dir
    return ((p.v_des * ex - s.vx) / p.tau, (p.v_des * ey - s.vy) / p.tau)


def ellipse_semiminor_b(r_rel, v_other: float, e_other, delta_t: float, with_flag: bool = False):
    """Semi-minor axis of the equipotential ellipse through ``r_rel``.

    The ellipse has foci at the other agent and at its position one
    anticipation interval ahead. With ``with_flag`` returns ``(b, clamped)``
    where ``clamped`` reports a negative radicand forced to zero.
    """
    rx, ry = r_rel
    step = v_other * delta_t
    far = math.hypot(rx - step * e_other[0], ry - step * e_other[1])
    total = math.hypot(rx, ry) + far
    radicand = total * total - step * step
    clamped = radicand < 0.0
    b = 0.5 * math.sqrt(max(radicand, 0.0))
    return (b, clamped) if with_flag else b


def _pedestrian_potential(rx, ry, v_other, e_other, p: SocialForcesParams) -> float:
    return p.V0 * math.exp(-ellipse_semiminor_b((rx, ry), v_other, e_other, p.delta_t) / p.sigma)


def pedestrian_repulsion(r_rel, v_other: float, e_other, p: SocialForcesParams) -> tuple[float, float]:
    """Negative gradient of the pedestrian potential by central differences."""
    rx, ry = r_rel
    if rx == 0.0 and ry == 0.0:
        raise ValueError("coincident agents have no repulsion direction")
    h = FD_STEP
    dvx = _pedestrian_potential(rx + h, ry, v_other, e_other, p) - _pedestrian_potential(rx - h, ry, v_other, e_other, p)
    dvy = _pedestrian_potential(rx, ry + h, v_other, e_other, p) - _pedestrian_potential(rx, ry - h, v_other, e_other, p)
    return (-dvx / (2 * h), -dvy / (2 * h))


def boundary_repulsion(y: float, geometry: SidewalkGeometry, p: SocialForcesParams) -> tuple[float, float]:
    half = geometry.width / 2
    to_left = max(half - y, 0.0)
    to_right = max(y + half, 0.0)
    gain = p.U0 / p.R
    fy = gain * math.exp(-to_right / p.R) - gain * math.exp(-to_left / p.R)
    return (0.0, fy)


def social_forces_control(
    robot: PointMassState,
    ped: PedestrianState | None,
    geometry: SidewalkGeometry,
    p: SocialForcesParams = SocialForcesParams(),
    goal_dir: tuple[float, float] = (-1.0, 0.0),
) -> tuple[float, float]:
    """Total acceleration command for the point-mass robot.

    ``ped`` may be ``None`` for an empty sidewalk.
    """
    fx, fy = driving_force(robot, goal_dir, p)
    if ped is not None:
        c, s = heading_vector(ped.psi)
        # world-frame velocity of the pedestrian, including side-stepping
        vx = ped.v_f * c - ped.v_l * s
        vy = ped.v_f * s + ped.v_l * c
        speed = math.hypot(vx, vy)
        e = (vx / speed, vy / speed) if speed > 0 else (1.0, 0.0)
        px, py = pedestrian_repulsion((robot.x - ped.x, robot.y - ped.y), speed, e, p)
        fx += px
        fy += py
    _, by = boundary_repulsion(robot.y, geometry, p)
    return (fx, fy + by)


class SocialForcesRobot:
    """Stateful wrapper holding the heading derived from the velocity."""

    MIN_HEADING_SPEED = 0.05

    def __init__(self, params: SocialForcesParams = SocialForcesParams(), heading: float = math.pi):
        self.params = params
        self.heading = heading

    def update_heading(self, s: PointMassState) -> float:
        if math.hypot(s.vx, s.vy) >= self.MIN_HEADING_SPEED:
            self.heading = wrap_angle(math.atan2(s.vy, s.vx))
        return self.heading
