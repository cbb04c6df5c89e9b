"""Communication-enabled interaction (CEI) pedestrian.

The pedestrian holds a deterministic plan for its own future lateral
position and a Gaussian belief over the other agent's lateral position at a
grid of lookahead times. Combining the two gives a perceived risk; whenever
that risk exceeds the pedestrian's personal threshold it picks a new passing
offset. Belief means follow the other's position and heading, so heading is
read as an implicit signal of intent.

Everything here is expressed in the pedestrian's own frame: it walks toward
``+x``. Use :func:`rotate_half_turn` for an agent walking the other way.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr

from .world import (
    DT,
    PED_SIDESTEP_MAX,
    PED_STEER_MAX,
    PedestrianInput,
    PedestrianState,
    SidewalkGeometry,
    clamp,
    heading_vector,
    wrap_angle,
)

DEFAULT_OFFSETS = (-0.95, -0.75, -0.55, -0.35, -0.15, 0.15, 0.35, 0.55, 0.75, 0.95)


@dataclass(frozen=True)
class CeiParams:
    risk_threshold: float = 0.65
    K: int = 12
    dtau: float = 0.5
    sigma0: float = 0.1
    sigma_growth: float = 0.15
    d_lat: float = 0.6
    x_margin: float = 1.0
    candidate_offsets: tuple[float, ...] = DEFAULT_OFFSETS
    # plan shape and tracking controller
    plan_time_constant: float = 1.0
    heading_lookahead: float = 3.0
    k_y: float = 3.0
    k_vy: float = 3.0
    k_psi: float = 4.0
    k_w: float = 3.0
    observation_delay: float = 0.4
    u_st_max: float = PED_STEER_MAX
    u_ss_max: float = PED_SIDESTEP_MAX
    geometry: SidewalkGeometry = field(default_factory=SidewalkGeometry)

    def __post_init__(self):
        if not 0.0 < self.risk_threshold < 1.0:
            raise ValueError(f"risk threshold {self.risk_threshold} outside (0, 1)")
        if self.K < 1 or self.dtau <= 0:
            raise ValueError("lookahead grid must be non-empty")
        if self.sigma0 <= 0 or self.sigma_growth < 0:
            raise ValueError("belief spread must be positive and non-decreasing")

    @property
    def taus(self) -> np.ndarray:
        return self.dtau * np.arange(1, self.K + 1)

    def with_threshold(self, threshold: float) -> CeiParams:
        from dataclasses import replace

        return replace(self, risk_threshold=threshold)


@dataclass(frozen=True)
class Plan:
    target_lateral: float
    taus: np.ndarray
    x: np.ndarray
    y: np.ndarray


@dataclass(frozen=True)
class Belief:
    taus: np.ndarray
    mu: np.ndarray
    sigma: np.ndarray
    x_pred: np.ndarray


@dataclass(frozen=True, slots=True)
class OtherPose:
    """What the pedestrian observes of the other agent."""

    x: float
    y: float
    psi: float
    speed: float


def make_plan(state: PedestrianState, target_lateral: float, params: CeiParams) -> Plan:
    """Lookahead positions walking forward while converging on ``target_lateral``."""
    limit = params.geometry.lateral_limit
    target = clamp(target_lateral, limit)
    taus = params.taus
    decay = np.exp(-taus / params.plan_time_constant)
    x = state.x + state.v_f * taus
    y = target + (state.y - target) * decay
    return Plan(target, taus, x, y)


def initial_plan(state: PedestrianState, params: CeiParams) -> Plan:
    return make_plan(state, state.y, params)


def observe_belief(self_state: PedestrianState, other: OtherPose, params: CeiParams) -> Belief:
    """Constant-velocity extrapolation of the other with growing uncertainty."""
    for v in (other.x, other.y, other.psi, other.speed):
        if not math.isfinite(v):
            raise ValueError(f"non-finite observation {other!r}")
    taus = params.taus
    c, s = heading_vector(other.psi)
    limit = params.geometry.lateral_limit
    mu = np.clip(other.y + s * other.speed * taus, -limit, limit)
    sigma = params.sigma0 + params.sigma_growth * taus
    x_pred = other.x + c * other.speed * taus
    return Belief(taus, mu, sigma, x_pred)


def overlap_mass(gap, sigma, d_lat: float):
    """Mass of N(0, sigma) within ``d_lat`` of ``gap``; even in ``gap`` by construction."""
    g = np.abs(gap)
    return ndtr((g + d_lat) / sigma) - ndtr((g - d_lat) / sigma)


def _risk_profile(plan_x, plan_y, belief: Belief, params: CeiParams) -> np.ndarray:
    conflict = np.abs(plan_x - belief.x_pred) < params.x_margin
    mass = overlap_mass(plan_y - belief.mu, belief.sigma, params.d_lat)
    return np.where(conflict, mass, 0.0)


def perceived_risk(plan: Plan, belief: Belief, params: CeiParams) -> float:
    """Largest collision probability over the longitudinally conflicting lookahead points."""
    if plan.taus.shape != belief.taus.shape:
        raise ValueError("plan and belief use different lookahead grids")
    return float(_risk_profile(plan.x, plan.y, belief, params).max())


def replan(current: Plan, belief: Belief, state: PedestrianState, params: CeiParams) -> Plan:
    """Pick the passing offset with the lowest perceived risk.

    The current target is always a candidate, so the result is never riskier.
    Ties go to the offset closest to the current target, then the one nearest
    the centreline, then the right-hand side (negative ``y``).
    """
    offsets = list(params.candidate_offsets)
    if not offsets:
        raise ValueError("no candidate offsets to replan over")
    offsets.append(current.target_lateral)
    limit = params.geometry.lateral_limit
    targets = np.clip(np.asarray(offsets, dtype=float), -limit, limit)

    taus = params.taus
    decay = np.exp(-taus / params.plan_time_constant)
    ys = targets[:, None] + (state.y - targets[:, None]) * decay[None, :]
    xs = state.x + state.v_f * taus
    risks = _risk_profile(xs[None, :], ys, belief, params).max(axis=1)

    best = None
    for target, risk in zip(targets.tolist(), risks.tolist()):
        key = (risk, abs(target - current.target_lateral), abs(target), target)
        if best is None or key < best[0]:
            best = (key, target)
    chosen = best[1]
    if chosen == current.target_lateral:
        return current
    return make_plan(state, chosen, params)


def tracking_input(state: PedestrianState, target_lateral: float, params: CeiParams) -> PedestrianInput:
    """PD servos: side-step toward the target and steer toward a look-ahead point on it.

    The side-step servo damps the total lateral velocity, heading term
    included, so the two servos do not overshoot the target together.
    """
    error = target_lateral - state.y
    c, s = heading_vector(state.psi)
    lateral_velocity = state.v_f * s + state.v_l * c
    u_ss = clamp(params.k_y * error - params.k_vy * lateral_velocity, params.u_ss_max)
    psi_goal = math.atan(error / params.heading_lookahead)
    u_st = clamp(params.k_psi * wrap_angle(psi_goal - state.psi) - params.k_w * state.omega, params.u_st_max)
    return PedestrianInput(u_st, u_ss)


def cei_step(
    state: PedestrianState,
    other: OtherPose | None,
    plan: Plan,
    params: CeiParams,
) -> tuple[PedestrianInput, Plan, float]:
    """One decision step: belief, risk, replanning on threshold excess, tracking.

    Returns the control input, the plan in force after this step and the
    perceived risk of the plan held at the start of the step.
    """
    # the plan's lookahead is re-anchored at the current position every step
    plan = make_plan(state, plan.target_lateral, params)
    if other is None:
        risk = 0.0
    else:
        belief = observe_belief(state, other, params)
        risk = perceived_risk(plan, belief, params)
        if risk > params.risk_threshold:
            plan = replan(plan, belief, state, params)
    return tracking_input(state, plan.target_lateral, params), plan, risk


def normalized_risk(risk: float, params: CeiParams) -> float:
    return risk / params.risk_threshold


def lateral_distribution(belief: Belief, geometry: SidewalkGeometry, n_bins: int = 50) -> np.ndarray:
    """Belief mass per lateral bin across the sidewalk, renormalised per lookahead point.

    Returns an array of shape (K, n_bins) whose rows sum to one.
    """
    edges = np.linspace(-geometry.width / 2, geometry.width / 2, n_bins + 1)
    cdf = ndtr((edges[None, :] - belief.mu[:, None]) / belief.sigma[:, None])
    mass = np.diff(cdf, axis=1)
    return mass / mass.sum(axis=1, keepdims=True)


def rotate_half_turn(x: float, y: float, psi: float, length: float) -> tuple[float, float, float]:
    """Map a pose between the world frame and the frame of an agent walking toward ``-x``.

    The same function serves both directions, so two agents in exactly
    point-symmetric situations compute bit-identical values.
    """
    flipped = psi - math.pi if psi > 0.0 else psi + math.pi
    return length - x, -y, flipped


class CeiPedestrian:
    """Stateful wrapper: own state, plan, and the perception delay line.

    The pedestrian acts on the other's pose as it was ``observation_delay``
    seconds ago; until that much history exists it sees the oldest pose.
    """

    def __init__(self, state: PedestrianState, params: CeiParams, dt: float = DT):
        self.state = state
        self.params = params
        self.plan = initial_plan(state, params)
        self.last_input = PedestrianInput()
        self.last_risk = 0.0
        self._seen: deque[OtherPose | None] = deque(maxlen=round(params.observation_delay / dt) + 1)

    def decide(self, other: OtherPose | None) -> PedestrianInput:
        self._seen.append(other)
        perceived = self._seen[0]
        u, self.plan, self.last_risk = cei_step(self.state, perceived, self.plan, self.params)
        self.last_input = u
        return u
