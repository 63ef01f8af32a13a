"""Longitudinal execution of lag decisions on top of IDM car following."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional

from .core import LagAction, VehicleState, WorldState

EMERGENCY_DECEL = 9.0
"""Hard braking limit (m/s^2); accelerations are clamped to [-9, a_max]."""

VEHICLE_LENGTH = 5.0
"""Bumper-to-bumper correction (m) between center positions."""

V0_BOOST_MAX = 5.0
CLOSE_TIME = 2.0
"""Time (s) over which a yield-ahead/block target gap is meant to be closed."""

REDUCTION = 0.5
"""Factor applied to T and s0 while yielding ahead or blocking."""

NO_LEAD_LOOKAHEAD = 60.0
"""Distance (m) ahead of the merger of the stand-in leader used when none exists."""

MIN_VIRTUAL_GAP = 0.5


class CollisionError(RuntimeError):
    """Raised for a nonpositive bumper gap to the real leader."""


@dataclass(frozen=True)
class IdmParams:
    v0: float = 30.0
    T: float = 1.5
    s0: float = 2.0
    a_max: float = 1.5
    b: float = 2.0
    delta: float = 4.0

    def __post_init__(self):
        for name in ("v0", "T", "s0", "a_max", "b", "delta"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise ValueError(f"IdmParams.{name} must be positive and finite, got {value!r}")

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in ("v0", "T", "s0", "a_max", "b", "delta")}


def idm_accel(v: float, gap: float, approach_rate: float, p: IdmParams,
              desired_gap: Optional[float] = None) -> float:
    """IDM acceleration.

    Args:
        v: own speed (m/s).
        gap: bumper gap to the leader (m); ``math.inf`` on a free road.
        approach_rate: ``v - v_leader`` (m/s).
        p: IDM parameters.
        desired_gap: explicit steady-state spacing (m) replacing
            ``s0 + v*T`` when a behavior pins a spacing target.

    Raises:
        CollisionError: if ``gap <= 0``.
    """
    if gap <= 0:
        raise CollisionError(f"nonpositive gap {gap:.3f} m")
    free = (v / p.v0) ** p.delta
    if math.isinf(gap):
        interaction = 0.0
    else:
        dynamic = v * approach_rate / (2.0 * math.sqrt(p.a_max * p.b))
        if desired_gap is None:
            s_star = p.s0 + max(0.0, v * p.T + dynamic)
        else:
            # scaled so that the steady-state spacing equals desired_gap
            s_star = desired_gap * math.sqrt(max(1.0 - free, 0.0)) + max(0.0, dynamic)
        interaction = (s_star / gap) ** 2
    a = p.a_max * (1.0 - free - interaction)
    return min(max(a, -EMERGENCY_DECEL), p.a_max)


@dataclass(frozen=True)
class ExecutionState:
    base: IdmParams
    active: IdmParams
    decision: LagAction = LagAction.DO_NOTHING
    target_gap_override: Optional[float] = None

    @classmethod
    def initial(cls, base: IdmParams) -> "ExecutionState":
        return cls(base=base, active=base)


def _reference_leader(world: WorldState) -> tuple[float, float]:
    """Position and speed of the leader used for gap targets."""
    if world.lead is not None:
        return world.lead.x, world.lead.v
    return world.ma.x + NO_LEAD_LOOKAHEAD, world.ma.v


def behavior_overrides(decision: LagAction, world: WorldState, exec_state: ExecutionState,
                       length: float = VEHICLE_LENGTH) -> ExecutionState:
    """Translate a discrete lag decision into the parameters IDM runs with.

    Yield-ahead and block both shorten the spacing to the leader: block
    targets the merger's own spacing (lag ends up beside the merger),
    yield-ahead half of it (lag ends up ahead of the merger). Do-nothing keeps
    whatever parameters the previous behavior left active.
    """
    decision = LagAction(decision)
    base = exec_state.base
    if decision is LagAction.YIELD_BEHIND:
        return ExecutionState(base, base, decision, None)
    if decision is LagAction.DO_NOTHING:
        return ExecutionState(base, exec_state.active, decision, None)
    lead_x, _ = _reference_leader(world)
    merger_to_lead = lead_x - world.ma.x
    s0 = REDUCTION * base.s0
    if decision is LagAction.BLOCK:
        target = max(merger_to_lead - length, s0)
    else:
        target = max(0.5 * merger_to_lead - length, s0)
    current_gap = lead_x - world.lag.x - length
    dv_needed = max(0.0, current_gap - target) / CLOSE_TIME
    active = replace(
        base,
        v0=base.v0 + min(V0_BOOST_MAX, dv_needed),
        T=REDUCTION * base.T,
        s0=s0,
    )
    return ExecutionState(base, active, decision, target)


def mr_idm_accel(world: WorldState, exec_state: ExecutionState, length: float = VEHICLE_LENGTH) -> float:
    """Acceleration of the lag under its current behavior.

    Yield-behind follows the more restrictive of the real leader and the
    merger treated as a virtual leader (engaged once the merger is level
    with or ahead of the lag). Other behaviors follow the real leader with
    the active parameters and spacing target; block additionally measures
    its approach rate against the merger.
    """
    lag = world.lag
    p = exec_state.active
    target = exec_state.target_gap_override
    if world.lead is not None:
        a = idm_accel(lag.v, world.lead.x - lag.x - length, lag.v - world.lead.v, p, target)
    elif target is not None:
        lead_x, lead_v = _reference_leader(world)
        gap = max(lead_x - lag.x - length, MIN_VIRTUAL_GAP)
        a = idm_accel(lag.v, gap, lag.v - lead_v, p, target)
    else:
        a = idm_accel(lag.v, math.inf, 0.0, p)
    if exec_state.decision is LagAction.BLOCK:
        # the spacing target moves with the merger, so close it at the merger's speed
        lead_x, _ = _reference_leader(world)
        gap = max(lead_x - lag.x - length, MIN_VIRTUAL_GAP)
        a = min(a, idm_accel(lag.v, gap, lag.v - world.ma.v, p, target))
    if exec_state.decision is LagAction.YIELD_BEHIND and world.ma.x >= lag.x:
        gap = max(world.ma.x - lag.x - length, MIN_VIRTUAL_GAP)
        a = min(a, idm_accel(lag.v, gap, lag.v - world.ma.v, p))
    return a


def step_vehicle(state: VehicleState, a: float, dt: float) -> VehicleState:
    """Semi-implicit Euler step without reversing; stores the realized accel."""
    if dt <= 0:
        raise ValueError("dt must be > 0")
    v_new = max(0.0, state.v + a * dt)
    return replace(state, x=state.x + v_new * dt, v=v_new, a=(v_new - state.v) / dt)
