"""Domain types shared by the solver, dynamics, simulator and calibration code.

Coordinates use one longitudinal axis ``x`` along the road. The main lane
center sits at ``y = 0`` and the ramp lane center at ``y = -lane_offset``, so
``y`` grows toward the main lane.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np


class Lane(str, enum.Enum):
    RAMP = "ramp"
    MAIN = "main"


class LagAction(enum.IntEnum):
    """Lag vehicle strategies, in payoff-matrix column order."""

    YIELD_BEHIND = 0
    YIELD_AHEAD = 1
    BLOCK = 2
    DO_NOTHING = 3

    @property
    def short(self) -> str:
        return _LAG_SHORT[self]

    @classmethod
    def from_short(cls, name: str) -> "LagAction":
        try:
            return _LAG_FROM_SHORT[name.lower()]
        except KeyError:
            raise ValueError(f"unknown lag action {name!r}") from None


_LAG_SHORT = {
    LagAction.YIELD_BEHIND: "yb",
    LagAction.YIELD_AHEAD: "ya",
    LagAction.BLOCK: "bk",
    LagAction.DO_NOTHING: "dn",
}
_LAG_FROM_SHORT = {v: k for k, v in _LAG_SHORT.items()}
_LAG_FROM_SHORT.update({a.name.lower(): a for a in LagAction})


class MaAction(enum.IntEnum):
    """Merger strategies, in payoff-matrix row order."""

    CHANGE_LANES = 0
    KEEP_STRAIGHT = 1


class Role(str, enum.Enum):
    LAG = "lag"
    MA = "ma"
    LEAD = "lead"


class MissingActorError(LookupError):
    """Raised when a relative state is requested for an absent actor."""


def _check_finite(owner: str, **values: float) -> None:
    for name, value in values.items():
        if not math.isfinite(value):
            raise ValueError(f"{owner}.{name} must be finite, got {value!r}")


@dataclass(frozen=True)
class VehicleState:
    id: str
    x: float
    y: float = 0.0
    v: float = 0.0
    a: float = 0.0
    lane: Lane = Lane.MAIN

    def __post_init__(self):
        _check_finite("VehicleState", x=self.x, y=self.y, v=self.v, a=self.a)
        if self.v < 0:
            raise ValueError(f"VehicleState.v must be >= 0, got {self.v}")
        if not isinstance(self.lane, Lane):
            object.__setattr__(self, "lane", Lane(self.lane))


@dataclass(frozen=True)
class RampGeometry:
    ramp_end_x: float = 300.0
    merge_zone_start_x: float = 50.0
    lane_offset: float = 3.5

    def __post_init__(self):
        _check_finite(
            "RampGeometry",
            ramp_end_x=self.ramp_end_x,
            merge_zone_start_x=self.merge_zone_start_x,
            lane_offset=self.lane_offset,
        )
        if not self.merge_zone_start_x < self.ramp_end_x:
            raise ValueError("merge_zone_start_x must be < ramp_end_x")
        if self.lane_offset <= 0:
            raise ValueError("lane_offset must be > 0")

    @property
    def ramp_y(self) -> float:
        return -self.lane_offset


@dataclass(frozen=True)
class WorldState:
    """Snapshot of the three interacting actors at time ``t``."""

    t: float
    lag: VehicleState
    ma: VehicleState
    ramp: RampGeometry = field(default_factory=RampGeometry)
    lead: Optional[VehicleState] = None

    def __post_init__(self):
        _check_finite("WorldState", t=self.t)
        if self.lag.lane is not Lane.MAIN:
            raise ValueError("the lag vehicle must be in the main lane")
        if self.lead is not None and not self.lead.x > self.lag.x:
            raise ValueError("lead must be ahead of the lag vehicle")

    def actor(self, role: Role | str) -> VehicleState:
        role = Role(role)
        state = getattr(self, role.value)
        if state is None:
            raise MissingActorError(f"world at t={self.t} has no {role.value} vehicle")
        return state


def relative_state(world: WorldState, src: Role | str, dst: Role | str) -> tuple[float, float, float]:
    """Return ``(dx, dv, dy)`` of actor ``dst`` as seen from actor ``src``.

    ``dx`` and ``dv`` are signed differences ``dst - src``; ``dy`` is the
    absolute lateral separation.
    """
    a = world.actor(src)
    b = world.actor(dst)
    return b.x - a.x, b.v - a.v, abs(b.y - a.y)


N_PHI = 8
# phi indices (0-based) that act as usmht curvatures and need c > 1
CURVATURE_PHI = (0, 1, 2, 3, 4, 6, 7)
DO_NOTHING_PHI = 5


@dataclass(frozen=True)
class ModelParams:
    """Decision-model parameters.

    ``phi`` and ``tau`` are the nine calibrated values. ``beta``,
    ``t_window`` and ``sigma`` are runtime knobs, and ``s0``/``T`` feed the
    merger's lane-change incentive.
    """

    phi: tuple = (2.0, 2.0, 2.0, 2.0, 2.0, 0.0, 2.0, 2.0)
    tau: float = 2.0
    beta: float = 0.1
    t_window: float = 2.0
    sigma: float = 0.0
    s0: float = 2.0
    T: float = 1.5

    def __post_init__(self):
        phi = tuple(float(p) for p in np.asarray(self.phi, dtype=float).ravel())
        object.__setattr__(self, "phi", phi)
        if len(phi) != N_PHI:
            raise ValueError(f"phi must have {N_PHI} entries, got {len(phi)}")
        _check_finite(
            "ModelParams",
            tau=self.tau, beta=self.beta, t_window=self.t_window,
            sigma=self.sigma, s0=self.s0, T=self.T,
            **{f"phi{i + 1}": p for i, p in enumerate(phi)},
        )
        for i in CURVATURE_PHI:
            if phi[i] <= 1:
                raise ValueError(f"phi{i + 1} must be > 1, got {phi[i]}")
        if not -1 < phi[DO_NOTHING_PHI] <= 1:
            raise ValueError(f"phi6 must lie in (-1, 1], got {phi[DO_NOTHING_PHI]}")
        if self.tau <= 0:
            raise ValueError("tau must be > 0")
        if self.beta <= 0:
            raise ValueError("beta must be > 0")
        for name in ("t_window", "sigma", "s0", "T"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")

    @property
    def theta(self) -> np.ndarray:
        """The nine calibrated values ``(phi1..phi8, tau)`` as an array."""
        return np.array(self.phi + (self.tau,))

    def with_theta(self, theta) -> "ModelParams":
        theta = np.asarray(theta, dtype=float)
        return replace(self, phi=tuple(theta[:N_PHI]), tau=float(theta[N_PHI]))

    def to_dict(self) -> dict:
        return {
            "phi": list(self.phi), "tau": self.tau, "beta": self.beta,
            "t_window": self.t_window, "sigma": self.sigma, "s0": self.s0, "T": self.T,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelParams":
        return cls(**d)
