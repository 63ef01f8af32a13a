"""Bounded payoff shaping and the 2x4 merge-game payoff bimatrix.

The shaping function is a peak-shifted Soboleva tangent

    usmht(x, c, d, r) = (e^u - e^-u) / (e^(c u) + e^(-d u)),  u = r x + shift(c, d)

where ``shift(c, d)`` is the argmax of the unshifted base function, so the
peak always sits at ``x = 0``. With ``d = 1`` the function is bounded in
``(-1, peak]``: it decays to 0 on the positive side and to -1 on the negative
side of the peak.
"""

from __future__ import annotations

import enum
import functools
import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq
from scipy.special import expit

from .core import LagAction, MaAction, ModelParams, WorldState

V_MIN = 0.1
"""Speed floor (m/s) used when dividing by a vehicle speed."""

RAMP_EPS = 0.5
"""Floor (m) on the distance to the ramp end in the lane-change incentive."""

SCALE_D = 1000.0
"""Second curvature used by the lateral and ramp-end urgency scalings."""


class NoInteriorMaximumError(ValueError):
    """The base function has no finite argmax for the given curvatures."""


def _log_slope(u: float, c: float, d: float) -> float:
    # d/du log f(u) on u > 0, written with logistic weights so that large
    # curvatures (d = 1000) do not overflow.
    k = (c + d) * u
    return 1.0 / math.tanh(u) - (c * expit(k) - d * expit(-k))


@functools.lru_cache(maxsize=8192)
def _shift_cached(c: float, d: float) -> float:
    lo = 1e-12
    hi = 1.0
    while _log_slope(hi, c, d) > 0:
        hi *= 2.0
        if hi > 1e8:
            raise NoInteriorMaximumError(f"no finite argmax for c={c}, d={d}")
    return brentq(_log_slope, lo, hi, args=(c, d), xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500)


def smht_shift(c: float, d: float) -> float:
    """Return the argmax ``u*`` of ``(e^u - e^-u) / (e^(c u) + e^(-d u))``.

    The base function is negative for ``u < 0`` and positive for ``u > 0``,
    so the maximum is the unique positive root of the log-derivative. It is
    finite only when ``c > 1``; for ``c <= 1`` the function increases toward
    its supremum without attaining it. Results are cached per ``(c, d)``.
    """
    c = float(c)
    d = float(d)
    if not (math.isfinite(c) and math.isfinite(d)) or d <= 0:
        raise ValueError(f"curvatures must be finite and d > 0, got c={c}, d={d}")
    if c <= 1.0:
        raise NoInteriorMaximumError(f"base function is monotone for c={c} <= 1 (d={d})")
    return _shift_cached(c, d)


def base_smht(u, c: float, d: float):
    """Unshifted base function, evaluated in an overflow-free normalized form."""
    if np.ndim(u) == 0:
        u = float(u)
        if u >= 0.0:
            if math.isinf(u):
                return 0.0
            return (math.exp((1.0 - c) * u) - math.exp(-(1.0 + c) * u)) / (1.0 + math.exp(-(c + d) * u))
        try:
            num = math.exp((1.0 + d) * u) - math.exp((d - 1.0) * u)
        except OverflowError:
            return -math.inf
        return num / (math.exp((c + d) * u) + 1.0)
    u = np.asarray(u, dtype=float)
    pos = u >= 0
    up = np.where(pos, u, 0.0)
    un = np.where(pos, 0.0, u)
    with np.errstate(over="ignore", invalid="ignore"):
        fp = (np.exp((1.0 - c) * up) - np.exp(-(1.0 + c) * up)) / (1.0 + np.exp(-(c + d) * up))
        fn = (np.exp((1.0 + d) * un) - np.exp((d - 1.0) * un)) / (np.exp((c + d) * un) + 1.0)
        fp = np.where(np.isposinf(up), 0.0, fp)
    return np.where(pos, fp, fn)


def usmht(x, c: float, d: float, r: int = 1):
    """Peak-shifted Soboleva tangent, peak at ``x = 0``; ``r`` in {+1, -1}."""
    if r not in (1, -1):
        raise ValueError(f"direction r must be +1 or -1, got {r!r}")
    s = smht_shift(c, d)
    if np.ndim(x) == 0:
        return base_smht(r * float(x) + s, c, d)
    return base_smht(r * np.asarray(x, dtype=float) + s, c, d)


def usmht_peak(c: float, d: float = 1.0) -> float:
    return base_smht(smht_shift(c, d), c, d)


def pth(dx, dv, v_ref, tau: float):
    """Predicted time headway after ``tau`` seconds at constant speeds (s)."""
    if tau <= 0:
        raise ValueError("tau must be > 0")
    return (dx + tau * dv) / np.maximum(v_ref, V_MIN)


def lat_scale(dy, phi4: float):
    """Lateral-proximity urgency factor, in ``(0, 1 + peak]``."""
    return usmht(dy, phi4, SCALE_D, 1) + 1.0


def ramp_scale(dx_ramp, v_ma, phi5: float):
    """Ramp-end urgency factor from the merger's time to the ramp end."""
    time_left = np.maximum(dx_ramp, 0.0) / np.maximum(v_ma, V_MIN)
    return usmht(time_left, phi5, SCALE_D, 1) + 1.0


def scaled_pth(raw_pth, s_lat, s_ramp):
    return raw_pth / (s_lat * s_ramp)


@dataclass(frozen=True)
class LagPayoffs:
    q_yb: float
    q_ya: float
    q_bk: float
    q_dn: float

    def as_array(self) -> np.ndarray:
        """Payoffs in column order (YB, YA, Bk, DN)."""
        return np.array([self.q_yb, self.q_ya, self.q_bk, self.q_dn])


@dataclass(frozen=True)
class MaPayoffs:
    p_keep: float
    p_change: float


class Conditioning(str, enum.Enum):
    """How payoff cells depend on the opponent's action.

    ``literal`` fills every cell of a player's own-action line with the same
    value. ``conditioned`` re-evaluates the lag's interactive payoffs in the
    KeepStraight row as if the merger stays laterally in its lane.
    """

    LITERAL = "literal"
    CONDITIONED = "conditioned"


@dataclass(frozen=True)
class PayoffMatrix:
    """Bimatrix with rows (ChangeLanes, KeepStraight), columns (YB, YA, Bk, DN)."""

    p: np.ndarray
    q: np.ndarray

    def __post_init__(self):
        p = np.array(self.p, dtype=float)
        q = np.array(self.q, dtype=float)
        if p.shape != (2, 4) or q.shape != (2, 4):
            raise ValueError(f"payoff matrices must be 2x4, got {p.shape} and {q.shape}")
        if not (np.all(np.isfinite(p)) and np.all(np.isfinite(q))):
            raise ValueError("payoff entries must be finite")
        p.flags.writeable = False
        q.flags.writeable = False
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "q", q)


def _scales(world: WorldState, params: ModelParams, dy=None):
    ma = world.ma
    if dy is None:
        dy = abs(ma.y - world.lag.y)
    s_lat = lat_scale(dy, params.phi[3])
    s_ramp = ramp_scale(world.ramp.ramp_end_x - ma.x, ma.v, params.phi[4])
    return s_lat * s_ramp


def lag_payoffs(world: WorldState, params: ModelParams, dy=None) -> LagPayoffs:
    """Lag payoffs for (YB, YA, Bk, DN) in ``world``.

    ``dy`` overrides the merger-lag lateral distance used by the lateral
    scaling. An absent lead contributes nothing to the yield-ahead payoff.
    """
    phi, tau = params.phi, params.tau
    lag, ma, lead = world.lag, world.ma, world.lead
    scale = _scales(world, params, dy)
    psi_ma = pth(ma.x - lag.x, ma.v - lag.v, lag.v, tau) / scale
    if lead is None:
        lead_term = 0.0
    else:
        psi_lead = pth(lead.x - lag.x, lead.v - lag.v, lag.v, tau) / scale
        lead_term = usmht(psi_lead, phi[2], 1.0, 1)
    return LagPayoffs(
        q_yb=usmht(psi_ma, phi[0], 1.0, 1),
        q_ya=usmht(psi_ma, phi[1], 1.0, -1) - lead_term,
        q_bk=usmht(psi_ma, phi[6], 1.0, 1),
        q_dn=phi[5],
    )


def ma_payoffs(world: WorldState, params: ModelParams) -> MaPayoffs:
    phi, tau = params.phi, params.tau
    lag, ma, lead = world.lag, world.ma, world.lead
    scale = _scales(world, params)
    if lead is None:
        lead_term = 0.0
    else:
        lead_term = usmht(pth(lead.x - ma.x, lead.v - ma.v, ma.v, tau) / scale, phi[0], 1.0, 1)
    lag_term = usmht(pth(lag.x - ma.x, lag.v - ma.v, ma.v, tau) / scale, phi[7], 1.0, -1)
    p_keep = 0.5 * (lead_term + lag_term)
    dx_ramp = world.ramp.ramp_end_x - ma.x
    p_change = -p_keep + (params.s0 + ma.v * params.T) / max(dx_ramp, RAMP_EPS)
    return MaPayoffs(p_keep=p_keep, p_change=p_change)


def payoff_matrix(world: WorldState, params: ModelParams, mode: Conditioning | str = Conditioning.LITERAL) -> PayoffMatrix:
    mode = Conditioning(mode)
    lp = lag_payoffs(world, params)
    mp = ma_payoffs(world, params)
    q_change = lp.as_array()
    if mode is Conditioning.LITERAL:
        q_keep = q_change
    else:
        q_keep = lag_payoffs(world, params, dy=world.ramp.lane_offset).as_array()
    p = np.array([[mp.p_change] * 4, [mp.p_keep] * 4])
    return PayoffMatrix(p=p, q=np.vstack([q_change, q_keep]))


# Column/row index aliases for readers of PayoffMatrix
COLUMNS = tuple(LagAction)
ROWS = tuple(MaAction)
