"""Equilibrium solving and the per-actor decision step.

A decision builds the payoff bimatrix, finds a mixed Nash equilibrium by
support enumeration, marginalizes the lag's payoffs over the merger's
equilibrium mix, and turns those expected payoffs into action probabilities
with a logit (quantal) response of temperature ``beta``.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .core import LagAction, MaAction, ModelParams, WorldState
from .payoff import Conditioning, PayoffMatrix, payoff_matrix

NASH_TOL = 1e-9
"""Largest pure-deviation gain accepted when validating a candidate profile."""

_RESIDUAL_TOL = 1e-10
_ROW_SUPPORTS = tuple(s for k in (1, 2) for s in itertools.combinations(range(2), k))
_COL_SUPPORTS = tuple(s for k in range(1, 5) for s in itertools.combinations(range(4), k))


@dataclass(frozen=True)
class MixedProfile:
    row_mix: np.ndarray
    col_mix: np.ndarray
    row_value: float = float("nan")
    col_value: float = float("nan")
    support: tuple = ()

    def __post_init__(self):
        for name, n in (("row_mix", 2), ("col_mix", 4)):
            mix = np.array(getattr(self, name), dtype=float)
            if mix.shape != (n,) or np.any(mix < 0) or abs(mix.sum() - 1.0) > 1e-12:
                raise ValueError(f"{name} must be a probability {n}-vector, got {mix}")
            mix.flags.writeable = False
            object.__setattr__(self, name, mix)


def deviation_gain(p: np.ndarray, q: np.ndarray, x: np.ndarray, y: np.ndarray) -> float:
    """Largest gain either player gets from a unilateral pure deviation."""
    py = p @ y
    xq = x @ q
    return max(py.max() - x @ py, xq.max() - xq @ y)


def _row_mix(q, cols):
    """Row mix ``(x0, 1 - x0)`` making the lag indifferent over ``cols``.

    Solves ``x0 * q[0][j] + (1 - x0) * q[1][j] = v`` for every ``j`` in
    ``cols``. Returns ``None`` when the system is inconsistent or the
    solution leaves the simplex.
    """
    a = [q[0][j] - q[1][j] for j in cols]
    b = [q[1][j] for j in cols]
    if len(cols) == 1:
        x0 = 0.5  # underdetermined; any row mix keeps a single column indifferent
    else:
        # pivot on the best-conditioned pair of equations
        k, l = max(itertools.combinations(range(len(cols)), 2), key=lambda kl: abs(a[kl[0]] - a[kl[1]]))
        denom = a[k] - a[l]
        if abs(denom) <= _RESIDUAL_TOL:
            if max(b) - min(b) > _RESIDUAL_TOL:
                return None
            x0 = 0.5
        else:
            x0 = (b[l] - b[k]) / denom
        v = [x0 * ai + bi for ai, bi in zip(a, b)]
        if max(v) - min(v) > _RESIDUAL_TOL:
            return None
    if x0 < -_RESIDUAL_TOL or x0 > 1 + _RESIDUAL_TOL:
        return None
    x0 = min(max(x0, 0.0), 1.0)
    return (x0, 1.0 - x0)


def _col_mix(p, cols):
    """Column mix over ``cols`` making the merger indifferent between its rows.

    Solves ``sum_j (p[0][j] - p[1][j]) y_j = 0`` with ``sum_j y_j = 1``,
    taking the minimum-norm solution when it is underdetermined.
    """
    delta = [p[0][j] - p[1][j] for j in cols]
    n = len(cols)
    if n == 1:
        return None if abs(delta[0]) > _RESIDUAL_TOL else (1.0,)
    s1 = sum(delta)
    s2 = sum(d * d for d in delta)
    det = n * s2 - s1 * s1
    if det <= _RESIDUAL_TOL * max(1.0, n * s2):
        # delta constant on the support: solvable only if it is zero
        if abs(s1) > _RESIDUAL_TOL:
            return None
        return tuple([1.0 / n] * n)
    alpha = s2 / det
    gamma = -s1 / det
    y = [alpha + gamma * d for d in delta]
    if min(y) < -_RESIDUAL_TOL:
        return None
    y = [max(yi, 0.0) for yi in y]
    total = sum(y)
    return tuple(yi / total for yi in y)


def _gain(p, q, x, y) -> float:
    py = [sum(pij * yj for pij, yj in zip(row, y)) for row in p]
    xq = [x[0] * q[0][j] + x[1] * q[1][j] for j in range(4)]
    row_val = x[0] * py[0] + x[1] * py[1]
    col_val = sum(v * yj for v, yj in zip(xq, y))
    return max(max(py) - row_val, max(xq) - col_val)


def _enumerate(p: np.ndarray, q: np.ndarray):
    pl, ql = p.tolist(), q.tolist()
    for rows in _ROW_SUPPORTS:
        for cols in _COL_SUPPORTS:
            if len(rows) == 1:
                i = rows[0]
                x = (1.0, 0.0) if i == 0 else (0.0, 1.0)
                best = max(ql[i])
                # against a pure row every supported column must be a best response
                if any(best - ql[i][j] > _RESIDUAL_TOL for j in cols):
                    continue
                ys = tuple([1.0 / len(cols)] * len(cols))
            else:
                x = _row_mix(ql, cols)
                if x is None:
                    continue
                ys = _col_mix(pl, cols)
                if ys is None:
                    continue
            y = [0.0] * 4
            for j, yj in zip(cols, ys):
                y[j] = yj
            if _gain(pl, ql, x, y) <= NASH_TOL:
                yield rows, cols, np.array(x), np.array(y)


def _pure_fallback(p: np.ndarray, q: np.ndarray) -> MixedProfile:
    j = int(np.argmax(q[0]))
    i = int(np.argmax(p[:, j]))
    x = np.eye(2)[i]
    y = np.eye(4)[j]
    return MixedProfile(x, y, float(p[i, j]), float(q[i, j]), ((i,), (j,)))


def nash_mixed(game: PayoffMatrix) -> MixedProfile:
    """Mixed Nash equilibrium of the 2x4 merge game by support enumeration.

    Every pair of nonempty row/column supports is tried. When several
    equilibria exist the one with the highest lag (column) payoff wins, then
    the highest merger payoff, then the lexicographically smallest support.
    """
    p, q = game.p, game.q
    best = None
    best_key = None
    for rows, cols, x, y in _enumerate(p, q):
        col_value = float(x @ q @ y)
        row_value = float(x @ p @ y)
        key = (-round(col_value, 10), -round(row_value, 10), rows, cols)
        if best_key is None or key < best_key:
            best_key = key
            best = MixedProfile(x, y, row_value, col_value, (rows, cols))
    if best is None:
        return _pure_fallback(p, q)
    return best


def expected_lag_payoffs(game: PayoffMatrix, row_mix) -> np.ndarray:
    """Lag payoff of each action, averaged over the merger's mix."""
    return np.asarray(row_mix, dtype=float) @ game.q


def qre_update(q_e, beta: float) -> np.ndarray:
    """Logit response ``softmax(q_e / beta)``."""
    if beta <= 0:
        raise ValueError("beta must be > 0")
    z = np.asarray(q_e, dtype=float) / beta
    w = np.exp(z - z.max())
    return w / w.sum()


def decision_window(params: ModelParams, rng: np.random.Generator) -> float:
    """How long a freshly chosen behavior is held (s)."""
    if params.sigma == 0:
        return float(params.t_window)
    return max(0.0, params.t_window + rng.normal(0.0, params.sigma))


@dataclass(frozen=True)
class Decision:
    lag_action: LagAction
    lag_probs: np.ndarray
    ma_action: MaAction
    hold_until: float
    t: float = 0.0
    payoffs: np.ndarray = field(default_factory=lambda: np.full(4, np.nan))

    def __post_init__(self):
        probs = np.array(self.lag_probs, dtype=float)
        if probs.shape != (4,) or abs(probs.sum() - 1.0) > 1e-12:
            raise ValueError("lag_probs must be a probability 4-vector")
        if self.hold_until < self.t:
            raise ValueError("hold_until precedes the decision time")
        probs.flags.writeable = False
        object.__setattr__(self, "lag_probs", probs)
        object.__setattr__(self, "lag_action", LagAction(self.lag_action))
        object.__setattr__(self, "ma_action", MaAction(self.ma_action))


def idle_decision(t: float, hold_until: Optional[float] = None) -> Decision:
    """A DoNothing decision used when no merger interaction is active."""
    return Decision(
        lag_action=LagAction.DO_NOTHING,
        lag_probs=np.eye(4)[LagAction.DO_NOTHING],
        ma_action=MaAction.KEEP_STRAIGHT,
        hold_until=t if hold_until is None else hold_until,
        t=t,
    )


def _sample(probs: np.ndarray, rng: np.random.Generator) -> int:
    u = rng.random()
    idx = int(np.searchsorted(np.cumsum(probs), u, side="right"))
    return min(idx, len(probs) - 1)


# Relative slack on hold-window comparisons, absorbs float drift of tick clocks
_HOLD_EPS = 1e-9


def decide(
    world: WorldState,
    params: ModelParams,
    prev: Optional[Decision],
    rng: np.random.Generator,
    mode: Conditioning | str = Conditioning.LITERAL,
) -> Decision:
    """One decision step for the lag (and the merger's equilibrium action)."""
    if prev is not None and world.t < prev.hold_until - _HOLD_EPS:
        return prev
    game = payoff_matrix(world, params, mode)
    profile = nash_mixed(game)
    q_e = expected_lag_payoffs(game, profile.row_mix)
    probs = qre_update(q_e, params.beta)
    lag_action = LagAction(_sample(probs, rng))
    if profile.row_mix.max() >= 1.0 - 1e-12:
        ma_action = MaAction(int(np.argmax(profile.row_mix)))
    else:
        ma_action = MaAction(_sample(profile.row_mix, rng))
    hold = decision_window(params, rng)
    return Decision(
        lag_action=lag_action,
        lag_probs=probs,
        ma_action=ma_action,
        hold_until=world.t + hold,
        t=world.t,
        payoffs=q_e,
    )
