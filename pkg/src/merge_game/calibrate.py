"""Fitting the nine behavior parameters to labeled observations.

The lower level turns each observation into lag action probabilities by
solving its game; the upper level runs bounded pattern searches from a
scrambled Sobol design over ``(phi_1..phi_8, tau)``. A gap-closing label is
credited with the larger of the yield-ahead and block probabilities, since
the two cannot be told apart from a time-gap profile.
"""

from __future__ import annotations

import enum
import json
import math
import os
import warnings
import zlib
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np
from scipy.stats import qmc

from .core import CURVATURE_PHI, LagAction, ModelParams
from .data import Behavior, Observation
from .game import expected_lag_payoffs, nash_mixed, qre_update
from .payoff import Conditioning, lat_scale, payoff_matrix, pth, ramp_scale, usmht

N_THETA = 9
THETA_NAMES = tuple(f"phi{k}" for k in range(1, 9)) + ("tau",)

CURVATURE_BOUNDS = (1.01, 50.0)
DO_NOTHING_BOUNDS = (-0.999, 1.0)
TAU_BOUNDS = (0.1, 10.0)


def default_bounds() -> tuple:
    bounds = [CURVATURE_BOUNDS] * 8
    bounds[5] = DO_NOTHING_BOUNDS
    return tuple(bounds) + (TAU_BOUNDS,)


class ProbabilitySource(str, enum.Enum):
    NASH = "nash"
    QRE = "qre"


class CalibrationMode(str, enum.Enum):
    GLOBAL = "global"
    PER_LAG = "per_lag"


@dataclass(frozen=True)
class CalibrationOptions:
    bounds: tuple = field(default_factory=default_bounds)
    n_starts: int = 8
    max_iters: int = 400
    source: ProbabilitySource = ProbabilitySource.NASH
    beta: float = 0.1
    mode: CalibrationMode = CalibrationMode.GLOBAL
    seed: int = 0
    conditioning: Conditioning = Conditioning.LITERAL
    base: ModelParams = field(default_factory=ModelParams)
    initial: Optional[tuple] = None
    initial_step: float = 0.25
    min_step: float = 1e-3

    def __post_init__(self):
        object.__setattr__(self, "source", ProbabilitySource(self.source))
        object.__setattr__(self, "mode", CalibrationMode(self.mode))
        object.__setattr__(self, "conditioning", Conditioning(self.conditioning))
        bounds = tuple((float(lo), float(hi)) for lo, hi in self.bounds)
        if len(bounds) != N_THETA:
            raise ValueError(f"need {N_THETA} (lower, upper) bounds, got {len(bounds)}")
        for name, (lo, hi) in zip(THETA_NAMES, bounds):
            if not (math.isfinite(lo) and math.isfinite(hi) and lo < hi):
                raise ValueError(f"bounds for {name} must be finite with lower < upper, got {(lo, hi)}")
        for k in CURVATURE_PHI:
            if bounds[k][0] <= 1.0:
                raise ValueError(f"curvature {THETA_NAMES[k]} needs a lower bound above 1")
        if not (-1.0 < bounds[5][0] and bounds[5][1] <= 1.0):
            raise ValueError("phi6 bounds must lie in (-1, 1]")
        if bounds[8][0] <= 0:
            raise ValueError("tau bounds must be positive")
        object.__setattr__(self, "bounds", bounds)
        if self.initial is not None:
            initial = tuple(float(v) for v in np.asarray(self.initial, dtype=float).ravel())
            if len(initial) != N_THETA or any(not lo <= v <= hi for v, (lo, hi) in zip(initial, bounds)):
                raise ValueError(f"initial must be {N_THETA} values inside the bounds, got {initial}")
            object.__setattr__(self, "initial", initial)
        if self.n_starts < 1 or self.max_iters < 1:
            raise ValueError("n_starts and max_iters must be >= 1")
        if self.source is ProbabilitySource.QRE and not self.beta > 0:
            raise ValueError("beta must be > 0 for the qre source")
        if not 0 < self.min_step <= self.initial_step:
            raise ValueError("need 0 < min_step <= initial_step")

    def to_dict(self) -> dict:
        return {
            "bounds": [list(b) for b in self.bounds],
            "n_starts": self.n_starts,
            "max_iters": self.max_iters,
            "source": self.source.value,
            "beta": self.beta,
            "mode": self.mode.value,
            "seed": self.seed,
            "conditioning": self.conditioning.value,
            "base": self.base.to_dict(),
            "initial": None if self.initial is None else list(self.initial),
            "initial_step": self.initial_step,
            "min_step": self.min_step,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CalibrationOptions":
        d = dict(d)
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown calibration option keys: {sorted(unknown)}")
        if "bounds" in d:
            d["bounds"] = tuple(tuple(b) for b in d["bounds"])
        if "base" in d:
            d["base"] = ModelParams.from_dict(d["base"])
        if d.get("initial") is not None:
            d["initial"] = tuple(float(v) for v in d["initial"])
        return cls(**d)


# -- lower level ---------------------------------------------------------


def model_probabilities(obs: Observation, params: ModelParams, source: ProbabilitySource | str = "nash",
                        beta: Optional[float] = None,
                        mode: Conditioning | str = Conditioning.LITERAL) -> np.ndarray:
    """Lag action probabilities for one observation, by solving its game."""
    game = payoff_matrix(obs.world, params, mode)
    profile = nash_mixed(game)
    if ProbabilitySource(source) is ProbabilitySource.NASH:
        return np.array(profile.col_mix)
    q_e = expected_lag_payoffs(game, profile.row_mix)
    return qre_update(q_e, params.beta if beta is None else beta)


@dataclass(frozen=True)
class ObservationBatch:
    """Column arrays of a list of observations, for vectorized payoffs."""

    lag_x: np.ndarray
    lag_y: np.ndarray
    lag_v: np.ndarray
    ma_x: np.ndarray
    ma_y: np.ndarray
    ma_v: np.ndarray
    has_lead: np.ndarray
    lead_x: np.ndarray
    lead_v: np.ndarray
    ramp_end_x: np.ndarray
    lane_offset: np.ndarray
    labels: np.ndarray
    observations: tuple

    @classmethod
    def from_observations(cls, observations: Sequence[Observation]) -> "ObservationBatch":
        observations = tuple(observations)
        if not observations:
            raise ValueError("no observations")
        w = [o.world for o in observations]
        col = lambda f: np.array([f(x) for x in w], dtype=float)  # noqa: E731
        has_lead = np.array([x.lead is not None for x in w])
        order = list(Behavior)
        return cls(
            lag_x=col(lambda x: x.lag.x), lag_y=col(lambda x: x.lag.y), lag_v=col(lambda x: x.lag.v),
            ma_x=col(lambda x: x.ma.x), ma_y=col(lambda x: x.ma.y), ma_v=col(lambda x: x.ma.v),
            has_lead=has_lead,
            lead_x=col(lambda x: x.lead.x if x.lead is not None else math.inf),
            lead_v=col(lambda x: x.lead.v if x.lead is not None else 0.0),
            ramp_end_x=col(lambda x: x.ramp.ramp_end_x), lane_offset=col(lambda x: x.ramp.lane_offset),
            labels=np.array([order.index(Behavior(o.label)) for o in observations]),
            observations=observations,
        )

    def __len__(self) -> int:
        return len(self.labels)


def batch_lag_payoffs(batch: ObservationBatch, params: ModelParams, dy=None) -> np.ndarray:
    """Lag payoffs (YB, YA, Bk, DN) of every observation as an ``(N, 4)`` array."""
    phi, tau = params.phi, params.tau
    if dy is None:
        dy = np.abs(batch.ma_y - batch.lag_y)
    scale = lat_scale(dy, phi[3]) * ramp_scale(batch.ramp_end_x - batch.ma_x, batch.ma_v, phi[4])
    psi_ma = pth(batch.ma_x - batch.lag_x, batch.ma_v - batch.lag_v, batch.lag_v, tau) / scale
    lead_term = np.zeros(len(batch))
    if np.any(batch.has_lead):
        m = batch.has_lead
        psi_lead = pth(batch.lead_x[m] - batch.lag_x[m], batch.lead_v[m] - batch.lag_v[m], batch.lag_v[m],
                       tau) / scale[m]
        lead_term[m] = usmht(psi_lead, phi[2], 1.0, 1)
    q = np.empty((len(batch), 4))
    q[:, 0] = usmht(psi_ma, phi[0], 1.0, 1)
    q[:, 1] = usmht(psi_ma, phi[1], 1.0, -1) - lead_term
    q[:, 2] = usmht(psi_ma, phi[6], 1.0, 1)
    q[:, 3] = phi[5]
    return q


def batch_probabilities(batch: ObservationBatch, params: ModelParams, source: ProbabilitySource | str = "nash",
                        beta: Optional[float] = None,
                        mode: Conditioning | str = Conditioning.LITERAL) -> np.ndarray:
    """Lag action probabilities of every observation as an ``(N, 4)`` array.

    In literal mode each lag payoff ignores the merger's action, so the
    equilibrium lag strategy is the pure best column and the expected
    payoffs equal the payoff row; both are computed in bulk. Conditioned
    games are solved one by one.
    """
    source = ProbabilitySource(source)
    if Conditioning(mode) is Conditioning.CONDITIONED:
        return np.array([model_probabilities(o, params, source, beta, mode) for o in batch.observations])
    q = batch_lag_payoffs(batch, params)
    if source is ProbabilitySource.NASH:
        probs = np.zeros_like(q)
        probs[np.arange(len(q)), np.argmax(q, axis=1)] = 1.0
        return probs
    z = q / (params.beta if beta is None else beta)
    w = np.exp(z - z.max(axis=1, keepdims=True))
    return w / w.sum(axis=1, keepdims=True)


def correct_probability(probs: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Probability the model gives to each observation's labeled behavior."""
    probs = np.atleast_2d(probs)
    closing = np.maximum(probs[:, LagAction.YIELD_AHEAD], probs[:, LagAction.BLOCK])
    table = np.column_stack([probs[:, LagAction.DO_NOTHING], probs[:, LagAction.YIELD_BEHIND], closing])
    return table[np.arange(len(labels)), labels]


def _as_batch(observations) -> ObservationBatch:
    if isinstance(observations, ObservationBatch):
        return observations
    observations = list(observations)
    if not observations:
        raise ValueError("objective needs at least one observation")
    return ObservationBatch.from_observations(observations)


def objective(params: ModelParams, observations, source: ProbabilitySource | str = "nash",
              beta: Optional[float] = None, mode: Conditioning | str = Conditioning.LITERAL) -> float:
    """Total missing probability mass on the labeled behaviors, in ``[0, N]``."""
    batch = _as_batch(observations)
    probs = batch_probabilities(batch, params, source, beta, mode)
    return float(np.sum(1.0 - correct_probability(probs, batch.labels)))


def mae(params: ModelParams, observations, source: ProbabilitySource | str = "nash",
        beta: Optional[float] = None, mode: Conditioning | str = Conditioning.LITERAL) -> float:
    batch = _as_batch(observations)
    return objective(params, batch, source, beta, mode) / len(batch)


# -- upper level -----------------------------------------------------------


@dataclass(frozen=True)
class StartSummary:
    index: int
    start: tuple
    start_objective: float
    theta: tuple
    objective: float
    evaluations: int


@dataclass(frozen=True)
class PerLagRow:
    lag_id: str
    dominant: Behavior
    n_obs: int
    params: ModelParams
    objective: float


@dataclass(frozen=True)
class CalibrationResult:
    params: Optional[ModelParams]
    objective: float
    mae: float
    n_obs: int
    starts: tuple = ()
    best_so_far: tuple = ()
    per_lag: tuple = ()

    def to_dict(self) -> dict:
        def theta_dict(theta):
            return dict(zip(THETA_NAMES, theta))

        out = {
            "objective": self.objective,
            "mae": self.mae,
            "n_obs": self.n_obs,
            "params": None if self.params is None else self.params.to_dict(),
            "starts": [
                {"index": s.index, "start": theta_dict(s.start), "start_objective": s.start_objective,
                 "theta": theta_dict(s.theta), "objective": s.objective, "evaluations": s.evaluations}
                for s in self.starts
            ],
            "best_so_far": list(self.best_so_far),
        }
        if self.per_lag:
            out["per_lag"] = [
                {"lag_id": r.lag_id, "dominant": r.dominant.value, "n_obs": r.n_obs,
                 "theta": theta_dict(r.params.theta), "objective": r.objective}
                for r in self.per_lag
            ]
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def _threads() -> int:
    raw = os.environ.get("MERGE_GAME_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise ValueError(f"MERGE_GAME_THREADS must be an integer, got {raw!r}") from None


class _Problem:
    """Objective on the unit cube, mapped affinely onto the bounds."""

    def __init__(self, batch: ObservationBatch, opts: CalibrationOptions):
        self.batch = batch
        self.opts = opts
        self.lo = np.array([b[0] for b in opts.bounds])
        self.hi = np.array([b[1] for b in opts.bounds])

    def theta(self, u: np.ndarray) -> tuple:
        return tuple(float(v) for v in self.lo + np.clip(u, 0.0, 1.0) * (self.hi - self.lo))

    def unit(self, theta) -> np.ndarray:
        return np.clip((np.asarray(theta, dtype=float) - self.lo) / (self.hi - self.lo), 0.0, 1.0)

    def __call__(self, u: np.ndarray) -> float:
        params = self.opts.base.with_theta(self.theta(u))
        return objective(params, self.batch, self.opts.source, self.opts.beta, self.opts.conditioning)


def pattern_search(f, u0: np.ndarray, max_iters: int, step: float = 0.25, min_step: float = 1e-3):
    """Bounded compass search on the unit cube.

    Polls ``u +/- step * e_i`` coordinate by coordinate, moving on strict
    improvement; a poll with no improvement halves the step. Stops when the
    step falls below ``min_step`` or after ``max_iters`` evaluations.
    """
    u = np.clip(np.asarray(u0, dtype=float), 0.0, 1.0)
    fu = f(u)
    evals = 1
    while step >= min_step and evals < max_iters:
        improved = False
        for i in range(len(u)):
            for sign in (1.0, -1.0):
                if evals >= max_iters:
                    break
                trial = u.copy()
                trial[i] = min(max(trial[i] + sign * step, 0.0), 1.0)
                if trial[i] == u[i]:
                    continue
                ft = f(trial)
                evals += 1
                if ft < fu:
                    u, fu = trial, ft
                    improved = True
                    break
        if not improved:
            step *= 0.5
    return u, fu, evals


def start_points(opts: CalibrationOptions, problem: _Problem) -> np.ndarray:
    """Scrambled Sobol starts in the unit cube; ``opts.initial`` goes first."""
    n = opts.n_starts
    rows = []
    if opts.initial is not None:
        rows.append(problem.unit(opts.initial))
    n_design = n - len(rows)
    if n_design > 0:
        sampler = qmc.Sobol(d=N_THETA, scramble=True, seed=opts.seed)
        m = max(0, math.ceil(math.log2(n_design)))
        design = sampler.random_base2(m)[:n_design]
        rows.extend(design)
    return np.array(rows)


def _calibrate_batch(batch: ObservationBatch, opts: CalibrationOptions) -> CalibrationResult:
    problem = _Problem(batch, opts)
    starts = start_points(opts, problem)

    def run(k):
        u0 = starts[k]
        f0 = problem(u0)
        u, fu, evals = pattern_search(problem, u0, opts.max_iters, opts.initial_step, opts.min_step)
        return StartSummary(k, problem.theta(u0), f0, problem.theta(u), fu, evals)

    threads = min(_threads(), len(starts))
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            summaries = list(pool.map(run, range(len(starts))))
    else:
        summaries = [run(k) for k in range(len(starts))]

    best = None
    trace = []
    for s in summaries:
        if best is None or s.objective < best.objective:
            best = s
        trace.append(best.objective)
    params = opts.base.with_theta(best.theta)
    value = objective(params, batch, opts.source, opts.beta, opts.conditioning)
    return CalibrationResult(params=params, objective=value, mae=value / len(batch), n_obs=len(batch),
                             starts=tuple(summaries), best_so_far=tuple(trace))


def dominant_behavior(observations) -> Behavior:
    counts = Counter(Behavior(o.label) for o in observations)
    return max(Behavior, key=lambda b: (counts[b], -list(Behavior).index(b)))


def calibrate(observations, opts: CalibrationOptions = CalibrationOptions()) -> CalibrationResult:
    """Fit ``(phi_1..phi_8, tau)`` to labeled observations.

    In per-lag mode every lag driver is fitted on its own observations and
    the result lists one row per lag with its dominant labeled behavior;
    the reported objective is then the sum over lags.
    """
    observations = list(observations)
    if not observations:
        raise ValueError("calibration needs at least one observation")
    if opts.mode is CalibrationMode.GLOBAL:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", UserWarning)
            return _calibrate_batch(ObservationBatch.from_observations(observations), opts)

    groups: dict = {}
    for o in observations:
        groups.setdefault(o.lag_id, []).append(o)
    rows = []
    total = 0.0
    for lag_id in sorted(groups):
        obs = groups[lag_id]
        # each lag gets its own start design so flat directions are not tied across lags
        lag_seed = int(np.random.SeedSequence([opts.seed, zlib.crc32(str(lag_id).encode())]).generate_state(1)[0])
        local = replace(opts, mode=CalibrationMode.GLOBAL, seed=lag_seed)
        result = calibrate(obs, local)
        total += result.objective
        rows.append(PerLagRow(lag_id, dominant_behavior(obs), len(obs), result.params, result.objective))
    return CalibrationResult(params=None, objective=total, mae=total / len(observations),
                             n_obs=len(observations), per_lag=tuple(rows))


def per_lag_medians(result: CalibrationResult) -> dict:
    """Median ``theta`` of the per-lag fits, grouped by dominant behavior."""
    groups: dict = {}
    for row in result.per_lag:
        groups.setdefault(row.dominant, []).append(row.params.theta)
    return {b: np.median(np.array(thetas), axis=0) for b, thetas in groups.items()}
