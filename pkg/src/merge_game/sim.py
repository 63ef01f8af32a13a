"""Fixed-step merge scenario engine.

One ramp, one main lane, one merger. Main-lane vehicles that carry
:class:`~merge_game.core.ModelParams` play the merge game against the merger
at the decision rate; every vehicle is advanced with IDM-based dynamics at
the dynamics rate. Each game-playing vehicle owns a random stream seeded from
``(seed, vehicle id)``, so a run is a pure function of its configuration.
"""

from __future__ import annotations

import csv
import enum
import io
import logging
import math
import zlib
from collections import Counter
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np
import yaml

from .core import Lane, LagAction, MaAction, ModelParams, RampGeometry, VehicleState, WorldState
from .dynamics import (
    EMERGENCY_DECEL,
    CollisionError,
    ExecutionState,
    IdmParams,
    behavior_overrides,
    idm_accel,
    mr_idm_accel,
    step_vehicle,
)
from .game import Decision, decide, idle_decision
from .payoff import Conditioning

log = logging.getLogger(__name__)

LOG_COLUMNS = ("t", "id", "x", "y", "v", "a", "decision", "p_yb", "p_ya", "p_bk", "p_dn")


class MaMode(str, enum.Enum):
    SCRIPTED = "scripted"
    GAME_DRIVEN = "game_driven"


@dataclass(frozen=True)
class VehicleSpec:
    """Initial state and driver model of one vehicle.

    Vehicles without ``params`` are plain IDM drivers that never play the game.
    """

    state: VehicleState
    idm: IdmParams = field(default_factory=IdmParams)
    params: Optional[ModelParams] = None


@dataclass(frozen=True)
class MergerScript:
    """Scripted merger: piecewise-constant acceleration and an optional lane change.

    ``accel`` holds ``(t_start, a)`` pairs sorted by ``t_start``.
    """

    accel: tuple = ((0.0, 0.0),)
    lane_change_at: Optional[float] = None

    def __post_init__(self):
        pairs = tuple((float(t), float(a)) for t, a in self.accel)
        if not pairs or any(t1 <= t0 for (t0, _), (t1, _) in zip(pairs, pairs[1:])):
            raise ValueError("script accel times must be non-empty and strictly increasing")
        object.__setattr__(self, "accel", pairs)

    def accel_at(self, t: float) -> float:
        a = 0.0
        for t_start, value in self.accel:
            if t + 1e-12 >= t_start:
                a = value
            else:
                break
        return a


@dataclass(frozen=True)
class ScenarioConfig:
    ramp: RampGeometry
    vehicles: tuple
    merger: VehicleSpec
    ma_mode: MaMode = MaMode.SCRIPTED
    script: MergerScript = field(default_factory=MergerScript)
    dt_dyn: float = 0.01
    dt_decision: float = 0.1
    duration: float = 10.0
    seed: int = 0
    conditioning: Conditioning = Conditioning.LITERAL
    interaction_range: float = 150.0
    vehicle_length: float = 5.0
    lane_change_time: float = 3.0

    def __post_init__(self):
        object.__setattr__(self, "vehicles", tuple(self.vehicles))
        object.__setattr__(self, "ma_mode", MaMode(self.ma_mode))
        object.__setattr__(self, "conditioning", Conditioning(self.conditioning))
        if self.dt_dyn <= 0 or self.duration <= 0:
            raise ValueError("dt_dyn and duration must be > 0")
        ratio = self.dt_decision / self.dt_dyn
        if ratio < 1 - 1e-9 or abs(ratio - round(ratio)) > 1e-9:
            raise ValueError("dt_decision must be an integer multiple of dt_dyn")
        if not any(v.params is not None for v in self.vehicles):
            raise ValueError("at least one lag vehicle (with ModelParams) is required")
        ids = [v.state.id for v in self.vehicles] + [self.merger.state.id]
        if len(set(ids)) != len(ids):
            raise ValueError("vehicle ids must be unique")
        if any(v.state.lane is not Lane.MAIN for v in self.vehicles):
            raise ValueError("all non-merging vehicles must start in the main lane")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")

    @property
    def decision_every(self) -> int:
        return int(round(self.dt_decision / self.dt_dyn))

    def with_beta(self, beta: float) -> "ScenarioConfig":
        vehicles = tuple(
            v if v.params is None else replace(v, params=replace(v.params, beta=beta)) for v in self.vehicles
        )
        return replace(self, vehicles=vehicles)

    # -- serialization -------------------------------------------------

    def to_dict(self) -> dict:
        def vehicle_dict(v: VehicleSpec) -> dict:
            s = v.state
            d = {
                "state": {"id": s.id, "x": s.x, "y": s.y, "v": s.v, "a": s.a, "lane": s.lane.value},
                "idm": v.idm.to_dict(),
            }
            if v.params is not None:
                d["params"] = v.params.to_dict()
            return d

        return {
            "ramp": {
                "ramp_end_x": self.ramp.ramp_end_x,
                "merge_zone_start_x": self.ramp.merge_zone_start_x,
                "lane_offset": self.ramp.lane_offset,
            },
            "vehicles": [vehicle_dict(v) for v in self.vehicles],
            "merger": vehicle_dict(self.merger),
            "ma_mode": self.ma_mode.value,
            "script": {
                "accel": [list(pair) for pair in self.script.accel],
                "lane_change_at": self.script.lane_change_at,
            },
            "dt_dyn": self.dt_dyn,
            "dt_decision": self.dt_decision,
            "duration": self.duration,
            "seed": self.seed,
            "conditioning": self.conditioning.value,
            "interaction_range": self.interaction_range,
            "vehicle_length": self.vehicle_length,
            "lane_change_time": self.lane_change_time,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioConfig":
        d = dict(d)
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown scenario config keys: {sorted(unknown)}")

        def parse_vehicle(raw: dict, default_lane: str) -> VehicleSpec:
            raw = dict(raw)
            bad = set(raw) - {"state", "idm", "params"}
            if bad:
                raise ValueError(f"unknown vehicle keys: {sorted(bad)}")
            state = dict(raw["state"])
            state.setdefault("lane", default_lane)
            state["id"] = str(state["id"])
            params = raw.get("params")
            return VehicleSpec(
                state=VehicleState(**state),
                idm=IdmParams(**raw.get("idm", {})),
                params=None if params is None else ModelParams.from_dict(params),
            )

        d["ramp"] = RampGeometry(**d.get("ramp", {}))
        d["vehicles"] = tuple(parse_vehicle(v, "main") for v in d.get("vehicles", ()))
        if "merger" not in d:
            raise ValueError("scenario config needs a merger")
        d["merger"] = parse_vehicle(d["merger"], "ramp")
        if "script" in d:
            script = dict(d["script"])
            if "accel" in script:
                script["accel"] = tuple(tuple(pair) for pair in script["accel"])
            d["script"] = MergerScript(**script)
        if "seed" in d:
            d["seed"] = int(d["seed"])
        return cls(**d)


def load_config(path) -> ScenarioConfig:
    with open(path) as fh:
        raw = yaml.safe_load(fh) or {}
    return ScenarioConfig.from_dict(raw)


def dump_config(config: ScenarioConfig) -> str:
    return yaml.safe_dump(config.to_dict(), sort_keys=True, default_flow_style=None)


def actor_rng(seed: int, vehicle_id: str) -> np.random.Generator:
    """Independent random stream for one vehicle."""
    return np.random.default_rng([int(seed), zlib.crc32(vehicle_id.encode())])


@dataclass
class TrajectoryLog:
    """Per-tick vehicle records plus decision and collision events."""

    t: np.ndarray
    id: np.ndarray
    x: np.ndarray
    y: np.ndarray
    v: np.ndarray
    a: np.ndarray
    decision: np.ndarray
    probs: np.ndarray
    payoffs: np.ndarray
    decisions: list = field(default_factory=list)
    collisions: list = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.t)

    def ids(self) -> list:
        return list(dict.fromkeys(self.id.tolist()))

    def select(self, vehicle_id: str) -> dict:
        """Column arrays for one vehicle, in time order."""
        mask = self.id == vehicle_id
        return {
            "t": self.t[mask], "x": self.x[mask], "y": self.y[mask], "v": self.v[mask],
            "a": self.a[mask], "decision": self.decision[mask], "probs": self.probs[mask],
            "payoffs": self.payoffs[mask],
        }

    def decisions_of(self, vehicle_id: str) -> list:
        """Freshly made (not held) decisions of one vehicle."""
        return [d for vid, d in self.decisions if vid == vehicle_id]

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(LOG_COLUMNS)
        for k in range(len(self.t)):
            writer.writerow(
                [repr(float(self.t[k])), self.id[k], repr(float(self.x[k])), repr(float(self.y[k])),
                 repr(float(self.v[k])), repr(float(self.a[k])), self.decision[k]]
                + [repr(float(p)) for p in self.probs[k]]
            )
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text

    @classmethod
    def read_csv(cls, path) -> "TrajectoryLog":
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            missing = set(LOG_COLUMNS) - set(reader.fieldnames or ())
            if missing:
                raise ValueError(f"trajectory log lacks columns {sorted(missing)}")
            rows = list(reader)
        col = lambda name: np.array([float(r[name]) for r in rows])  # noqa: E731
        probs = np.column_stack([col(c) for c in ("p_yb", "p_ya", "p_bk", "p_dn")]) if rows else np.zeros((0, 4))
        return cls(
            t=col("t"), id=np.array([r["id"] for r in rows], dtype=object), x=col("x"), y=col("y"),
            v=col("v"), a=col("a"), decision=np.array([r["decision"] for r in rows], dtype=object),
            probs=probs, payoffs=np.full((len(rows), 4), np.nan),
        )


class _Recorder:
    def __init__(self):
        self.rows = []

    def add(self, t, state: VehicleState, a, label, probs, payoffs):
        self.rows.append((t, state.id, state.x, state.y, state.v, a, label, probs, payoffs))

    def build(self, decisions, collisions) -> TrajectoryLog:
        if not self.rows:
            empty = np.zeros(0)
            return TrajectoryLog(empty, np.zeros(0, dtype=object), empty, empty, empty, empty,
                                 np.zeros(0, dtype=object), np.zeros((0, 4)), np.zeros((0, 4)),
                                 decisions, collisions)
        t, ids, x, y, v, a, label, probs, payoffs = zip(*self.rows)
        return TrajectoryLog(
            t=np.array(t), id=np.array(ids, dtype=object), x=np.array(x), y=np.array(y),
            v=np.array(v), a=np.array(a), decision=np.array(label, dtype=object),
            probs=np.array(probs, dtype=float), payoffs=np.array(payoffs, dtype=float),
            decisions=decisions, collisions=collisions,
        )


_NAN4 = (math.nan,) * 4


def run_scenario(config: ScenarioConfig) -> TrajectoryLog:
    """Simulate ``config`` and return the full trajectory log.

    Decisions are refreshed every ``dt_decision``; dynamics advance every
    ``dt_dyn`` with all vehicles updated from the same snapshot. A vehicle
    whose gap to its real leader becomes nonpositive is recorded as a
    collision and frozen in place; frozen vehicles are no longer leaders.
    """
    L = config.vehicle_length
    ramp = config.ramp
    dt = config.dt_dyn
    n_steps = int(round(config.duration / dt))
    every = config.decision_every

    specs = {v.state.id: v for v in config.vehicles}
    states = {vid: s.state for vid, s in specs.items()}
    execs = {vid: ExecutionState.initial(s.idm) for vid, s in specs.items()}
    players = [vid for vid, s in specs.items() if s.params is not None]
    rngs = {vid: actor_rng(config.seed, vid) for vid in players}
    current: dict = {vid: None for vid in players}
    ma_id = config.merger.state.id
    ma = config.merger.state
    ma_idm = config.merger.idm
    lc_start: Optional[float] = None
    frozen: set = set()
    decisions: list = []
    collisions: list = []
    rec = _Recorder()

    for n in range(n_steps):
        t = n * dt
        # leader lookup over main-lane vehicles (merger included once merged)
        main = [(s.x, vid) for vid, s in states.items() if vid not in frozen]
        if ma.lane is Lane.MAIN and ma_id not in frozen:
            main.append((ma.x, ma_id))
        main.sort()
        leader_of = {vid: (main[k + 1][1] if k + 1 < len(main) else None) for k, (_, vid) in enumerate(main)}

        def state_of(vid):
            return ma if vid == ma_id else states[vid]

        interacting = ma.lane is Lane.RAMP and ma_id not in frozen

        def world_for(vid) -> Optional[WorldState]:
            lag = states[vid]
            if not interacting or abs(ma.x - lag.x) > config.interaction_range:
                return None
            lead_id = leader_of.get(vid)
            return WorldState(t=t, lag=lag, ma=ma, ramp=ramp,
                              lead=None if lead_id is None else state_of(lead_id))

        worlds = {vid: world_for(vid) for vid in players if vid not in frozen}

        if n % every == 0:
            for vid in players:
                if vid in frozen:
                    continue
                world = worlds[vid]
                if world is None:
                    new = idle_decision(t)
                else:
                    new = decide(world, specs[vid].params, current[vid], rngs[vid], config.conditioning)
                if new is not current[vid]:
                    if world is not None:
                        decisions.append((vid, new))
                    current[vid] = new
            if config.ma_mode is MaMode.GAME_DRIVEN and lc_start is None and ma.lane is Lane.RAMP:
                own_lag = _merger_lag(ma, states, players, frozen, worlds)
                if (own_lag is not None and current[own_lag].ma_action is MaAction.CHANGE_LANES
                        and ma.x >= ramp.merge_zone_start_x):
                    lc_start = t
        if config.ma_mode is MaMode.SCRIPTED and lc_start is None and config.script.lane_change_at is not None:
            if t + 1e-9 >= config.script.lane_change_at:
                lc_start = t

        # accelerations from the snapshot
        accels = {}
        for vid, state in states.items():
            if vid in frozen:
                continue
            world = worlds.get(vid)
            lead_id = leader_of.get(vid)
            try:
                if world is not None:
                    ex = behavior_overrides(current[vid].lag_action, world, execs[vid], L)
                    execs[vid] = ex
                    accels[vid] = mr_idm_accel(world, ex, L)
                else:
                    if vid in current and current[vid] is not None:
                        execs[vid] = behavior_overrides(LagAction.DO_NOTHING, None, execs[vid], L)
                    p = execs[vid].active
                    if lead_id is None:
                        accels[vid] = idm_accel(state.v, math.inf, 0.0, p)
                    else:
                        lead = state_of(lead_id)
                        accels[vid] = idm_accel(state.v, lead.x - state.x - L, state.v - lead.v, p)
            except CollisionError:
                collisions.append({"t": t, "id": vid, "with": lead_id})
                log.warning("collision at t=%.2f: %s ran into %s", t, vid, lead_id)
                frozen.add(vid)
                states[vid] = replace(state, v=0.0, a=0.0)

        if ma_id not in frozen:
            if config.ma_mode is MaMode.SCRIPTED:
                ma_a = config.script.accel_at(t)
            else:
                ma_a = _merger_idm(ma, ma_idm, ramp, lc_start is not None, leader_of.get(ma_id), state_of, L)
        else:
            ma_a = 0.0

        # log the pre-step snapshot together with the realized acceleration
        new_states = {}
        for vid in states:
            s = states[vid]
            if vid in frozen:
                new_states[vid] = s
                rec.add(t, s, 0.0, "frozen", _NAN4, _NAN4)
                continue
            s_new = step_vehicle(s, accels[vid], dt)
            new_states[vid] = s_new
            d = current.get(vid)
            if d is None:
                rec.add(t, s, s_new.a, "", _NAN4, _NAN4)
            else:
                rec.add(t, s, s_new.a, d.lag_action.short, d.lag_probs, d.payoffs)
        if ma_id in frozen:
            ma_new = ma
            rec.add(t, ma, 0.0, "frozen", _NAN4, _NAN4)
        else:
            ma_new = step_vehicle(ma, ma_a, dt)
            if lc_start is not None and ma.y < 0:
                ma_new = _lateral_step(ma_new, ramp, t + dt - lc_start, config.lane_change_time)
            label = "change" if lc_start is not None else "keep"
            rec.add(t, ma, ma_new.a, label, _NAN4, _NAN4)
        states = new_states
        ma = ma_new

    return rec.build(decisions, collisions)


def _merger_lag(ma, states, players, frozen, worlds):
    """The game-playing main-lane vehicle closest behind (or beside) the merger."""
    best = None
    for vid in players:
        if vid in frozen or worlds.get(vid) is None:
            continue
        x = states[vid].x
        if x <= ma.x and (best is None or x > states[best].x):
            best = vid
    return best


def _merger_idm(ma, p, ramp, changing, leader_id, state_of, L) -> float:
    try:
        if ma.lane is Lane.RAMP and not changing:
            # the ramp end acts as a standing obstacle
            gap = ramp.ramp_end_x - ma.x
            if gap <= 0:
                return -EMERGENCY_DECEL
            return idm_accel(ma.v, gap, ma.v, p)
        if leader_id is None:
            return idm_accel(ma.v, math.inf, 0.0, p)
        lead = state_of(leader_id)
        return idm_accel(ma.v, lead.x - ma.x - L, ma.v - lead.v, p)
    except CollisionError:
        return -EMERGENCY_DECEL


def _lateral_step(ma: VehicleState, ramp: RampGeometry, elapsed: float, duration: float) -> VehicleState:
    frac = min(max(elapsed / duration, 0.0), 1.0)
    y = ramp.ramp_y * (1.0 - frac)
    lane = Lane.MAIN if y >= 0.5 * ramp.ramp_y else Lane.RAMP
    return replace(ma, y=y, lane=lane)


def _entropy(counts) -> float:
    total = sum(counts)
    if total == 0:
        return 0.0
    h = 0.0
    for c in counts:
        if c:
            p = c / total
            h -= p * math.log(p)
    return h


@dataclass(frozen=True)
class BetaSweepRow:
    beta: float
    iterations: int
    mode_counts: tuple
    decision_counts: tuple
    mode: LagAction
    mode_entropy: float
    decision_entropy: float


def run_mode_behavior(log_: TrajectoryLog, vehicle_id: str) -> Optional[LagAction]:
    """Most frequent freshly chosen behavior of one vehicle (ties to lower index)."""
    chosen = Counter(d.lag_action for d in log_.decisions_of(vehicle_id))
    if not chosen:
        return None
    return max(LagAction, key=lambda a: (chosen[a], -int(a)))


def sweep_beta(config: ScenarioConfig, betas, iterations: int, lag_id: Optional[str] = None) -> list:
    """Repeat ``config`` for each beta and tabulate the chosen behaviors.

    Replica ``k`` of every beta runs with seed ``config.seed + k``. For each
    beta the table reports how often each behavior was the run's mode and
    the pooled counts of all fresh decisions, with their entropies (nats).
    """
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    if lag_id is None:
        lag_id = next(v.state.id for v in config.vehicles if v.params is not None)
    rows = []
    for beta in betas:
        cfg = config.with_beta(float(beta))
        modes = Counter()
        pooled = Counter()
        for k in range(iterations):
            result = run_scenario(replace(cfg, seed=(config.seed + k) % 2**64))
            mode = run_mode_behavior(result, lag_id)
            if mode is not None:
                modes[mode] += 1
            pooled.update(d.lag_action for d in result.decisions_of(lag_id))
        mode_counts = tuple(modes[a] for a in LagAction)
        decision_counts = tuple(pooled[a] for a in LagAction)
        rows.append(BetaSweepRow(
            beta=float(beta),
            iterations=iterations,
            mode_counts=mode_counts,
            decision_counts=decision_counts,
            mode=max(LagAction, key=lambda a: (modes[a], -int(a))),
            mode_entropy=_entropy(mode_counts),
            decision_entropy=_entropy(decision_counts),
        ))
    return rows


def sweep_table_csv(rows, path=None) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    names = [a.short for a in LagAction]
    writer.writerow(["beta", "iterations", "mode"] + [f"mode_{n}" for n in names]
                    + [f"n_{n}" for n in names] + ["mode_entropy", "decision_entropy"])
    for r in rows:
        writer.writerow([repr(r.beta), r.iterations, r.mode.short, *r.mode_counts, *r.decision_counts,
                         repr(r.mode_entropy), repr(r.decision_entropy)])
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text)
    return text
