"""Synthetic merge events with a known parameter vector.

Each event is a short simulation of one game-playing lag, its leader and a
merger cruising on the ramp a little ahead of the lag. The recorded tracks
are cut out of the simulator log at 10 Hz and labeled with the same
smoothing and segmentation pipeline used for recorded data.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .core import Lane, ModelParams, RampGeometry, VehicleState
from .data import MergeEvent, build_observations, event_from_log, label_event
from .dynamics import VEHICLE_LENGTH, IdmParams
from .sim import MaMode, MergerScript, ScenarioConfig, VehicleSpec, run_scenario

LAG_IDM = IdmParams(v0=30.0, T=1.5, s0=2.0, a_max=1.5, b=2.0)
SAMPLE_STRIDE = 10
"""Simulator ticks per recorded sample (100 Hz dynamics, 10 Hz records)."""


@dataclass(frozen=True)
class EventRanges:
    """Sampling ranges of the random event geometry.

    ``merger_position`` is the merger's offset ahead of the lag as a fraction
    of the lag's bumper gap to its leader; negative values put it behind.
    """

    lag_speed: tuple = (16.0, 24.0)
    lag_headway: tuple = (1.8, 3.0)
    merger_position: tuple = (0.0, 0.9)
    merger_slower: tuple = (0.0, 2.0)
    duration: tuple = (10.0, 14.0)
    ramp_end_ahead: tuple = (250.0, 400.0)


def equilibrium_gap(v: float, p: IdmParams) -> float:
    """Bumper gap at which IDM holds speed ``v`` behind a leader at ``v``."""
    return (p.s0 + v * p.T) / math.sqrt(1.0 - (v / p.v0) ** p.delta)


def event_scenario(params: ModelParams, rng: np.random.Generator, lag_id: str = "lag",
                   ranges: EventRanges = EventRanges(), seed: int = 0) -> ScenarioConfig:
    v = rng.uniform(*ranges.lag_speed)
    idm = replace(LAG_IDM, T=rng.uniform(*ranges.lag_headway))
    gap = equilibrium_gap(v, idm)
    ma_x = rng.uniform(*ranges.merger_position) * gap
    ma_v = v - rng.uniform(*ranges.merger_slower)
    duration = round(rng.uniform(*ranges.duration), 1)
    ramp_end = max(ma_x, 0.0) + rng.uniform(*ranges.ramp_end_ahead)
    offset = 3.5
    return ScenarioConfig(
        ramp=RampGeometry(ramp_end_x=ramp_end, merge_zone_start_x=min(ma_x, ramp_end - 1.0), lane_offset=offset),
        vehicles=(
            VehicleSpec(VehicleState(lag_id, x=0.0, v=v), idm, params),
            VehicleSpec(VehicleState("lead", x=gap + VEHICLE_LENGTH, v=v), IdmParams(v0=v)),
        ),
        merger=VehicleSpec(VehicleState("ma", x=ma_x, y=-offset, v=ma_v, lane=Lane.RAMP), IdmParams(v0=ma_v)),
        ma_mode=MaMode.SCRIPTED,
        script=MergerScript(),
        duration=duration,
        seed=seed,
    )


def generate_events(params: ModelParams, n_events: int, seed: int, lag_ids=None,
                    ranges: EventRanges = EventRanges(), prefix: str = "ev") -> list:
    """Simulate ``n_events`` merge events driven by ``params``.

    ``lag_ids`` assigns a driver id to each event (default: one driver per
    event), which is what per-lag calibration groups on.
    """
    rng = np.random.default_rng(seed)
    events = []
    for k in range(n_events):
        event_id = f"{prefix}{k:04d}"
        lag_id = event_id if lag_ids is None else lag_ids[k]
        config = event_scenario(params, rng, lag_id="lag", ranges=ranges, seed=int(rng.integers(2**63)))
        log_ = run_scenario(config)
        ev = event_from_log(log_, event_id, "lag", "ma", "lead", ramp=config.ramp, stride=SAMPLE_STRIDE)
        events.append(MergeEvent(ev.event_id, "synthetic", ev.t, ev.lag, ev.ma, ev.lead, ev.ramp, lag_id))
    return events


def labeled_observations(events, rate: float = 1.0) -> tuple:
    """Label every event and build its observations; returns ``(labels, observations)``."""
    labels = {}
    observations = []
    for ev in events:
        epochs = label_event(ev)
        labels[ev.event_id] = epochs
        observations.extend(build_observations(ev, epochs, rate))
    return labels, observations
