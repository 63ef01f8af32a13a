"""Recorded merge events: loading, smoothing, behavior labeling, observations.

Trajectory files hold one row per (event, time, actor) with columns
``event_id, site_id, t, actor_role, x, y, v``. Ramp geometry can ride along
in optional ``ramp_end_x, merge_zone_start_x, lane_offset`` columns;
otherwise a default geometry is supplied by the caller. An optional
``lag_id`` column names the lag driver, so one driver can own several events.
"""

from __future__ import annotations

import csv
import enum
import io
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.signal import savgol_filter

from .core import Lane, RampGeometry, VehicleState, WorldState
from .payoff import V_MIN

log = logging.getLogger(__name__)

EVENT_COLUMNS = ("event_id", "site_id", "t", "actor_role", "x", "y", "v")
RAMP_COLUMNS = ("ramp_end_x", "merge_zone_start_x", "lane_offset")
LAG_ID_COLUMN = "lag_id"
LABEL_COLUMNS = ("event_id", "t_start", "t_end", "label")

MIN_EVENT_DURATION = 3.0
"""Events shorter than this (s) are dropped at load time."""

SMOOTH_WINDOW = 2.0
SMOOTH_ORDER = 2
MIN_RATE = 0.08
"""Smallest average time-gap rate (s/s) of a labeled gap trend."""
MIN_TOTAL = 1.0
"""Smallest total time-gap change (s) of a labeled gap trend."""

_ROLES = ("lag", "ma", "lead")


class SchemaError(ValueError):
    """Malformed trajectory or label file."""


class WindowTooShortError(ValueError):
    """Smoothing window covers too few samples for the polynomial order."""


class Behavior(str, enum.Enum):
    DO_NOTHING = "do_nothing"
    GAP_OPENING = "gap_opening"
    GAP_CLOSING = "gap_closing"


@dataclass(frozen=True)
class Track:
    """Sampled longitudinal/lateral position and speed of one actor."""

    x: np.ndarray
    y: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        arrays = [np.array(getattr(self, k), dtype=float) for k in ("x", "y", "v")]
        if len({a.shape for a in arrays}) != 1 or arrays[0].ndim != 1:
            raise ValueError("track columns must be 1-D and equally long")
        for name, a in zip(("x", "y", "v"), arrays):
            if not np.all(np.isfinite(a)):
                raise ValueError(f"track column {name} has non-finite values")
            a.flags.writeable = False
            object.__setattr__(self, name, a)

    def at(self, t_grid: np.ndarray, t: float) -> tuple:
        return tuple(float(np.interp(t, t_grid, a)) for a in (self.x, self.y, self.v))


@dataclass(frozen=True)
class MergeEvent:
    event_id: str
    site_id: str
    t: np.ndarray
    lag: Track
    ma: Track
    lead: Optional[Track] = None
    ramp: RampGeometry = RampGeometry()
    lag_id: Optional[str] = None

    def __post_init__(self):
        t = np.array(self.t, dtype=float)
        if t.ndim != 1 or len(t) < 2:
            raise ValueError(f"event {self.event_id}: need at least two samples")
        steps = np.diff(t)
        if np.any(steps <= 0) or np.ptp(steps) > 1e-6 * max(1.0, abs(steps[0])):
            raise ValueError(f"event {self.event_id}: sampling must be uniform and increasing")
        t.flags.writeable = False
        object.__setattr__(self, "t", t)
        for role in _ROLES:
            track = getattr(self, role)
            if track is not None and len(track.x) != len(t):
                raise ValueError(f"event {self.event_id}: {role} track length differs from time axis")
        if self.lag_id is None:
            object.__setattr__(self, "lag_id", self.event_id)

    @property
    def dt(self) -> float:
        return float(self.t[1] - self.t[0])

    @property
    def duration(self) -> float:
        return float(self.t[-1] - self.t[0])


@dataclass(frozen=True)
class LabeledEpoch:
    """Half-open interval ``[t_start, t_end)`` carrying one behavior label."""

    t_start: float
    t_end: float
    label: Behavior

    def __post_init__(self):
        if not self.t_end > self.t_start:
            raise ValueError("epoch must have positive length")
        object.__setattr__(self, "label", Behavior(self.label))

    def contains(self, t: float) -> bool:
        return self.t_start <= t < self.t_end


@dataclass(frozen=True)
class Observation:
    world: WorldState
    label: Behavior
    event_id: str = ""
    lag_id: str = ""


# -- file IO -----------------------------------------------------------


def _float(row: dict, col: str, lineno: int) -> float:
    try:
        value = float(row[col])
    except (TypeError, ValueError):
        raise SchemaError(f"row {lineno}, column {col!r}: not a number ({row[col]!r})") from None
    if not math.isfinite(value):
        raise SchemaError(f"row {lineno}, column {col!r}: non-finite value")
    return value


def load_events(path, ramp: Optional[RampGeometry] = None,
                min_duration: float = MIN_EVENT_DURATION) -> list:
    """Read every merge event of a trajectory file.

    Events shorter than ``min_duration`` are skipped with a log message.
    ``ramp`` is used for events whose rows carry no ramp columns.
    """
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        for col in EVENT_COLUMNS:
            if col not in header:
                raise SchemaError(f"missing required column {col!r}")
        has_ramp = all(c in header for c in RAMP_COLUMNS)
        grouped: dict = {}
        for lineno, row in enumerate(reader, start=2):
            role = row["actor_role"]
            if role not in _ROLES:
                raise SchemaError(f"row {lineno}, column 'actor_role': unknown role {role!r}")
            ev = grouped.setdefault(row["event_id"], {"site": row["site_id"], "rows": {r: [] for r in _ROLES},
                                                      "ramp": None, "lag_id": row.get(LAG_ID_COLUMN) or None})
            ev["rows"][role].append(tuple(_float(row, c, lineno) for c in ("t", "x", "y", "v")))
            if has_ramp and ev["ramp"] is None:
                ev["ramp"] = tuple(_float(row, c, lineno) for c in RAMP_COLUMNS)

    events = []
    for event_id, ev in grouped.items():
        rows = ev["rows"]
        for role in ("lag", "ma"):
            if not rows[role]:
                raise SchemaError(f"event {event_id!r} has no {role} rows")
        lag = np.array(sorted(rows["lag"]))
        t = lag[:, 0]

        def track(role):
            data = np.array(sorted(rows[role]))
            if len(data) != len(t) or np.any(np.abs(data[:, 0] - t) > 1e-9):
                raise SchemaError(f"event {event_id!r}: {role} samples are not aligned with lag samples")
            return Track(data[:, 1], data[:, 2], data[:, 3])

        geometry = ramp or RampGeometry()
        if ev["ramp"] is not None:
            geometry = RampGeometry(*ev["ramp"])
        event = MergeEvent(
            event_id=event_id, site_id=ev["site"], t=t, lag=track("lag"), ma=track("ma"),
            lead=track("lead") if rows["lead"] else None, ramp=geometry, lag_id=ev["lag_id"],
        )
        if event.duration < min_duration - 1e-9:
            log.info("dropping event %s: %.2f s is shorter than %.2f s", event_id, event.duration, min_duration)
            continue
        events.append(event)
    return events


def events_to_csv(events, path=None) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(EVENT_COLUMNS + RAMP_COLUMNS + (LAG_ID_COLUMN,))
    for ev in events:
        geometry = [repr(ev.ramp.ramp_end_x), repr(ev.ramp.merge_zone_start_x), repr(ev.ramp.lane_offset)]
        for role in _ROLES:
            track = getattr(ev, role)
            if track is None:
                continue
            for k in range(len(ev.t)):
                writer.writerow([ev.event_id, ev.site_id, repr(float(ev.t[k])), role,
                                 repr(float(track.x[k])), repr(float(track.y[k])), repr(float(track.v[k]))]
                                + geometry + [ev.lag_id])
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text)
    return text


def event_from_log(log_, event_id: str, lag_id: str, ma_id: str, lead_id: Optional[str] = None,
                   ramp: RampGeometry = RampGeometry(), site_id: str = "sim",
                   stride: int = 1) -> MergeEvent:
    """Cut a merge event out of a simulator trajectory log."""
    def track(vid):
        rows = log_.select(vid)
        return rows["t"][::stride], Track(rows["x"][::stride], rows["y"][::stride], rows["v"][::stride])

    t, lag = track(lag_id)
    _, ma = track(ma_id)
    lead = None if lead_id is None else track(lead_id)[1]
    return MergeEvent(event_id=event_id, site_id=site_id, t=t, lag=lag, ma=ma, lead=lead, ramp=ramp,
                      lag_id=lag_id)


def write_labels(labels: dict, path=None) -> str:
    """Write ``{event_id: [LabeledEpoch, ...]}`` as a label file."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(LABEL_COLUMNS)
    for event_id, epochs in labels.items():
        for e in epochs:
            writer.writerow([event_id, repr(e.t_start), repr(e.t_end), e.label.value])
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text)
    return text


def read_labels(path) -> dict:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        for col in LABEL_COLUMNS:
            if col not in (reader.fieldnames or []):
                raise SchemaError(f"missing required column {col!r}")
        labels: dict = {}
        for lineno, row in enumerate(reader, start=2):
            try:
                label = Behavior(row["label"])
            except ValueError:
                raise SchemaError(f"row {lineno}, column 'label': unknown label {row['label']!r}") from None
            labels.setdefault(row["event_id"], []).append(
                LabeledEpoch(_float(row, "t_start", lineno), _float(row, "t_end", lineno), label))
    return labels


# -- smoothing and labeling --------------------------------------------


def window_samples(window: float, dt: float, order: int = SMOOTH_ORDER) -> int:
    """Odd sample count spanned by a ``window``-second smoothing window."""
    n = int(round(window / dt))
    if n % 2 == 0:
        n += 1
    if n < order + 2:
        raise WindowTooShortError(f"{window} s at dt={dt} s gives {n} samples; order {order} needs {order + 2}")
    return n


def savgol_smooth(series, dt: float, window: float = SMOOTH_WINDOW, order: int = SMOOTH_ORDER) -> np.ndarray:
    """Savitzky-Golay smoothing with a window given in seconds.

    Interior samples get the centered least-squares fit; the first and last
    half-windows are evaluated on a single polynomial fitted to the first
    (last) full window. A series shorter than the window is fitted with the
    longest odd window it can hold.
    """
    y = np.asarray(series, dtype=float)
    n = window_samples(window, dt, order)
    if len(y) < n:
        n = len(y) if len(y) % 2 else len(y) - 1
        if n < order + 2:
            raise WindowTooShortError(f"series of {len(y)} samples is too short for order {order}")
    return savgol_filter(y, n, order, mode="interp")


def time_gap(event: MergeEvent) -> np.ndarray:
    """Lag-to-leader time gap (s), center to center.

    Without a lead vehicle the merger serves as the leader once it is past
    the lane boundary; samples before that are NaN.
    """
    v = np.maximum(event.lag.v, V_MIN)
    if event.lead is not None:
        return (event.lead.x - event.lag.x) / v
    merged = event.ma.y >= 0.5 * event.ramp.ramp_y
    gap = (event.ma.x - event.lag.x) / v
    return np.where(merged & (gap > 0), gap, np.nan)


def _monotone_runs(g: np.ndarray) -> list:
    """Maximal (start, end, direction) runs of a monotone trend.

    A single sample moving against the trend is tolerated when the next one
    resumes it past the running extreme; the run then ends at its extreme.
    """
    runs = []
    n = len(g)
    i = 0
    while i < n - 1:
        step = g[i + 1] - g[i]
        if step == 0 or not np.isfinite(step):
            i += 1
            continue
        sign = 1.0 if step > 0 else -1.0
        best = i + 1
        j = i + 1
        while j < n - 1:
            nxt = sign * (g[j + 1] - g[best])
            if not np.isfinite(nxt):
                break
            if nxt >= 0:
                j += 1
                if sign * (g[j] - g[best]) > 0:
                    best = j
                continue
            # one contrary sample: keep going only if the following one recovers the extreme
            if j + 2 < n and np.isfinite(g[j + 2]) and sign * (g[j + 2] - g[best]) >= 0:
                j += 2
                best = j
                continue
            break
        runs.append((i, best, sign))
        i = best
    return runs


def _longest_qualifying(g: np.ndarray, t: np.ndarray, a: int, b: int, sign: float):
    """Longest sub-interval of a run meeting both trend thresholds, or None."""
    seg = sign * g[a:b + 1]
    dt = t[1] - t[0]
    for length in range(b - a, 0, -1):
        total = seg[length:] - seg[:-length]
        ok = np.flatnonzero((total >= MIN_TOTAL) & (total >= MIN_RATE * length * dt))
        if len(ok):
            return a + int(ok[0]), a + int(ok[0]) + length
    return None


def segment_behaviors(gap, t) -> list:
    """Split a time-gap series into gap-opening, gap-closing and do-nothing epochs.

    Trend epochs are the longest stretches of each monotone run whose average
    rate and total change both clear the thresholds. Epochs are half-open and
    tile ``[t[0], t[-1] + dt)``; adjacent epochs with the same label are merged.
    """
    g = np.asarray(gap, dtype=float)
    t = np.asarray(t, dtype=float)
    if len(g) != len(t) or len(t) < 2:
        raise ValueError("gap and t must be equally long with at least two samples")
    dt = t[1] - t[0]
    labels = [Behavior.DO_NOTHING] * (len(t) - 1)  # label of interval [t_k, t_k+1)
    for a, b, sign in _monotone_runs(g):
        hit = _longest_qualifying(g, t, a, b, sign)
        if hit is None:
            continue
        kind = Behavior.GAP_OPENING if sign > 0 else Behavior.GAP_CLOSING
        for k in range(hit[0], hit[1]):
            labels[k] = kind
    labels.append(labels[-1])  # the final sample's interval continues the last trend
    edges = np.append(t, t[-1] + dt)
    epochs = []
    start = 0
    for k in range(1, len(labels) + 1):
        if k == len(labels) or labels[k] is not labels[start]:
            epochs.append(LabeledEpoch(float(edges[start]), float(edges[k]), labels[start]))
            start = k
    return epochs


def label_event(event: MergeEvent, window: float = SMOOTH_WINDOW, order: int = SMOOTH_ORDER) -> list:
    """Smooth the event's time gap and segment it into labeled epochs."""
    gap = time_gap(event)
    finite = np.isfinite(gap)
    smooth = np.full_like(gap, np.nan)
    # smooth each finite stretch separately
    k = 0
    while k < len(gap):
        if not finite[k]:
            k += 1
            continue
        e = k
        while e < len(gap) and finite[e]:
            e += 1
        try:
            smooth[k:e] = savgol_smooth(gap[k:e], event.dt, window, order)
        except WindowTooShortError:
            pass
        k = e
    return segment_behaviors(smooth, event.t)


def build_observations(event: MergeEvent, epochs, rate: float = 1.0) -> list:
    """Game snapshots at ``t0 + (k + 1/2) / rate`` paired with their epoch label."""
    if rate <= 0:
        raise ValueError("rate must be > 0")
    n = int(math.floor(event.duration * rate + 1e-9))
    obs = []
    t0 = float(event.t[0])
    ramp_y = event.ramp.ramp_y
    for k in range(n):
        t = t0 + (k + 0.5) / rate
        label = next((e.label for e in epochs if e.contains(t)), None)
        if label is None:
            raise ValueError(f"epochs do not cover t={t}")
        lx, ly, lv = event.lag.at(event.t, t)
        mx, my, mv = event.ma.at(event.t, t)
        lag = VehicleState(event.lag_id, lx, ly, lv, lane=Lane.MAIN)
        ma = VehicleState("ma", mx, my, mv, lane=Lane.MAIN if my >= 0.5 * ramp_y else Lane.RAMP)
        lead = None
        if event.lead is not None:
            x, y, v = event.lead.at(event.t, t)
            if x > lx:
                lead = VehicleState("lead", x, y, v, lane=Lane.MAIN)
        world = WorldState(t=t, lag=lag, ma=ma, ramp=event.ramp, lead=lead)
        obs.append(Observation(world, label, event.event_id, event.lag_id))
    return obs
