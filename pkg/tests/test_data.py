import csv

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from merge_game.core import RampGeometry
from merge_game.data import (
    EVENT_COLUMNS,
    Behavior,
    LabeledEpoch,
    MergeEvent,
    SchemaError,
    Track,
    WindowTooShortError,
    build_observations,
    event_from_log,
    events_to_csv,
    label_event,
    load_events,
    read_labels,
    savgol_smooth,
    segment_behaviors,
    time_gap,
    window_samples,
    write_labels,
)
from merge_game.scenarios import SINGLE_LAG_PARAMS, single_lag_scenario
from merge_game.sim import run_scenario
from oracles import savgol_ref

DT = 0.1


def _write(path, rows, header=EVENT_COLUMNS):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def _rows(event_id, duration, lead=True):
    rows = []
    for k in range(int(round(duration / DT)) + 1):
        t = round(k * DT, 10)
        rows.append([event_id, "s1", t, "lag", 20 * t, 0.0, 20.0])
        rows.append([event_id, "s1", t, "ma", 30 + 19 * t, -3.5, 19.0])
        if lead:
            rows.append([event_id, "s1", t, "lead", 60 + 20 * t, 0.0, 20.0])
    return rows


def gap_event(gap, t=None, v=20.0, event_id="e"):
    """Event whose lag-to-lead time gap equals ``gap`` at every sample."""
    gap = np.asarray(gap, dtype=float)
    t = np.arange(len(gap)) * DT if t is None else t
    lag_x = v * t
    n = len(t)
    return MergeEvent(
        event_id=event_id, site_id="s", t=t,
        lag=Track(lag_x, np.zeros(n), np.full(n, v)),
        ma=Track(lag_x + 10.0, np.full(n, -3.5), np.full(n, v)),
        lead=Track(lag_x + gap * v, np.zeros(n), np.full(n, v)),
    )


def ramp_profile(rate, duration, start=2.0):
    t = np.arange(int(round(duration / DT)) + 1) * DT
    return start + rate * t, t


class TestLoad:
    def test_two_events(self, tmp_path):
        path = tmp_path / "d.csv"
        _write(path, _rows("a", 5.0) + _rows("b", 4.0, lead=False))
        events = load_events(path)
        assert [e.event_id for e in events] == ["a", "b"]
        assert events[1].lead is None
        assert events[0].duration == pytest.approx(5.0)

    def test_short_event_dropped(self, tmp_path):
        path = tmp_path / "d.csv"
        _write(path, _rows("a", 5.0) + _rows("short", 2.5))
        assert [e.event_id for e in load_events(path)] == ["a"]

    def test_missing_column(self, tmp_path):
        path = tmp_path / "d.csv"
        _write(path, [r[:-1] for r in _rows("a", 5.0)], header=EVENT_COLUMNS[:-1])
        with pytest.raises(SchemaError, match="'v'"):
            load_events(path)

    def test_bad_number_names_row(self, tmp_path):
        path = tmp_path / "d.csv"
        rows = _rows("a", 5.0)
        rows[4][4] = "oops"
        _write(path, rows)
        with pytest.raises(SchemaError, match="row 6, column 'x'"):
            load_events(path)

    def test_unknown_role(self, tmp_path):
        path = tmp_path / "d.csv"
        rows = _rows("a", 5.0)
        rows[0][3] = "truck"
        _write(path, rows)
        with pytest.raises(SchemaError):
            load_events(path)

    def test_nonuniform_sampling(self):
        t = np.array([0.0, 0.1, 0.3])
        tr = Track(np.zeros(3), np.zeros(3), np.zeros(3))
        with pytest.raises(ValueError):
            MergeEvent("e", "s", t, tr, tr)


class TestSmoothing:
    def test_window_samples(self):
        assert window_samples(2.0, 0.1) == 21
        assert window_samples(2.0, 0.04) == 51
        assert window_samples(1.0, 0.25) == 5
        with pytest.raises(WindowTooShortError):
            window_samples(0.2, 0.1)

    def test_noisy_sine_matches_reference(self):
        rng = np.random.default_rng(0)
        t = np.arange(0, 12, DT)
        y = np.sin(t) + rng.normal(0, 0.1, len(t))
        assert np.max(np.abs(savgol_smooth(y, DT) - savgol_ref(y, 21, 2))) <= 1e-9

    @given(coef=st.lists(st.floats(-3, 3), min_size=3, max_size=3), n=st.integers(21, 120))
    def test_reproduces_quadratics(self, coef, n):
        t = np.arange(n) * DT
        y = np.polyval(coef, t)
        assert np.allclose(savgol_smooth(y, DT), y, atol=1e-9)

    def test_short_series_uses_longest_window(self):
        y = np.linspace(0, 1, 8) ** 2
        assert np.allclose(savgol_smooth(y, DT), y, atol=1e-12)


class TestSegmentation:
    @pytest.mark.parametrize("rate,duration,label", [
        (0.0, 10.0, Behavior.DO_NOTHING),
        (0.15, 10.0, Behavior.GAP_OPENING),
        (-0.15, 10.0, Behavior.GAP_CLOSING),
        (0.05, 10.0, Behavior.DO_NOTHING),
        (-0.05, 10.0, Behavior.DO_NOTHING),
        (0.2, 3.0, Behavior.DO_NOTHING),
    ])
    def test_profiles(self, rate, duration, label):
        gap, t = ramp_profile(rate, duration)
        epochs = label_event(gap_event(gap, t))
        assert [e.label for e in epochs] == [label]

    def test_step_profile(self):
        t = np.arange(101) * DT
        gap = np.clip(2.0 + 0.3 * (t - 2.5), 2.0, 3.5)
        epochs = segment_behaviors(gap, t)
        assert [e.label for e in epochs] == [Behavior.DO_NOTHING, Behavior.GAP_OPENING, Behavior.DO_NOTHING]
        assert epochs[1].t_start == pytest.approx(2.5) and epochs[1].t_end == pytest.approx(7.5)

    def test_rate_threshold_alone(self):
        # total 1.5 s but spread over 25 s (0.06 s/s)
        gap, t = ramp_profile(0.06, 25.0)
        assert [e.label for e in segment_behaviors(gap, t)] == [Behavior.DO_NOTHING]

    @given(knots=st.lists(st.floats(1.0, 4.0), min_size=3, max_size=8), shift=st.floats(-1e3, 1e3))
    def test_partition_and_shift_invariance(self, knots, shift):
        t = np.arange(120) * DT
        gap = np.interp(t, np.linspace(0, t[-1], len(knots)), knots)
        epochs = segment_behaviors(gap, t)
        assert epochs[0].t_start == t[0]
        assert epochs[-1].t_end == pytest.approx(t[-1] + DT)
        assert all(a.t_end == b.t_start for a, b in zip(epochs, epochs[1:]))
        assert all(a.label is not b.label for a, b in zip(epochs, epochs[1:]))
        moved = segment_behaviors(gap, t + shift)
        assert [e.label for e in moved] == [e.label for e in epochs]
        assert [e.t_start - shift for e in moved] == pytest.approx([e.t_start for e in epochs], abs=1e-9)

    def test_epoch_half_open(self):
        e = LabeledEpoch(0.0, 1.0, "gap_opening")
        assert e.contains(0.0) and not e.contains(1.0)
        with pytest.raises(ValueError):
            LabeledEpoch(1.0, 1.0, "do_nothing")

    def test_time_gap_without_lead(self):
        t = np.arange(31) * DT
        lag = Track(20 * t, np.zeros(31), np.full(31, 20.0))
        y = np.where(t < 1.5, -3.5, 0.0)
        ev = MergeEvent("e", "s", t, lag, Track(20 * t + 30, y, np.full(31, 20.0)))
        g = time_gap(ev)
        assert np.all(np.isnan(g[t < 1.5])) and g[-1] == pytest.approx(1.5)


class TestObservations:
    def test_count_for_average_event(self):
        gap, t = ramp_profile(0.0, 7.2)
        ev = gap_event(gap, t)
        obs = build_observations(ev, label_event(ev))
        assert len(obs) == 7

    def test_inside_epochs(self):
        t = np.arange(101) * DT
        ev = gap_event(np.clip(2.0 + 0.3 * (t - 2.5), 2.0, 3.5), t)
        epochs = label_event(ev)
        for o in build_observations(ev, epochs, rate=2.0):
            (hit,) = [e for e in epochs if e.contains(o.world.t)]
            assert hit.label == o.label and hit.t_start < o.world.t < hit.t_end

    def test_absent_lead_propagates(self):
        t = np.arange(51) * DT
        tr = Track(20 * t, np.zeros(51), np.full(51, 20.0))
        ev = MergeEvent("e", "s", t, tr, Track(20 * t + 10, np.full(51, -3.5), np.full(51, 20.0)))
        obs = build_observations(ev, [LabeledEpoch(0.0, 5.1, "do_nothing")])
        assert obs and all(o.world.lead is None for o in obs)

    def test_uncovered_time(self):
        gap, t = ramp_profile(0.0, 5.0)
        with pytest.raises(ValueError):
            build_observations(gap_event(gap, t), [LabeledEpoch(0.0, 1.0, "do_nothing")])


class TestRoundTrip:
    def test_log_to_file_to_events(self, tmp_path):
        cfg = single_lag_scenario(SINGLE_LAG_PARAMS["yield_behind"], duration=6.0)
        res = run_scenario(cfg)
        ev = event_from_log(res, "merge01", "lag", "ma", "lead", ramp=cfg.ramp, stride=10)
        path = tmp_path / "ev.csv"
        events_to_csv([ev], path)
        (back,) = load_events(path)
        assert np.array_equal(back.t, ev.t)
        for role in ("lag", "ma", "lead"):
            for col in ("x", "y", "v"):
                assert np.array_equal(getattr(getattr(back, role), col), getattr(getattr(ev, role), col))
        assert back.ramp == cfg.ramp and back.lag_id == "lag"
        assert np.array_equal(ev.lag.x, res.select("lag")["x"][::10])

    def test_labels_round_trip(self, tmp_path):
        labels = {"a": [LabeledEpoch(0.0, 2.5, "do_nothing"), LabeledEpoch(2.5, 7.0, "gap_closing")]}
        path = tmp_path / "l.csv"
        write_labels(labels, path)
        assert read_labels(path) == labels

    def test_ramp_fallback(self, tmp_path):
        path = tmp_path / "d.csv"
        _write(path, _rows("a", 5.0))
        ramp = RampGeometry(ramp_end_x=123.0, merge_zone_start_x=10.0)
        assert load_events(path, ramp=ramp)[0].ramp == ramp
