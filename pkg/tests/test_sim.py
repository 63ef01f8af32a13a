import math
from dataclasses import replace

import numpy as np
import pytest

from merge_game.core import Lane, LagAction, ModelParams, RampGeometry, VehicleState
from merge_game.dynamics import IdmParams, idm_accel, step_vehicle
from merge_game.scenarios import SINGLE_LAG_PARAMS, single_lag_scenario, highway_scenario
from merge_game.sim import (
    LOG_COLUMNS,
    MaMode,
    MergerScript,
    ScenarioConfig,
    TrajectoryLog,
    VehicleSpec,
    dump_config,
    load_config,
    run_scenario,
    sweep_beta,
    sweep_table_csv,
)

IDM = IdmParams(v0=30.0, T=1.5, s0=2.0, a_max=1.5, b=2.0)


def lone_lag(duration=10.0):
    # the merger sits far behind, outside the interaction range
    return ScenarioConfig(
        ramp=RampGeometry(ramp_end_x=5000.0, merge_zone_start_x=0.0),
        vehicles=(VehicleSpec(VehicleState("lag", 0.0, 0.0, 20.0), IDM, ModelParams()),),
        merger=VehicleSpec(VehicleState("ma", -2000.0, -3.5, 10.0, lane=Lane.RAMP)),
        duration=duration,
        seed=1,
    )


class TestRun:
    def test_no_merger_is_plain_idm(self):
        res = run_scenario(lone_lag())
        lag = res.select("lag")
        assert set(lag["decision"]) == {"dn"}
        assert res.decisions_of("lag") == []
        s = VehicleState("lag", 0.0, 0.0, 20.0)
        xs = []
        for _ in range(len(lag["t"])):
            xs.append(s.x)
            s = step_vehicle(s, idm_accel(s.v, math.inf, 0.0, IDM), 0.01)
        assert np.array_equal(lag["x"], xs)

    def test_deterministic(self):
        cfg = single_lag_scenario(SINGLE_LAG_PARAMS["yield_behind"], seed=3, duration=5.0)
        assert run_scenario(cfg).to_csv() == run_scenario(cfg).to_csv()

    def test_seed_matters_for_noisy_params(self):
        p = replace(SINGLE_LAG_PARAMS["block"], beta=5.0)
        a = run_scenario(single_lag_scenario(p, seed=1, duration=5.0)).to_csv()
        b = run_scenario(single_lag_scenario(p, seed=2, duration=5.0)).to_csv()
        assert a != b

    def test_no_teleport(self):
        res = run_scenario(highway_scenario(n_vehicles=8, seed=0, duration=8.0))
        dt = 0.01
        for vid in res.ids():
            tr = res.select(vid)
            bound = tr["v"].max() * dt + 0.5 * 1.5 * dt ** 2 + 1e-12
            assert np.all(np.abs(np.diff(tr["x"])) <= bound)
            assert np.all(np.diff(tr["t"]) > 0)

    def test_decisions_constant_in_hold_windows(self):
        p = replace(SINGLE_LAG_PARAMS["block"], beta=1.0, t_window=1.0, sigma=0.2)
        res = run_scenario(single_lag_scenario(p, seed=4, duration=10.0))
        lag = res.select("lag")
        made = res.decisions_of("lag")
        assert len(made) > 3
        for d, nxt in zip(made, made[1:] + [None]):
            end = lag["t"][-1] + 1 if nxt is None else nxt.t
            inside = (lag["t"] >= d.t) & (lag["t"] < end)
            assert set(lag["decision"][inside]) == {d.lag_action.short}
            assert nxt is None or nxt.t >= d.hold_until - 1e-9

    def test_speeds_and_accels_bounded(self):
        res = run_scenario(highway_scenario(n_vehicles=10, seed=2, duration=10.0))
        assert np.all(res.v >= 0)
        assert np.all(res.a >= -9.0 - 1e-9) and np.all(res.a <= 1.5 + 1e-9)

    def test_yield_behind_never_rear_ends_merger(self):
        cfg = single_lag_scenario(SINGLE_LAG_PARAMS["yield_behind"], seed=0)
        cfg = replace(cfg, script=MergerScript(accel=((0.0, 0.0), (2.0, -1.0), (6.0, 0.0))))
        res = run_scenario(cfg)
        assert not res.collisions
        lag, ma = res.select("lag"), res.select("ma")
        assert np.all(ma["x"] - lag["x"] > 5.0)

    def test_collision_freezes_offender(self):
        cfg = ScenarioConfig(
            ramp=RampGeometry(ramp_end_x=5000.0, merge_zone_start_x=0.0),
            vehicles=(
                VehicleSpec(VehicleState("lag", 0.0, 0.0, 30.0), IDM, ModelParams()),
                VehicleSpec(VehicleState("wall", 7.0, 0.0, 0.0), IdmParams(v0=0.1)),
            ),
            merger=VehicleSpec(VehicleState("ma", -2000.0, -3.5, 10.0, lane=Lane.RAMP)),
            duration=2.0,
        )
        res = run_scenario(cfg)
        assert res.collisions and res.collisions[0]["id"] == "lag"
        assert "frozen" in set(res.select("lag")["decision"])

    def test_game_driven_merger_changes_lanes(self):
        res = run_scenario(highway_scenario(n_vehicles=6, seed=0, duration=20.0))
        ma = res.select("ma")
        assert ma["y"][-1] == pytest.approx(0.0)


class TestConfig:
    def test_yaml_round_trip(self, tmp_path):
        cfg = highway_scenario(n_vehicles=4, seed=9)
        path = tmp_path / "c.yaml"
        path.write_text(dump_config(cfg))
        assert load_config(path) == cfg

    def test_unknown_key(self):
        d = lone_lag().to_dict()
        d["bogus"] = 1
        with pytest.raises(ValueError):
            ScenarioConfig.from_dict(d)

    def test_decision_step_multiple(self):
        with pytest.raises(ValueError):
            replace(lone_lag(), dt_decision=0.015)

    def test_needs_a_lag(self):
        with pytest.raises(ValueError):
            ScenarioConfig(RampGeometry(), (VehicleSpec(VehicleState("a", 0.0)),),
                           VehicleSpec(VehicleState("ma", 0.0, -3.5, lane=Lane.RAMP)))

    def test_modes(self):
        assert replace(lone_lag(), ma_mode="game_driven").ma_mode is MaMode.GAME_DRIVEN


class TestLogIO:
    def test_csv_round_trip(self, tmp_path):
        res = run_scenario(single_lag_scenario(SINGLE_LAG_PARAMS["block"], duration=2.0))
        path = tmp_path / "t.csv"
        res.to_csv(path)
        back = TrajectoryLog.read_csv(path)
        assert path.read_text().splitlines()[0].split(",") == list(LOG_COLUMNS)
        for col in ("t", "x", "y", "v", "a"):
            assert np.array_equal(getattr(back, col), getattr(res, col))
        assert back.to_csv() == res.to_csv()


class TestSweep:
    def test_empty(self):
        assert sweep_beta(single_lag_scenario(SINGLE_LAG_PARAMS["block"], duration=2.0), [], 3) == []

    def test_iterations_validated(self):
        with pytest.raises(ValueError):
            sweep_beta(single_lag_scenario(SINGLE_LAG_PARAMS["block"]), [0.1], 0)

    def test_tiny_beta_single_mode(self):
        cfg = single_lag_scenario(SINGLE_LAG_PARAMS["block"], duration=3.0)
        (row,) = sweep_beta(cfg, [0.001], 50)
        assert max(row.mode_counts) == 50

    def test_huge_beta_near_uniform(self):
        cfg = single_lag_scenario(replace(SINGLE_LAG_PARAMS["block"], t_window=0.2), duration=10.0)
        (row,) = sweep_beta(cfg, [1e6], 20)
        share = np.array(row.decision_counts) / sum(row.decision_counts)
        # about 1000 pooled draws: 4 standard errors is roughly 0.055
        assert np.all(np.abs(share - 0.25) < 0.06)

    def test_table(self):
        rows = sweep_beta(single_lag_scenario(SINGLE_LAG_PARAMS["block"], duration=2.0), [0.01, 1.0], 2)
        text = sweep_table_csv(rows)
        assert text.splitlines()[0].startswith("beta,iterations,mode")
        assert len(text.splitlines()) == 3
        assert rows[0].mode is LagAction.BLOCK
