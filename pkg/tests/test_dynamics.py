import math

import pytest
from hypothesis import given
from hypothesis import strategies as st

from merge_game.core import LagAction, Lane, VehicleState, WorldState
from merge_game.dynamics import (
    EMERGENCY_DECEL,
    CollisionError,
    ExecutionState,
    IdmParams,
    behavior_overrides,
    idm_accel,
    mr_idm_accel,
    step_vehicle,
)
from oracles import idm_ref

P = IdmParams(v0=30.0, T=1.5, s0=2.0, a_max=1.5, b=2.0)


def world(lag_v=25.0, ma_x=40.0, ma_v=20.0, lead_x=100.0, lead_v=25.0):
    return WorldState(
        t=0.0,
        lag=VehicleState("lag", 0.0, 0.0, lag_v),
        ma=VehicleState("ma", ma_x, -3.5, ma_v, lane=Lane.RAMP),
        lead=None if lead_x is None else VehicleState("lead", lead_x, 0.0, lead_v),
    )


class TestIdm:
    def test_free_road_equilibrium(self):
        assert idm_accel(30.0, math.inf, 0.0, P) == 0.0

    def test_standstill_free_road(self):
        assert idm_accel(0.0, math.inf, 0.0, P) == P.a_max

    def test_standstill_spacing(self):
        assert idm_accel(0.0, P.s0, 0.0, P) == pytest.approx(0.0, abs=1e-15)

    @given(v=st.floats(0, 40), gap=st.floats(5, 300), dv=st.floats(-5, 5))
    def test_matches_textbook(self, v, gap, dv):
        want = min(max(idm_ref(v, gap, dv, 30.0, 1.5, 2.0, 1.5, 2.0), -EMERGENCY_DECEL), 1.5)
        assert idm_accel(v, gap, dv, P) == pytest.approx(want, rel=1e-12, abs=1e-12)

    @given(v=st.floats(0, 60), gap=st.floats(0.01, 1e4), dv=st.floats(-30, 30))
    def test_clamped(self, v, gap, dv):
        assert -EMERGENCY_DECEL <= idm_accel(v, gap, dv, P) <= P.a_max

    def test_collision(self):
        with pytest.raises(CollisionError):
            idm_accel(10.0, 0.0, 0.0, P)

    def test_desired_gap_is_steady_state(self):
        # at constant speed behind an equally fast leader, the pinned spacing is an equilibrium
        v, s = 20.0, 12.0
        assert idm_accel(v, s, 0.0, P, desired_gap=s) == pytest.approx(0.0, abs=1e-12)

    def test_params_validated(self):
        with pytest.raises(ValueError):
            IdmParams(T=0.0)


class TestOverrides:
    def test_do_nothing_default_is_base(self):
        ex = behavior_overrides(LagAction.DO_NOTHING, world(), ExecutionState.initial(P))
        assert ex.active == P and ex.target_gap_override is None

    def test_yield_ahead_boost_capped(self):
        ex = behavior_overrides(LagAction.YIELD_AHEAD, world(lead_x=400.0), ExecutionState.initial(P))
        assert P.v0 < ex.active.v0 <= P.v0 + 5.0
        assert ex.active.T == 0.5 * P.T and ex.active.s0 == 0.5 * P.s0

    def test_block_targets_merger_to_leader(self):
        w = world(ma_x=90.0, lead_x=100.0)
        ex = behavior_overrides(LagAction.BLOCK, w, ExecutionState.initial(P), length=0.0)
        assert ex.target_gap_override == pytest.approx(10.0)
        # with vehicle length the target is the bumper gap
        ex = behavior_overrides(LagAction.BLOCK, w, ExecutionState.initial(P))
        assert ex.target_gap_override == pytest.approx(5.0)

    def test_yield_ahead_halves(self):
        w = world(ma_x=40.0, lead_x=100.0)
        ex = behavior_overrides(LagAction.YIELD_AHEAD, w, ExecutionState.initial(P), length=0.0)
        assert ex.target_gap_override == pytest.approx(30.0)

    def test_do_nothing_preserves_previous(self):
        ex = behavior_overrides(LagAction.BLOCK, world(), ExecutionState.initial(P))
        kept = behavior_overrides(LagAction.DO_NOTHING, world(), ex)
        assert kept.active == ex.active

    def test_yield_behind_restores_base(self):
        ex = behavior_overrides(LagAction.BLOCK, world(), ExecutionState.initial(P))
        assert behavior_overrides(LagAction.YIELD_BEHIND, world(), ex).active == P

    @pytest.mark.parametrize("action", list(LagAction))
    def test_idempotent(self, action):
        once = behavior_overrides(action, world(), ExecutionState.initial(P))
        assert behavior_overrides(action, world(), once) == once


class TestMrIdm:
    def test_yield_behind_far_merger(self):
        w = world(ma_x=90.0, ma_v=30.0, lead_x=40.0, lead_v=15.0)
        ex = behavior_overrides(LagAction.YIELD_BEHIND, w, ExecutionState.initial(P))
        assert mr_idm_accel(w, ex) == idm_accel(25.0, 35.0, 10.0, P)

    def test_yield_behind_close_merger(self):
        w = world(ma_x=10.0, ma_v=20.0, lead_x=200.0)
        ex = behavior_overrides(LagAction.YIELD_BEHIND, w, ExecutionState.initial(P))
        assert mr_idm_accel(w, ex) == idm_accel(25.0, 5.0, 5.0, P)

    def test_do_nothing_free_road(self):
        w = world(lag_v=30.0, lead_x=None)
        assert mr_idm_accel(w, ExecutionState.initial(P)) == 0.0

    def test_do_nothing_ignores_merger(self):
        w = world(ma_x=8.0)
        assert mr_idm_accel(w, ExecutionState.initial(P)) == idm_accel(25.0, 95.0, 0.0, P)


class TestStep:
    def test_constant_speed(self):
        s = step_vehicle(VehicleState("a", 0.0, v=20.0), 0.0, 0.1)
        assert s.x == pytest.approx(2.0)

    def test_no_reversing(self):
        s = step_vehicle(VehicleState("a", 0.0, v=0.05), -2.0, 0.1)
        assert s.v == 0.0 and s.x == 0.0

    def test_integration(self):
        s = step_vehicle(VehicleState("a", 0.0, v=10.0), 1.0, 0.1)
        assert s.v == pytest.approx(10.1) and s.x == pytest.approx(1.01)

    def test_bad_dt(self):
        with pytest.raises(ValueError):
            step_vehicle(VehicleState("a", 0.0, v=1.0), 0.0, 0.0)
