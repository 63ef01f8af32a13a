import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from merge_game.core import (
    Lane,
    LagAction,
    MissingActorError,
    ModelParams,
    RampGeometry,
    Role,
    VehicleState,
    WorldState,
    relative_state,
)

finite = st.floats(-1e4, 1e4, allow_nan=False)
speed = st.floats(0, 60, allow_nan=False)


def _world(lag_x=0.0, ma_x=30.0, lead_x=None, **kw):
    lead = None if lead_x is None else VehicleState("lead", lead_x, 0.0, 25.0)
    return WorldState(
        t=0.0,
        lag=VehicleState("lag", lag_x, 0.0, kw.get("lag_v", 25.0)),
        ma=VehicleState("ma", ma_x, -3.5, kw.get("ma_v", 20.0), lane=Lane.RAMP),
        lead=lead,
    )


class TestRelativeState:
    def test_example(self):
        w = _world(lag_x=10.0, ma_x=40.0)
        assert relative_state(w, Role.LAG, Role.MA) == (30.0, -5.0, 3.5)

    @given(x1=finite, x2=finite, v1=speed, v2=speed, y1=finite, y2=finite)
    def test_antisymmetric(self, x1, x2, v1, v2, y1, y2):
        w = WorldState(0.0, VehicleState("lag", x1, y1, v1), VehicleState("ma", x2, y2, v2, lane=Lane.RAMP))
        dx, dv, dy = relative_state(w, "lag", "ma")
        rx, rv, ry = relative_state(w, "ma", "lag")
        assert dx == -rx and dv == -rv and dy == ry

    def test_missing_lead(self):
        with pytest.raises(MissingActorError):
            relative_state(_world(), Role.LAG, Role.LEAD)


class TestValidation:
    @pytest.mark.parametrize("field", ["x", "y", "v", "a"])
    def test_vehicle_rejects_non_finite(self, field):
        kw = dict(id="a", x=0.0, y=0.0, v=1.0, a=0.0)
        kw[field] = math.nan
        with pytest.raises(ValueError):
            VehicleState(**kw)

    def test_negative_speed(self):
        with pytest.raises(ValueError):
            VehicleState("a", 0.0, v=-1.0)

    def test_ramp_ordering(self):
        with pytest.raises(ValueError):
            RampGeometry(ramp_end_x=10.0, merge_zone_start_x=20.0)

    def test_lead_behind_lag(self):
        with pytest.raises(ValueError):
            _world(lag_x=10.0, lead_x=5.0)

    def test_lag_must_be_on_main(self):
        with pytest.raises(ValueError):
            WorldState(0.0, VehicleState("lag", 0.0, lane=Lane.RAMP), VehicleState("ma", 1.0))

    @pytest.mark.parametrize("phi", [
        (1.0, 2, 2, 2, 2, 0, 2, 2),
        (2, 2, 2, 2, 2, -1.0, 2, 2),
        (2, 2, 2, 2, 2, 1.5, 2, 2),
        (2, 2, 2, 2, 2, 0, 2),
        (2, 2, 2, 2, 2, math.inf, 2, 2),
    ])
    def test_model_params_rejects(self, phi):
        with pytest.raises(ValueError):
            ModelParams(phi=phi)

    def test_theta_round_trip(self):
        p = ModelParams(phi=(1.5, 2, 3, 4, 5, 0.3, 7, 8), tau=3.0)
        assert np.array_equal(p.theta, [1.5, 2, 3, 4, 5, 0.3, 7, 8, 3.0])
        assert p.with_theta(p.theta) == p
        assert ModelParams.from_dict(p.to_dict()) == p


def test_action_order():
    assert [a.short for a in LagAction] == ["yb", "ya", "bk", "dn"]
    assert LagAction.from_short("BK") is LagAction.BLOCK
