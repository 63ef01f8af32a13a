"""Ready-made scenarios: the single-lag merge example and a dense highway."""

from __future__ import annotations

from dataclasses import replace

from .core import Lane, ModelParams, RampGeometry, VehicleState
from .dynamics import IdmParams
from .sim import MaMode, MergerScript, ScenarioConfig, VehicleSpec

# Main-lane IDM driver used by the single-lag example. At 25 m/s behind a
# 25 m/s leader its equilibrium bumper gap is about 76.7 m.
EXAMPLE_IDM = IdmParams(v0=27.0, T=1.5, s0=2.0, a_max=1.5, b=2.0, delta=4.0)

# Parameter sets whose dominant behavior in the example is, respectively,
# yield behind, yield ahead, block and do nothing. A low curvature raises the
# matching payoff; yield ahead also needs a long horizon so that the slower
# merger is predicted to fall behind the lag.
SINGLE_LAG_PARAMS = {
    "yield_behind": ModelParams(phi=(1.1, 8.0, 8.0, 2.0, 2.0, -0.5, 8.0, 2.0), tau=2.0, beta=0.01),
    "yield_ahead": ModelParams(phi=(8.0, 1.2, 10.0, 2.0, 2.0, -0.5, 8.0, 2.0), tau=15.0, beta=0.01),
    "block": ModelParams(phi=(8.0, 2.0, 10.0, 2.0, 2.0, -0.5, 1.1, 2.0), tau=2.0, beta=0.01),
    "do_nothing": ModelParams(phi=(10.0, 10.0, 10.0, 2.0, 2.0, 0.8, 10.0, 2.0), tau=2.0, beta=0.01),
}


def single_lag_scenario(params: ModelParams, seed: int = 0, duration: float = 15.0,
                        merger_gap: float = 51.0) -> ScenarioConfig:
    """One lag, its leader, and a slower merger ``merger_gap`` meters ahead on the ramp."""
    lane_offset = 3.5
    lag = VehicleSpec(VehicleState("lag", x=0.0, y=0.0, v=25.0), EXAMPLE_IDM, params)
    # leader at the lag's equilibrium spacing (76.7 m bumper gap + 5 m length)
    lead = VehicleSpec(VehicleState("lead", x=81.7, y=0.0, v=25.0), IdmParams(v0=25.0))
    merger = VehicleSpec(
        VehicleState("ma", x=merger_gap, y=-lane_offset, v=20.0, lane=Lane.RAMP),
        IdmParams(v0=22.0),
    )
    return ScenarioConfig(
        ramp=RampGeometry(ramp_end_x=450.0, merge_zone_start_x=60.0, lane_offset=lane_offset),
        vehicles=(lag, lead),
        merger=merger,
        ma_mode=MaMode.SCRIPTED,
        script=MergerScript(),
        duration=duration,
        seed=seed,
    )


def highway_scenario(n_vehicles: int = 20, seed: int = 0, duration: float = 20.0,
                     params: ModelParams | None = None) -> ScenarioConfig:
    """A platoon of ``n_vehicles - 1`` game-playing vehicles and one merger.

    The merger is game driven, so it changes lanes once its lag's
    equilibrium says so.
    """
    if n_vehicles < 2:
        raise ValueError("need at least one main-lane vehicle and the merger")
    params = params or ModelParams(phi=(1.5, 1.5, 4.0, 2.0, 2.0, 0.0, 3.0, 2.0), tau=2.0, beta=0.1)
    idm = IdmParams(v0=27.0, T=1.5, s0=2.0, a_max=1.5, b=2.0)
    spacing = 45.0
    vehicles = []
    n_main = n_vehicles - 1
    for k in range(n_main):
        # the head of the platoon is a plain IDM driver; everyone else plays
        vehicles.append(VehicleSpec(
            VehicleState(f"v{k:02d}", x=spacing * k, y=0.0, v=24.0),
            idm,
            None if k == n_main - 1 else params,
        ))
    lane_offset = 3.5
    merger = VehicleSpec(
        VehicleState("ma", x=spacing * (n_main // 2) + 20.0, y=-lane_offset, v=20.0, lane=Lane.RAMP),
        IdmParams(v0=24.0),
    )
    ramp_start = spacing * (n_main // 2)
    return ScenarioConfig(
        ramp=RampGeometry(ramp_end_x=ramp_start + 400.0, merge_zone_start_x=ramp_start + 60.0,
                          lane_offset=lane_offset),
        vehicles=tuple(vehicles),
        merger=merger,
        ma_mode=MaMode.GAME_DRIVEN,
        duration=duration,
        seed=seed,
    )


def with_params(config: ScenarioConfig, vehicle_id: str, params: ModelParams) -> ScenarioConfig:
    vehicles = tuple(replace(v, params=params) if v.state.id == vehicle_id else v for v in config.vehicles)
    return replace(config, vehicles=vehicles)
