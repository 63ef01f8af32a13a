"""Two-player merge game between a main-lane lag vehicle and an on-ramp merger.

The lag chooses among yield behind, yield ahead, block and do nothing; the
merger chooses between changing lanes and keeping straight. Payoffs are
bounded shaping functions of predicted time headway, decisions come from a
mixed Nash equilibrium softened by a logit response, and behaviors are
executed with IDM car following.
"""

__version__ = "0.1.0"

from .core import (  # noqa: E402
    Lane,
    LagAction,
    MaAction,
    MissingActorError,
    ModelParams,
    RampGeometry,
    Role,
    VehicleState,
    WorldState,
    relative_state,
)
from .game import Decision, MixedProfile, decide, decision_window, expected_lag_payoffs, nash_mixed, qre_update  # noqa: E402
from .payoff import (  # noqa: E402
    Conditioning,
    NoInteriorMaximumError,
    PayoffMatrix,
    lag_payoffs,
    ma_payoffs,
    payoff_matrix,
    pth,
    smht_shift,
    usmht,
)

__all__ = [
    "Conditioning", "Decision", "Lane", "LagAction", "MaAction", "MissingActorError", "MixedProfile",
    "ModelParams", "NoInteriorMaximumError", "PayoffMatrix", "RampGeometry", "Role", "VehicleState",
    "WorldState", "decide", "decision_window", "expected_lag_payoffs", "lag_payoffs", "ma_payoffs",
    "nash_mixed", "payoff_matrix", "pth", "qre_update", "relative_state", "smht_shift", "usmht",
]
