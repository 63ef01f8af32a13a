"""Generate labeled merges from known parameters, then fit them back.

Steps: simulate events with a chosen parameter vector, label each event
from its smoothed time gap, build 1 Hz observations, and run the
multistart calibration.

    python demos/calibration_walkthrough.py [n_events]
"""

import sys
from collections import Counter

from merge_game.calibrate import THETA_NAMES, CalibrationOptions, calibrate, mae
from merge_game.core import ModelParams
from merge_game.synthetic import generate_events, labeled_observations

TRUE = ModelParams(phi=(2.0, 1.5, 3.0, 2.0, 2.0, 0.1, 6.0, 2.0), tau=2.0, beta=0.01)


def main(n_events: int = 60):
    events = generate_events(TRUE, n_events, seed=0)
    _, obs = labeled_observations(events)
    print(f"{len(events)} events, {len(obs)} observations")
    print("labels:", dict(Counter(o.label.value for o in obs)))

    result = calibrate(obs, CalibrationOptions(n_starts=16, seed=0))
    print(f"MAE of generating params: {mae(TRUE, obs):.4f}")
    print(f"MAE after calibration:    {result.mae:.4f}")
    for name, true, fit in zip(THETA_NAMES, TRUE.theta, result.params.theta):
        print(f"  {name:<5} true {true:6.2f}  fitted {fit:6.2f}")


if __name__ == "__main__":
    main(int(sys.argv[1]) if len(sys.argv) > 1 else 60)
