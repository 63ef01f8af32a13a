"""Run the single-lag merge example under the four behavior-dominant parameter sets.

A slower merger starts 51 m ahead of a lag that follows its leader at
equilibrium spacing. The table shows how the lag's time gap to its leader
and its distance to the merger evolve under each set.

    python demos/single_lag_behaviors.py
"""

import numpy as np

from merge_game.scenarios import SINGLE_LAG_PARAMS, single_lag_scenario
from merge_game.sim import run_scenario


def main():
    print(f"{'set':<14}{'choice':>7}{'gap t=0':>9}{'gap end':>9}{'dx end':>9}{'max|a|':>8}")
    for name, params in SINGLE_LAG_PARAMS.items():
        res = run_scenario(single_lag_scenario(params, seed=0))
        lag, lead, ma = res.select("lag"), res.select("lead"), res.select("ma")
        gap = (lead["x"] - lag["x"]) / lag["v"]
        chosen = max(set(lag["decision"]), key=list(lag["decision"]).count)
        print(f"{name:<14}{chosen:>7}{gap[0]:>8.2f}s{gap[-1]:>8.2f}s"
              f"{ma['x'][-1] - lag['x'][-1]:>8.1f}m{np.abs(lag['a']).max():>8.2f}")


if __name__ == "__main__":
    main()
