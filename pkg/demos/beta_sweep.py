"""How the rationality temperature spreads the lag's choices.

Fifty seeded replicas of the yield-behind example are run per beta. Low
beta always picks the best response; high beta approaches uniform play.

    python demos/beta_sweep.py [iterations]
"""

import sys

from merge_game.core import LagAction
from merge_game.scenarios import SINGLE_LAG_PARAMS, single_lag_scenario
from merge_game.sim import sweep_beta


def main(iterations: int = 50):
    cfg = single_lag_scenario(SINGLE_LAG_PARAMS["yield_behind"], seed=0)
    rows = sweep_beta(cfg, [0.01, 0.1, 1.0, 10.0], iterations)
    names = [a.short for a in LagAction]
    print(f"{'beta':>6}  {'mode':>4}  " + "  ".join(f"{n:>4}" for n in names) + "  entropy")
    for r in rows:
        share = [c / sum(r.decision_counts) for c in r.decision_counts]
        print(f"{r.beta:>6g}  {r.mode.short:>4}  " + "  ".join(f"{s:>4.2f}" for s in share)
              + f"  {r.decision_entropy:.3f}")


if __name__ == "__main__":
    main(int(sys.argv[1]) if len(sys.argv) > 1 else 50)
