"""Where the empirical detection transition sits relative to the predicted one at K=500."""

import argparse

import numpy as np

from replica_access.amp import AmpConfig
from replica_access.model import reference_isotropic
from replica_access.sim import ExperimentPlan, predict, run_experiment


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--users", type=int, default=500)
    ap.add_argument("--step", type=float, default=0.025)
    ap.add_argument("--trials", type=int, default=10)
    ap.add_argument("--seed", type=int, default=10)
    args = ap.parse_args()

    alphas = [round(a, 6) for a in np.arange(0.525, 0.725 + 1e-9, args.step)]
    scen = reference_isotropic(users_per_group=args.users)
    preds = [predict(scen.replace(alpha=a).build()) for a in alphas]
    res = run_experiment(ExperimentPlan(scen, sweep_values=alphas, n_trials=args.trials, seed=args.seed,
                                        predict=False, amp=AmpConfig(max_iters=200)))
    print(f"{'alpha':>7} {'pred NMSE':>10} {'pred Pe':>10} {'emp NMSE':>10} {'emp Pe':>10}")
    for a, pr, p in zip(alphas, preds, res.points):
        print(f"{a:7.4f} {pr.amp_nmse_db:10.2f} {pr.p_md + pr.p_fa:10.3g} "
              f"{10 * np.log10(p.mean['nmse']):10.2f} {p.mean['p_md'] + p.mean['p_fa']:10.3g}")


if __name__ == "__main__":
    main()
