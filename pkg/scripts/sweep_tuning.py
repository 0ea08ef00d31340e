"""Sensitivity of the test-size/power design to the Lasso tuning constant C.

Usage: python3 scripts/sweep_tuning.py [--rounds 30] [--constants 0.12 0.06 0.03]
"""

import argparse

from genrel.harness import ExperimentSpec, run_tests
from genrel.lasso import FixedC
from genrel.simgen import SimDesign


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--rounds", type=int, default=30)
    ap.add_argument("--constants", type=float, nargs="+", default=[0.12, 0.06, 0.03])
    ap.add_argument("--seed", type=int, default=1)
    args = ap.parse_args()

    design = SimDesign(n1=400, n2=400, p=700, k=25, cov_floor=3.0)
    print("C       target       rmse  plug_rmse  type1  power  length")
    for c in args.constants:
        rep = run_tests(ExperimentSpec(design=design, rounds=args.rounds, tuning=FixedC(c), seed=args.seed))
        for t in ("covariance", "variance_y", "correlation"):
            r, p = rep.row("debiased", t), rep.row("plug_in", t)
            print(f"{c:<7g} {t:<12} {r['rmse']:5.2f} {p['rmse']:10.2f} {r['type1_rate']:6.2f} "
                  f"{r['power']:6.2f} {r['mean_length']:7.2f}")


if __name__ == "__main__":
    main()
