"""Reproduce the Monte Carlo tables behind the quantitative acceptance criteria.

Usage:
    python3 scripts/run_experiments.py [estimation|genotype|coverage|tests|all]
        [--rounds 200] [--workers 1] [--out-dir results]

Writes one JSON report and one markdown table per experiment. Seeds match
tests/test_acceptance.py, so 200-round runs reproduce its numbers exactly.
"""

import argparse
import pathlib
import time

from genrel.harness import ExperimentSpec, render_report, run_coverage, run_estimation, run_tests
from genrel.simgen import SimDesign

SIGMA_B = dict(n1=400, n2=400, p=700, k=25, sigma_kind="block_toeplitz")


def experiments(rounds):
    return {
        "estimation": (run_estimation, ExperimentSpec(design=SimDesign(**SIGMA_B), rounds=rounds, seed=10)),
        "genotype": (run_estimation, ExperimentSpec(
            design=SimDesign(**SIGMA_B, genotype_mode=True, shared_support=12),
            rounds=rounds, seed=11, targets=("correlation",))),
        "coverage": (run_coverage, ExperimentSpec(
            design=SimDesign(**{**SIGMA_B, "n1": 300, "n2": 300}), rounds=rounds, seed=12,
            methods=("debiased", "bootstrap"), targets=("correlation", "variance_y"))),
        "tests": (run_tests, ExperimentSpec(
            design=SimDesign(**SIGMA_B, cov_floor=3.0), rounds=rounds, seed=14, methods=("debiased",))),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("which", nargs="?", default="all",
                    choices=("estimation", "genotype", "coverage", "tests", "all"))
    ap.add_argument("--rounds", type=int, default=200)
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--out-dir", default="results")
    args = ap.parse_args()

    out = pathlib.Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    todo = experiments(args.rounds)
    names = list(todo) if args.which == "all" else [args.which]
    for name in names:
        runner, spec = todo[name]
        t0 = time.perf_counter()
        rep = runner(spec, workers=args.workers)
        (out / f"{name}.json").write_text(render_report(rep, "json"))
        md = render_report(rep, "md")
        (out / f"{name}.md").write_text(md)
        print(f"## {name} ({time.perf_counter() - t0:.0f} s)\n\n{md}")


if __name__ == "__main__":
    main()
