"""Regenerate the frozen artifacts under tests/data.

Run only after a change that is meant to alter numerical output, and review
the diff before committing.

    python scripts/regen_golden.py
"""

import json
from pathlib import Path

from genrel.cli import main as cli_main
from genrel.harness import ExperimentSpec, render_report, run_coverage
from genrel.lasso import CrossValidate, select_lambda
from genrel.simgen import SimDesign, sample_study

DATA = Path(__file__).resolve().parents[1] / "tests" / "data"

TINY_SPEC = {
    "design": {"n1": 50, "n2": 50, "p": 20, "k": 4, "sigma_kind": "exchangeable", "blocks": 2},
    "rounds": 3,
    "methods": ["debiased", "plug_in"],
    "seed": 11,
}
RELATE_DESIGN = {"n1": 60, "n2": 50, "p": 15, "k": 4, "m": 0, "sigma_kind": "ar1", "rho": 0.4,
                 "blocks": 3, "seed": 2024}


def cv_golden():
    design = SimDesign(n1=300, n2=300, p=700, k=25, seed=7)
    study, _ = sample_study(design)
    lam, C, table = select_lambda(study.X, study.y, CrossValidate(seed=3))
    return {"design": design.to_dict(), "trait": "y", "folds": 10, "cv_seed": 3,
            "lambda": lam, "C": C, "cv_table": {repr(c): v for c, v in table.items()}}


def main():
    DATA.mkdir(parents=True, exist_ok=True)
    (DATA / "mc_tiny_spec.json").write_text(json.dumps(TINY_SPEC, indent=2) + "\n")
    rep = run_coverage(ExperimentSpec.from_dict(TINY_SPEC))
    (DATA / "mc_tiny_coverage.json").write_text(render_report(rep, "json", canonical=True))

    (DATA / "relate_design.json").write_text(json.dumps(RELATE_DESIGN, indent=2) + "\n")
    cli_main(["simulate", str(DATA / "relate_design.json"), "--out-dir", str(DATA / "relate")])
    cli_main(["relate", str(DATA / "relate" / "trait_y.csv"), str(DATA / "relate" / "trait_w.csv"),
              "--seed", "0", "--output", str(DATA / "relate" / "expected.json")])

    (DATA / "cv_golden.json").write_text(json.dumps(cv_golden(), indent=2) + "\n")


if __name__ == "__main__":
    main()
