"""Command-line front end.

Subcommands::

    genrel simulate DESIGN.json --out-dir DIR     write two trait files and truth.json
    genrel fit TRAIT.csv                          one Lasso fit, JSON on stdout
    genrel relate Y.csv W.csv                     estimates, intervals and tests
    genrel mc SPEC.json --kind coverage           Monte Carlo experiment report

Trait files have a header row; the first column is ``y`` (0/1) and the rest
are ``x1..xp``. An overlapped study is given by ``--overlap m``: the first
``m`` rows of both files are the same individuals.

Exit codes: 0 success, 2 usage or configuration error, 3 data error,
4 experiment error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import secrets
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .core import LinkKind, PairedStudy, Scenario, TargetFunctional, validate_study
from .harness import KINDS, RUNNERS, ExperimentError, ExperimentSpec, render_report, tuning_to_dict
from .inference import infer_all
from .lasso import CrossValidate, FixedC, SolverOptions, fit, select_lambda
from .relatedness import full_pipeline
from .simgen import SimDesign, sample_study

log = logging.getLogger("genrel")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_EXPERIMENT = 0, 2, 3, 4


class CsvFormatError(ValueError):
    def __init__(self, path, line, message):
        super().__init__(f"{path}:{line}: {message}")
        self.path, self.line = path, line


class DataError(ValueError):
    pass


class ConfigError(ValueError):
    pass


# -- trait files ---------------------------------------------------------------


def read_trait_csv(path):
    """Parse a trait file into (covariates, response)."""
    path = str(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise CsvFormatError(path, 1, "empty file") from None
        header = [h.strip() for h in header]
        if not header or header[0] != "y":
            raise CsvFormatError(path, 1, "first column must be named 'y'")
        if len(header) < 2:
            raise CsvFormatError(path, 1, "no covariate columns")
        expected = [f"x{j}" for j in range(1, len(header))]
        if header[1:] != expected:
            raise CsvFormatError(path, 1, "covariate columns must be named x1..xp in order")
        rows = []
        for row in reader:
            line = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise CsvFormatError(path, line, f"expected {len(header)} fields, got {len(row)}")
            try:
                rows.append([float(c) for c in row])
            except ValueError as exc:
                raise CsvFormatError(path, line, f"non-numeric field ({exc})") from None
    if not rows:
        raise CsvFormatError(path, 2, "no data rows")
    arr = np.array(rows)
    return arr[:, 1:], arr[:, 0]


def write_trait_csv(path, M, resp):
    M = np.asarray(M, dtype=float)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["y"] + [f"x{j}" for j in range(1, M.shape[1] + 1)])
        for r, v in zip(M, resp):
            w.writerow([repr(float(v))] + [repr(float(x)) for x in r])


# -- argument helpers ----------------------------------------------------------


def parse_tuning(text: str, seed: int = 0):
    """``fixed:C``, ``fixed``, ``cv`` or ``cv:c1,c2,...``."""
    kind, _, arg = text.partition(":")
    try:
        if kind == "fixed":
            return FixedC(float(arg)) if arg else FixedC()
        if kind == "cv":
            if arg:
                return CrossValidate(grid=tuple(float(c) for c in arg.split(",")), seed=seed)
            return CrossValidate(seed=seed)
    except ValueError as exc:
        raise ConfigError(f"bad --tuning value {text!r}: {exc}") from None
    raise ConfigError(f"--tuning must be fixed:C or cv:grid, got {text!r}")


def _alpha(text):
    a = float(text)
    if not 0.0 < a < 1.0:
        raise argparse.ArgumentTypeError("alpha must lie in (0, 1)")
    return a


def _resolve_seed(seed):
    if seed is None:
        seed = secrets.randbits(63)
        print(f"seed: {seed}", file=sys.stderr)
    return seed


def _emit(text: str, output):
    if output:
        Path(output).write_text(text)
    else:
        sys.stdout.write(text)


def _num(x):
    return x if x is None or math.isfinite(x) else None


# -- subcommands ---------------------------------------------------------------


def cmd_simulate(args) -> int:
    try:
        raw = json.loads(Path(args.design).read_text())
        if args.seed is not None:
            raw["seed"] = args.seed
        elif "seed" not in raw:
            raw["seed"] = _resolve_seed(None)
        design = SimDesign.from_dict(raw)
    except (ValueError, TypeError, OSError) as exc:
        raise ConfigError(f"invalid design: {exc}") from None
    study, truth = sample_study(design)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_trait_csv(out / "trait_y.csv", study.X, study.y)
    write_trait_csv(out / "trait_w.csv", study.Z, study.w)
    truth_doc = {"design": design.to_dict(), "overlap": design.m, **truth.to_dict()}
    (out / "truth.json").write_text(json.dumps(truth_doc, indent=2) + "\n")
    return EXIT_OK


def cmd_fit(args) -> int:
    M, resp = read_trait_csv(args.input)
    link = LinkKind(args.link)
    if link is LinkKind.LOGISTIC and not np.all(np.isin(resp, (0.0, 1.0))):
        raise DataError("response column y must be 0/1 for the logistic link")
    seed = _resolve_seed(args.seed) if args.tuning.startswith("cv") else args.seed
    rule = parse_tuning(args.tuning, seed or 0)
    if not args.no_center:
        M = M - M.mean(axis=0)
    opts = SolverOptions(link=link)
    lam, C, _ = select_lambda(M, resp, rule, opts)
    f = fit(M, resp, lam, opts)
    doc = {"n": int(M.shape[0]), "p": int(M.shape[1]), "lambda": lam, "C": C,
           "intercept": f.intercept, "coefficients": f.coefficients.tolist(),
           "support": f.support.tolist(), "converged": f.converged,
           "kkt_residual": f.kkt_residual, "iterations": f.iterations}
    _emit(json.dumps(doc, indent=2) + "\n", args.output)
    return EXIT_OK


def _load_study(args) -> PairedStudy:
    X, y = read_trait_csv(args.trait_y)
    Z, w = read_trait_csv(args.trait_w)
    scenario = Scenario(args.scenario) if args.scenario else (
        Scenario.OVERLAPPED if args.overlap else Scenario.INDEPENDENT)
    m = args.overlap or 0
    if scenario is Scenario.OVERLAPPED and m == 0:
        # no shared rows: the independent-sample formulas are the exact reduction
        log.warning("overlapped scenario declared with m=0; using the independent-sample analysis")
        scenario = Scenario.INDEPENDENT
    if scenario is Scenario.INDEPENDENT and m:
        raise ConfigError("--overlap needs --scenario overlapped")
    return PairedStudy(X, y, Z, w, m=m, scenario=scenario)


def relate_report(study: PairedStudy, alpha=0.05, link=LinkKind.LOGISTIC, tuning=FixedC(),
                  center=True, split=False, seed=0, bonferroni=None, overlap_n="effective") -> dict:
    """Estimates, intervals and tests for all four functionals as a JSON-ready dict."""
    est = full_pipeline(study, tuning=tuning, opts=SolverOptions(link=LinkKind(link)),
                        center=center, split=split, split_seed=seed)
    res, var = infer_all(est, alpha, overlap_n=overlap_n)
    results = []
    for t in TargetFunctional:
        r = res[t]
        if r is None:
            results.append({"target": t.value, "point": est.corr, "status": "unavailable",
                            "reason": "correlation inference unavailable: the product of the "
                                      "debiased variance estimates is not positive"})
            continue
        row = {"target": t.value, "point": r.point, "status": "ok",
               "ci_lower": r.ci_lower, "ci_upper": r.ci_upper, "null_value": r.null_value,
               "t_stat": _num(r.t_stat), "p_value": r.p_value, "reject": r.reject}
        if bonferroni:
            row["p_bonferroni"] = min(1.0, bonferroni * r.p_value)
            row["reject_bonferroni"] = row["p_bonferroni"] < alpha
        results.append(row)
    return {
        "version": __version__,
        "scenario": study.scenario.value,
        "overlap": study.overlap,
        "n1": study.n1, "n2": study.n2, "p": study.p,
        "alpha": alpha,
        "link": LinkKind(link).value,
        "tuning": tuning_to_dict(tuning),
        "center": center,
        "split": split,
        "seed": seed,
        "lambda_y": est.fit_y.lam,
        "lambda_w": est.fit_w.lam,
        "results": results,
        "plug_in": {"covariance": est.plug_in_cov, "variance_y": est.plug_in_var_y,
                    "variance_w": est.plug_in_var_w, "correlation": est.plug_in_corr},
        "variances": {"v2": var.v2, "v2_beta": var.v2_beta, "v2_gamma": var.v2_gamma,
                      "v2_R": var.v2_R},
        "warnings": {"clipped_weights": est.clipped_weights,
                     "converged": bool(est.fit_y.converged and est.fit_w.converged)},
    }


def _relate_text(doc, fmt):
    if fmt == "json":
        return json.dumps(doc, indent=2) + "\n"
    cols = ("target", "point", "ci_lower", "ci_upper", "t_stat", "p_value", "reject")
    if fmt == "csv":
        lines = [",".join(cols)]
        for r in doc["results"]:
            lines.append(",".join("" if r.get(c) is None else str(r.get(c)) for c in cols))
        return "\n".join(lines) + "\n"
    lines = ["| " + " | ".join(cols) + " |", "|" + "---|" * len(cols)]
    for r in doc["results"]:
        if r["status"] != "ok":
            lines.append(f"| {r['target']} | {r['point']:.4f} | unavailable | | | | |")
            continue
        lines.append("| " + " | ".join(
            f"{r[c]:.4f}" if isinstance(r[c], float) else str(r[c]) for c in cols) + " |")
    return "\n".join(lines) + "\n"


def cmd_relate(args) -> int:
    study = _load_study(args)
    link = LinkKind(args.link)
    report = validate_study(study)
    problems = [v for v in report
                if not (link is LinkKind.IDENTITY and v.kind == "non_binary_response")]
    if problems:
        raise DataError("; ".join(v.message for v in problems))
    needs_seed = args.split or args.tuning.startswith("cv")
    seed = _resolve_seed(args.seed) if needs_seed else (args.seed or 0)
    doc = relate_report(study, args.alpha, link, parse_tuning(args.tuning, seed),
                        center=not args.no_center, split=args.split, seed=seed,
                        bonferroni=args.bonferroni, overlap_n=args.overlap_n)
    for r in doc["results"]:
        if r["status"] != "ok":
            print(r["reason"], file=sys.stderr)
    _emit(_relate_text(doc, args.format), args.output)
    return EXIT_OK


def cmd_mc(args) -> int:
    try:
        raw = json.loads(Path(args.spec).read_text())
        kind = args.kind or raw.get("kind", "estimation")
        if kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}")
        if args.seed is not None:
            raw["seed"] = args.seed
        elif "seed" not in raw:
            raw["seed"] = _resolve_seed(None)
        if args.alpha is not None:
            raw["alpha"] = args.alpha
        spec = ExperimentSpec.from_dict(raw)
    except (ValueError, TypeError, OSError) as exc:
        raise ConfigError(f"invalid experiment spec: {exc}") from None
    try:
        report = RUNNERS[kind](spec, workers=args.workers)
    except ExperimentError as exc:
        if exc.report is not None:
            _emit(render_report(exc.report, args.format, args.canonical), args.output)
        print(f"experiment error: {exc}", file=sys.stderr)
        return EXIT_EXPERIMENT
    _emit(render_report(report, args.format, args.canonical), args.output)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="genrel", description="Genetic relatedness of two binary traits.")
    ap.add_argument("--version", action="version", version=__version__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, fmt=True):
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--output", "-o", default=None)
        if fmt:
            p.add_argument("--format", choices=("json", "csv", "md"), default="json")

    p = sub.add_parser("simulate", help="draw a study from a design file")
    p.add_argument("design")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit", help="fit one trait's Lasso")
    p.add_argument("input")
    p.add_argument("--tuning", default="fixed:0.12")
    p.add_argument("--link", choices=[k.value for k in LinkKind], default="logistic")
    p.add_argument("--no-center", action="store_true")
    common(p, fmt=False)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("relate", help="estimate and test relatedness of two traits")
    p.add_argument("trait_y")
    p.add_argument("trait_w")
    p.add_argument("--alpha", type=_alpha, default=0.05)
    p.add_argument("--scenario", choices=[s.value for s in Scenario], default=None)
    p.add_argument("--overlap", type=int, default=0, metavar="M",
                   help="first M rows of both files are shared individuals")
    p.add_argument("--overlap-n", choices=("effective", "total"), default="effective",
                   help="sample size in the interval scaling")
    p.add_argument("--link", choices=[k.value for k in LinkKind], default="logistic")
    p.add_argument("--tuning", default="fixed:0.12")
    p.add_argument("--no-center", action="store_true")
    p.add_argument("--split", action="store_true")
    p.add_argument("--bonferroni", type=int, default=None, metavar="K",
                   help="also report p-values adjusted for K tests")
    p.add_argument("--workers", type=int, default=1)
    common(p)
    p.set_defaults(func=cmd_relate)

    p = sub.add_parser("mc", help="run a Monte Carlo experiment")
    p.add_argument("spec")
    p.add_argument("--kind", choices=KINDS, default=None)
    p.add_argument("--alpha", type=_alpha, default=None)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--canonical", action="store_true", help="omit runtimes for byte-stable output")
    common(p)
    p.set_defaults(func=cmd_mc)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (CsvFormatError, DataError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
