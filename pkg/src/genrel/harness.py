"""Seeded Monte Carlo experiments: estimation error, interval coverage, test size and power.

Every round draws a fresh study from ``SimDesign`` with a seed derived from
``(spec.seed, round)``, so results do not depend on the worker count. A round
produces a plain-dict record; all reported aggregates are recomputed from those
records.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from functools import partial

import numpy as np

from .baselines import BootstrapOptions, bootstrap_replicates
from .core import TargetFunctional
from .inference import hypothesis_test, infer_all, inference_n
from .lasso import CrossValidate, FixedC
from .relatedness import full_pipeline
from .simgen import SimDesign, sample_study

log = logging.getLogger(__name__)

METHODS = ("debiased", "plug_in", "bootstrap")
KINDS = ("estimation", "coverage", "tests")
ALL_TARGETS = tuple(TargetFunctional)
SUMMARY_FIELDS = ("method", "target", "rmse", "coverage_pct", "mean_length", "type1_rate",
                  "power", "mean_runtime_ms", "rounds_completed", "covered", "missed",
                  "undefined")
RUNTIME_FIELDS = ("mean_runtime_ms", "runtime_ms")


class ExperimentError(RuntimeError):
    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


def tuning_to_dict(rule) -> dict:
    if isinstance(rule, FixedC):
        return {"rule": "fixed", "C": rule.C}
    return {"rule": "cv", "grid": list(rule.grid), "folds": rule.folds, "seed": rule.seed}


def tuning_from_dict(d: dict):
    d = dict(d)
    kind = d.pop("rule", "fixed")
    if kind == "fixed":
        return FixedC(**d)
    if kind == "cv":
        if "grid" in d:
            d["grid"] = tuple(d["grid"])
        return CrossValidate(**d)
    raise ValueError(f"unknown tuning rule {kind!r}")


@dataclass(frozen=True)
class ExperimentSpec:
    design: SimDesign = field(default_factory=SimDesign)
    rounds: int = 200
    alpha: float = 0.05
    methods: tuple = ("debiased", "plug_in")
    targets: tuple = ALL_TARGETS
    tuning: object = field(default_factory=FixedC)
    null_values: dict = field(default_factory=dict)
    seed: int = 0
    bootstrap: BootstrapOptions = field(default_factory=BootstrapOptions)
    overlap_n: str = "effective"
    max_failure_share: float = 0.1

    def __post_init__(self):
        object.__setattr__(self, "methods", tuple(self.methods))
        object.__setattr__(self, "targets", tuple(TargetFunctional(t) for t in self.targets))
        object.__setattr__(self, "null_values",
                           {TargetFunctional(k).value: float(v) for k, v in self.null_values.items()})
        if self.rounds < 1:
            raise ValueError("rounds must be at least 1")
        if not self.methods:
            raise ValueError("methods must be nonempty")
        bad = set(self.methods) - set(METHODS)
        if bad:
            raise ValueError(f"unknown methods {sorted(bad)}")
        if not self.targets:
            raise ValueError("targets must be nonempty")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must lie in (0, 1)")

    def null_value(self, target) -> float:
        return self.null_values.get(TargetFunctional(target).value, 0.0)

    def to_dict(self) -> dict:
        return {
            "design": self.design.to_dict(),
            "rounds": self.rounds,
            "alpha": self.alpha,
            "methods": list(self.methods),
            "targets": [t.value for t in self.targets],
            "tuning": tuning_to_dict(self.tuning),
            "null_values": dict(self.null_values),
            "seed": self.seed,
            "bootstrap": {"replicates": self.bootstrap.replicates,
                          "resample_size": self.bootstrap.resample_size},
            "overlap_n": self.overlap_n,
            "max_failure_share": self.max_failure_share,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentSpec":
        d = dict(d)
        kw = {}
        if "design" in d:
            kw["design"] = SimDesign.from_dict(d.pop("design"))
        if "tuning" in d:
            kw["tuning"] = tuning_from_dict(d.pop("tuning"))
        if "bootstrap" in d:
            kw["bootstrap"] = BootstrapOptions(**d.pop("bootstrap"))
        d.pop("kind", None)
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown spec fields: {sorted(unknown)}")
        return cls(**kw, **d)


@dataclass
class ExperimentReport:
    kind: str
    spec: dict
    summary: list  # one dict per (method, target), keys SUMMARY_FIELDS
    records: list = field(repr=False, default_factory=list)
    rounds_requested: int = 0
    rounds_failed: int = 0

    def row(self, method, target) -> dict:
        target = TargetFunctional(target).value
        for r in self.summary:
            if r["method"] == method and r["target"] == target:
                return r
        raise KeyError((method, target))

    def to_dict(self, canonical: bool = False) -> dict:
        d = {"kind": self.kind, "spec": self.spec, "rounds_requested": self.rounds_requested,
             "rounds_failed": self.rounds_failed, "summary": self.summary,
             "records": self.records}
        d = _jsonable(d)
        return _strip_runtimes(d) if canonical else d


def round_seed(seed: int, r: int) -> int:
    hi, lo = np.random.SeedSequence([seed, r]).generate_state(2, np.uint32)
    return (int(hi) << 32) | int(lo)


def _interval_record(res, truth):
    if res is None:
        return {"ci_lower": None, "ci_upper": None, "covered": False, "undefined": True}
    return {"ci_lower": res.ci_lower, "ci_upper": res.ci_upper,
            "covered": bool(res.ci_lower <= truth <= res.ci_upper),
            "undefined": False}


def _run_round(spec: ExperimentSpec, kind: str, r: int) -> dict:
    seed = round_seed(spec.seed, r)
    rec = {"round": r, "seed": seed, "ok": True, "error": None, "truth": {}, "results": {}}
    try:
        study, truth = sample_study(replace(spec.design, seed=seed))
        tv = truth.functionals()
        rec["truth"] = {t.value: tv[t.value] for t in spec.targets}
        t0 = time.perf_counter()
        est = full_pipeline(study, tuning=spec.tuning)
        t_fit = time.perf_counter() - t0
        points = {"covariance": est.cov_yw, "variance_y": est.var_y,
                  "variance_w": est.var_w, "correlation": est.corr}
        plug = {"covariance": est.plug_in_cov, "variance_y": est.plug_in_var_y,
                "variance_w": est.plug_in_var_w, "correlation": est.plug_in_corr}
        if "debiased" in spec.methods:
            out = {}
            if kind != "estimation":
                res, var = infer_all(est, spec.alpha, overlap_n=spec.overlap_n)
                n_inf = inference_n(est.study, spec.overlap_n)
            for t in spec.targets:
                cell = {"estimate": points[t.value]}
                if kind != "estimation":
                    cell.update(_interval_record(res[t], tv[t.value]))
                    if kind == "tests" and res[t] is None:
                        # undefined variance: no rejection, flagged via "undefined"
                        cell["reject_true"] = cell["reject_null"] = False
                    elif kind == "tests":
                        v2 = {"covariance": var.v2, "variance_y": var.v2_beta,
                              "variance_w": var.v2_gamma, "correlation": var.v2_R}[t.value]
                        cell["reject_true"] = hypothesis_test(
                            points[t.value], v2, n_inf, tv[t.value], spec.alpha, t).reject
                        cell["reject_null"] = hypothesis_test(
                            points[t.value], v2, n_inf, spec.null_value(t), spec.alpha, t).reject
                out[t.value] = cell
            out["runtime_ms"] = 1e3 * (time.perf_counter() - t0)
            rec["results"]["debiased"] = out
        if "plug_in" in spec.methods:
            out = {t.value: {"estimate": plug[t.value]} for t in spec.targets}
            out["runtime_ms"] = 1e3 * t_fit
            rec["results"]["plug_in"] = out
        if "bootstrap" in spec.methods and kind != "estimation":
            t1 = time.perf_counter()
            bopts = replace(spec.bootstrap, alpha=spec.alpha, seed=round_seed(spec.seed + 1, r))
            boot = bootstrap_replicates(study, bopts, lambdas=(est.fit_y.lam, est.fit_w.lam))
            out = {}
            for t in spec.targets:
                lo, hi = boot.interval(t)
                cell = {"ci_lower": lo, "ci_upper": hi,
                        "covered": bool(lo <= tv[t.value] <= hi), "undefined": False}
                if kind == "tests":
                    cell["reject_true"] = bool(not lo <= tv[t.value] <= hi)
                    nv = spec.null_value(t)
                    cell["reject_null"] = bool(not lo <= nv <= hi)
                out[t.value] = cell
            out["runtime_ms"] = 1e3 * (time.perf_counter() - t1)
            rec["results"]["bootstrap"] = out
    except Exception as exc:  # round failures are recorded, not fatal
        rec["ok"] = False
        rec["error"] = f"{type(exc).__name__}: {exc}"
        rec["results"] = {}
    return rec


def _mean(xs):
    return math.fsum(xs) / len(xs) if xs else math.nan


def aggregate(records: list, methods, targets) -> list:
    """Summary rows recomputed from per-round records."""
    done = [r for r in records if r["ok"]]
    rows = []
    for m in methods:
        runtimes = [r["results"][m]["runtime_ms"] for r in done if m in r["results"]]
        for t in targets:
            t = TargetFunctional(t).value
            cells = [(r["results"][m][t], r["truth"][t]) for r in done
                     if m in r["results"] and t in r["results"][m]]
            n = len(cells)
            errs = [(c["estimate"] - tv) ** 2 for c, tv in cells if c.get("estimate") is not None]
            has_ci = [c for c, _ in cells if "covered" in c]
            covered = sum(1 for c in has_ci if c["covered"])
            undefined = sum(1 for c in has_ci if c["undefined"])
            lengths = [c["ci_upper"] - c["ci_lower"] for c in has_ci if not c["undefined"]]
            tests = [c for c, _ in cells if "reject_true" in c]
            rows.append({
                "method": m,
                "target": t,
                "rmse": math.sqrt(_mean(errs)) if errs else math.nan,
                "coverage_pct": 100.0 * covered / len(has_ci) if has_ci else math.nan,
                "mean_length": _mean(lengths),
                "type1_rate": (sum(1 for c in tests if c["reject_true"]) / len(tests)
                               if tests else math.nan),
                "power": (sum(1 for c in tests if c["reject_null"]) / len(tests)
                          if tests else math.nan),
                "mean_runtime_ms": _mean(runtimes),
                "rounds_completed": n,
                "covered": covered,
                "missed": len(has_ci) - covered - undefined,
                "undefined": undefined,
            })
    return rows


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else None
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def _strip_runtimes(obj):
    if isinstance(obj, dict):
        return {k: _strip_runtimes(v) for k, v in obj.items() if k not in RUNTIME_FIELDS}
    if isinstance(obj, list):
        return [_strip_runtimes(v) for v in obj]
    return obj


def _same(a, b):
    if a is None or b is None:
        return a is None and b is None
    if isinstance(a, float) and isinstance(b, float):
        return a == b or (math.isnan(a) and math.isnan(b))
    return a == b


def _check_recomputation(report: ExperimentReport, methods, targets):
    # records must round-trip through JSON and reproduce every aggregate
    records = json.loads(json.dumps(_jsonable(report.records)))
    again = _jsonable(aggregate(records, methods, targets))
    mine = _jsonable(report.summary)
    for x, y in zip(mine, again):
        for k in SUMMARY_FIELDS:
            if not _same(x[k], y[k]):
                raise AssertionError(f"aggregate {k} for {x['method']}/{x['target']} "
                                     "is not reproducible from the round records")


def _run(spec: ExperimentSpec, kind: str, workers: int = 1) -> ExperimentReport:
    if kind not in KINDS:
        raise ValueError(f"unknown experiment kind {kind!r}")
    methods = [m for m in spec.methods if not (kind == "estimation" and m == "bootstrap")]
    if not methods:
        raise ValueError("bootstrap has no point estimate; estimation needs debiased or plug_in")
    if kind != "estimation":
        interval_methods = [m for m in methods if m != "plug_in"]
        if not interval_methods:
            raise ValueError(f"{kind} runs need debiased or bootstrap")
    job = partial(_run_round, spec, kind)
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(job, range(spec.rounds), chunksize=1))
    else:
        records = [job(r) for r in range(spec.rounds)]
    records.sort(key=lambda r: r["round"])
    failed = sum(1 for r in records if not r["ok"])
    report = ExperimentReport(kind, _jsonable(spec.to_dict()),
                              aggregate(records, methods, spec.targets), records,
                              spec.rounds, failed)
    _check_recomputation(report, methods, spec.targets)
    if failed:
        log.warning("%d of %d rounds failed", failed, spec.rounds)
    if failed > spec.max_failure_share * spec.rounds:
        raise ExperimentError(f"{failed} of {spec.rounds} rounds failed", report)
    return report


def run_estimation(spec: ExperimentSpec, workers: int = 1) -> ExperimentReport:
    """RMSE of each method's point estimate against the true functional."""
    return _run(spec, "estimation", workers)


def run_coverage(spec: ExperimentSpec, workers: int = 1) -> ExperimentReport:
    """Coverage and mean length of (1 - alpha) intervals.

    Rounds where the debiased correlation variance is undefined count as
    non-covering and are tallied under ``undefined``.
    """
    return _run(spec, "coverage", workers)


def run_tests(spec: ExperimentSpec, workers: int = 1) -> ExperimentReport:
    """Rejection rates at the true value (type I) and at ``spec.null_values`` (power)."""
    return _run(spec, "tests", workers)


RUNNERS = {"estimation": run_estimation, "coverage": run_coverage, "tests": run_tests}


# -- rendering -----------------------------------------------------------------


def _fmt(x):
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return ""
    return repr(float(x)) if isinstance(x, float) else str(x)


def _summary_csv(summary) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SUMMARY_FIELDS)
    for row in summary:
        w.writerow([_fmt(row[k]) for k in SUMMARY_FIELDS])
    return buf.getvalue()


def parse_summary_csv(text: str) -> list:
    """Inverse of the csv rendering: summary rows with numeric fields restored."""
    rows = []
    for rec in csv.DictReader(io.StringIO(text)):
        row = {}
        for k in SUMMARY_FIELDS:
            v = rec.get(k, "")
            if k in ("method", "target"):
                row[k] = v
            elif k in ("rounds_completed", "covered", "missed", "undefined"):
                row[k] = int(v)
            else:
                row[k] = float(v) if v != "" else None
        rows.append(row)
    return rows


def _md_cell(x, digits=3):
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return "-"
    if isinstance(x, float):
        return f"{x:.{digits}f}"
    return str(x)


def _summary_markdown(report: ExperimentReport, canonical: bool) -> str:
    cols = {"estimation": ("rmse",),
            "coverage": ("coverage_pct", "mean_length", "undefined"),
            "tests": ("type1_rate", "power", "undefined")}[report.kind]
    if not canonical:
        cols = cols + ("mean_runtime_ms",)
    head = ("method", "target") + cols + ("rounds_completed",)
    lines = ["| " + " | ".join(head) + " |", "|" + "---|" * len(head)]
    for row in report.summary:
        lines.append("| " + " | ".join(_md_cell(row[k]) for k in head) + " |")
    return "\n".join(lines) + "\n"


def render_report(report: ExperimentReport, fmt: str = "json", canonical: bool = False) -> str:
    """Serialize a report.

    ``json`` carries the spec, summary and every round record; ``csv`` has one
    line per (method, target); ``md`` is a pipe table of the kind-specific
    statistics. ``canonical`` drops wall-clock fields so output is byte-stable.
    """
    summary = _jsonable(report.summary)
    if canonical:
        summary = _strip_runtimes(summary)
    if fmt == "json":
        return json.dumps(report.to_dict(canonical), indent=2, allow_nan=False) + "\n"
    if fmt == "csv":
        if canonical:
            return _summary_csv([{**r, "mean_runtime_ms": None} for r in summary])
        return _summary_csv(summary)
    if fmt in ("md", "markdown"):
        return _summary_markdown(report, canonical)
    raise ValueError(f"unknown format {fmt!r}")
