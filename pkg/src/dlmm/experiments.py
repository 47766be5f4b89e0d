"""Monte Carlo harness: simulate, destroy, fit every model, collect MSEs and p-values.

Replicate ``r`` of every scenario uses the random streams keyed by
``(seed, r)``, so scenarios differ only in their fixed effects (common random
numbers), and results do not depend on execution order or thread count.
"""

from __future__ import annotations

import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from scipy import stats

from .anova import anova_deaton, anova_fixed, anova_proposed
from .data import atomic_write
from .grouping import assign_pseudo_units
from .manova import build_manova_responses, manova_test
from .models import MODELS, fit_model, mse_ordering_holds, truth_components
from .simulate import SimulationConfig, destructive_sample, simulate_complete
from .svg import boxplot_panel
from .exceptions import ValidationError

logger = logging.getLogger(__name__)

SWEEPS = ("dAT", "dA", "dT")
HYPOTHESES = {1: ("AT", "A:time"), 2: ("A", "A"), 3: ("T", "time")}  # (ANOVA source, MANOVA term)
SWEEP_HYPOTHESIS = {"dAT": 1, "dA": 2, "dT": 3}
TEST_METHODS = ("fixed", "deaton", "proposed", "manova")
MSE_CHAIN = ("proposed", "randint", "deaton", "fixed")
QUANTILES = (0.0, 0.25, 0.5, 0.75, 1.0)


@dataclass(frozen=True)
class ScenarioGrid:
    """A base configuration swept over one effect size.

    ``dAT`` sets the maximum interaction gap, ``dA`` the treatment gap and
    ``dT`` the total time trend ``timeSlope * (t - 1)``.
    """

    base: SimulationConfig = field(default_factory=SimulationConfig)
    sweep: str = "dAT"
    values: tuple = (0.0, 0.5, 1.0)
    reps: int = 100
    strategy: str = "rank"

    def __post_init__(self):
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))
        if self.sweep not in SWEEPS:
            raise ValidationError(f"unknown sweep {self.sweep!r}; choose from {SWEEPS}")
        if not self.values:
            raise ValidationError("sweep needs at least one value")
        if any(not np.isfinite(v) or v < 0 for v in self.values):
            raise ValidationError("sweep values must be finite and non-negative")
        if int(self.reps) < 1:
            raise ValidationError("reps must be >= 1")

    def label(self, value: float) -> str:
        return f"{self.sweep}={value:g}"

    def config(self, value: float) -> SimulationConfig:
        if self.sweep == "dAT":
            return self.base.replace(deltaATmax=value)
        if self.sweep == "dA":
            return self.base.replace(deltaA=value)
        return self.base.replace(timeSlope=value / (self.base.t - 1))

    def to_dict(self) -> dict:
        return {"base": self.base.to_dict(), "sweep": self.sweep, "values": list(self.values), "reps": int(self.reps), "strategy": self.strategy}

    @classmethod
    def parse_sweep(cls, text: str, base: SimulationConfig | None = None, reps: int = 100, **kw) -> ScenarioGrid:
        """Build from ``"dAT=0,0.5,1"``."""
        if "=" not in text:
            raise ValidationError(f"sweep must look like 'dAT=0,0.5,1', got {text!r}")
        name, values = text.split("=", 1)
        try:
            vals = tuple(float(v) for v in values.split(",") if v.strip())
        except ValueError:
            raise ValidationError(f"sweep values must be numbers: {values!r}") from None
        return cls(base=base or SimulationConfig(), sweep=name.strip(), values=vals, reps=reps, **kw)


@dataclass
class ComparisonReport:
    """Tidy per-replicate results plus summaries.

    ``records`` has columns ``scenario, rep, method, metric, value``.
    """

    grid: ScenarioGrid
    records: pd.DataFrame
    failures: list
    hypotheses: tuple = ()
    fixed_truth: bool = False

    def values(self, metric: str, scenario: str | None = None, method: str | None = None) -> pd.DataFrame:
        r = self.records[self.records["metric"] == metric]
        if scenario is not None:
            r = r[r["scenario"] == scenario]
        if method is not None:
            r = r[r["method"] == method]
        return r

    def wide(self, metric: str, scenario: str) -> pd.DataFrame:
        """Replicates x methods for one metric and scenario."""
        return self.values(metric, scenario).pivot(index="rep", columns="method", values="value")

    @property
    def scenarios(self) -> list[str]:
        return [self.grid.label(v) for v in self.grid.values]

    def quantiles(self) -> pd.DataFrame:
        rows = []
        for (scen, method, metric), grp in self.records.groupby(["scenario", "method", "metric"], sort=False):
            v = grp["value"].to_numpy()
            v = v[np.isfinite(v)]
            qs = np.quantile(v, QUANTILES) if v.size else [np.nan] * len(QUANTILES)
            rows.append({"scenario": scen, "method": method, "metric": metric, "n": int(v.size), **{f"q{int(q * 100)}": float(x) for q, x in zip(QUANTILES, qs)}})
        return pd.DataFrame(rows)

    def ordering_violations(self, metric: str = "mse") -> dict:
        out = {}
        for scen in self.scenarios:
            w = self.wide(metric, scen)
            if not set(MSE_CHAIN) <= set(w.columns):
                continue
            w = w[list(MSE_CHAIN)].dropna()
            out[scen] = int(sum(not mse_ordering_holds(row) for row in w.to_dict("records")))
        return out

    def median_mse(self) -> dict:
        return {
            scen: {m: float(np.median(g)) for m, g in self.values("mse", scen).groupby("method")["value"]}
            for scen in self.scenarios
        }

    def pvalue_summary(self, hypothesis: int, alpha: float = 0.05) -> dict:
        metric = f"p_H{hypothesis}"
        out = {}
        for scen in self.scenarios:
            w = self.wide(metric, scen)
            if w.empty:
                continue
            ref = w["reference"] if "reference" in w else None
            cell = {}
            for m in w.columns:
                p = w[m].dropna().to_numpy()
                entry = {
                    "median": float(np.median(p)),
                    "reject_rate": float(np.mean(p < alpha)),
                    "ks_uniform_p": float(stats.kstest(p, "uniform").pvalue) if p.size > 1 else None,
                    "n": int(p.size),
                }
                if ref is not None and m != "reference":
                    d = (w[m] - ref).abs().dropna()
                    entry["median_abs_diff_reference"] = float(np.median(d))
                cell[m] = entry
            out[scen] = cell
        mono = {}
        methods = sorted({m for c in out.values() for m in c})
        for m in methods:
            meds = [out[s][m]["median"] for s in self.scenarios if s in out and m in out[s]]
            mono[m] = bool(all(b <= a + 1e-12 for a, b in zip(meds, meds[1:])))
        return {"cells": out, "median_nonincreasing": mono}

    def summary(self) -> dict:
        out = {"grid": self.grid.to_dict(), "fixed_truth": self.fixed_truth, "failures": self.failures}
        if (self.records["metric"] == "mse").any():
            out["median_mse"] = self.median_mse()
            out["ordering_violations"] = self.ordering_violations("mse")
        if (self.records["metric"] == "mse_truth").any():
            out["ordering_violations_truth"] = self.ordering_violations("mse_truth")
        for h in self.hypotheses:
            out[f"H{h}"] = self.pvalue_summary(h)
        return out

    def to_json(self, path=None):
        text = json.dumps(_jsonable(self.summary()), indent=2, sort_keys=True) + "\n"
        if path is None:
            return text
        atomic_write(path, text)
        return None

    def to_csv(self, path=None):
        text = self.records.to_csv(index=False, lineterminator="\n", float_format="%.12g")
        if path is None:
            return text
        atomic_write(path, text)
        return None

    def svg_panels(self) -> dict:
        """One boxplot SVG per metric, categories = scenarios, series = methods."""
        panels = {}
        for metric in self.records["metric"].unique():
            groups = {}
            for scen in self.scenarios:
                sub = self.values(metric, scen)
                groups[scen] = {m: g["value"].to_numpy() for m, g in sub.groupby("method", sort=False)}
            title = {"mse": "MSE by model", "mse_truth": "MSE, variances at truth"}.get(metric, f"p-values, {metric[2:]}")
            panels[metric] = boxplot_panel(groups, title=title, ylabel=metric)
        return panels

    def write(self, out_dir) -> list[str]:
        os.makedirs(out_dir, exist_ok=True)
        written = []
        for name, writer in (("report.json", self.to_json), ("records.csv", self.to_csv)):
            path = os.path.join(out_dir, name)
            writer(path)
            written.append(path)
        path = os.path.join(out_dir, "quantiles.csv")
        atomic_write(path, self.quantiles().to_csv(index=False, lineterminator="\n", float_format="%.12g"))
        written.append(path)
        for metric, svg in self.svg_panels().items():
            path = os.path.join(out_dir, f"boxplot_{metric}.svg")
            atomic_write(path, svg)
            written.append(path)
        return written


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        return None if not np.isfinite(obj) else float(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def _replicate(grid: ScenarioGrid, value: float, rep: int, hypotheses, want_mse: bool, fixed_truth: bool):
    cfg = grid.config(value)
    scen = grid.label(value)
    records, failures = [], []

    def record(method, metric, val):
        records.append((scen, rep, method, metric, float(val)))

    def attempt(method, what, fn):
        try:
            return fn()
        except Exception as exc:  # recorded, not fatal
            failures.append({"scenario": scen, "rep": rep, "method": method, "stage": what, "error": f"{type(exc).__name__}: {exc}"})
            return None

    full = simulate_complete(cfg, replicate=rep)
    ds = destructive_sample(full, cfg.K, (cfg.seed, rep))
    pa = attempt("grouping", "group", lambda: assign_pseudo_units(ds, cfg.G, grid.strategy))

    if want_mse:
        for method in MODELS:
            if pa is None and method in ("proposed", "manova"):
                continue
            fit = attempt(method, "mse", lambda m=method: fit_model(ds, m, pa))
            if fit is not None:
                record(method, "mse", fit.mse)
        if fixed_truth:
            for method in MSE_CHAIN:
                if pa is None and method == "proposed":
                    continue
                vc = truth_components(method, cfg.sigma_b2, cfg.sigma_eta2, cfg.sigma_eps2, cfg.K, cfg.L)
                fit = attempt(method, "mse_truth", lambda m=method, v=vc: fit_model(ds, m, pa, vc=None if m == "fixed" else v))
                if fit is not None:
                    record(method, "mse_truth", fit.mse)

    if hypotheses:
        tables = {
            "fixed": attempt("fixed", "anova", lambda: anova_fixed(ds)),
            "deaton": attempt("deaton", "anova", lambda: anova_deaton(ds)),
            "proposed": attempt("proposed", "anova", lambda: anova_proposed(ds, pa)) if pa is not None else None,
        }
        mr = attempt("manova", "responses", lambda: build_manova_responses(ds, pa)) if pa is not None else None
        ref = attempt("reference", "anova", lambda: anova_proposed(full, assign_pseudo_units(full, strategy="unit")))
        for h in hypotheses:
            source, term = HYPOTHESES[h]
            metric = f"p_H{h}"
            for method, table in tables.items():
                if table is not None:
                    record(method, metric, table.p_value(source))
            if mr is not None:
                res = attempt("manova", metric, lambda t=term: manova_test(mr, t, factors=["A"]))
                if res is not None:
                    record("manova", metric, res.p)
            if ref is not None:
                record("reference", metric, ref.p_value(source))
    return records, failures


def run_experiment(grid: ScenarioGrid, hypotheses=(), mse: bool = True, fixed_truth: bool = False, threads: int = 1) -> ComparisonReport:
    """Run every (scenario, replicate) task and gather a report."""
    hypotheses = tuple(int(h) for h in hypotheses)
    for h in hypotheses:
        if h not in HYPOTHESES:
            raise ValidationError(f"hypothesis must be one of {sorted(HYPOTHESES)}")
    tasks = [(v, r) for v in grid.values for r in range(int(grid.reps))]

    def run(task):
        return _replicate(grid, task[0], task[1], hypotheses, mse, fixed_truth)

    threads = max(1, int(threads or 1))
    if threads == 1:
        results = [run(t) for t in tasks]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run, tasks))  # map keeps task order
    rows = [rec for recs, _ in results for rec in recs]
    failures = [f for _, fails in results for f in fails]
    if failures:
        logger.warning("%d fit failures recorded", len(failures))
    records = pd.DataFrame(rows, columns=["scenario", "rep", "method", "metric", "value"])
    return ComparisonReport(grid, records, failures, hypotheses, fixed_truth)


def run_mse_comparison(grid: ScenarioGrid, fixed_truth: bool = False, threads: int = 1) -> ComparisonReport:
    """MSE of every model per replicate; MSE ordering violations counted in the summary."""
    return run_experiment(grid, hypotheses=(), mse=True, fixed_truth=fixed_truth, threads=threads)


def run_pvalue_experiment(grid: ScenarioGrid, hypothesis: int | None = None, threads: int = 1) -> ComparisonReport:
    """p-values of each method plus the complete-panel reference.

    ``hypothesis`` 1 tests the interaction, 2 the treatment and 3 time;
    by default it follows the swept effect.
    """
    h = SWEEP_HYPOTHESIS[grid.sweep] if hypothesis is None else hypothesis
    return run_experiment(grid, hypotheses=(h,), mse=False, threads=threads)
