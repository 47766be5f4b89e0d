"""Command-line interface.

Exit codes: 0 success, 1 invalid input or usage, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

import numpy as np
import pandas as pd

from . import __version__
from .anova import anova
from .data import atomic_write, load_csv
from .diagnostics import (
    BARTLETT_BINS,
    BARTLETT_SEED,
    acf_band_fraction,
    acf_frame,
    anderson_darling,
    binned_bartlett,
    normal_quantiles,
    residual_acf,
)
from .exceptions import DlmmError, NumericalError, ValidationError
from .experiments import SWEEP_HYPOTHESIS, ScenarioGrid, run_experiment
from .grouping import STRATEGIES, assign_pseudo_units, pseudo_unit_summary
from .manova import STATISTICS, build_manova_responses, manova_test
from .models import MODELS, fit_model
from .simulate import SimulationConfig, destructive_sample, simulate_complete
from .svg import correlogram_panels

logger = logging.getLogger("dlmm")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ValidationError(f"{self.prog}: {message}")


def _emit(text: str, path):
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        atomic_write(path, text)


def _json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, default=_default) + "\n"


def _default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not serializable: {type(o).__name__}")


def _resolve_seed(args, fallback: int) -> int:
    if getattr(args, "seed", None) is not None:
        return args.seed
    env = os.environ.get("DLMM_SEED")
    if env is not None and env.strip():
        try:
            return int(env)
        except ValueError:
            raise ValidationError(f"DLMM_SEED must be an integer, got {env!r}") from None
    return fallback


def _config(args) -> SimulationConfig:
    cfg = SimulationConfig.from_json(args.config) if args.config else SimulationConfig()
    seed = _resolve_seed(args, cfg.seed)
    return cfg if seed == cfg.seed else cfg.replace(seed=seed)


def _default_fixed(ds, fixed):
    if fixed:
        return fixed
    if "A" in ds.factors:
        return "A+time+A:time"
    return "time" if ds.t > 1 else "1"


def _grouping(ds, args):
    return assign_pseudo_units(ds, args.groups, args.strategy, args.covariate)


# commands -----------------------------------------------------------------


def cmd_simulate(args):
    cfg = _config(args)
    full = simulate_complete(cfg, replicate=args.replicate)
    ds = full if args.complete else destructive_sample(full, cfg.K, (cfg.seed, args.replicate))
    _emit(ds.to_csv(), args.out)
    if args.write_config:
        cfg.to_json(args.write_config)
    logger.info("wrote %d observations", len(ds))


def cmd_group(args):
    ds = load_csv(args.input)
    pa = _grouping(ds, args)
    _emit(pa.to_csv(), args.out)
    if args.summary:
        rep = pseudo_unit_summary(pa, ds)
        frame = rep.counts.reset_index()
        atomic_write(args.summary, frame.to_csv(index=False, lineterminator="\n"))
        if rep.flags():
            logger.warning("grouping is %s", " and ".join(rep.flags()))


def cmd_fit(args):
    ds = load_csv(args.input, destructive=args.destructive)
    pa = _grouping(ds, args) if args.model in ("proposed", "manova") else None
    fixed = _default_fixed(ds, args.fixed)
    if args.model == "manova":
        fixed = args.fixed or ("A" if "A" in ds.factors else None)
    fit = fit_model(ds, args.model, pa, fixed=fixed, criterion=args.criterion)
    out = fit.to_dict()
    out["fixed"] = fixed
    if pa is not None:
        out["groups"] = pa.G
        out["strategy"] = pa.strategy
    _emit(_json(out), args.out)


def cmd_anova(args):
    ds = load_csv(args.input)
    pa = _grouping(ds, args) if args.model == "proposed" else None
    table = anova(ds, args.model, pa, treatment=args.treatment)
    if args.format == "csv":
        _emit(table.to_csv(), args.out)
    elif args.format == "json":
        _emit(_json({"model": table.model, "rows": table.to_frame().to_dict("records")}), args.out)
    else:
        _emit(table.to_text(), args.out)


def cmd_manova(args):
    ds = load_csv(args.input)
    pa = _grouping(ds, args)
    mr = build_manova_responses(ds, pa)
    terms = [t.strip() for t in args.terms.split(",") if t.strip()]
    factors = sorted({p for t in terms for p in t.split(":") if p != "time"})
    results = [manova_test(mr, t, factors=factors) for t in terms]
    if args.format == "json":
        payload = [
            {"term": r.term, "eigenvalues": r.eigenvalues, "statistics": {k: vars(s) for k, s in r.statistics.items()}}
            for r in results
        ]
        _emit(_json(payload), args.out)
        return
    frame = pd.DataFrame([r.to_record(args.statistic) for r in results])
    _emit(frame.to_csv(index=False, lineterminator="\n", float_format="%.12g"), args.out)


def cmd_compare(args):
    base = _config(args)
    grid = ScenarioGrid.parse_sweep(args.sweep, base=base, reps=args.reps, strategy=args.strategy)
    hyps = [int(h) for h in args.hypothesis.split(",")] if args.hypothesis else [SWEEP_HYPOTHESIS[grid.sweep]]
    report = run_experiment(grid, hypotheses=hyps, mse=not args.no_mse, fixed_truth=args.fixed_truth, threads=args.threads)
    written = report.write(args.out)
    for path in written:
        logger.info("wrote %s", path)
    if report.failures:
        logger.warning("%d fits failed; see report.json", len(report.failures))


def cmd_diagnose(args):
    ds = load_csv(args.input)
    pa = _grouping(ds, args)
    fit = fit_model(ds, "proposed", pa, fixed=_default_fixed(ds, args.fixed), criterion=args.criterion)
    os.makedirs(args.out, exist_ok=True)
    acfs = residual_acf(fit.lmm, ds, pa, args.maxlag)
    atomic_write(os.path.join(args.out, "acf.csv"), acf_frame(acfs).to_csv(index=False, lineterminator="\n", float_format="%.12g"))
    atomic_write(os.path.join(args.out, "correlogram.svg"), correlogram_panels(acfs))
    effects = {"b": fit.lmm.vhat.get("eu"), "eta": fit.lmm.vhat.get("group"), "eps": fit.lmm.residuals}
    rows = []
    for name, values in effects.items():
        if values is None or len(values) == 0:
            continue
        for test in ("anderson-darling", "bartlett"):
            try:
                res = anderson_darling(values) if test == "anderson-darling" else binned_bartlett(values, args.bins, args.bin_seed)
                rows.append({"component": name, **res.as_dict()})
            except ValidationError as exc:
                rows.append({"component": name, "test": test, "statistic": None, "p": None, "n": len(values), "df": None, "note": str(exc)})
        qq = normal_quantiles(values)
        atomic_write(os.path.join(args.out, f"qq_{name}.csv"), qq.to_csv(index=False, lineterminator="\n", float_format="%.12g"))
    tests = pd.DataFrame(rows)
    atomic_write(os.path.join(args.out, "tests.csv"), tests.to_csv(index=False, lineterminator="\n", float_format="%.12g"))
    summary = {"acf_band_fraction": acf_band_fraction(acfs), "series": len(acfs), "variance_components": fit.lmm.vc.as_dict()}
    atomic_write(os.path.join(args.out, "summary.json"), _json(summary))


# parser -------------------------------------------------------------------


def _add_grouping(p, default_groups=2):
    p.add_argument("--groups", "-G", type=int, default=default_groups, help="pseudo-units per experimental unit")
    p.add_argument("--strategy", choices=STRATEGIES, default="rank", help="grouping rule within (eu, time) cells")
    p.add_argument("--covariate", help="factor defining groups for --strategy covariate")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="dlmm", description="Mixed models for longitudinal data with destructive sampling.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="more log output (repeatable)")
    sub = parser.add_subparsers(dest="command", metavar="command", parser_class=_Parser)

    p = sub.add_parser("simulate", help="generate a complete panel and its destructive sample")
    p.add_argument("--config", help="SimulationConfig JSON file")
    p.add_argument("--seed", type=int, help="random seed (default: DLMM_SEED, then the config)")
    p.add_argument("--replicate", type=int, default=0, help="replicate index of the random stream")
    p.add_argument("--complete", action="store_true", help="write the complete panel instead of the destructive sample")
    p.add_argument("--out", "-o", help="output CSV (default: stdout)")
    p.add_argument("--write-config", help="also write the effective config JSON here")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("group", help="assign pseudo-observational units")
    p.add_argument("--in", dest="input", required=True, help="long-format CSV")
    _add_grouping(p)
    p.add_argument("--out", "-o", help="assignment CSV (eu,time,obs,rep,group)")
    p.add_argument("--summary", help="write per-(eu, group) counts by time to this CSV")
    p.set_defaults(func=cmd_group)

    p = sub.add_parser("fit", help="fit one model and write JSON")
    p.add_argument("--in", dest="input", required=True, help="long-format CSV")
    p.add_argument("--model", choices=MODELS, default="proposed")
    _add_grouping(p)
    p.add_argument("--criterion", choices=("reml", "ml"), default="reml")
    p.add_argument("--fixed", help="fixed terms, e.g. 'A+time+A:time' or '1'")
    p.add_argument("--destructive", action="store_true", help="reject units observed at more than one time")
    p.add_argument("--out", "-o", help="output JSON (default: stdout)")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("anova", help="balanced ANOVA table")
    p.add_argument("--in", dest="input", required=True, help="long-format CSV")
    p.add_argument("--model", choices=("fixed", "deaton", "proposed"), default="proposed")
    _add_grouping(p)
    p.add_argument("--treatment", default="A", help="treatment factor (default A)")
    p.add_argument("--format", choices=("csv", "json", "text"), default="csv")
    p.add_argument("--out", "-o", help="output file (default: stdout)")
    p.set_defaults(func=cmd_anova)

    p = sub.add_parser("manova", help="MANOVA on pseudo-unit trajectories")
    p.add_argument("--in", dest="input", required=True, help="long-format CSV")
    _add_grouping(p)
    p.add_argument("--terms", default="A,A:time,time", help="comma-separated terms")
    p.add_argument("--statistic", choices=STATISTICS, default="pillai", help="statistic reported in CSV")
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.add_argument("--out", "-o", help="output file (default: stdout)")
    p.set_defaults(func=cmd_manova)

    p = sub.add_parser("compare", help="Monte Carlo comparison over a scenario sweep")
    p.add_argument("--config", help="base SimulationConfig JSON file")
    p.add_argument("--seed", type=int, help="random seed (default: DLMM_SEED, then the config)")
    p.add_argument("--sweep", default="dAT=0,0.5,1", help="e.g. dAT=0,0.5,1 | dA=0,0.4,1 | dT=0,5,45")
    p.add_argument("--reps", type=int, default=100)
    p.add_argument("--hypothesis", help="comma-separated hypotheses 1 (AT), 2 (A), 3 (T); default follows the sweep")
    p.add_argument("--strategy", choices=STRATEGIES[:2], default="rank")
    p.add_argument("--fixed-truth", action="store_true", help="also fit with variance components at their true values")
    p.add_argument("--no-mse", action="store_true", help="skip the MSE comparison")
    p.add_argument("--threads", type=int, default=1, help="parallel replicates (results do not depend on it)")
    p.add_argument("--out", "-o", required=True, help="output directory")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("diagnose", help="residual correlograms and normality/variance tests")
    p.add_argument("--in", dest="input", required=True, help="long-format CSV")
    _add_grouping(p)
    p.add_argument("--fixed", help="fixed terms")
    p.add_argument("--criterion", choices=("reml", "ml"), default="reml")
    p.add_argument("--maxlag", type=int, default=None, help="largest lag (default t-1)")
    p.add_argument("--bins", type=int, default=BARTLETT_BINS, help="random bins for Bartlett's test")
    p.add_argument("--bin-seed", type=int, default=BARTLETT_SEED, help="seed of the random binning")
    p.add_argument("--out", "-o", required=True, help="output directory")
    p.set_defaults(func=cmd_diagnose)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise ValidationError("missing command; see dlmm --help")
        logging.basicConfig(
            level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr
        )
        args.func(args)
    except (NumericalError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"error: numerical failure: {exc}", file=sys.stderr)
        return 2
    except (DlmmError, ValueError, OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
