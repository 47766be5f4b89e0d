"""The competing models, fitted on one dataset and scored on its raw observations.

========  ==========================================================
proposed  random intercepts for experimental units and pseudo-units
randint   random intercept for experimental units only
deaton    random intercept model on (eu, time) averages
fixed     ordinary least squares on the fixed effects
manova    multivariate model on pseudo-unit mean trajectories
========  ==========================================================

Every fit returns fitted values for the raw observations so mean squared
errors share the denominator ``N = sum n_i``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .data import DesignMatrices, LongDataset, build_design, parse_terms
from .exceptions import DesignError, ValidationError
from .grouping import PseudoUnitAssignment
from .lmm import FittedLMM, VarianceComponents, fit_lmm
from .manova import build_manova_responses, manova_fitted

MODELS = ("proposed", "randint", "deaton", "fixed", "manova")
LMM_MODELS = ("proposed", "randint", "deaton", "fixed")


@dataclass(frozen=True)
class ModelFit:
    model: str
    fitted: np.ndarray
    y: np.ndarray
    lmm: FittedLMM | None = None
    design: DesignMatrices | None = None
    info: dict = field(default_factory=dict)

    @property
    def residuals(self) -> np.ndarray:
        return self.y - self.fitted

    @property
    def mse(self) -> float:
        return float(np.mean(self.residuals**2))

    @property
    def pseudo_r2(self) -> float:
        """``1 - SSE / SST`` on the raw observations."""
        sst = float(np.sum((self.y - self.y.mean()) ** 2))
        return 1.0 - float(np.sum(self.residuals**2)) / sst if sst > 0 else 0.0

    def to_dict(self) -> dict:
        out = {"model": self.model, "mse": self.mse, "pseudo_r2": self.pseudo_r2, "n_obs": int(len(self.y))}
        if self.lmm is not None:
            out.update(self.lmm.to_dict(self.design))
            out["mse"] = self.mse  # raw-observation scale for averaged fits
        out.update(self.info)
        return out


def average_cells(ds: LongDataset, factors=None) -> tuple[LongDataset, np.ndarray]:
    """Mean response per (eu, time) cell.

    Returns the averaged dataset and, for every raw observation, the row of
    its cell in the averaged dataset. Only factors constant within cells are
    carried over.
    """
    frame = ds.frame
    cell = ds.eu_codes * ds.t + ds.time_index
    codes, uniques = pd.factorize(cell, sort=True)
    means = np.bincount(codes, weights=ds.y) / np.bincount(codes)
    first = np.zeros(len(uniques), dtype=np.intp)
    first[codes[::-1]] = np.arange(len(codes))[::-1]
    keep = {}
    for name in ds.factors if factors is None else factors:
        col = frame[name].to_numpy()
        if not np.array_equal(col, col[first][codes]):
            if factors is not None:
                raise DesignError(f"factor {name!r} varies within (eu, time) cells and cannot be averaged")
            continue
        keep[name] = col[first]
    avg = pd.DataFrame(
        {"eu": frame["eu"].to_numpy()[first], "obs": "mean", "time": frame["time"].to_numpy()[first], "rep": 1, **keep, "y": means}
    )
    return LongDataset(avg, factors={k: ds.factors[k] for k in keep}), codes


def _fixed_factors(fixed) -> list[str]:
    return sorted({f for term in parse_terms(fixed) for f in term if f != "time"})


def truth_components(model: str, sigma_b2: float, sigma_eta2: float, sigma_eps2: float, K: int, L: int) -> VarianceComponents:
    """Variance components each model implies when the generator is known.

    The random-intercept model absorbs the unit effect into its residual;
    the averaged model sees cell means of ``K`` units with ``L`` replicates.
    """
    if model == "proposed":
        return VarianceComponents(sigma_b2, sigma_eta2, sigma_eps2)
    if model == "randint":
        return VarianceComponents(sigma_b2, 0.0, sigma_eta2 + sigma_eps2)
    if model == "deaton":
        return VarianceComponents(sigma_b2, 0.0, sigma_eta2 / K + sigma_eps2 / (K * L))
    if model == "fixed":
        return VarianceComponents(0.0, 0.0, sigma_b2 + sigma_eta2 + sigma_eps2)
    raise ValidationError(f"no variance components for model {model!r}")


def fit_model(
    ds: LongDataset,
    model: str,
    pa: PseudoUnitAssignment | None = None,
    fixed=None,
    criterion: str = "reml",
    vc: VarianceComponents | None = None,
) -> ModelFit:
    """Fit one of :data:`MODELS` to ``ds``.

    ``vc`` holds the variance components at given values instead of
    estimating them (ignored by ``fixed`` and ``manova``).
    """
    if model not in MODELS:
        raise ValidationError(f"unknown model {model!r}; choose from {MODELS}")
    if model in ("proposed", "manova") and pa is None:
        raise ValidationError(f"model {model!r} needs a pseudo-unit grouping")
    y = ds.y
    if model == "proposed":
        dm = build_design(ds, fixed=fixed, random=("eu", "eu:group"), grouping=pa)
        fm = fit_lmm(dm, y, criterion=criterion, vc=vc)
        return ModelFit(model, fm.fitted, y, fm, dm)
    if model == "randint":
        dm = build_design(ds, fixed=fixed, random=("eu",))
        fm = fit_lmm(dm, y, criterion=criterion, vc=vc)
        return ModelFit(model, fm.fitted, y, fm, dm)
    if model == "fixed":
        dm = build_design(ds, fixed=fixed, random=())
        fm = fit_lmm(dm, y, criterion=criterion)
        return ModelFit(model, fm.fitted, y, fm, dm)
    if model == "deaton":
        names = _fixed_factors(fixed if fixed is not None else ("A", "time", "A:time"))
        avg, codes = average_cells(ds, factors=[n for n in names if n in ds.factors])
        dm = build_design(avg, fixed=fixed, random=("eu",))
        fm = fit_lmm(dm, avg.y, criterion=criterion, vc=vc)
        return ModelFit(model, fm.fitted[codes], y, fm, dm, {"n_cells": len(avg)})
    mr = build_manova_responses(ds, pa)
    names = _fixed_factors(fixed if fixed is not None else ("A",))
    factors = [n for n in names if n in mr.factors]
    return ModelFit(model, manova_fitted(mr, ds, pa, factors=factors), y, info={"rows": mr.n_rows})


def mse_ordering_holds(mses: dict, slack: float = 1e-6) -> bool:
    """``proposed <= randint <= deaton <= fixed`` up to ``slack``."""
    chain = [mses[m] for m in ("proposed", "randint", "deaton", "fixed")]
    return all(a <= b + slack for a, b in zip(chain, chain[1:]))
