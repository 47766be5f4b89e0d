"""Scikit-learn style wrappers around the model fits.

Inputs are long-format DataFrames (``eu, obs, time, rep, <factors>``) with
the response passed as ``y``, or a :class:`~dlmm.data.LongDataset`.
"""

from __future__ import annotations

import numpy as np
import pandas as pd
from sklearn.base import BaseEstimator, RegressorMixin, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .data import LongDataset, parse_terms, term_name
from .grouping import STRATEGIES, assign_pseudo_units
from .lmm import VarianceComponents
from .manova import build_manova_responses, manova_test
from .models import fit_model
from .validation import check_choice, check_long_data, check_positive_int


class PseudoUnitGrouper(TransformerMixin, BaseEstimator):
    """Adds a ``group`` column (1..G) built within every (eu, time) cell."""

    def __init__(self, G=2, strategy="rank", covariate=None):
        self.G = G
        self.strategy = strategy
        self.covariate = covariate

    def fit(self, X, y=None):
        check_positive_int(self.G, "G")
        check_choice(self.strategy, "strategy", STRATEGIES)
        return self

    def fit_transform(self, X, y=None, **fit_params):
        # ranking needs the response, which the inherited version drops
        return self.fit(X, y).transform(X, y)

    def transform(self, X, y=None):
        ds = check_long_data(X, y)
        pa = assign_pseudo_units(ds, self.G, self.strategy, self.covariate)
        out = ds.frame.copy()
        out["group"] = pa.group
        return out


class _LongModel(RegressorMixin, BaseEstimator):
    _model = ""

    def _fit_kwargs(self, ds):
        return {}

    def fit(self, X, y=None):
        ds = check_long_data(X, y)
        kwargs = self._fit_kwargs(ds)
        self.fit_ = fit_model(ds, self._model, fixed=self.fixed, criterion=self.criterion, **kwargs)
        lmm = self.fit_.lmm
        self.variance_components_ = lmm.vc
        self.coef_ = lmm.beta
        self.effects_ = self.fit_.design.decode(lmm.beta)
        self.term_levels_ = dict(self.fit_.design.term_levels)
        self.terms_ = [t for t in self.fit_.design.terms if t != ()]
        self.blups_ = {}
        if "eu" in lmm.vhat:
            self.blups_["eu"] = dict(zip(self.fit_.design.eu_levels, lmm.vhat["eu"]))
        if "group" in lmm.vhat:
            self.blups_["group"] = {(eu, g + 1): v for (eu, g), v in zip(self.fit_.design.group_levels, lmm.vhat["group"])}
        self.mse_ = self.fit_.mse
        self.fitted_ = self.fit_.fitted
        return self

    def _fixed_part(self, frame: pd.DataFrame) -> np.ndarray:
        out = np.full(len(frame), self.effects_["(Intercept)"])
        for term in self.terms_:
            idx = []
            for f in term:
                levels = self.term_levels_[f]
                codes = pd.Categorical(frame[f].astype(str), categories=levels).codes
                if (codes < 0).any():
                    raise ValueError(f"unseen level of {f!r} in prediction data")
                idx.append(codes)
            out += self.effects_[term_name(term)][tuple(idx)]
        return out

    def predict(self, X):
        """Fixed effects plus BLUPs for known units; unseen units get 0."""
        check_is_fitted(self, "fit_")
        frame = X.frame if isinstance(X, LongDataset) else pd.DataFrame(X)
        pred = self._fixed_part(frame)
        if "eu" in self.blups_:
            pred += frame["eu"].astype(str).map(self.blups_["eu"]).fillna(0.0).to_numpy()
        if "group" in self.blups_ and "group" in frame.columns:
            keys = zip(frame["eu"].astype(str), frame["group"].astype(int))
            pred += np.array([self.blups_["group"].get(k, 0.0) for k in keys])
        return pred


class ProposedModel(_LongModel):
    """Random intercepts for experimental units and pseudo-units.

    Parameters
    ----------
    G : int
        Pseudo-units per experimental unit.
    strategy : {"rank", "quantile", "covariate", "unit"}
    covariate : str, optional
        Factor defining the groups for ``strategy="covariate"``.
    fixed : str or list, optional
        Fixed-effect terms; default ``A + time + A:time``.
    criterion : {"reml", "ml"}
    """

    _model = "proposed"

    def __init__(self, G=2, strategy="rank", covariate=None, fixed=None, criterion="reml"):
        self.G = G
        self.strategy = strategy
        self.covariate = covariate
        self.fixed = fixed
        self.criterion = criterion

    def _fit_kwargs(self, ds):
        self.grouping_ = assign_pseudo_units(ds, check_positive_int(self.G, "G"), self.strategy, self.covariate)
        return {"pa": self.grouping_}

    def predict(self, X):
        """As the base class; rows of the training data get their pseudo-unit BLUP too."""
        check_is_fitted(self, "fit_")
        frame = X.frame if isinstance(X, LongDataset) else pd.DataFrame(X)
        if "group" not in frame.columns and {"eu", "time", "obs", "rep"} <= set(frame.columns):
            keys = frame[["eu", "time", "obs", "rep"]].astype({"eu": str, "obs": str, "time": "int64", "rep": "int64"})
            known = self.grouping_.to_frame()
            frame = frame.assign(group=keys.merge(known, how="left", on=["eu", "time", "obs", "rep"])["group"].fillna(0).to_numpy())
        return super().predict(frame)


class RandomInterceptModel(_LongModel):
    _model = "randint"

    def __init__(self, fixed=None, criterion="reml"):
        self.fixed = fixed
        self.criterion = criterion


class DeatonModel(_LongModel):
    """Random-intercept model on (eu, time) averages."""

    _model = "deaton"

    def __init__(self, fixed=None, criterion="reml"):
        self.fixed = fixed
        self.criterion = criterion


class FixedEffectsModel(_LongModel):
    _model = "fixed"

    def __init__(self, fixed=None, criterion="reml"):
        self.fixed = fixed
        self.criterion = criterion

    def fit(self, X, y=None):
        super().fit(X, y)
        self.variance_components_ = VarianceComponents(0.0, 0.0, self.variance_components_.sigma_eps2)
        return self


class ManovaModel(RegressorMixin, BaseEstimator):
    """MANOVA on pseudo-unit mean trajectories; ``results_`` maps term to result."""

    def __init__(self, G=2, strategy="rank", covariate=None, terms=("A", "A:time", "time")):
        self.G = G
        self.strategy = strategy
        self.covariate = covariate
        self.terms = terms

    def fit(self, X, y=None):
        ds = check_long_data(X, y)
        self.grouping_ = assign_pseudo_units(ds, check_positive_int(self.G, "G"), self.strategy, self.covariate)
        self.responses_ = build_manova_responses(ds, self.grouping_)
        factors = sorted({f for term in parse_terms(list(self.terms)) for f in term if f != "time"})
        self.results_ = {t: manova_test(self.responses_, t, factors=factors) for t in self.terms}
        self.fit_ = fit_model(ds, "manova", self.grouping_, fixed=factors or None)
        self.mse_ = self.fit_.mse
        self.fitted_ = self.fit_.fitted
        self._train = ds
        return self

    def predict(self, X):
        """Fitted treatment-by-time means, looked up by the row's factors and time."""
        check_is_fitted(self, "fit_")
        frame = X.frame if isinstance(X, LongDataset) else pd.DataFrame(X)
        train = self._train.frame
        factors = [f for f in self.responses_.factors]
        keys = factors + ["time"]
        table = pd.DataFrame({**{k: train[k].astype(str) if k != "time" else train[k] for k in keys}, "fit": self.fitted_})
        means = table.groupby(keys)["fit"].first()
        look = pd.MultiIndex.from_frame(frame[keys].astype({k: str for k in factors}))
        return means.reindex(look).to_numpy()
