"""Multivariate analysis of variance on per-pseudo-unit mean trajectories.

Each (experimental unit, pseudo-unit) pair contributes one row: the vector of
its mean responses at times 1..t. Hypothesis and error SSCP matrices come from
the multivariate linear model on the row-level factors.

Terms:

* a row factor such as ``"A"``: equality of the whole mean vector;
* ``"A:time"``: the same test on within-row time contrasts (parallel
  profiles, i.e. no interaction);
* ``"time"``: intercept of the time contrasts (flat profiles).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from scipy import linalg, stats

from .data import LongDataset, atomic_write, effect_coding
from .exceptions import DesignError, NumericalError, ValidationError
from .grouping import PseudoUnitAssignment

STATISTICS = ("pillai", "wilks", "hotelling_lawley", "roy")
EIGEN_CLAMP = -1e-10


@dataclass(frozen=True)
class ManovaResponses:
    """One t-vector of means per (eu, group) row.

    Attributes
    ----------
    Y : ndarray, shape (rows, t)
    keys : DataFrame
        ``eu`` and ``group`` (1-based) per row plus every row-level factor.
    counts : ndarray, shape (rows, t)
        Observations averaged into each coordinate.
    """

    Y: np.ndarray
    keys: pd.DataFrame
    counts: np.ndarray
    factors: dict = field(default_factory=dict)

    @property
    def n_rows(self) -> int:
        return self.Y.shape[0]

    @property
    def t(self) -> int:
        return self.Y.shape[1]


def build_manova_responses(ds: LongDataset, pa: PseudoUnitAssignment) -> ManovaResponses:
    groups = pa.groups_for(ds)
    G = int(groups.max()) + 1
    t = ds.t
    row = ds.eu_codes * G + groups
    n_rows = ds.n_eu * G
    cell = row * t + ds.time_index
    sums = np.bincount(cell, weights=ds.y, minlength=n_rows * t).reshape(n_rows, t)
    counts = np.bincount(cell, minlength=n_rows * t).reshape(n_rows, t)
    present = counts.sum(axis=1) > 0
    if pa.strategy != "unit":
        present[:] = True
    empty = np.argwhere((counts == 0) & present[:, None])
    if len(empty):
        r, k = empty[0]
        eu, g = ds.eu_levels[r // G], r % G + 1
        raise ValidationError(f"empty cell: eu={eu}, group={g}, time={k + 1}")
    sums, counts = sums[present], counts[present]
    idx = np.flatnonzero(present)
    keys = pd.DataFrame({"eu": [ds.eu_levels[r // G] for r in idx], "group": idx % G + 1})
    factors = {}
    frame = ds.frame
    for name, levels in ds.factors.items():
        per_row = pd.Series(frame[name].to_numpy()).groupby(row).agg(["first", "nunique"])
        if (per_row["nunique"] > 1).any():
            continue  # varies within a row: not a between-row factor
        keys[name] = per_row["first"].reindex(idx).to_numpy()
        factors[name] = levels
    return ManovaResponses(Y=sums / counts, keys=keys, counts=counts, factors=factors)


@dataclass(frozen=True)
class StatisticResult:
    name: str
    value: float
    F: float
    df1: float
    df2: float
    p: float


@dataclass(frozen=True)
class ManovaResult:
    term: str
    Qh: np.ndarray
    Qe: np.ndarray
    eigenvalues: np.ndarray
    df_hyp: int
    df_err: int
    statistics: dict

    @property
    def pillai(self) -> float:
        return self.statistics["pillai"].value

    @property
    def wilks(self) -> float:
        return self.statistics["wilks"].value

    @property
    def hotelling_lawley(self) -> float:
        return self.statistics["hotelling_lawley"].value

    @property
    def roy(self) -> float:
        return self.statistics["roy"].value

    @property
    def p(self) -> float:
        """Pillai p-value, the default test."""
        return self.statistics["pillai"].p

    def to_record(self, statistic: str = "pillai") -> dict:
        s = self.statistics[statistic]
        return {"term": self.term, "df": self.df_hyp, statistic: s.value, "approxF": s.F, "numdf": s.df1, "dendf": s.df2, "p": s.p}

    def summary_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            [{"statistic": s.name, "value": s.value, "F": s.F, "numdf": s.df1, "dendf": s.df2, "p": s.p} for s in self.statistics.values()]
        )


def results_to_csv(results, path=None):
    """Rows ``term,df,pillai,approxF,numdf,dendf,p``."""
    frame = pd.DataFrame([r.to_record() for r in results], columns=["term", "df", "pillai", "approxF", "numdf", "dendf", "p"])
    text = frame.to_csv(index=False, lineterminator="\n", float_format="%.12g")
    if path is None:
        return text
    atomic_write(path, text)
    return None


def generalized_eigenvalues(Qh, Qe) -> np.ndarray:
    """Eigenvalues of ``Qe^{-1} Qh`` via the Cholesky-symmetrized form, descending."""
    Qh = np.asarray(Qh, dtype=float)
    Qe = np.asarray(Qe, dtype=float)
    try:
        L = linalg.cholesky(Qe, lower=True)
    except linalg.LinAlgError:
        raise NumericalError("error SSCP matrix is singular") from None
    A = linalg.solve_triangular(L, Qh, lower=True)
    A = linalg.solve_triangular(L, A.T, lower=True)
    lam = linalg.eigvalsh(0.5 * (A + A.T))[::-1]
    if lam.size and lam.min() < EIGEN_CLAMP * max(1.0, lam.max()):
        raise NumericalError(f"negative eigenvalue {lam.min():.3g}: hypothesis SSCP is not positive semidefinite")
    return np.maximum(lam, 0.0)


def _fp(F, d1, d2):
    if not np.isfinite(F):
        return 0.0
    return float(stats.f.sf(F, d1, d2))


def statistics_from_eigenvalues(lam, p: int, q: int, v: int) -> dict:
    """The four classical statistics with their F approximations.

    ``p`` response dimension, ``q`` hypothesis df, ``v`` error df. Roy's
    value is reported as ``theta = l1 / (1 + l1)``; its F uses ``l1``
    directly and is an upper bound on the true statistic.
    """
    lam = np.sort(np.maximum(np.asarray(lam, dtype=float), 0.0))[::-1]
    s = min(p, q)
    m = (abs(p - q) - 1) / 2
    n = (v - p - 1) / 2
    out = {}

    V = float(np.sum(lam / (1 + lam)))
    d1, d2 = s * (2 * m + s + 1), s * (2 * n + s + 1)
    F = d2 / d1 * V / (s - V) if s - V > 0 else np.inf
    out["pillai"] = StatisticResult("pillai", V, F, d1, d2, _fp(F, d1, d2))

    W = float(np.prod(1.0 / (1 + lam)))
    r = v - (p - q + 1) / 2
    u = (p * q - 2) / 4
    tt = np.sqrt((p * p * q * q - 4) / (p * p + q * q - 5)) if p * p + q * q - 5 > 0 else 1.0
    d1, d2 = p * q, r * tt - 2 * u
    w = W ** (1 / tt)
    F = (1 - w) / w * d2 / d1 if w > 0 else np.inf
    out["wilks"] = StatisticResult("wilks", W, F, d1, d2, _fp(F, d1, d2))

    U = float(np.sum(lam))
    if n > 1:
        b = (p + 2 * n) * (q + 2 * n) / (2 * (2 * n + 1) * (n - 1))
        d1 = p * q
        d2 = 4 + (p * q + 2) / (b - 1)
        c = (d2 - 2) / (2 * n)
        F = d2 / d1 * U / c
    else:
        d1, d2 = s * (2 * m + s + 1), 2 * (s * n + 1)
        F = d2 * U / (s * d1)
    out["hotelling_lawley"] = StatisticResult("hotelling_lawley", U, F, d1, d2, _fp(F, d1, d2))

    l1 = float(lam[0]) if lam.size else 0.0
    rr = max(p, q)
    d1, d2 = rr, v - rr + q
    F = d2 / d1 * l1
    out["roy"] = StatisticResult("roy", l1 / (1 + l1), F, d1, d2, _fp(F, d1, d2))
    return {
        k: StatisticResult(r.name, float(r.value), float(r.F), float(r.df1), float(r.df2), float(r.p)) for k, r in out.items()
    }


def time_contrasts(t: int) -> np.ndarray:
    """Orthonormal ``t x (t-1)`` basis orthogonal to the constant vector."""
    if t < 2:
        raise ValidationError("time contrasts need t >= 2")
    q, _ = np.linalg.qr(np.column_stack([np.ones(t), np.eye(t)[:, : t - 1]]))
    return q[:, 1:]


def _design(mr: ManovaResponses, factors, drop=None):
    n = mr.n_rows
    blocks, names = [np.ones((n, 1))], ["(Intercept)"]
    for f in factors:
        codes, levels = pd.factorize(mr.keys[f], sort=True)
        if len(levels) < 2:
            raise DesignError(f"factor {f!r} needs at least two levels")
        blocks.append(effect_coding(codes, len(levels)))
        names.append(f)
    keep = [b for b, nm in zip(blocks, names) if nm != drop]
    return np.hstack(blocks), np.hstack(keep) if keep else np.zeros((n, 0)), blocks[names.index(drop)].shape[1] if drop in names else 0


def _residual_sscp(Y, X):
    if X.shape[1] == 0:
        return Y.T @ Y
    B, *_ = np.linalg.lstsq(X, Y, rcond=None)
    E = Y - X @ B
    return E.T @ E


def manova_test(mr: ManovaResponses, term: str = "A", factors=None) -> ManovaResult:
    """Test one term of the multivariate model.

    ``factors`` lists the between-row factors in the model (default: every
    row-level factor of ``mr``).
    """
    factors = list(mr.factors) if factors is None else list(factors)
    if term == "time":
        Y, target = mr.Y @ time_contrasts(mr.t), "(Intercept)"
    elif term.endswith(":time") or term.startswith("time:"):
        target = term.replace(":time", "").replace("time:", "")
        Y = mr.Y @ time_contrasts(mr.t)
    else:
        Y, target = mr.Y, term
    if target != "(Intercept)" and target not in factors:
        raise DesignError(f"term {term!r} is not in the MANOVA design (factors: {factors})")
    X_full, X_red, q = _design(mr, factors, drop=target)
    rank = np.linalg.matrix_rank(X_full)
    v = mr.n_rows - rank
    p = Y.shape[1]
    if v < p:
        raise ValidationError(f"error df {v} is smaller than the response dimension {p}; the error SSCP is singular")
    Qe = _residual_sscp(Y, X_full)
    Qh = _residual_sscp(Y, X_red) - Qe
    Qh = 0.5 * (Qh + Qh.T)
    lam = generalized_eigenvalues(Qh, Qe)
    return ManovaResult(term, Qh, Qe, lam, int(q), int(v), statistics_from_eigenvalues(lam, p, q, v))


def manova_fitted(mr: ManovaResponses, ds: LongDataset, pa: PseudoUnitAssignment, factors=None) -> np.ndarray:
    """Per-observation fitted values of the multivariate model."""
    factors = list(mr.factors) if factors is None else list(factors)
    X, _, _ = _design(mr, factors)
    B, *_ = np.linalg.lstsq(X, mr.Y, rcond=None)
    fit = X @ B
    groups = pa.groups_for(ds) + 1
    row_id = pd.MultiIndex.from_arrays([mr.keys["eu"].astype(str), mr.keys["group"].astype(int)])
    obs_row = row_id.get_indexer(pd.MultiIndex.from_arrays([ds.frame["eu"], groups]))
    if (obs_row < 0).any():
        raise DesignError("observation without a MANOVA row")
    return fit[obs_row, ds.time_index]
