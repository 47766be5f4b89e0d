"""Residual checks: correlograms, Anderson-Darling normality, Bartlett variance homogeneity."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import pandas as pd
from scipy import stats

from .data import LongDataset, atomic_write
from .exceptions import ValidationError
from .grouping import PseudoUnitAssignment

BARTLETT_BINS = 4
BARTLETT_SEED = 20240101


@dataclass(frozen=True)
class TestResult:
    name: str
    statistic: float
    p: float
    n: int
    df: int | None = None

    __test__ = False  # keep pytest from collecting this class

    def as_dict(self) -> dict:
        return {"test": self.name, "statistic": self.statistic, "p": self.p, "n": self.n, "df": self.df}


@dataclass(frozen=True)
class AcfResult:
    """Sample autocorrelations at lags 1..maxlag for one (eu, group) series."""

    eu: str
    group: int
    lags: np.ndarray
    acf: np.ndarray
    band: float

    @property
    def inside(self) -> np.ndarray:
        return np.abs(self.acf) <= self.band


def acf(x, maxlag: int) -> np.ndarray:
    """Biased sample autocorrelation ``sum x_t x_{t+k} / sum x_t^2`` of the centred series."""
    x = np.asarray(x, dtype=float)
    if len(x) < 2:
        raise ValidationError("autocorrelation needs a series of length >= 2")
    maxlag = min(int(maxlag), len(x) - 1)
    d = x - x.mean()
    denom = float(d @ d)
    if denom == 0:
        return np.zeros(maxlag)
    return np.array([d[:-k] @ d[k:] / denom for k in range(1, maxlag + 1)])


def residual_acf(residuals, ds: LongDataset, pa: PseudoUnitAssignment, maxlag: int | None = None) -> list[AcfResult]:
    """Correlogram of each pseudo-unit's mean residual over time.

    ``residuals`` is a fitted model (anything with ``.residuals``) or an
    array aligned with ``ds``. The band is ``1.96 / sqrt(t)``.
    """
    res = np.asarray(getattr(residuals, "residuals", residuals), dtype=float)
    if len(res) != len(ds):
        raise ValidationError("residuals are not aligned with the dataset")
    t = ds.t
    if t < 2:
        raise ValidationError("series shorter than 2")
    maxlag = t - 1 if maxlag is None else int(maxlag)
    if maxlag < 1:
        raise ValidationError("maxlag must be >= 1")
    groups = pa.groups_for(ds)
    G = int(groups.max()) + 1
    row = ds.eu_codes * G + groups
    cell = row * t + ds.time_index
    n_rows = ds.n_eu * G
    sums = np.bincount(cell, weights=res, minlength=n_rows * t).reshape(n_rows, t)
    counts = np.bincount(cell, minlength=n_rows * t).reshape(n_rows, t)
    band = 1.96 / np.sqrt(t)
    out = []
    for r in range(n_rows):
        if counts[r].sum() == 0:
            continue
        if (counts[r] == 0).any():
            raise ValidationError(f"pseudo-unit {r % G + 1} of eu {ds.eu_levels[r // G]} misses a time")
        series = sums[r] / counts[r]
        values = acf(series, maxlag)
        out.append(AcfResult(ds.eu_levels[r // G], r % G + 1, np.arange(1, len(values) + 1), values, band))
    return out


def acf_band_fraction(results) -> float:
    """Share of (series, lag) autocorrelations inside the white-noise band."""
    inside = np.concatenate([r.inside for r in results])
    return float(inside.mean())


def acf_frame(results) -> pd.DataFrame:
    return pd.DataFrame(
        [
            {"eu": r.eu, "group": r.group, "lag": int(k), "acf": float(a), "band": r.band}
            for r in results
            for k, a in zip(r.lags, r.acf)
        ]
    )


def _ad_pvalue(a2_star: float) -> float:
    # D'Agostino & Stephens (1986), case 3
    a = a2_star
    if a >= 0.6:
        p = np.exp(1.2937 - 5.709 * a + 0.0186 * a * a)
    elif a >= 0.34:
        p = np.exp(0.9177 - 4.279 * a - 1.38 * a * a)
    elif a >= 0.2:
        p = 1 - np.exp(-8.318 + 42.796 * a - 59.938 * a * a)
    else:
        p = 1 - np.exp(-13.436 + 101.14 * a - 223.73 * a * a)
    return float(np.clip(p, 0.0, 1.0))


def anderson_darling(sample) -> TestResult:
    """Normality test with estimated mean and variance.

    The reported statistic is the small-sample adjusted
    ``A*^2 = A^2 (1 + 0.75/n + 2.25/n^2)``.
    """
    x = np.sort(np.asarray(sample, dtype=float).ravel())
    n = len(x)
    if n < 8:
        raise ValidationError(f"Anderson-Darling needs n >= 8, got {n}")
    sd = x.std(ddof=1)
    if not sd > 0:
        raise ValidationError("zero variance")
    z = (x - x.mean()) / sd
    i = np.arange(1, n + 1)
    a2 = -n - np.sum((2 * i - 1) * (stats.norm.logcdf(z) + stats.norm.logsf(z[::-1]))) / n
    a2s = a2 * (1 + 0.75 / n + 2.25 / n**2)
    return TestResult("anderson-darling", float(a2s), _ad_pvalue(a2s), n)


def bartlett(samples) -> TestResult:
    """Bartlett's test of equal variances across groups."""
    groups = [np.asarray(g, dtype=float).ravel() for g in samples]
    if len(groups) < 2:
        raise ValidationError("Bartlett's test needs at least two groups")
    for j, g in enumerate(groups):
        if len(g) < 2:
            raise ValidationError(f"group {j} has fewer than 2 observations")
        if not g.var(ddof=1) > 0:
            raise ValidationError(f"group {j} has zero variance")
    stat, p = stats.bartlett(*groups)
    stat = max(float(stat), 0.0)
    if stat < 1e-12:
        stat, p = 0.0, 1.0
    return TestResult("bartlett", stat, float(min(max(p, 0.0), 1.0)), int(sum(map(len, groups))), len(groups) - 1)


def random_bins(values, bins: int = BARTLETT_BINS, seed: int = BARTLETT_SEED) -> list[np.ndarray]:
    """Shuffle ``values`` with a seeded generator and split into equal bins."""
    values = np.asarray(values, dtype=float).ravel()
    if bins < 2:
        raise ValidationError("need at least two bins")
    perm = np.random.default_rng(seed).permutation(len(values))
    return [values[idx] for idx in np.array_split(perm, bins)]


def binned_bartlett(values, bins: int = BARTLETT_BINS, seed: int = BARTLETT_SEED) -> TestResult:
    return bartlett(random_bins(values, bins, seed))


def normal_quantiles(sample) -> pd.DataFrame:
    """Sorted sample against normal plotting positions, for QQ tables."""
    x = np.sort(np.asarray(sample, dtype=float).ravel())
    n = len(x)
    theo = stats.norm.ppf((np.arange(1, n + 1) - 0.375) / (n + 0.25))
    return pd.DataFrame({"theoretical": theo, "sample": x})


def write_tests_csv(results, path=None):
    frame = pd.DataFrame([r.as_dict() for r in results], columns=["test", "statistic", "p", "n", "df"])
    text = frame.to_csv(index=False, lineterminator="\n", float_format="%.12g")
    if path is None:
        return text
    atomic_write(path, text)
    return None
