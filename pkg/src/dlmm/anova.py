"""Balanced ANOVA tables for the treatment x time layout.

Three error structures are supported on the same sums of squares for the
treatment (A), time (T) and interaction (AT) sources:

* ``anova_fixed``: every observation independent, all effects tested
  against the residual mean square.
* ``anova_deaton``: observations first averaged per (eu, time) cell; a
  split-plot table with A tested against experimental units.
* ``anova_proposed``: adds the pseudo-unit stratum; A against eu, eu against
  pseudo-units, pseudo-units/T/AT against the residual.

Sums of squares are always on the observation scale. For the averaged table
each cell mean is weighted by its cell size, so A, T and AT sums of squares
coincide across the three tables.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from scipy import stats

from .data import LongDataset, atomic_write
from .exceptions import DesignError, UnbalancedError, ValidationError
from .grouping import PseudoUnitAssignment

MODELS = ("fixed", "deaton", "proposed")


@dataclass(frozen=True)
class AnovaRow:
    source: str
    df: int
    ss: float
    ms: float | None
    ems: str = ""
    f: float | None = None
    p: float | None = None
    denominator: str | None = None


@dataclass(frozen=True)
class AnovaTable:
    """ANOVA rows plus the total line.

    ``rows`` excludes the total; ``total_ss`` and ``total_df`` hold it.
    """

    model: str
    rows: tuple
    total_ss: float
    total_df: int
    meta: dict = field(default_factory=dict)

    def __getitem__(self, source: str) -> AnovaRow:
        for row in self.rows:
            if row.source == source:
                return row
        raise KeyError(source)

    def __contains__(self, source):
        return any(r.source == source for r in self.rows)

    @property
    def sources(self) -> list[str]:
        return [r.source for r in self.rows]

    def p_value(self, source: str) -> float:
        return self[source].p

    def to_frame(self) -> pd.DataFrame:
        records = [
            {"source": r.source, "df": r.df, "ss": r.ss, "ms": r.ms, "f": r.f, "p": r.p} for r in self.rows
        ]
        records.append({"source": "Total", "df": self.total_df, "ss": self.total_ss, "ms": None, "f": None, "p": None})
        return pd.DataFrame.from_records(records, columns=["source", "df", "ss", "ms", "f", "p"])

    def to_csv(self, path=None):
        text = self.to_frame().to_csv(index=False, lineterminator="\n", float_format="%.12g")
        if path is None:
            return text
        atomic_write(path, text)
        return None

    def to_text(self) -> str:
        header = f"{'Source':<10}{'df':>6}{'SS':>16}{'MS':>16}{'F':>12}{'p':>12}  EMS"
        lines = [f"ANOVA ({self.model})", header, "-" * len(header)]
        for r in self.rows:
            ms = f"{r.ms:16.6g}" if r.ms is not None else " " * 16
            f = f"{r.f:12.4f}" if r.f is not None else " " * 12
            p = f"{r.p:12.4g}" if r.p is not None else " " * 12
            lines.append(f"{r.source:<10}{r.df:>6d}{r.ss:16.6g}{ms}{f}{p}  {r.ems}")
        lines.append(f"{'Total':<10}{self.total_df:>6d}{self.total_ss:16.6g}")
        return "\n".join(lines) + "\n"

    def __str__(self):
        return self.to_text()


@dataclass(frozen=True)
class _Layout:
    """Cell means of a balanced treatment x eu x time layout."""

    y: np.ndarray
    treat: np.ndarray  # per eu, 0-based
    eu: np.ndarray  # per observation
    time: np.ndarray
    M: int
    n: int
    t: int
    c: int  # observations per (eu, time) cell

    @property
    def N(self):
        return len(self.y)


def _layout(ds: LongDataset, treatment: str) -> _Layout:
    if treatment not in ds.factors:
        raise DesignError(f"unknown treatment factor {treatment!r}")
    eu = ds.eu_codes
    time = ds.time_index
    tcode = ds.factor_codes(treatment)
    M, n_eu, t = len(ds.factor_levels(treatment)), ds.n_eu, ds.t
    per_eu = pd.Series(tcode).groupby(eu).agg(["min", "max"])
    if (per_eu["min"] != per_eu["max"]).any():
        raise DesignError(f"experimental units must be nested in {treatment!r}")
    treat = per_eu["min"].to_numpy()
    counts = np.bincount(treat, minlength=M)
    if counts.min() != counts.max():
        raise UnbalancedError(f"unequal experimental units per treatment: {counts.tolist()}")
    cell = np.bincount(eu * t + time, minlength=n_eu * t)
    if cell.min() != cell.max() or cell.min() == 0:
        raise UnbalancedError("unequal observation counts across (eu, time) cells")
    return _Layout(ds.y, treat, eu, time, M, int(counts[0]), t, int(cell[0]))


def _means(values, codes, size):
    return np.bincount(codes, weights=values, minlength=size) / np.bincount(codes, minlength=size)


def _effect_ss(L: _Layout):
    """SS for A, T, AT and the eu stratum, plus the total and means."""
    y, M, n, t, c = L.y, L.M, L.n, L.t, L.c
    grand = y.mean()
    m_obs = L.treat[L.eu]
    ybar_m = _means(y, m_obs, M)
    ybar_k = _means(y, L.time, t)
    ybar_mk = _means(y, m_obs * t + L.time, M * t).reshape(M, t)
    ybar_i = _means(y, L.eu, M * n)
    ss = {
        "A": n * t * c * np.sum((ybar_m - grand) ** 2),
        "T": M * n * c * np.sum((ybar_k - grand) ** 2),
        "AT": n * c * np.sum((ybar_mk - ybar_m[:, None] - ybar_k[None, :] + grand) ** 2),
        "b": t * c * np.sum((ybar_i - ybar_m[L.treat]) ** 2),
    }
    total = float(np.sum((y - grand) ** 2))
    return ss, total, ybar_i


def _f_test(ms_num, df_num, ms_den, df_den):
    if df_num <= 0 or df_den <= 0:
        raise ValidationError("F test needs positive degrees of freedom")
    scale = max(abs(ms_num), abs(ms_den), 1e-300)
    if ms_den <= 1e-14 * scale or ms_den <= 0:
        if ms_num <= 1e-14 * scale:
            return 0.0, 1.0  # zero total variation
        return np.inf, 0.0
    f = ms_num / ms_den
    return float(f), float(stats.f.sf(f, df_num, df_den))


def _table(model, entries, tests, total_ss, total_df, meta):
    """Assemble rows; ``tests`` maps source -> denominator source."""
    error_df = entries["Error"][0]
    if error_df <= 0:
        raise ValidationError(f"error degrees of freedom are {error_df}; the layout has no replication")
    ms = {k: (ss / df if df > 0 else None) for k, (df, ss, _) in entries.items()}
    rows = []
    for source, (df, ss, ems) in entries.items():
        f = p = None
        den = tests.get(source)
        if den is not None:
            if df <= 0:
                raise ValidationError(f"source {source!r} has {df} degrees of freedom")
            f, p = _f_test(ms[source], df, ms[den], entries[den][0])
        rows.append(AnovaRow(source, int(df), float(ss), ms[source], ems, f, p, den))
    return AnovaTable(model=model, rows=tuple(rows), total_ss=float(total_ss), total_df=int(total_df), meta=meta)


def anova_fixed(ds: LongDataset, treatment: str = "A") -> AnovaTable:
    """Two-way table ignoring experimental units; every F against MSE."""
    L = _layout(ds, treatment)
    ss, total, _ = _effect_ss(L)
    M, n, t, c = L.M, L.n, L.t, L.c
    df_e = M * t * (n * c - 1)
    sse = total - ss["A"] - ss["T"] - ss["AT"]
    entries = {
        "A": (M - 1, ss["A"], "σ² + ntc·θ_A"),
        "T": (t - 1, ss["T"], "σ² + Mnc·θ_T"),
        "AT": ((M - 1) * (t - 1), ss["AT"], "σ² + nc·θ_AT"),
        "Error": (df_e, max(sse, 0.0), "σ²"),
    }
    tests = {"A": "Error", "T": "Error", "AT": "Error"}
    return _table("fixed", entries, tests, total, L.N - 1, {"M": M, "n": n, "t": t, "c": c})


def anova_deaton(ds: LongDataset, treatment: str = "A") -> AnovaTable:
    """Split-plot table on the (eu, time) averages.

    Each average carries weight ``c`` (its cell size) so sums of squares
    stay on the observation scale. Degrees of freedom are those of the
    averaged panel: ``nMt - 1`` in total.
    """
    L = _layout(ds, treatment)
    M, n, t, c = L.M, L.n, L.t, L.c
    if n < 2:
        raise ValidationError("averaged table needs at least two experimental units per treatment")
    cell = L.eu * t + L.time
    avg = _means(L.y, cell, M * n * t)
    avg_layout = _Layout(
        np.repeat(avg, c), L.treat, np.repeat(np.arange(M * n), t * c), np.tile(np.repeat(np.arange(t), c), M * n),
        M, n, t, c,
    )
    ss, total, _ = _effect_ss(avg_layout)
    sse = total - ss["A"] - ss["b"] - ss["T"] - ss["AT"]
    entries = {
        "A": (M - 1, ss["A"], "c(σ̄² + tσ_b²) + ntc·θ_A"),
        "b": (M * (n - 1), ss["b"], "c(σ̄² + tσ_b²)"),
        "T": (t - 1, ss["T"], "cσ̄² + Mnc·θ_T"),
        "AT": ((M - 1) * (t - 1), ss["AT"], "cσ̄² + nc·θ_AT"),
        "Error": (M * (n - 1) * (t - 1), max(sse, 0.0), "cσ̄²"),
    }
    tests = {"A": "b", "T": "Error", "AT": "Error"}
    return _table("deaton", entries, tests, total, M * n * t - 1, {"M": M, "n": n, "t": t, "c": c})


def anova_proposed(ds: LongDataset, pa: PseudoUnitAssignment, treatment: str = "A") -> AnovaTable:
    """Split-plot table with an extra pseudo-unit stratum inside each eu."""
    L = _layout(ds, treatment)
    M, n, t, c = L.M, L.n, L.t, L.c
    groups = pa.groups_for(ds)
    G = int(groups.max()) + 1
    n_eu = M * n
    gcode = L.eu * G + groups
    counts = np.bincount(gcode * t + L.time, minlength=n_eu * G * t)
    if counts.min() == 0 or counts.min() != counts.max():
        raise UnbalancedError("pseudo-units must have equal, non-zero counts at every time")
    s = int(counts[0])
    ss, total, ybar_i = _effect_ss(L)
    ybar_ir = _means(L.y, gcode, n_eu * G).reshape(n_eu, G)
    ss_eta = t * s * float(np.sum((ybar_ir - ybar_i[:, None]) ** 2))
    df_eta = n_eu * (G - 1)
    df_e = L.N - 1 - (M - 1) - M * (n - 1) - df_eta - (t - 1) - (M - 1) * (t - 1)
    sse = total - ss["A"] - ss["b"] - ss_eta - ss["T"] - ss["AT"]
    entries = {
        "A": (M - 1, ss["A"], "σ_ε² + ts·σ_η² + tc·σ_b² + ntc·θ_A"),
        "b": (M * (n - 1), ss["b"], "σ_ε² + ts·σ_η² + tc·σ_b²"),
    }
    tests = {"A": "b", "T": "Error", "AT": "Error"}
    if df_eta > 0:
        entries["eta"] = (df_eta, ss_eta, "σ_ε² + ts·σ_η²")
        tests["b"] = "eta"
        tests["eta"] = "Error"
    else:
        tests["b"] = "Error"
    entries["T"] = (t - 1, ss["T"], "σ_ε² + Mnc·θ_T")
    entries["AT"] = ((M - 1) * (t - 1), ss["AT"], "σ_ε² + nc·θ_AT")
    entries["Error"] = (df_e, max(sse, 0.0), "σ_ε²")
    if df_e <= 0:
        raise ValidationError(f"error degrees of freedom are {df_e}; the layout has no replication")
    meta = {"M": M, "n": n, "t": t, "c": c, "G": G, "s": s}
    return _table("proposed", entries, tests, total, L.N - 1, meta)


def anova(ds: LongDataset, model: str, pa: PseudoUnitAssignment | None = None, treatment: str = "A") -> AnovaTable:
    if model == "fixed":
        return anova_fixed(ds, treatment)
    if model == "deaton":
        return anova_deaton(ds, treatment)
    if model == "proposed":
        if pa is None:
            raise ValidationError("the proposed table needs a pseudo-unit grouping")
        return anova_proposed(ds, pa, treatment)
    raise ValidationError(f"unknown ANOVA model {model!r}; choose from {MODELS}")
