"""Long-format datasets and sum-to-zero design matrices."""

from __future__ import annotations

import io
import os
from dataclasses import dataclass, field
from functools import cached_property
from itertools import combinations, product

import numpy as np
import pandas as pd
from scipy import sparse

from .exceptions import (
    DataError,
    DesignError,
    DestructiveViolationError,
    DuplicateKeyError,
    EmptyFileError,
    MissingColumnError,
    ParseError,
    ValidationError,
)

ID_COLUMNS = ("eu", "obs", "time", "rep")
RESPONSE = "y"
TIME = "time"
KEY = ("eu", "obs", "time", "rep")


@dataclass(frozen=True)
class Observation:
    """A single measurement. Mostly useful for building small datasets by hand."""

    eu_id: str
    time: int
    y: float
    obs_id: str | None = None
    rep: int = 1
    treatment: dict = field(default_factory=dict)


class LongDataset:
    """Validated long-format observations.

    Wraps a DataFrame with columns ``eu, obs, time, rep, <factors...>, y``.
    Identifiers and factor levels are stored as strings, ``time`` and ``rep``
    as integers. Instances are treated as immutable; the frame is copied on
    construction and never mutated afterwards.
    """

    def __init__(self, frame: pd.DataFrame, factors=None, destructive=False):
        frame = _normalise_frame(frame)
        self._frame = frame
        names = [c for c in frame.columns if c not in ID_COLUMNS and c != RESPONSE]
        if factors is None:
            factors = {name: tuple(_sorted_levels(frame[name].unique())) for name in names}
        else:
            factors = {str(k): tuple(str(v) for v in levels) for k, levels in factors.items()}
            missing = [name for name in factors if name not in frame.columns]
            if missing:
                raise MissingColumnError(f"factor column(s) {missing} not in data")
            for name, levels in factors.items():
                unknown = set(frame[name].unique()) - set(levels)
                if unknown:
                    bad = frame.index[~frame[name].isin(levels)][0]
                    raise DataError(f"level {sorted(unknown)[0]!r} of factor {name!r} is not defined", row=int(bad) + 1)
        self.factors: dict[str, tuple[str, ...]] = factors
        self.t = int(frame["time"].max()) if len(frame) else 0
        self._validate(destructive)

    # construction helpers -------------------------------------------------

    @classmethod
    def from_observations(cls, observations, factors=None, destructive=False):
        rows = []
        for ob in observations:
            row = {"eu": ob.eu_id, "obs": ob.obs_id, "time": ob.time, "rep": ob.rep}
            row.update(ob.treatment)
            row["y"] = ob.y
            rows.append(row)
        return cls(pd.DataFrame(rows), factors=factors, destructive=destructive)

    @classmethod
    def from_arrays(cls, eu, time, y, obs=None, rep=None, factors=None, **factor_columns):
        data = {"eu": eu, "obs": obs, "time": time, "rep": rep}
        data.update(factor_columns)
        data["y"] = y
        n = len(y)
        data = {k: (v if v is not None else [None] * n) for k, v in data.items()}
        return cls(pd.DataFrame(data), factors=factors)

    def _validate(self, destructive):
        df = self._frame
        if len(df) == 0:
            raise EmptyFileError("dataset has no observations")
        times = df["time"].to_numpy()
        if times.min() < 1:
            raise DataError("time index must be >= 1", row=int(np.argmin(times)) + 1)
        present = np.unique(times)
        if len(present) != self.t:
            gaps = sorted(set(range(1, self.t + 1)) - set(present.tolist()))
            raise ValidationError(f"times must be 1..{self.t} without gaps; missing {gaps}")
        y = df["y"].to_numpy()
        if not np.all(np.isfinite(y)):
            raise DataError("response is not finite", row=int(np.argmin(np.isfinite(y))) + 1)
        for col in ("eu", "obs"):
            empty = df[col].str.len() == 0
            if empty.any():
                raise DataError(f"empty {col} identifier", row=int(np.argmax(empty.to_numpy())) + 1)
        dup = df.duplicated(list(KEY))
        if dup.any():
            row = int(np.argmax(dup.to_numpy())) + 1
            raise DuplicateKeyError("duplicate (eu, obs, time, rep) key", row=row)
        if destructive:
            check_destructive(self)

    # basic accessors ------------------------------------------------------

    @property
    def frame(self) -> pd.DataFrame:
        return self._frame

    @property
    def y(self) -> np.ndarray:
        return self._frame["y"].to_numpy()

    def __len__(self):
        return len(self._frame)

    def __eq__(self, other):
        if not isinstance(other, LongDataset):
            return NotImplemented
        return (
            self.factors == other.factors
            and self.t == other.t
            and self._frame.equals(other._frame)
        )

    def __repr__(self):
        return (
            f"LongDataset(n_obs={len(self)}, n_eu={self.n_eu}, t={self.t}, "
            f"factors={list(self.factors)}, balanced={self.balanced})"
        )

    @cached_property
    def _eu_factorized(self):
        # sorted (numeric-aware) so codes do not depend on row order
        levels = tuple(_sorted_levels(self._frame["eu"].unique()))
        codes = pd.Categorical(self._frame["eu"], categories=levels).codes
        return codes.astype(np.intp), levels

    @property
    def eu_codes(self) -> np.ndarray:
        return self._eu_factorized[0]

    @property
    def eu_levels(self) -> tuple[str, ...]:
        return self._eu_factorized[1]

    @property
    def n_eu(self) -> int:
        return len(self.eu_levels)

    @cached_property
    def time_index(self) -> np.ndarray:
        """Zero-based time index."""
        return self._frame["time"].to_numpy() - 1

    def factor_codes(self, name: str) -> np.ndarray:
        if name == TIME:
            return self.time_index
        if name not in self.factors:
            raise DesignError(f"unknown factor {name!r}")
        levels = self.factors[name]
        return pd.Categorical(self._frame[name], categories=levels).codes.astype(np.intp)

    def factor_levels(self, name: str) -> tuple[str, ...]:
        if name == TIME:
            return tuple(str(k) for k in range(1, self.t + 1))
        if name not in self.factors:
            raise DesignError(f"unknown factor {name!r}")
        return self.factors[name]

    @cached_property
    def balanced(self) -> bool:
        """Every (treatment cell x time) combination has the same count."""
        keys = list(self.factors) + ["time"]
        counts = self._frame.groupby(keys, observed=True).size()
        full = int(np.prod([len(self.factors[f]) for f in self.factors])) * self.t
        return len(counts) == full and counts.nunique() == 1

    def with_y(self, y) -> LongDataset:
        frame = self._frame.copy()
        frame["y"] = np.asarray(y, dtype=float)
        return LongDataset(frame, factors=self.factors)

    def take(self, index) -> LongDataset:
        frame = self._frame.iloc[np.asarray(index)].reset_index(drop=True)
        return LongDataset(frame, factors=self.factors)

    # io -------------------------------------------------------------------

    def to_csv(self, path=None) -> str | None:
        """Write the canonical CSV layout; returns the text when ``path`` is None."""
        cols = ["eu", "obs", "time", "rep", *self.factors, "y"]
        text = self._frame[cols].to_csv(index=False, lineterminator="\n")
        if path is None:
            return text
        atomic_write(path, text)
        return None


def _sorted_levels(values):
    values = [str(v) for v in values]
    try:
        return sorted(values, key=lambda v: (float(v), v))
    except ValueError:
        return sorted(values)


def _normalise_frame(frame: pd.DataFrame) -> pd.DataFrame:
    frame = frame.copy().reset_index(drop=True)
    for col in ("eu", "time", "y"):
        if col not in frame.columns:
            raise MissingColumnError(f"missing column {col!r}")
    if "rep" not in frame.columns or frame["rep"].isna().all():
        frame["rep"] = 1
    time = pd.to_numeric(frame["time"], errors="coerce")
    if time.isna().any() or not np.all(np.equal(np.mod(time, 1), 0)):
        bad = int(np.argmax((time.isna() | (np.mod(time.fillna(0), 1) != 0)).to_numpy()))
        raise ParseError("time is not an integer", row=bad + 1)
    frame["time"] = time.astype(np.int64)
    frame["rep"] = pd.to_numeric(frame["rep"], errors="raise").astype(np.int64)
    if frame["y"].dtype == object:
        # Python's float() round-trips repr output exactly; to_numeric does not
        try:
            frame["y"] = [float(v) for v in frame["y"]]
        except (TypeError, ValueError):
            bad = int(np.argmax(pd.to_numeric(frame["y"], errors="coerce").isna().to_numpy()))
            raise ParseError("cannot parse y", row=bad + 1) from None
    frame["y"] = frame["y"].astype(float)
    frame["eu"] = frame["eu"].astype(str)
    if "obs" not in frame.columns or frame["obs"].isna().all():
        # synthetic identity: (eu, time, ordinal within the eu-time cell)
        ordinal = frame.groupby(["eu", "time"]).cumcount() + 1
        frame["obs"] = frame["eu"] + "-" + frame["time"].astype(str) + "-" + ordinal.astype(str)
    else:
        frame["obs"] = frame["obs"].astype(str)
    factor_cols = [c for c in frame.columns if c not in ID_COLUMNS and c != RESPONSE]
    for col in factor_cols:
        frame[col] = frame[col].astype(str)
    return frame[["eu", "obs", "time", "rep", *factor_cols, "y"]]


def check_destructive(ds: LongDataset) -> None:
    """Raise if any (eu, obs) pair is observed at more than one time."""
    df = ds.frame
    n_times = df.groupby(["eu", "obs"])["time"].nunique()
    bad = n_times[n_times > 1]
    if len(bad):
        eu, obs = bad.index[0]
        mask = (df["eu"] == eu) & (df["obs"] == obs)
        times = df.loc[mask, "time"]
        row = int(times.index[times != times.iloc[0]][0]) + 1
        raise DestructiveViolationError(f"observational unit {obs!r} of eu {eu!r} observed twice", row=row)


def atomic_write(path, data) -> None:
    """Write text or bytes to ``path`` via a temp file and rename."""
    path = os.fspath(path)
    directory = os.path.dirname(path) or "."
    os.makedirs(directory, exist_ok=True)
    tmp = f"{path}.tmp{os.getpid()}"
    mode = "wb" if isinstance(data, bytes) else "w"
    kwargs = {} if mode == "wb" else {"encoding": "utf-8", "newline": ""}
    with open(tmp, mode, **kwargs) as fh:
        fh.write(data)
    os.replace(tmp, path)


def load_csv(path, schema=None, destructive=False) -> LongDataset:
    """Read a long-format CSV.

    Parameters
    ----------
    path : path-like
        UTF-8 file with a header row.
    schema : dict, optional
        Maps canonical names (``eu``, ``obs``, ``time``, ``rep``, ``y`` and
        factor names) to column names in the file. Columns not mentioned keep
        their own names; with a schema, only the mapped columns are read.
    destructive : bool
        Require each observational unit to appear at a single time.

    Errors carry the 1-based data row (the header is not counted).
    """
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    if not text.strip():
        raise EmptyFileError("empty file")
    raw = pd.read_csv(io.StringIO(text), dtype=str, keep_default_na=False)
    if len(raw) == 0:
        raise EmptyFileError("file has a header but no rows")
    if schema:
        missing = [src for src in schema.values() if src not in raw.columns]
        if missing:
            raise MissingColumnError(f"missing column {missing[0]!r}")
        raw = raw[list(schema.values())].rename(columns={v: k for k, v in schema.items()})
    for col in ("eu", "time", "y"):
        if col not in raw.columns:
            raise MissingColumnError(f"missing column {col!r}")
    for col in ("time", "rep", "y"):
        if col not in raw.columns:
            continue
        values = pd.to_numeric(raw[col].str.strip(), errors="coerce")
        bad = values.isna() & (raw[col].str.strip() != "" if col == "rep" else True)
        if bad.any():
            i = int(np.argmax(bad.to_numpy()))
            raise ParseError(f"cannot parse {col} value {raw[col].iloc[i]!r}", row=i + 1)
    if "obs" in raw.columns and (raw["obs"] == "").all():
        raw = raw.drop(columns="obs")
    if "rep" in raw.columns:
        raw["rep"] = raw["rep"].replace("", "1")
    return LongDataset(raw, destructive=destructive)


# ---------------------------------------------------------------------------
# design matrices
# ---------------------------------------------------------------------------

CANONICAL_FIXED = ("A", "time", "A:time")


def parse_terms(spec) -> list[tuple[str, ...]]:
    """Turn ``"A+time+A:time"`` (or a list of terms) into factor tuples.

    ``"1"`` alone means intercept only. ``A*B`` expands to ``A + B + A:B``.
    """
    if spec is None:
        spec = CANONICAL_FIXED
    if isinstance(spec, str):
        spec = [s.strip() for s in spec.replace(" ", "").split("+") if s.strip()]
    terms: list[tuple[str, ...]] = []
    for item in spec:
        if isinstance(item, tuple):
            parts = [item]
        elif item in ("1", ""):
            continue
        elif "*" in item:
            names = item.split("*")
            parts = []
            for size in range(1, len(names) + 1):
                parts.extend(combinations(names, size))
        else:
            parts = [tuple(item.split(":"))]
        for part in parts:
            if part not in terms:
                terms.append(tuple(part))
    return terms


def term_name(term: tuple[str, ...]) -> str:
    return ":".join(term)


def effect_coding(codes: np.ndarray, n_levels: int) -> np.ndarray:
    """Sum-to-zero coding: column j is 1[level j] - 1[last level]."""
    out = np.zeros((len(codes), n_levels - 1))
    rows = np.arange(len(codes))
    mask = codes < n_levels - 1
    out[rows[mask], codes[mask]] = 1.0
    out[~mask, :] = -1.0
    return out


@dataclass(frozen=True)
class DesignMatrices:
    """Fixed-effects matrix plus random-effect indicator matrices.

    ``Zb`` indexes experimental units and ``Zeta`` pseudo-units (both sparse,
    one 1 per row). ``columns`` maps each column of ``X`` to its term and the
    level tuple it encodes.
    """

    X: np.ndarray
    Zb: sparse.csr_matrix | None
    Zeta: sparse.csr_matrix | None
    terms: tuple
    columns: tuple
    term_slices: dict
    term_levels: dict
    eu_levels: tuple = ()
    group_levels: tuple = ()
    balanced: bool = True

    @property
    def n_obs(self) -> int:
        return self.X.shape[0]

    @property
    def random_blocks(self) -> list[tuple[str, sparse.csr_matrix]]:
        blocks = []
        if self.Zb is not None:
            blocks.append(("eu", self.Zb))
        if self.Zeta is not None and self.Zeta.shape[1]:
            blocks.append(("group", self.Zeta))
        return blocks

    @property
    def Z(self) -> sparse.csr_matrix:
        blocks = [b for _, b in self.random_blocks]
        if not blocks:
            return sparse.csr_matrix((self.n_obs, 0))
        return sparse.hstack(blocks, format="csr")

    def decode(self, beta) -> dict:
        """Full effects for every level of every term, satisfying sum-to-zero."""
        beta = np.asarray(beta, dtype=float)
        out = {}
        for term, sl in self.term_slices.items():
            coef = beta[sl]
            if term == ():
                out["(Intercept)"] = float(coef[0])
                continue
            shape = tuple(len(self.term_levels[f]) - 1 for f in term)
            full = coef.reshape(shape)
            for axis in range(full.ndim):
                last = -full.sum(axis=axis, keepdims=True)
                full = np.concatenate([full, last], axis=axis)
            out[term_name(term)] = full
        return out

    def encode(self, effects: dict) -> np.ndarray:
        """Inverse of :meth:`decode` on the constrained effect space."""
        beta = np.zeros(self.X.shape[1])
        for term, sl in self.term_slices.items():
            if term == ():
                beta[sl] = effects["(Intercept)"]
                continue
            full = np.asarray(effects[term_name(term)], dtype=float)
            index = tuple(slice(0, n - 1) for n in full.shape)
            beta[sl] = full[index].ravel()
        return beta


def build_design(ds: LongDataset, fixed=None, random=("eu",), grouping=None, check_rank=True) -> DesignMatrices:
    """Encode ``ds`` into X (sum-to-zero) and random-effect indicators.

    ``fixed`` is a term spec (see :func:`parse_terms`); the default is the
    canonical ``A + time + A:time``. ``random`` lists random intercept terms:
    ``"eu"`` and/or ``"eu:group"``; the latter needs ``grouping``.
    """
    terms = [()] + parse_terms(fixed)
    n = len(ds)
    levels = {}
    blocks, columns, slices = [], [], {}
    pos = 0
    for term in terms:
        if term == ():
            mat = np.ones((n, 1))
            cols = [((), ("(Intercept)",))]
        else:
            mats = []
            for f in term:
                if f != TIME and f not in ds.factors:
                    raise DesignError(f"unknown factor {f!r}")
                levels[f] = ds.factor_levels(f)
                if len(levels[f]) < 2:
                    raise DesignError(f"factor {f!r} needs at least two levels")
                mats.append(effect_coding(ds.factor_codes(f), len(levels[f])))
            mat = mats[0]
            for other in mats[1:]:
                mat = (mat[:, :, None] * other[:, None, :]).reshape(n, -1)
            level_tuples = product(*[levels[f][:-1] for f in term])
            cols = [(term, lv) for lv in level_tuples]
        blocks.append(mat)
        columns.extend(cols)
        slices[term] = slice(pos, pos + mat.shape[1])
        pos += mat.shape[1]
    X = np.hstack(blocks)
    if check_rank:
        rank = np.linalg.matrix_rank(X)
        if rank < X.shape[1]:
            raise DesignError(f"fixed-effects matrix is rank deficient (rank {rank} < {X.shape[1]} columns)")

    random = tuple(random or ())
    Zb = Zeta = None
    group_levels: tuple = ()
    rows = np.arange(n)
    for rterm in random:
        if rterm == "eu":
            Zb = sparse.csr_matrix((np.ones(n), (rows, ds.eu_codes)), shape=(n, ds.n_eu))
        elif rterm in ("eu:group", "group"):
            if grouping is None:
                raise DesignError("random term 'eu:group' requires a pseudo-unit grouping")
            groups = grouping.groups_for(ds)
            codes, uniques = pd.factorize(pd.Series(ds.eu_codes * (int(groups.max()) + 1) + groups), sort=True)
            keys = uniques.to_numpy()
            g1 = int(groups.max()) + 1
            group_levels = tuple((ds.eu_levels[k // g1], int(k % g1)) for k in keys)
            Zeta = sparse.csr_matrix((np.ones(n), (rows, codes)), shape=(n, len(keys)))
        else:
            raise DesignError(f"unknown random term {rterm!r}")
    return DesignMatrices(
        X=X,
        Zb=Zb,
        Zeta=Zeta,
        terms=tuple(terms),
        columns=tuple(columns),
        term_slices=slices,
        term_levels=levels,
        eu_levels=ds.eu_levels,
        group_levels=group_levels,
        balanced=ds.balanced,
    )


def cell_means(values, codes, n_cells):
    sums = np.bincount(codes, weights=values, minlength=n_cells)
    counts = np.bincount(codes, minlength=n_cells)
    with np.errstate(invalid="ignore", divide="ignore"):
        return sums / counts, counts
