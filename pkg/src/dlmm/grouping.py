"""Pseudo-observational units: groups of observational units tracked across time.

Within every (experimental unit, time) cell the observations are split into
``G`` groups. Group ``r`` of an experimental unit then has measurements at
every time even though no single observational unit does.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import pandas as pd

from .data import LongDataset, _sorted_levels, atomic_write
from .exceptions import DesignError, ValidationError

STRATEGIES = ("rank", "quantile", "covariate", "unit")


@dataclass(frozen=True, eq=False)
class PseudoUnitAssignment:
    """Group label (1..G) for every observation of a dataset.

    ``keys`` holds the ``eu, time, obs, rep`` columns in the row order of the
    dataset the assignment was built from; ``group`` is aligned with it.
    """

    G: int
    strategy: str
    keys: pd.DataFrame
    group: np.ndarray

    def __len__(self):
        return len(self.group)

    def groups_for(self, ds: LongDataset) -> np.ndarray:
        """Zero-based group index aligned with the rows of ``ds``."""
        frame = ds.frame
        if len(frame) == len(self.keys) and all(
            np.array_equal(frame[c].to_numpy(), self.keys[c].to_numpy()) for c in ("eu", "time", "obs", "rep")
        ):
            return self.group - 1
        merged = frame[["eu", "time", "obs", "rep"]].merge(
            self.keys.assign(_group=self.group), how="left", on=["eu", "time", "obs", "rep"]
        )
        if merged["_group"].isna().any():
            row = int(np.argmax(merged["_group"].isna().to_numpy())) + 1
            raise DesignError(f"grouping does not cover observation at row {row}")
        return merged["_group"].to_numpy().astype(np.intp) - 1

    def to_frame(self) -> pd.DataFrame:
        return self.keys[["eu", "time", "obs", "rep"]].assign(group=self.group)

    def to_csv(self, path=None):
        text = self.to_frame().to_csv(index=False, lineterminator="\n")
        if path is None:
            return text
        atomic_write(path, text)
        return None


def _cell_codes(ds: LongDataset) -> tuple[np.ndarray, int]:
    codes = ds.eu_codes * ds.t + ds.time_index
    uniq, inv = np.unique(codes, return_inverse=True)
    return inv, len(uniq)


def _rank_positions(ds: LongDataset, cells: np.ndarray) -> np.ndarray:
    """Position of each row within its cell after sorting by (y, obs, rep)."""
    frame = ds.frame
    obs_rank = pd.factorize(frame["obs"], sort=True)[0]
    order = np.lexsort((frame["rep"].to_numpy(), obs_rank, ds.y, cells))
    sorted_cells = cells[order]
    starts = np.r_[0, np.flatnonzero(np.diff(sorted_cells)) + 1]
    first = np.repeat(starts, np.diff(np.r_[starts, len(order)]))
    pos = np.empty(len(order), dtype=np.intp)
    pos[order] = np.arange(len(order)) - first
    return pos


def _blocks(pos: np.ndarray, size: np.ndarray, G: int) -> np.ndarray:
    """Contiguous blocks: the first ``size % G`` groups get one extra member."""
    q, rem = np.divmod(size, G)
    big = rem * (q + 1)
    return np.where(pos < big, pos // np.maximum(q + 1, 1), rem + (pos - big) // np.maximum(q, 1))


def assign_pseudo_units(ds: LongDataset, G: int = 2, strategy: str = "rank", covariate: str | None = None) -> PseudoUnitAssignment:
    """Split every (eu, time) cell into ``G`` pseudo-units.

    ``rank`` sorts each cell's responses ascending (ties by obs id, then rep)
    and cuts the sorted list into contiguous blocks, lowest block = group 1.
    ``quantile`` cuts at the empirical ``j/G`` quantiles of the cell.
    ``covariate`` uses the levels of a factor with exactly ``G`` levels.
    ``unit`` makes every observational unit its own group (complete panels).
    """
    if strategy not in STRATEGIES:
        raise ValidationError(f"unknown grouping strategy {strategy!r}")
    G = int(G)
    if G < 1:
        raise ValidationError("G must be a positive integer")
    cells, n_cells = _cell_codes(ds)
    size = np.bincount(cells, minlength=n_cells)

    if strategy in ("rank", "quantile"):
        if size.min() < G:
            bad = int(np.argmin(size))
            row = int(np.flatnonzero(cells == bad)[0])
            eu, time = ds.frame["eu"].iloc[row], ds.frame["time"].iloc[row]
            raise ValidationError(f"cell (eu={eu}, time={time}) has {size[bad]} observations, fewer than G={G}")
        pos = _rank_positions(ds, cells)
        if strategy == "rank":
            group = _blocks(pos, size[cells], G)
        else:
            group = _quantile_groups(ds.y, cells, n_cells, G)
    elif strategy == "covariate":
        if covariate is None or covariate not in ds.factors:
            raise ValidationError(f"unknown covariate {covariate!r}")
        levels = ds.factors[covariate]
        if len(levels) != G:
            raise ValidationError(f"covariate {covariate!r} has {len(levels)} levels, expected G={G}")
        group = ds.factor_codes(covariate)
    else:
        # number units 0.. inside each experimental unit, in sorted obs order
        obs = ds.frame["obs"]
        group = np.empty(len(obs), dtype=np.intp)
        for _, idx in obs.groupby(ds.eu_codes).indices.items():
            levels = _sorted_levels(obs.iloc[idx].unique())
            group[idx] = pd.Categorical(obs.iloc[idx], categories=levels).codes
        G = int(group.max()) + 1

    keys = ds.frame[["eu", "time", "obs", "rep"]].reset_index(drop=True)
    return PseudoUnitAssignment(G=G, strategy=strategy, keys=keys, group=np.asarray(group, dtype=np.intp) + 1)


def _quantile_groups(y, cells, n_cells, G):
    group = np.empty(len(y), dtype=np.intp)
    order = np.argsort(cells, kind="stable")
    bounds = np.r_[0, np.cumsum(np.bincount(cells, minlength=n_cells))]
    probs = np.arange(1, G) / G
    for c in range(n_cells):
        idx = order[bounds[c] : bounds[c + 1]]
        cuts = np.quantile(y[idx], probs)
        group[idx] = np.searchsorted(cuts, y[idx], side="left")
    return group


@dataclass(frozen=True)
class BalanceReport:
    """Counts per (eu, group, time) and the cells that break balance."""

    counts: pd.DataFrame
    empty_cells: list
    equal: bool

    @property
    def complete(self) -> bool:
        return not self.empty_cells

    def flags(self) -> list[str]:
        out = []
        if self.empty_cells:
            out.append("empty")
        if not self.equal:
            out.append("unequal")
        return out


def pseudo_unit_summary(pa: PseudoUnitAssignment, ds: LongDataset) -> BalanceReport:
    """Per-(eu, group) observation counts at every time."""
    group = pa.groups_for(ds) + 1
    frame = pd.DataFrame({"eu": ds.frame["eu"], "group": group, "time": ds.frame["time"]})
    counts = frame.groupby(["eu", "group", "time"]).size().unstack("time", fill_value=0)
    full_groups = pd.MultiIndex.from_product([list(ds.eu_levels), range(1, pa.G + 1)], names=["eu", "group"])
    if pa.strategy != "unit":
        counts = counts.reindex(full_groups, fill_value=0)
    counts = counts.reindex(columns=range(1, ds.t + 1), fill_value=0)
    empty = [
        (eu, int(g), int(k))
        for (eu, g), row in counts.iterrows()
        for k, v in row.items()
        if v == 0
    ]
    values = counts.to_numpy()
    return BalanceReport(counts=counts, empty_cells=empty, equal=bool(values.min() == values.max()))
