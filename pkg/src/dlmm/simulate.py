"""Complete-panel generator and the destructive sampling scheme.

The complete panel follows

    y = mu + A[m] + b[i] + eta[j(i)] + T[k] + AT[m, k] + eps

with one AR(1) error series over time for every (eu, observational unit,
replicate). Destructive sampling then keeps each observational unit at a
single time only.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass

import numpy as np
import pandas as pd

from .data import LongDataset, atomic_write
from .exceptions import ValidationError


@dataclass(frozen=True)
class SimulationConfig:
    n: int = 10  # experimental units per treatment
    M: int = 2
    t: int = 10
    K: int = 4  # observational units sampled per (eu, time)
    J: int | None = None  # simulated observational units per eu; default K * t
    L: int = 10
    mu: float = 50.0
    deltaA: float = 1.0
    timeSlope: float = 5.0
    deltaATmax: float = 1.0
    sigma_b2: float = 5.0
    sigma_eta2: float = 4.0
    sigma_eps2: float = 2.0
    rho: float = 0.8
    seed: int = 0
    G: int = 2

    def __post_init__(self):
        if self.J is None:
            object.__setattr__(self, "J", self.K * self.t)
        self.validate()

    def validate(self):
        for name in ("sigma_b2", "sigma_eta2", "sigma_eps2"):
            if getattr(self, name) < 0:
                raise ValidationError(f"{name} must be >= 0")
        if not abs(self.rho) < 1:
            raise ValidationError("|rho| must be < 1")
        if self.M < 2 or self.t < 2:
            raise ValidationError("need M >= 2 and t >= 2")
        if min(self.n, self.K, self.L, self.G) < 1:
            raise ValidationError("n, K, L and G must be positive")
        if self.K * self.t > self.J:
            raise ValidationError(f"destruction infeasible: K*t = {self.K * self.t} > J = {self.J}")
        if self.seed < 0:
            raise ValidationError("seed must be a non-negative integer")
        for name in ("deltaA", "deltaATmax"):
            if not np.isfinite(getattr(self, name)):
                raise ValidationError(f"{name} must be finite")

    def replace(self, **changes) -> SimulationConfig:
        if "K" in changes or "t" in changes:
            if "J" not in changes and self.J == self.K * self.t:
                changes["J"] = None
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_json(self, path=None) -> str | None:
        text = json.dumps(self.to_dict(), indent=2, sort_keys=False) + "\n"
        if path is None:
            return text
        atomic_write(path, text)
        return None

    @classmethod
    def from_dict(cls, data: dict) -> SimulationConfig:
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise ValidationError(f"unknown config field(s): {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def from_json(cls, path) -> SimulationConfig:
        with open(path, encoding="utf-8") as fh:
            try:
                data = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ValidationError(f"invalid config JSON: {exc}") from None
        return cls.from_dict(data)


def ar1_matrix(t: int, rho: float) -> np.ndarray:
    """AR(1) correlation matrix with entries ``rho ** |a - b|``."""
    if t < 1:
        raise ValidationError("t must be >= 1")
    if not abs(rho) < 1:
        raise ValidationError("|rho| must be < 1")
    idx = np.arange(t)
    return rho ** np.abs(idx[:, None] - idx[None, :]).astype(float)


def treatment_weights(M: int) -> np.ndarray:
    """Centred contrast over treatments with max pairwise gap 1."""
    return (np.arange(M) - (M - 1) / 2) / (M - 1)


def time_ramp(t: int) -> np.ndarray:
    """Centred linear ramp over time in [-1, 1]."""
    return (2 * np.arange(1, t + 1) - t - 1) / (t - 1)


def fixed_effects(cfg: SimulationConfig) -> dict:
    """Effects satisfying the sum-to-zero constraints.

    ``A`` has ``|A[M-1] - A[0]| = deltaA``; ``T`` is a centred trend with
    ``timeSlope`` per unit of time; ``AT`` is the outer product of the
    treatment contrast and the time ramp, so the largest gap between two
    treatments at one time is ``deltaATmax``.
    """
    w = treatment_weights(cfg.M)
    A = cfg.deltaA * w
    T = cfg.timeSlope * (np.arange(1, cfg.t + 1) - (cfg.t + 1) / 2)
    AT = cfg.deltaATmax * np.outer(w, time_ramp(cfg.t))
    return {"mu": cfg.mu, "A": A, "T": T, "AT": AT}


def _rng(*entropy) -> np.random.Generator:
    return np.random.default_rng([int(e) for e in entropy])


def simulate_complete(cfg: SimulationConfig, replicate: int = 0) -> LongDataset:
    """Generate the full panel: every observational unit at every time.

    Random draws for experimental unit ``i`` of replicate ``r`` come from a
    stream seeded by ``(cfg.seed, r, i)``, so output does not depend on the
    order in which units are generated.
    """
    n_eu = cfg.n * cfg.M
    J, t, L = cfg.J, cfg.t, cfg.L
    eff = fixed_effects(cfg)
    chol = np.linalg.cholesky(ar1_matrix(t, cfg.rho)) if cfg.sigma_eps2 > 0 else np.zeros((t, t))
    per_eu = J * t * L
    y = np.empty(n_eu * per_eu)
    for i in range(n_eu):
        m = i // cfg.n
        rng = _rng(cfg.seed, replicate, i)
        b = rng.normal(0.0, np.sqrt(cfg.sigma_b2))
        eta = rng.normal(0.0, np.sqrt(cfg.sigma_eta2), size=J)
        z = rng.standard_normal((J, L, t))
        eps = np.sqrt(cfg.sigma_eps2) * z @ chol.T  # (J, L, t)
        mean = eff["mu"] + eff["A"][m] + eff["T"] + eff["AT"][m]  # (t,)
        block = mean[None, :, None] + b + eta[:, None, None] + eps.transpose(0, 2, 1)  # (J, t, L)
        y[i * per_eu : (i + 1) * per_eu] = block.ravel()

    eu = np.repeat(np.arange(1, n_eu + 1), per_eu)
    obs = np.tile(np.repeat(np.arange(1, J + 1), t * L), n_eu)
    time = np.tile(np.repeat(np.arange(1, t + 1), L), n_eu * J)
    rep = np.tile(np.arange(1, L + 1), n_eu * J * t)
    treat = (eu - 1) // cfg.n + 1
    frame = pd.DataFrame(
        {
            "eu": eu.astype(str),
            "obs": obs.astype(str),
            "time": time,
            "rep": rep,
            "A": treat.astype(str),
            "y": y,
        }
    )
    return LongDataset(frame, factors={"A": tuple(str(m) for m in range(1, cfg.M + 1))})


def destructive_sample(ds: LongDataset, K: int, seed) -> LongDataset:
    """Keep each observational unit at exactly one time, ``K`` units per cell.

    For every experimental unit, times are visited in order and ``K`` units
    are drawn without replacement from those observed at that time and not
    yet used. All replicates of a chosen (unit, time) are kept. ``seed`` is
    an int or a tuple of ints; each experimental unit gets its own stream.
    """
    seed = tuple(np.atleast_1d(seed).tolist())
    frame = ds.frame
    eu_codes = ds.eu_codes
    obs = frame["obs"].to_numpy()
    times = frame["time"].to_numpy()
    keep = np.zeros(len(frame), dtype=bool)
    order = np.argsort(eu_codes, kind="stable")
    bounds = np.r_[0, np.cumsum(np.bincount(eu_codes, minlength=ds.n_eu))]
    for i in range(ds.n_eu):
        rows = order[bounds[i] : bounds[i + 1]]
        rng = _rng(*seed, i)
        used: set = set()
        chosen: dict = {}
        for k in range(1, ds.t + 1):
            at_k = rows[times[rows] == k]
            candidates = sorted(set(obs[at_k]) - used, key=_natural_key)
            if len(candidates) < K:
                raise ValidationError(
                    f"eu {ds.eu_levels[i]!r} has {len(candidates)} unused units at time {k}, need K={K}"
                )
            pick = rng.choice(len(candidates), size=K, replace=False)
            for p in pick:
                chosen[candidates[p]] = k
                used.add(candidates[p])
        assigned = np.array([chosen.get(o, 0) for o in obs[rows]])
        keep[rows] = assigned == times[rows]
    return LongDataset(frame[keep], factors=ds.factors, destructive=False)


def _natural_key(value: str):
    try:
        return (0, float(value), value)
    except ValueError:
        return (1, 0.0, value)
