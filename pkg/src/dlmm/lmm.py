"""Linear mixed models with nested random intercepts, fitted by ML or REML.

The model is ``y = X beta + Z v + eps`` with ``v ~ N(0, sigma^2 Lambda
Lambda')``, ``Lambda`` diagonal with one relative standard deviation
``theta_j`` per random term (experimental unit, pseudo-unit) and ``eps ~
N(0, sigma^2 I)``. The penalty matrix of the augmented least-squares problem
is ``Delta = Lambda^{-1}``, i.e. ``Delta' Delta = sigma^2 Psi^{-1}``.

Deviance evaluation uses the sequential Cholesky factorization

    R_ZZ' R_ZZ = Lambda' Z' Z Lambda + I
    R_ZZ' R_ZX = Lambda' Z' X
    R_X'  R_X  = X' X - R_ZX' R_ZX

so that ``beta`` and ``sigma^2`` are profiled out and no inverse is formed.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg, optimize, sparse

from .data import DesignMatrices, term_name
from .exceptions import NumericalError, ValidationError

logger = logging.getLogger(__name__)

RATIO_FLOOR = 1e-12
RATIO_CEIL = 1e12
_LOG_2PI = np.log(2 * np.pi)


@dataclass(frozen=True)
class VarianceComponents:
    """Variances in response units squared.

    ``sigma_eta2`` is the pseudo-unit variance; it is ignored by models
    without a pseudo-unit term.
    """

    sigma_b2: float = 0.0
    sigma_eta2: float = 0.0
    sigma_eps2: float = 1.0

    def __post_init__(self):
        for name in ("sigma_b2", "sigma_eta2", "sigma_eps2"):
            object.__setattr__(self, name, float(getattr(self, name)))
        if min(self.sigma_b2, self.sigma_eta2, self.sigma_eps2) < 0:
            raise ValidationError("variance components must be >= 0")

    def variance(self, term: str) -> float:
        return {"eu": self.sigma_b2, "group": self.sigma_eta2}[term]

    def theta(self, terms) -> np.ndarray:
        """Relative standard deviations ``sigma_term / sigma_eps``."""
        if self.sigma_eps2 <= 0:
            raise ValidationError("sigma_eps2 must be positive to form relative parameters")
        return np.sqrt(np.array([self.variance(t) for t in terms], dtype=float) / self.sigma_eps2)

    def delta(self, terms) -> np.ndarray:
        """Diagonal of Delta; zero variances use the ratio floor."""
        ratio = np.maximum(self.theta(terms) ** 2, RATIO_FLOOR)
        return 1.0 / np.sqrt(ratio)

    @classmethod
    def from_theta(cls, theta, sigma2, terms) -> VarianceComponents:
        values = {"eu": 0.0, "group": 0.0}
        for th, term in zip(theta, terms):
            values[term] = float(th) ** 2 * sigma2
        return cls(sigma_b2=values["eu"], sigma_eta2=values["group"], sigma_eps2=float(sigma2))

    def as_dict(self) -> dict:
        return {"sigma_b2": self.sigma_b2, "sigma_eta2": self.sigma_eta2, "sigma_eps2": self.sigma_eps2}


@dataclass(frozen=True)
class CholeskyBlocks:
    R_ZZ: np.ndarray
    R_ZX: np.ndarray
    R_X: np.ndarray


@dataclass(frozen=True)
class AugmentedSystem:
    """Response, fixed and random design stacked over the penalty rows.

    ``y_tilde = [y; 0]``, ``X_tilde = [X; 0]``, ``Z_tilde = [Z; Delta]``.
    """

    y_tilde: np.ndarray
    X_tilde: np.ndarray
    Z_tilde: sparse.csr_matrix
    q: int

    def _normal_matrix(self):
        ztz = (self.Z_tilde.T @ self.Z_tilde).toarray()
        try:
            return linalg.cho_factor(ztz)
        except linalg.LinAlgError:
            raise NumericalError("Z~'Z~ is singular (Delta = 0 with rank-deficient Z)") from None

    def solve_v(self, beta) -> np.ndarray:
        """Random effects for fixed ``beta``: ``(Z~'Z~)^-1 Z~'(y~ - X~ beta)``."""
        rhs = self.Z_tilde.T @ (self.y_tilde - self.X_tilde @ np.asarray(beta, dtype=float))
        return linalg.cho_solve(self._normal_matrix(), rhs)

    def solve(self) -> tuple[np.ndarray, np.ndarray]:
        """Joint penalized least squares for (beta, v)."""
        A = sparse.hstack([sparse.csr_matrix(self.X_tilde), self.Z_tilde], format="csr")
        normal = (A.T @ A).toarray()
        rhs = A.T @ self.y_tilde
        try:
            sol = linalg.solve(normal, rhs, assume_a="pos")
        except linalg.LinAlgError:
            raise NumericalError("augmented system is singular") from None
        p = self.X_tilde.shape[1]
        return sol[:p], sol[p:]

    def residual(self, beta, v) -> np.ndarray:
        return self.y_tilde - self.X_tilde @ beta - self.Z_tilde @ v


def _random_terms(dm: DesignMatrices) -> list[str]:
    return [name for name, _ in dm.random_blocks]


def _column_terms(dm: DesignMatrices) -> np.ndarray:
    return np.concatenate(
        [np.full(block.shape[1], j, dtype=np.intp) for j, (_, block) in enumerate(dm.random_blocks)]
        or [np.zeros(0, dtype=np.intp)]
    )


def assemble_augmented_system(dm: DesignMatrices, vc: VarianceComponents, y) -> AugmentedSystem:
    terms = _random_terms(dm)
    if not terms:
        raise ValidationError("design has no random-effect columns")
    Z = dm.Z
    q = Z.shape[1]
    delta = vc.delta(terms)[_column_terms(dm)]
    y = np.asarray(y, dtype=float)
    return AugmentedSystem(
        y_tilde=np.concatenate([y, np.zeros(q)]),
        X_tilde=np.vstack([dm.X, np.zeros((q, dm.X.shape[1]))]),
        Z_tilde=sparse.vstack([Z, sparse.diags(delta)], format="csr"),
        q=q,
    )


def _canonical_rows(dm: DesignMatrices, y) -> np.ndarray:
    """Row order that depends only on the data, not on how it was listed.

    Sums accumulate in this order, so permuting the input gives bit-identical
    cross products and therefore the same optimizer path.
    """
    keys = [y, *dm.X.T[::-1]]
    for _, block in dm.random_blocks[::-1]:
        keys.append(block.tocsr().indices)
    return np.lexsort(keys)


class CrossProducts:
    """Sufficient statistics reused across deviance evaluations.

    Random-effect columns are permuted so the term with the most levels
    comes first; its block of ``Z'Z`` is diagonal (one indicator per row),
    which keeps the factorization cheap for many pseudo-units.
    """

    def __init__(self, dm: DesignMatrices, y):
        y = np.asarray(y, dtype=float)
        if y.shape != (dm.n_obs,):
            raise ValidationError(f"y has shape {y.shape}, expected ({dm.n_obs},)")
        order = _canonical_rows(dm, y)
        X, y, Z = dm.X[order], y[order], dm.Z[order]
        self.N, self.p = X.shape
        self.q = Z.shape[1]
        self.terms = _random_terms(dm)
        col_term = _column_terms(dm)
        sizes = [block.shape[1] for _, block in dm.random_blocks]
        lead = int(np.argmax(sizes)) if sizes else 0
        self.perm = np.concatenate(
            [np.flatnonzero(col_term == lead), np.flatnonzero(col_term != lead)]
        ).astype(np.intp)
        self.n1 = sizes[lead] if sizes else 0
        self.col_term = col_term[self.perm]
        Zp = Z[:, self.perm].tocsc()
        self.XtX = X.T @ X
        self.Xty = X.T @ y
        self.yty = float(y @ y)
        Z1, Z2 = Zp[:, : self.n1], Zp[:, self.n1 :]
        self.d11 = np.asarray(Z1.multiply(Z1).sum(axis=0)).ravel()
        self.Z21 = (Z2.T @ Z1).toarray()
        self.Z22 = (Z2.T @ Z2).toarray()
        self.ZtX = np.asarray(Zp.T @ X)
        self.Zty = np.asarray(Zp.T @ y).ravel()

    def lam(self, theta) -> np.ndarray:
        """Diagonal of Lambda in permuted column order."""
        return np.asarray(theta, dtype=float)[self.col_term]

    def ZtZ(self) -> np.ndarray:
        """Dense ``Z'Z`` in permuted order (for checks, not for fitting)."""
        out = np.zeros((self.q, self.q))
        n1 = self.n1
        out[:n1, :n1] = np.diag(self.d11)
        out[n1:, :n1] = self.Z21
        out[:n1, n1:] = self.Z21.T
        out[n1:, n1:] = self.Z22
        return out


class _ZZFactor:
    """Upper Cholesky factor of ``Lambda'Z'Z Lambda + I`` in 2x2 block form.

    ``R = [[diag(d), W'], [0, R22]]`` with ``d`` from the diagonal leading
    block and ``R22`` the dense factor of the Schur complement.
    """

    def __init__(self, lam, cp: CrossProducts):
        n1 = cp.n1
        l1, l2 = lam[:n1], lam[n1:]
        self.n1 = n1
        self.d = np.sqrt(l1 * l1 * cp.d11 + 1.0)
        self.W = (l2[:, None] * cp.Z21 * l1[None, :]) / self.d[None, :]
        S = l2[:, None] * cp.Z22 * l2[None, :] - self.W @ self.W.T
        S[np.diag_indices_from(S)] += 1.0
        try:
            self.R22 = linalg.cholesky(S, lower=False) if len(S) else np.zeros((0, 0))
        except linalg.LinAlgError:
            raise NumericalError("Cholesky of the random-effects system failed") from None

    @property
    def logdet(self) -> float:
        return 2.0 * (np.sum(np.log(self.d)) + np.sum(np.log(np.diag(self.R22))))

    def solve_t(self, r):
        """Solve ``R' x = r``."""
        r1, r2 = r[: self.n1], r[self.n1 :]
        x1 = r1 / (self.d if r.ndim == 1 else self.d[:, None])
        x2 = r2 - self.W @ x1
        if len(x2):
            x2 = linalg.solve_triangular(self.R22, x2, trans="T")
        return np.concatenate([x1, x2])

    def solve(self, r):
        """Solve ``R x = r``."""
        r1, r2 = r[: self.n1], r[self.n1 :]
        x2 = linalg.solve_triangular(self.R22, r2) if len(r2) else r2
        x1 = (r1 - self.W.T @ x2) / (self.d if r.ndim == 1 else self.d[:, None])
        return np.concatenate([x1, x2])

    def dense(self) -> np.ndarray:
        q = self.n1 + len(self.R22)
        R = np.zeros((q, q))
        R[: self.n1, : self.n1] = np.diag(self.d)
        R[: self.n1, self.n1 :] = self.W.T
        R[self.n1 :, self.n1 :] = self.R22
        return R


def _factor(theta, cp: CrossProducts):
    lam = cp.lam(theta)
    fz = _ZZFactor(lam, cp)
    R_ZX = fz.solve_t(lam[:, None] * cp.ZtX) if cp.q else np.zeros((0, cp.p))
    S = cp.XtX - R_ZX.T @ R_ZX
    try:
        R_X = linalg.cholesky(S, lower=False)
    except linalg.LinAlgError:
        cond = np.linalg.cond(S)
        raise NumericalError(f"R_X factorization failed; condition estimate {cond:.3g}") from None
    return fz, R_ZX, R_X


def cholesky_blocks(theta, cp: CrossProducts) -> CholeskyBlocks:
    """Dense blocks of the sequential factorization, in ``cp.perm`` order."""
    fz, R_ZX, R_X = _factor(np.asarray(theta, dtype=float), cp)
    return CholeskyBlocks(R_ZZ=fz.dense(), R_ZX=R_ZX, R_X=R_X)


@dataclass
class _Solution:
    R_X: np.ndarray
    beta: np.ndarray
    u: np.ndarray  # spherical random effects, permuted order; v = Lambda u
    pwrss: float
    logdet_zz: float
    logdet_x: float


def _solve(theta, cp: CrossProducts) -> _Solution:
    lam = cp.lam(theta)
    fz, R_ZX, R_X = _factor(theta, cp)
    cu = fz.solve_t(lam * cp.Zty) if cp.q else np.zeros(0)
    cb = linalg.solve_triangular(R_X, cp.Xty - R_ZX.T @ cu, trans="T")
    beta = linalg.solve_triangular(R_X, cb)
    u = fz.solve(cu - R_ZX @ beta) if cp.q else np.zeros(0)
    pwrss = cp.yty - cu @ cu - cb @ cb
    pwrss = max(pwrss, 1e-300 * max(cp.yty, 1.0))
    logdet_x = 2.0 * np.sum(np.log(np.abs(np.diag(R_X))))
    return _Solution(R_X, beta, u, pwrss, fz.logdet if cp.q else 0.0, logdet_x)


def _deviance(sol: _Solution, N: int, p: int, criterion: str) -> float:
    if criterion == "ml":
        return sol.logdet_zz + N * (1.0 + _LOG_2PI + np.log(sol.pwrss / N))
    dof = N - p
    return sol.logdet_zz + sol.logdet_x + dof * (1.0 + _LOG_2PI + np.log(sol.pwrss / dof))


def profiled_deviance(theta, dm_or_cp, y=None, criterion: str = "reml") -> float:
    """-2 log-likelihood (ML) or the REML criterion with beta and sigma^2 profiled out.

    ``theta`` holds one relative standard deviation per random term.
    """
    criterion = _check_criterion(criterion)
    cp = dm_or_cp if isinstance(dm_or_cp, CrossProducts) else CrossProducts(dm_or_cp, y)
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (len(cp.terms),) or np.any(theta < 0):
        raise ValidationError(f"theta must be {len(cp.terms)} non-negative values")
    return _deviance(_solve(theta, cp), cp.N, cp.p, criterion)


def _check_criterion(criterion: str) -> str:
    criterion = criterion.lower()
    if criterion not in ("ml", "reml"):
        raise ValidationError(f"criterion must be 'ml' or 'reml', got {criterion!r}")
    return criterion


@dataclass(frozen=True)
class FittedLMM:
    beta: np.ndarray
    vhat: dict
    vc: VarianceComponents
    deviance: float
    fitted: np.ndarray
    residuals: np.ndarray
    mse: float
    converged: bool
    iterations: int
    criterion: str
    theta: np.ndarray
    terms: tuple
    boundary: dict = field(default_factory=dict)
    cov_beta: np.ndarray | None = None
    warnings: tuple = ()
    fixed_vc: bool = False

    @property
    def v(self) -> np.ndarray:
        return np.concatenate([self.vhat[t] for t in self.terms]) if self.terms else np.zeros(0)

    @property
    def n_obs(self) -> int:
        return len(self.fitted)

    def to_dict(self, dm: DesignMatrices | None = None) -> dict:
        out = {
            "criterion": self.criterion,
            "variance_components": self.vc.as_dict(),
            "deviance": float(self.deviance),
            "mse": float(self.mse),
            "converged": bool(self.converged),
            "iterations": int(self.iterations),
            "boundary": {k: bool(v) for k, v in self.boundary.items()},
            "theta": [float(x) for x in self.theta],
            "beta": [float(x) for x in self.beta],
            "warnings": list(self.warnings),
            "n_obs": self.n_obs,
        }
        if dm is not None:
            out["effects"] = {
                name: (np.asarray(val).tolist() if np.ndim(val) else float(val))
                for name, val in dm.decode(self.beta).items()
            }
            out["blups"] = {}
            if "eu" in self.vhat:
                out["blups"]["eu"] = dict(zip(dm.eu_levels, map(float, self.vhat["eu"])))
            if "group" in self.vhat:
                out["blups"]["group"] = {
                    f"{eu}:{g + 1}": float(v) for (eu, g), v in zip(dm.group_levels, self.vhat["group"])
                }
        return out


def _finish(theta, sigma2, sol, cp, dm, y, criterion, deviance, converged, iterations, boundary, warn, fixed_vc):
    v = np.empty(cp.q)
    v[cp.perm] = cp.lam(theta) * sol.u
    fitted = dm.X @ sol.beta
    if cp.q:
        fitted = fitted + dm.Z @ v
    resid = y - fitted
    vhat, pos = {}, 0
    for name, block in dm.random_blocks:
        vhat[name] = v[pos : pos + block.shape[1]]
        pos += block.shape[1]
    RXinv = linalg.solve_triangular(sol.R_X, np.eye(cp.p))
    return FittedLMM(
        beta=sol.beta,
        vhat=vhat,
        vc=VarianceComponents.from_theta(theta, sigma2, cp.terms),
        deviance=float(deviance),
        fitted=fitted,
        residuals=resid,
        mse=float(np.mean(resid**2)),
        converged=converged,
        iterations=iterations,
        criterion=criterion,
        theta=np.asarray(theta, dtype=float),
        terms=tuple(cp.terms),
        boundary=boundary,
        cov_beta=sigma2 * RXinv @ RXinv.T,
        warnings=tuple(warn),
        fixed_vc=fixed_vc,
    )


def fit_lmm(
    dm: DesignMatrices,
    y,
    criterion: str = "reml",
    vc: VarianceComponents | None = None,
    max_iter: int = 500,
    tol: float = 1e-9,
    xtol: float = 1e-8,
) -> FittedLMM:
    """Fit by minimizing the profiled deviance over the variance ratios.

    Nelder-Mead runs on log variance ratios within ``[1e-12, 1e12]``,
    starting from ratio 1 (equal split), with ``tol`` relative to the
    starting deviance. A few finite-difference Newton steps then refine the
    interior components. Components whose ratio can be set to zero without
    raising the criterion by more than that tolerance are reported as 0 and
    flagged in ``boundary``. With ``vc`` given, no optimization is done: the
    variances are held at ``vc`` and only beta and the BLUPs are computed.
    """
    criterion = _check_criterion(criterion)
    y = np.asarray(y, dtype=float)
    cp = CrossProducts(dm, y)
    warn = []
    if dm.Zb is not None and dm.Zb.shape[1] == 1:
        warn.append("single experimental unit: its random effect is confounded with the intercept")
    if dm.Zb is not None and dm.Zb.shape[1] < 2 and not warn:
        warn.append("fewer than two experimental units")
    n_terms = len(cp.terms)
    dof = cp.N - (cp.p if criterion == "reml" else 0)
    if dof <= 0:
        raise ValidationError("not enough observations for the number of fixed effects")

    if vc is not None:
        theta = vc.theta(cp.terms)
        sol = _solve(theta, cp)
        dev = _deviance(sol, cp.N, cp.p, criterion)
        return _finish(theta, vc.sigma_eps2, sol, cp, dm, y, criterion, dev, True, 0, {}, warn, True)

    if n_terms == 0:
        sol = _solve(np.zeros(0), cp)
        dev = _deviance(sol, cp.N, cp.p, criterion)
        return _finish(np.zeros(0), sol.pwrss / dof, sol, cp, dm, y, criterion, dev, True, 0, {}, warn, False)

    lo, hi = np.log(RATIO_FLOOR), np.log(RATIO_CEIL)
    # criterion tolerance relative to the deviance: absolute 1e-9 is below
    # floating-point resolution once the deviance is in the thousands
    ftol = tol * max(1.0, abs(_deviance(_solve(np.ones(n_terms), cp), cp.N, cp.p, criterion)))

    def search(free, start):
        """Minimize over the log ratios of ``free`` terms; the others stay at 0."""
        free = np.asarray(free, dtype=bool)
        k = int(free.sum())

        def theta_of(phi):
            theta = np.zeros(n_terms)
            theta[free] = np.exp(0.5 * np.clip(phi, lo, hi))
            return theta

        def objective(phi):
            return _deviance(_solve(theta_of(phi), cp), cp.N, cp.p, criterion)

        if k == 0:
            return np.zeros(n_terms), objective(np.zeros(0)), 0, True
        x0 = np.asarray(start, dtype=float)[free]
        res = optimize.minimize(
            objective,
            x0,
            method="Nelder-Mead",
            bounds=[(lo, hi)] * k,
            options={"initial_simplex": np.vstack([x0, x0 + np.eye(k)]), "xatol": xtol, "fatol": ftol, "maxiter": max_iter},
        )
        x = np.clip(res.x, lo, hi)
        ok = bool(res.success) and res.nit < max_iter
        inside = x > lo + 1.0
        if ok and inside.any():
            x = _newton_polish(objective, x, inside)
        return theta_of(x), objective(x), int(res.nit), ok

    theta, best, iterations, converged = search(np.ones(n_terms, bool), np.zeros(n_terms))
    # a component is on the boundary when pinning it at zero and re-optimizing
    # the rest does not raise the criterion; only small ratios are worth the check
    boundary = {term: bool(theta[j] ** 2 <= np.exp(lo + 1.0)) for j, term in enumerate(cp.terms)}
    theta[[boundary[t] for t in cp.terms]] = 0.0
    for j, term in enumerate(cp.terms):
        if boundary[term] or theta[j] ** 2 >= 1.0:
            continue
        free = theta > 0
        free[j] = False
        start = np.log(np.maximum(theta, RATIO_FLOOR) ** 2)
        th0, dev0, nit, ok = search(free, start)
        iterations += nit
        if dev0 <= best + ftol:
            theta, best = th0, min(dev0, best)
            boundary[term] = True
    best = _deviance(_solve(theta, cp), cp.N, cp.p, criterion)
    if iterations >= max_iter:
        converged = False
    if not converged:
        warn.append(f"optimizer did not converge within {max_iter} iterations")
        logger.warning("LMM optimizer did not converge (%d iterations)", iterations)
    sol = _solve(theta, cp)
    dev = _deviance(sol, cp.N, cp.p, criterion)
    sigma2 = sol.pwrss / dof
    return _finish(theta, sigma2, sol, cp, dm, y, criterion, dev, converged, iterations, boundary, warn, False)


def _newton_polish(f, x, free, h=1e-4, steps=8):
    """Refine a Nelder-Mead optimum with finite-difference Newton steps.

    Deviance values stop resolving parameter changes near 1e-7 relative;
    the central-difference gradient keeps resolving them, which is what
    the 1e-6 agreement with closed-form estimators needs.
    """
    idx = np.flatnonzero(free)
    x = x.copy()
    fx = f(x)
    for _ in range(steps):
        k = len(idx)
        g = np.zeros(k)
        H = np.zeros((k, k))
        E = np.eye(len(x)) * h
        for a, i in enumerate(idx):
            fp, fm_ = f(x + E[i]), f(x - E[i])
            g[a] = (fp - fm_) / (2 * h)
            H[a, a] = (fp - 2 * fx + fm_) / h**2
            for b_ in range(a):
                j = idx[b_]
                H[a, b_] = H[b_, a] = (
                    f(x + E[i] + E[j]) - f(x + E[i] - E[j]) - f(x - E[i] + E[j]) + f(x - E[i] - E[j])
                ) / (4 * h * h)
        try:
            if np.any(np.linalg.eigvalsh(H) <= 0):
                break
            step = np.linalg.solve(H, g)
        except np.linalg.LinAlgError:
            break
        if not np.all(np.isfinite(step)) or np.max(np.abs(step)) > 1.0:
            break
        trial = x.copy()
        trial[idx] -= step
        ft = f(trial)
        if ft > fx + 1e-10 * max(1.0, abs(fx)):
            break
        x, fx = trial, ft
        if np.max(np.abs(step)) < 1e-12:
            break
    return x


def predict(fm: FittedLMM, dm: DesignMatrices) -> np.ndarray:
    """``X beta + Z v`` for the design the model was fitted on."""
    if dm.X.shape[1] != len(fm.beta):
        raise ValidationError(f"X has {dm.X.shape[1]} columns, model has {len(fm.beta)} coefficients")
    out = dm.X @ fm.beta
    Z = dm.Z
    if Z.shape[1] != len(fm.v):
        raise ValidationError(f"Z has {Z.shape[1]} columns, model has {len(fm.v)} random effects")
    if Z.shape[1]:
        out = out + Z @ fm.v
    return out


def mse(fm: FittedLMM) -> float:
    return float(np.mean(fm.residuals**2))


def wald_tests(fm: FittedLMM, dm: DesignMatrices) -> list[dict]:
    """Wald F test for every non-intercept fixed term.

    The denominator degrees of freedom are ``N - p`` (large-sample); this is
    what the generic factor path reports, the balanced tables in
    :mod:`dlmm.anova` use exact strata instead.
    """
    from scipy import stats

    rows = []
    ddf = fm.n_obs - len(fm.beta)
    for term, sl in dm.term_slices.items():
        if term == ():
            continue
        b = fm.beta[sl]
        V = fm.cov_beta[sl, sl]
        df1 = len(b)
        F = float(b @ linalg.solve(V, b, assume_a="pos")) / df1
        rows.append({"term": term_name(term), "df": df1, "ddf": ddf, "F": F, "p": float(stats.f.sf(F, df1, ddf))})
    return rows
