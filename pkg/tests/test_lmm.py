import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dlmm.data import LongDataset, build_design
from dlmm.exceptions import ValidationError
from dlmm.lmm import (
    CrossProducts,
    VarianceComponents,
    assemble_augmented_system,
    cholesky_blocks,
    fit_lmm,
    mse,
    predict,
    profiled_deviance,
)
from dlmm.grouping import assign_pseudo_units
from dlmm.models import fit_model
from dlmm.simulate import SimulationConfig, destructive_sample, simulate_complete


def dense_deviance(theta, dm, y, criterion):
    """-2 log-likelihood with sigma^2 profiled, straight from the marginal covariance."""
    X = dm.X
    N, p = X.shape
    lam = np.concatenate([np.full(b.shape[1], th) for th, (_, b) in zip(theta, dm.random_blocks)])
    Z = dm.Z.toarray() * lam
    V = np.eye(N) + Z @ Z.T
    Vi = np.linalg.inv(V)
    XtViX = X.T @ Vi @ X
    beta = np.linalg.solve(XtViX, X.T @ Vi @ y)
    r = y - X @ beta
    q = r @ Vi @ r
    logdet = np.linalg.slogdet(V)[1]
    if criterion == "ml":
        return logdet + N * (1 + np.log(2 * np.pi * q / N))
    return logdet + np.linalg.slogdet(XtViX)[1] + (N - p) * (1 + np.log(2 * np.pi * q / (N - p)))


def one_way(y, groups):
    ds = LongDataset.from_arrays(eu=[str(g) for g in groups], time=np.ones(len(y), int), y=y)
    return ds, build_design(ds, fixed="1")


# -- the one-way toy ---------------------------------------------------------


def test_toy_reml(toy_oneway):
    dm = build_design(toy_oneway, fixed="1")
    fm = fit_lmm(dm, toy_oneway.y)
    assert fm.beta[0] == pytest.approx(7.0, abs=1e-8)
    assert fm.vc.sigma_eps2 == pytest.approx(2.0, abs=1e-6)
    assert fm.vc.sigma_b2 == pytest.approx(49.0, abs=1e-6)
    np.testing.assert_allclose(fm.vhat["eu"], [-4.9, 4.9], atol=1e-6)
    np.testing.assert_allclose(fm.fitted, [2.1, 2.1, 11.9, 11.9], atol=1e-6)
    # residuals -1.1, 0.9, -0.9, 1.1
    assert mse(fm) == pytest.approx((1.21 + 0.81 + 0.81 + 1.21) / 4, abs=1e-6)
    assert fm.mse == np.mean(fm.residuals**2)
    assert fm.converged


def test_toy_shrinkage_formula(toy_oneway):
    # b_i = J sb2 / (J sb2 + se2) * (ybar_i - ybar) with J=2, sb2=49, se2=2
    dm = build_design(toy_oneway, fixed="1")
    sysm = assemble_augmented_system(dm, VarianceComponents(49.0, 0.0, 2.0), toy_oneway.y)
    v = sysm.solve_v([7.0])
    np.testing.assert_allclose(v, 98 / 100 * np.array([-5.0, 5.0]), atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 5), st.integers(2, 5), st.integers(0, 10_000))
def test_reml_equals_anova_moments(a, J, seed):
    rng = np.random.default_rng(seed)
    groups = np.repeat(np.arange(a), J)
    y = rng.normal(size=a)[groups] * 3 + rng.normal(size=a * J)
    means = y.reshape(a, J).mean(axis=1)
    msw = ((y.reshape(a, J) - means[:, None]) ** 2).sum() / (a * (J - 1))
    msb = J * ((means - y.mean()) ** 2).sum() / (a - 1)
    ds, dm = one_way(y, groups)
    fm = fit_lmm(dm, y)
    if msb > msw * (1 + 1e-6):
        assert fm.vc.sigma_eps2 == pytest.approx(msw, rel=1e-6, abs=1e-9)
        assert fm.vc.sigma_b2 == pytest.approx((msb - msw) / J, rel=1e-6, abs=1e-7)
    else:
        # moment estimate is negative: REML sits on the boundary
        assert fm.vc.sigma_b2 < 1e-6 * y.var()


# -- likelihood against a dense oracle -------------------------------------


@pytest.mark.parametrize("criterion", ["reml", "ml"])
def test_deviance_matches_dense_oracle(small_sample, small_groups, criterion):
    dm = build_design(small_sample, random=("eu", "eu:group"), grouping=small_groups)
    y = small_sample.y
    for theta in ([1.0, 1.0], [0.3, 2.0], [1e-3, 0.5], [4.0, 1e-4]):
        ours = profiled_deviance(theta, dm, y, criterion)
        assert ours == pytest.approx(dense_deviance(np.array(theta), dm, y, criterion), rel=1e-10)


def test_theta_zero_ml_is_ols(small_sample):
    dm = build_design(small_sample, random=("eu",))
    y = small_sample.y
    N = len(y)
    rss = np.sum((y - dm.X @ np.linalg.lstsq(dm.X, y, rcond=None)[0]) ** 2)
    assert profiled_deviance([0.0], dm, y, "ml") == pytest.approx(N * (1 + np.log(2 * np.pi) + np.log(rss / N)), rel=1e-12)


def test_cholesky_identities(small_sample, small_groups):
    dm = build_design(small_sample, random=("eu", "eu:group"), grouping=small_groups)
    cp = CrossProducts(dm, small_sample.y)
    theta = np.array([1.3, 0.7])
    blocks = cholesky_blocks(theta, cp)
    lam = cp.lam(theta)
    target = lam[:, None] * cp.ZtZ() * lam[None, :] + np.eye(cp.q)
    np.testing.assert_allclose(blocks.R_ZZ.T @ blocks.R_ZZ, target, rtol=1e-8, atol=1e-8 * np.abs(target).max())
    np.testing.assert_allclose(blocks.R_X.T @ blocks.R_X, cp.XtX - blocks.R_ZX.T @ blocks.R_ZX, rtol=1e-8, atol=1e-8)
    assert np.allclose(np.tril(blocks.R_ZZ, -1), 0)


def test_delta_reconstruction():
    vc = VarianceComponents(5.0, 4.0, 2.0)
    d = vc.delta(["eu", "group"])
    np.testing.assert_allclose(d**2, [2.0 / 5.0, 2.0 / 4.0], rtol=1e-12)


# -- the augmented system --------------------------------------------------


def test_augmented_limits(toy_oneway):
    dm = build_design(toy_oneway, fixed="1")
    y = toy_oneway.y
    tiny = assemble_augmented_system(dm, VarianceComponents(1e-12, 0, 1.0), y)
    assert np.abs(tiny.solve_v([7.0])).max() < 1e-5
    # no penalty: v are the group deviations from beta
    free = assemble_augmented_system(dm, VarianceComponents(1e12, 0, 1.0), y)
    np.testing.assert_allclose(free.solve_v([7.0]), [-5.0, 5.0], atol=1e-9)
    assert free.y_tilde.shape == (6,)
    assert np.all(free.X_tilde[4:] == 0)
    assert np.all(free.y_tilde[4:] == 0)


def test_augmented_orthogonality_at_fit(small_sample, small_groups):
    dm = build_design(small_sample, random=("eu", "eu:group"), grouping=small_groups)
    fm = fit_lmm(dm, small_sample.y)
    sysm = assemble_augmented_system(dm, fm.vc, small_sample.y)
    beta, v = sysm.solve()
    np.testing.assert_allclose(beta, fm.beta, atol=1e-8)
    np.testing.assert_allclose(v, fm.v, atol=1e-8)
    r = sysm.residual(beta, v)
    A = np.hstack([sysm.X_tilde, sysm.Z_tilde.toarray()])
    assert np.abs(A.T @ r).max() < 1e-8 * np.abs(small_sample.y).sum()


# -- fitting ---------------------------------------------------------------


def test_reml_and_ml_share_beta_at_fixed_theta(small_sample, small_groups):
    dm = build_design(small_sample, random=("eu", "eu:group"), grouping=small_groups)
    vc = VarianceComponents(3.0, 1.5, 2.5)
    a = fit_lmm(dm, small_sample.y, "reml", vc=vc)
    b = fit_lmm(dm, small_sample.y, "ml", vc=vc)
    np.testing.assert_allclose(a.beta, b.beta, rtol=1e-12)
    assert a.fixed_vc and a.iterations == 0


def test_order_invariance(small_sample, small_groups):
    rng = np.random.default_rng(3)
    perm = rng.permutation(len(small_sample))
    fm = fit_model(small_sample, "proposed", small_groups).lmm
    shuffled = small_sample.take(perm)
    fm2 = fit_model(shuffled, "proposed", small_groups).lmm
    a, b = fm.vc.as_dict(), fm2.vc.as_dict()
    for k in a:
        assert b[k] == pytest.approx(a[k], rel=1e-10, abs=1e-12)
    np.testing.assert_allclose(fm2.fitted, fm.fitted[perm], rtol=1e-10)


def _zero_truth_sample(seed):
    cfg = SimulationConfig(n=3, t=3, K=4, L=2, sigma_b2=0, sigma_eta2=0, seed=seed)
    ds = destructive_sample(simulate_complete(cfg), cfg.K, seed)
    # pseudo-units from a label unrelated to the response
    labels = np.random.default_rng(seed).permutation(np.resize(["a", "b"], len(ds)))
    frame = ds.frame.assign(S=labels)
    return LongDataset(frame, factors={**ds.factors, "S": ("a", "b")})


def test_zero_truth_estimates_near_zero():
    for seed in range(5):
        ds = _zero_truth_sample(seed)
        pa = assign_pseudo_units(ds, 2, strategy="covariate", covariate="S")
        fit = fit_model(ds, "proposed", pa)
        vc = fit.lmm.vc
        assert vc.sigma_b2 < 0.25 * vc.sigma_eps2 and vc.sigma_eta2 < 0.25 * vc.sigma_eps2
        if fit.lmm.boundary["eu"] and fit.lmm.boundary["group"]:
            ols = np.linalg.lstsq(fit.design.X, ds.y, rcond=None)[0]
            np.testing.assert_allclose(fit.lmm.beta, ols, atol=1e-6)


def test_rank_grouping_creates_pseudo_unit_variance():
    # sorting within cells separates the groups even when eta is absent
    ds = _zero_truth_sample(0)
    fit = fit_model(ds, "proposed", assign_pseudo_units(ds, 2))
    assert fit.lmm.vc.sigma_eta2 > 0.25 * fit.lmm.vc.sigma_eps2


def test_zero_variance_truth_gives_ols_beta():
    # noise only at the replicate level; both random terms land on the boundary
    rng = np.random.default_rng(0)
    rows = [{"eu": f"e{i}", "time": k, "A": str(i % 2), "y": rng.normal()} for i in range(6) for k in (1, 2) for _ in range(3)]
    ds = LongDataset(pd.DataFrame(rows))
    dm = build_design(ds, random=("eu",))
    y = ds.y.copy()
    # remove the eu means so the between-eu variance is below its expectation
    y -= pd.Series(y).groupby(ds.eu_codes).transform("mean").to_numpy()
    fm = fit_lmm(dm, y)
    assert fm.boundary["eu"] and fm.vc.sigma_b2 == 0
    np.testing.assert_allclose(fm.beta, np.linalg.lstsq(dm.X, y, rcond=None)[0], atol=1e-6)


def test_deviance_consistency():
    """Deviance at the generating ratios beats ratios ten times larger."""
    wins = 0
    for rep in range(20):
        cfg = SimulationConfig(n=5, t=4, K=4, L=3, seed=rep)
        ds = destructive_sample(simulate_complete(cfg), cfg.K, rep)
        dm = build_design(ds, random=("eu",))
        theta = VarianceComponents(cfg.sigma_b2, 0, cfg.sigma_eta2 + cfg.sigma_eps2).theta(["eu"])
        wins += profiled_deviance(theta, dm, ds.y) <= profiled_deviance(theta * 10, dm, ds.y)
    assert wins == 20


def test_predict_and_mse(small_sample, small_groups):
    fit = fit_model(small_sample, "proposed", small_groups)
    np.testing.assert_allclose(predict(fit.lmm, fit.design), fit.lmm.fitted, rtol=1e-12)
    other = build_design(small_sample, random=("eu",))
    with pytest.raises(ValidationError, match="random effects"):
        predict(fit.lmm, other)


def test_noiseless_mse_zero():
    cfg = SimulationConfig(n=2, t=3, K=2, L=2, sigma_b2=0, sigma_eta2=0, sigma_eps2=0)
    ds = simulate_complete(cfg)
    dm = build_design(ds, random=())
    assert fit_lmm(dm, ds.y).mse < 1e-20


def test_single_eu_warns():
    ds = LongDataset.from_arrays(eu=["a"] * 4, time=[1, 1, 2, 2], y=[1.0, 2.0, 3.0, 5.0])
    fm = fit_lmm(build_design(ds, fixed="time"), ds.y)
    assert any("confounded" in w for w in fm.warnings)


def test_errors(toy_oneway):
    dm = build_design(toy_oneway, fixed="1")
    with pytest.raises(ValidationError):
        fit_lmm(dm, toy_oneway.y, criterion="bayes")
    with pytest.raises(ValidationError):
        fit_lmm(dm, toy_oneway.y[:3])
    with pytest.raises(ValidationError):
        VarianceComponents(-1.0, 0.0, 1.0)


# -- statsmodels as an external oracle -------------------------------------


def _sm_frame(ds, pa=None):
    frame = ds.frame.copy()
    if pa is not None:
        frame["grp"] = frame["eu"] + ":" + pd.Series(pa.groups_for(ds)).astype(str)
    return frame


@pytest.mark.parametrize("reml", [True, False])
def test_random_intercept_matches_statsmodels(small_sample, reml):
    import statsmodels.formula.api as smf

    res = smf.mixedlm("y ~ C(A, Sum) * C(time, Sum)", small_sample.frame, groups="eu").fit(reml=reml, method="lbfgs")
    fm = fit_model(small_sample, "randint", criterion="reml" if reml else "ml").lmm
    assert fm.vc.sigma_eps2 == pytest.approx(res.scale, rel=1e-4)
    assert fm.vc.sigma_b2 == pytest.approx(float(res.cov_re.iloc[0, 0]), rel=1e-3)
    # ours should be at least as good as the reference optimizer
    assert fm.deviance <= -2 * res.llf + 1e-6
    assert fm.deviance == pytest.approx(-2 * res.llf, abs=1e-3)


def test_nested_model_matches_statsmodels(small_sample, small_groups):
    import statsmodels.formula.api as smf

    frame = _sm_frame(small_sample, small_groups)
    model = smf.mixedlm(
        "y ~ C(A, Sum) * C(time, Sum)", frame, groups="eu", re_formula="1", vc_formula={"grp": "0 + C(grp)"}
    )
    res = model.fit(reml=True, method="lbfgs")
    fm = fit_model(small_sample, "proposed", small_groups).lmm
    assert fm.deviance <= -2 * res.llf + 1e-6
    assert fm.deviance == pytest.approx(-2 * res.llf, abs=1e-3)
    assert fm.vc.sigma_eps2 == pytest.approx(res.scale, rel=1e-3)
    assert fm.vc.sigma_eta2 == pytest.approx(float(res.vcomp[0]), rel=1e-2)
