import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from dlmm.diagnostics import (
    acf,
    acf_band_fraction,
    acf_frame,
    anderson_darling,
    bartlett,
    binned_bartlett,
    normal_quantiles,
    random_bins,
    residual_acf,
    write_tests_csv,
)
from dlmm.exceptions import ValidationError
from dlmm.models import fit_model


def bartlett_by_hand(groups):
    k = len(groups)
    n = np.array([len(g) for g in groups])
    s2 = np.array([np.var(g, ddof=1) for g in groups])
    N = n.sum()
    sp = np.sum((n - 1) * s2) / (N - k)
    num = (N - k) * np.log(sp) - np.sum((n - 1) * np.log(s2))
    den = 1 + (np.sum(1 / (n - 1)) - 1 / (N - k)) / (3 * (k - 1))
    return num / den


# -- autocorrelation --------------------------------------------------------


def test_alternating_series():
    x = np.tile([1.0, -1.0], 200)
    assert acf(x, 1)[0] == pytest.approx(-1, abs=0.01)


def test_ar1_series():
    rng = np.random.default_rng(7)
    x = np.zeros(500)
    for i in range(1, 500):
        x[i] = 0.8 * x[i - 1] + rng.normal()
    assert 0.7 <= acf(x, 1)[0] <= 0.9


def test_acf_matches_statsmodels():
    from statsmodels.tsa.stattools import acf as sm_acf

    x = np.random.default_rng(0).normal(size=40)
    np.testing.assert_allclose(acf(x, 10), sm_acf(x, nlags=10, fft=False)[1:], rtol=1e-12)


@given(st.lists(st.floats(-100, 100), min_size=3, max_size=30), st.floats(-50, 50), st.floats(0.1, 10))
def test_acf_affine_invariance(x, shift, scale):
    x = np.array(x)
    if x.std() < 1e-6:
        return
    a = acf(x, len(x) - 1)
    np.testing.assert_allclose(acf(x * scale + shift, len(x) - 1), a, atol=1e-8)
    assert np.all(np.abs(a) <= 1 + 1e-12)


def test_short_series():
    with pytest.raises(ValidationError):
        acf([1.0], 1)


def test_residual_acf_layout(small_sample, small_groups):
    fit = fit_model(small_sample, "proposed", small_groups)
    res = residual_acf(fit.lmm, small_sample, small_groups)
    t = small_sample.t
    assert len(res) == small_sample.n_eu * 2
    assert all(len(r.acf) == t - 1 for r in res)
    assert res[0].band == pytest.approx(1.96 / np.sqrt(t))
    frame = acf_frame(res)
    assert list(frame.columns) == ["eu", "group", "lag", "acf", "band"]
    assert len(frame) == len(res) * (t - 1)
    assert 0 <= acf_band_fraction(res) <= 1
    with pytest.raises(ValidationError):
        residual_acf(fit.lmm.residuals[:-1], small_sample, small_groups)


def test_iid_residuals_mostly_inside_band(default_sample):
    ds, pa = default_sample
    noise = np.random.default_rng(1).normal(size=len(ds))
    assert acf_band_fraction(residual_acf(noise, ds, pa)) >= 0.9


# -- Anderson-Darling ------------------------------------------------------


@pytest.mark.parametrize("seed", range(5))
def test_ad_matches_statsmodels(seed):
    from statsmodels.stats.diagnostic import normal_ad

    x = np.random.default_rng(seed).gamma(3, size=60 + seed * 40)
    ours = anderson_darling(x)
    a2, p = normal_ad(x)
    n = len(x)
    # statsmodels applies the same small-sample factor before the p-value
    assert ours.statistic == pytest.approx(a2 * (1 + 0.75 / n + 2.25 / n**2), rel=1e-10)
    assert ours.p == pytest.approx(p, rel=1e-8, abs=1e-12)


def test_ad_calibration():
    rng = np.random.default_rng(11)
    p = np.array([anderson_darling(rng.normal(size=10_000)).p for _ in range(500)])
    assert abs(np.mean(p < 0.05) - 0.05) < 3 * np.sqrt(0.05 * 0.95 / 500)


def test_ad_power():
    assert anderson_darling(np.random.default_rng(0).exponential(size=200)).p < 0.001


def test_ad_errors():
    with pytest.raises(ValidationError, match="zero variance"):
        anderson_darling(np.ones(20))
    with pytest.raises(ValidationError, match="n >= 8"):
        anderson_darling([1.0, 2.0, 3.0])


@settings(max_examples=30)
@given(st.integers(0, 10_000), st.floats(-1e3, 1e3), st.floats(1e-2, 1e2))
def test_ad_location_scale_invariant(seed, shift, scale):
    x = np.random.default_rng(seed).normal(size=50)
    a, b = anderson_darling(x), anderson_darling(x * scale + shift)
    assert b.statistic == pytest.approx(a.statistic, rel=1e-8)
    assert 0 <= a.p <= 1


# -- Bartlett --------------------------------------------------------------


def test_bartlett_hand_formula():
    rng = np.random.default_rng(3)
    groups = [rng.normal(scale=s, size=n) for s, n in ((1, 10), (2, 15), (1.5, 8))]
    res = bartlett(groups)
    assert res.statistic == pytest.approx(bartlett_by_hand(groups), rel=1e-12)
    assert res.p == pytest.approx(stats.chi2.sf(res.statistic, 2), rel=1e-12)
    assert res.df == 2 and res.n == 33


def test_bartlett_calibration():
    rng = np.random.default_rng(5)
    p = np.array([bartlett([rng.normal(size=20) for _ in range(4)]).p for _ in range(500)])
    assert abs(np.mean(p < 0.05) - 0.05) < 3 * np.sqrt(0.05 * 0.95 / 500)


def test_bartlett_power():
    rng = np.random.default_rng(0)
    assert bartlett([rng.normal(size=50), rng.normal(scale=4, size=50)]).p < 0.001


def test_bartlett_identical_groups():
    g = np.random.default_rng(0).normal(size=12)
    res = bartlett([g, g.copy(), g.copy()])
    assert res.statistic == 0 and res.p == 1


def test_bartlett_errors():
    with pytest.raises(ValidationError, match="zero variance"):
        bartlett([[1.0, 1.0], [1.0, 2.0]])
    with pytest.raises(ValidationError, match="two groups"):
        bartlett([[1.0, 2.0]])
    with pytest.raises(ValidationError, match="fewer than 2"):
        bartlett([[1.0], [1.0, 2.0]])


@settings(max_examples=30)
@given(st.integers(0, 10_000), st.floats(1e-2, 1e2))
def test_bartlett_scale_invariant(seed, scale):
    rng = np.random.default_rng(seed)
    groups = [rng.normal(size=10) for _ in range(3)]
    a, b = bartlett(groups), bartlett([g * scale for g in groups])
    assert b.statistic == pytest.approx(a.statistic, rel=1e-8, abs=1e-12)


def test_random_bins_deterministic_and_equal():
    x = np.arange(40.0)
    a, b = random_bins(x), random_bins(x)
    assert len(a) == 4 and all(len(g) == 10 for g in a)
    assert all(np.array_equal(u, v) for u, v in zip(a, b))
    assert sorted(np.concatenate(a)) == list(x)
    assert not np.array_equal(np.concatenate(a), x)
    assert binned_bartlett(np.random.default_rng(0).normal(size=40)).df == 3


def test_quantiles_and_csv():
    q = normal_quantiles([3.0, 1.0, 2.0])
    assert list(q["sample"]) == [1.0, 2.0, 3.0]
    assert q["theoretical"].iloc[1] == pytest.approx(0.0)
    text = write_tests_csv([bartlett([[1.0, 2.0, 4.0], [2.0, 3.0, 3.5]])])
    assert text.splitlines()[0] == "test,statistic,p,n,df"
