import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats as sps

from tailbench.stats import (FitError, empirical_ccdf, fit_stable_quantile, fit_t_mle,
                             kolmogorov_sf, ks_test, ks_two_sample, qq_points,
                             stable_reference, stable_sample_cms, t_cdf, t_ppf, t_sf)

# references computed with mpmath at 30 digits
T_CDF_CASES = [
    (2.015, 5.0, 1.0, 0.949996913836597),
    (-3.0, 2.5, 1.7, 0.0969158426783657),
    (0.4, 0.7, 1.0, 0.611061866610794),
]
KOLMOGOROV_CASES = [
    (0.5, 0.963945243664875),
    (1.0, 0.269999671677355),
    (1.3581, 0.0499996304316674),
    (2.0, 0.000670925255779695),
]


@pytest.mark.parametrize("x,nu,kappa,expected", T_CDF_CASES)
def test_t_cdf_reference_values(x, nu, kappa, expected):
    assert float(t_cdf(x, nu, kappa)) == pytest.approx(expected, abs=1e-10)


def test_t_ppf_reference_and_inverse():
    assert float(t_ppf(0.75, 5.0)) == pytest.approx(0.726686843800423, rel=1e-10)
    p = np.linspace(0.01, 0.99, 41)
    np.testing.assert_allclose(t_cdf(t_ppf(p, 3.3, 2.0), 3.3, 2.0), p, atol=1e-12)


@given(st.floats(-50, 50), st.floats(0.3, 200))
def test_t_cdf_symmetry(x, nu):
    assert float(t_cdf(x, nu) + t_cdf(-x, nu)) == pytest.approx(1.0, abs=1e-12)
    assert float(t_sf(x, nu)) == pytest.approx(float(t_cdf(-x, nu)), abs=0)


@pytest.mark.parametrize("lam,expected", KOLMOGOROV_CASES)
def test_kolmogorov_series(lam, expected):
    assert kolmogorov_sf(lam) == pytest.approx(expected, abs=1e-12)


def test_kolmogorov_limits():
    assert kolmogorov_sf(0.0) == 1.0
    assert kolmogorov_sf(10.0) < 1e-80


def test_ccdf_example():
    x, c = empirical_ccdf([3.0, 1.0, 2.0])
    np.testing.assert_array_equal(x, [1, 2, 3])
    np.testing.assert_allclose(c, [2 / 3, 1 / 3, 0.0])
    x, c = empirical_ccdf([5.0] * 4)
    assert x.tolist() == [5.0] and c.tolist() == [0.0]
    with pytest.raises(ValueError):
        empirical_ccdf([])


@settings(max_examples=50)
@given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=60))
def test_ccdf_monotone(vals):
    x, c = empirical_ccdf(vals)
    assert np.all(np.diff(x) > 0) and np.all(np.diff(c) <= 0)
    assert c[-1] == 0.0 and np.all(c >= 0) and np.all(c < 1)


def test_ccdf_tail_slope_of_t3():
    z = np.abs(sps.t.rvs(3, size=200_000, random_state=np.random.default_rng(0)))
    x, c = empirical_ccdf(z)
    sel = (c > 1e-4) & (c < 1e-2)
    slope = np.polyfit(np.log(x[sel]), np.log(c[sel]), 1)[0]
    assert slope == pytest.approx(-3.0, abs=0.3)


def test_t_mle_recovers_parameters():
    hits = 0
    for seed in range(1, 11):
        z = 2.0 * sps.t.rvs(4, size=20_000, random_state=np.random.default_rng(seed))
        fit = fit_t_mle(z)
        hits += abs(fit.params["nu"] / 4 - 1) <= 0.1 and abs(fit.params["kappa"] / 2 - 1) <= 0.05
    assert hits >= 9


def test_t_mle_scale_equivariance():
    z = sps.t.rvs(6, size=5000, random_state=np.random.default_rng(3))
    f1, f2 = fit_t_mle(z), fit_t_mle(7.5 * z)
    assert f2.params["nu"] == pytest.approx(f1.params["nu"], rel=1e-3)
    assert f2.params["kappa"] == pytest.approx(7.5 * f1.params["kappa"], rel=1e-3)


def test_t_mle_gaussian_hits_bound_and_json():
    z = np.random.default_rng(4).standard_normal(20_000)
    fit = fit_t_mle(z)
    assert fit.meta["at_upper_bound"] or fit.params["nu"] > 30
    doc = json.loads(json.dumps(fit.to_json()))
    assert set(doc) == {"family", "params", "loglik", "n", "meta"}
    with pytest.raises(ValueError):
        fit_t_mle(z[:49])
    with pytest.raises(FitError):
        fit_t_mle(np.ones(100))


def test_ks_self_and_null_calibration():
    n = 400
    rej = 0
    rng = np.random.default_rng(5)
    for _ in range(200):
        u = rng.uniform(size=n)
        rej += ks_test(u, lambda x: np.clip(x, 0, 1)).decision_at_0_05
    assert 0.02 <= rej / 200 <= 0.09
    pts = (np.arange(1, 101) - 0.5) / 100
    assert ks_test(pts, lambda x: np.clip(x, 0, 1)).statistic == pytest.approx(0.005, abs=1e-12)


def test_ks_matches_scipy_two_sided_statistic():
    z = sps.t.rvs(3, size=777, random_state=np.random.default_rng(6))
    ours = ks_test(z, lambda x: t_cdf(x, 3.0))
    ref = sps.kstest(z, sps.t(3).cdf, method="asymp")
    assert ours.statistic == pytest.approx(ref.statistic, abs=1e-12)
    assert ours.p_value == pytest.approx(ref.pvalue, rel=1e-6)


def test_ks_power_and_one_sided_directions():
    z = sps.t.rvs(2, size=5000, random_state=np.random.default_rng(7))
    assert ks_test(z, lambda x: t_cdf(x, 20.0)).decision_at_0_05
    heavy = np.abs(z)
    light = lambda x: t_cdf(x, 20.0) * 2 - 1  # noqa: E731, CDF of |t(20)|
    # |t(2)| is stochastically larger: its CDF sits below the reference
    assert not ks_test(heavy, light, "one_sided_leq").decision_at_0_05
    res = ks_test(heavy, light, "one_sided_geq")
    assert res.to_json()["decision"] == "reject"
    with pytest.raises(ValueError):
        ks_test(z[:4], light)
    with pytest.raises(ValueError):
        ks_test(z, light, "sideways")


def test_ks_two_sample_matches_scipy():
    rng = np.random.default_rng(8)
    x, y = rng.standard_normal(300), rng.standard_normal(500) + 0.1
    ours = ks_two_sample(x, y)
    assert ours.statistic == pytest.approx(sps.ks_2samp(x, y).statistic, abs=1e-12)


def test_qq_points():
    p = (np.arange(1, 1001) - 0.5) / 1000
    th, em = qq_points(sps.norm.ppf(p), sps.norm.ppf)
    np.testing.assert_allclose(em, th, atol=1e-12)
    z = sps.t.rvs(3, size=2000, random_state=np.random.default_rng(9))
    th, em = qq_points(z, sps.norm.ppf, k=200)
    assert em[-1] > th[-1] and em[0] < th[0]
    with pytest.raises(ValueError):
        qq_points(z, sps.norm.ppf, k=3000)


def test_qq_order_statistic_band():
    n, inside = 1000, 0
    z = np.random.default_rng(10).standard_normal(n)
    th, em = qq_points(z, sps.norm.ppf)
    i = np.arange(1, n + 1)
    lo = sps.norm.ppf(sps.beta.ppf(0.005, i, n + 1 - i))
    hi = sps.norm.ppf(sps.beta.ppf(0.995, i, n + 1 - i))
    inside = np.mean((em >= lo - 1e-9) & (em <= hi + 1e-9))
    assert inside >= 0.95


def test_cms_gaussian_case_variance():
    x = stable_sample_cms(2.0, 0.0, 1.5, 0.0, 1_000_000, np.random.default_rng(11))
    assert x.var() == pytest.approx(2 * 1.5**2, rel=0.03)


def test_cms_cauchy_case():
    x = stable_sample_cms(1.0, 0.0, 1.0, 0.0, 400_000, np.random.default_rng(12))
    assert abs(np.median(x)) <= 0.02
    q25, q75 = np.percentile(x, [25, 75])
    assert q75 - q25 == pytest.approx(2.0, rel=0.02)


def test_cms_location_shift():
    a = stable_sample_cms(1.5, 0.3, 1.0, 0.0, 1000, np.random.default_rng(13))
    b = stable_sample_cms(1.5, 0.3, 1.0, 4.0, 1000, np.random.default_rng(13))
    np.testing.assert_allclose(b - a, 4.0, atol=1e-12)


@pytest.mark.parametrize("alpha,skew", [(1.5, 0.0), (1.2, 0.5), (1.0, 0.4)])
def test_cms_law_against_scipy(alpha, skew):
    rng = np.random.default_rng(14)
    law = sps.levy_stable(alpha, skew)
    law.dist.parameterization = "S1"
    ok = 0
    for _ in range(100):
        ours = stable_sample_cms(alpha, skew, 1.0, 0.0, 400, rng)
        ref = law.rvs(size=400, random_state=rng)
        ok += ks_two_sample(ours, ref).p_value >= 0.01
    assert ok >= 95


def test_cms_validation():
    rng = np.random.default_rng(0)
    for args in ((0.0, 0, 1, 0), (2.1, 0, 1, 0), (1.5, 1.5, 1, 0), (1.5, 0, 0, 0)):
        with pytest.raises(ValueError):
            stable_sample_cms(*args, 10, rng)


def test_mcculloch_recovers_alpha():
    x = stable_sample_cms(1.5, 0.0, 1.0, 0.0, 100_000, np.random.default_rng(15))
    fit = fit_stable_quantile(x)
    assert 1.4 <= fit.params["alpha"] <= 1.6
    assert abs(fit.params["skew"]) <= 0.1
    assert fit.params["scale"] == pytest.approx(1.0, rel=0.05)


def test_mcculloch_gaussian_and_errors():
    fit = fit_stable_quantile(np.random.default_rng(16).standard_normal(100_000))
    assert fit.params["alpha"] >= 1.9
    with pytest.raises(FitError):
        fit_stable_quantile(np.r_[np.zeros(200), 1.0])
    with pytest.raises(ValueError):
        fit_stable_quantile(np.arange(99.0))


def test_stable_reference_cdf_ppf():
    cdf, ppf = stable_reference({"alpha": 2.0, "skew": 0.0, "scale": 1.0, "location": 0.0},
                                n=200_000)
    assert float(cdf(0.0)) == pytest.approx(0.5, abs=0.005)
    assert float(ppf(0.975)) == pytest.approx(math.sqrt(2) * 1.959964, rel=0.02)
