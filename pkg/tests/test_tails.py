import math

import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st

from tailbench import tails

pos = st.floats(1e-3, 1e3, allow_nan=False)


def test_eta_upper_tabulated_rows():
    assert abs(tails.eta_upper(2000, 1, 0.0, 0.015, 319.83) - 3.61) <= 0.005
    assert abs(tails.eta_upper(1797, 1, 0.0, 0.100, 137.07) - 2.91) <= 0.005


def test_eta_lower_hand_value():
    assert tails.eta_lower(4, 1, 0.0, 0.5, [2.0, 1.0]) == pytest.approx(4.75, abs=1e-12)


def test_gamma_bar_hand_value():
    assert tails.gamma_bar(4, 1, 0.0, [2.0, 1.0]) == pytest.approx(1.6, abs=1e-12)


def test_single_coordinate_bounds_coincide():
    assert tails.eta_lower(50, 2, 0.1, 0.3, [4.0]) == tails.eta_upper(50, 2, 0.1, 0.3, 4.0)


def test_eta_upper_increases_without_bound_in_delta():
    vals = [tails.eta_upper(100, 1, dl, 0.1, 5.0) for dl in (0, 0.1, 1, 10, 100)]
    assert all(a < b for a, b in zip(vals, vals[1:]))
    assert vals[-1] > 1e4


def test_gamma_bar_linear_in_B():
    lam = [3.0, 2.0, 0.5]
    g1 = tails.gamma_bar(100, 1, 0.01, lam)
    assert tails.gamma_bar(100, 3, 0.01, lam) == pytest.approx(3 * g1, rel=1e-14)


def test_wishart_plug_in():
    assert tails.wishart_expected_lambda1sq(2, 1) == pytest.approx(4.0, abs=1e-14)
    # frozen from a 30-digit evaluation of (sqrt(1999) + sqrt(200))^2
    assert tails.wishart_expected_lambda1sq(2000, 200) == pytest.approx(3463.594796762979, abs=1e-10)


def test_wishart_substitution_decreasing_in_d_and_sigma2():
    etas_d = [tails.eta_upper(2000, 1, 0, 0.01, math.sqrt(tails.wishart_expected_lambda1sq(2000, d)))
              for d in range(20, 400, 20)]
    assert all(a > b for a, b in zip(etas_d, etas_d[1:]))
    etas_s = [tails.eta_upper(2000, 1, 0, 0.01,
                              math.sqrt(tails.wishart_expected_lambda1sq(2000, 100, s2)))
              for s2 in (0.1, 0.5, 1.0, 2.0)]
    assert all(a > b for a, b in zip(etas_s, etas_s[1:]))


@settings(max_examples=200, deadline=None)
@given(n=st.integers(2, 10_000), B=st.integers(1, 16), delta=st.floats(0, 10),
       gamma=pos, lam=st.lists(st.floats(1e-2, 1e3), min_size=1, max_size=20))
def test_gap_identity_and_ordering(n, B, delta, gamma, lam):
    lam = np.sort(np.array(lam))[::-1]
    gap = tails.eta_upper(n, B, delta, gamma, lam[0]) - tails.eta_lower(n, B, delta, gamma, lam)
    ref = float(np.sum(lam[1:] ** 2) / lam[0] ** 2)
    assert abs(gap - ref) <= 1e-12 * max(1.0, tails.eta_upper(n, B, delta, gamma, lam[0]))
    assert tails.eta_upper(n, B, delta, gamma, lam[0]) > 1


@settings(max_examples=100, deadline=None)
@given(n=st.integers(2, 5000), B=st.integers(1, 8), delta=st.floats(0, 1), gamma=pos,
       lam=st.lists(st.floats(0.1, 100), min_size=2, max_size=10))
def test_bound_monotonicity(n, B, delta, gamma, lam):
    lam = np.sort(np.array(lam))[::-1]
    lo, up = tails.eta_lower, tails.eta_upper
    assert lo(n, B + 1, delta, gamma, lam) > lo(n, B, delta, gamma, lam)
    assert up(n, B + 1, delta, gamma, lam[0]) > up(n, B, delta, gamma, lam[0])
    assert lo(n, B, delta + 0.5, gamma, lam) > lo(n, B, delta, gamma, lam)
    assert lo(n, B, delta, gamma * 1.5, lam) < lo(n, B, delta, gamma, lam)
    assert up(n, B, delta, gamma * 1.5, lam[0]) < up(n, B, delta, gamma, lam[0])
    assert up(n, B, delta, gamma, lam[0] * 1.2) < up(n, B, delta, gamma, lam[0])



@settings(max_examples=100, deadline=None)
@given(n=st.integers(2, 5000), B=st.integers(1, 8), delta=st.floats(0, 1), gamma=pos,
       lam=st.lists(st.floats(0.1, 100), min_size=2, max_size=10))
def test_eta_lower_decreasing_in_lambda1(n, B, delta, gamma, lam):
    # with the rest of the spectrum fixed this needs 2nB/gamma > sum_{i>=2} lambda_i^2;
    # otherwise eta_lower <= 1 and the bound carries no information
    lam = np.sort(np.array(lam))[::-1]
    assume(2 * n * B / gamma > 1.001 * np.sum(lam[1:] ** 2))
    bigger = lam.copy()
    bigger[0] *= 1.2
    assert tails.eta_lower(n, B, delta, gamma, bigger) < tails.eta_lower(n, B, delta, gamma, lam)


def test_vartheta_root_and_gate():
    lam = np.array([5.0, 3.0, 1.0, 0.5])
    n, B, delta = 200, 2, 0.01
    gb = tails.gamma_bar(n, B, delta, lam)
    gamma = 0.5 * gb
    th = tails.vartheta(n, B, delta, gamma, lam)
    assert th == pytest.approx(tails.eta_lower(n, B, delta, gamma, lam), abs=1e-12)
    tr = float(np.sum(lam**2))
    assert abs(tails.q_value(lam[0] ** 2, th, n, B, delta, gamma, tr)) <= 1e-9
    for rho in np.linspace(2.0, th - 1e-3, 40):
        assert tails.drift_condition_margin(lam, n, B, delta, gamma, rho).satisfied
    above = tails.drift_condition_margin(lam, n, B, delta, gamma, th + 0.01)
    assert above.q_at_lambda1sq < 0 and not above.satisfied


def test_vartheta_above_two_iff_gamma_below_gamma_bar():
    lam = np.array([4.0, 2.0, 2.0])
    gb = tails.gamma_bar(100, 1, 0.0, lam)
    assert tails.vartheta(100, 1, 0.0, 0.99 * gb, lam) > 2
    assert tails.vartheta(100, 1, 0.0, 1.01 * gb, lam) < 2


def test_drift_margin_rejects_small_rho():
    with pytest.raises(ValueError):
        tails.drift_condition_margin([2.0, 1.0], 4, 1, 0.0, 0.5, 1.5)


@pytest.mark.parametrize("args", [(0, 1, 0, 0.1, 1.0), (10, 1, -1, 0.1, 1.0),
                                  (10, 1, 0, 0.0, 1.0), (10, 1, 0, 0.1, 0.0)])
def test_eta_upper_domain_errors(args):
    with pytest.raises(ValueError):
        tails.eta_upper(*args)


def test_unsorted_spectrum_rejected():
    with pytest.raises(ValueError):
        tails.eta_lower(10, 1, 0, 0.1, [1.0, 2.0])


def test_bounds_report_schema(tmp_path):
    rep = tails.bounds_report(4, 2, 1, 0.5, 0.0, lambdas=[2.0, 1.0])
    assert set(rep) == {"n", "d", "B", "gamma", "delta", "lambda1", "trace_AtA", "eta_lower",
                        "eta_upper", "gamma_bar", "valid_lower"}
    assert rep["valid_lower"] is True and rep["trace_AtA"] == 5.0
    only_upper = tails.bounds_report(4, 2, 1, 0.5, 0.0, lambda1=2.0)
    assert only_upper["eta_lower"] is None
    tails.dump_bounds(rep, tmp_path / "b.json")
    assert (tmp_path / "b.json").read_text().startswith("{")
