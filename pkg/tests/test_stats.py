import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import special, stats as sps

from dxcoverage.stats import betainc, fit_slope, t_quantile, t_two_sided_p


def test_exact_line():
    f = fit_slope([(0, 50), (20, 48), (40, 46)])
    assert f.beta_D == pytest.approx(-0.1, abs=1e-12)
    assert f.beta_M == pytest.approx(50, abs=1e-12)
    assert f.std_err == pytest.approx(0.0, abs=1e-12)


def test_flat_line_has_p_one():
    f = fit_slope([(0, 3), (1, 3), (2, 3), (5, 3)])
    assert f.beta_D == 0.0 and f.std_err == 0.0 and f.p_value == 1.0


@pytest.mark.parametrize("pts", [[(1, 2), (2, 3)], [(4, 1), (4, 2), (4, 3)]])
def test_degenerate_inputs_rejected(pts):
    with pytest.raises(ValueError):
        fit_slope(pts)


@pytest.mark.parametrize("a,b,x", [(0.5, 0.5, 0.3), (2.0, 7.5, 0.9), (14.0, 0.5, 0.01),
                                   (100.0, 0.5, 0.999), (3.0, 3.0, 0.5)])
def test_incomplete_beta_matches_scipy(a, b, x):
    assert betainc(a, b, x) == pytest.approx(special.betainc(a, b, x), abs=1e-10)


@given(st.floats(-40, 40), st.integers(1, 200))
def test_t_tail_matches_scipy(t, df):
    assert t_two_sided_p(t, df) == pytest.approx(2 * sps.t.sf(abs(t), df), abs=1e-10)


@pytest.mark.parametrize("q,df", [(0.995, 28), (0.975, 3), (0.9, 1)])
def test_t_quantile(q, df):
    assert t_quantile(q, df) == pytest.approx(sps.t.ppf(q, df), rel=1e-8)


points = st.lists(st.tuples(st.integers(0, 100), st.floats(-10, 10)), min_size=3, max_size=40).filter(
    lambda p: len({x for x, _ in p}) >= 2)


def exact_ols(pts):
    """Slope, intercept and squared standard error in rational arithmetic."""
    xs = [Fraction(x) for x, _ in pts]
    ys = [Fraction(y) for _, y in pts]
    n = len(pts)
    xbar, ybar = sum(xs) / n, sum(ys) / n
    sxx = sum((x - xbar) ** 2 for x in xs)
    beta = sum((x - xbar) * (y - ybar) for x, y in zip(xs, ys)) / sxx
    alpha = ybar - beta * xbar
    ssr = sum((y - alpha - beta * x) ** 2 for x, y in zip(xs, ys))
    return beta, alpha, ssr / (n - 2) / sxx


@given(points)
def test_matches_exact_ols(pts):
    f = fit_slope(pts)
    beta, alpha, se2 = exact_ols(pts)
    assert f.beta_D == pytest.approx(float(beta), abs=1e-9)
    assert f.beta_M == pytest.approx(float(alpha), abs=1e-7)
    assert f.std_err == pytest.approx(math.sqrt(se2), abs=1e-9)
    assert 0.0 <= f.p_value <= 1.0 and f.n_points == len(pts)
    if f.std_err > 1e-6:
        assert f.p_value == pytest.approx(2 * sps.t.sf(abs(f.t_value), len(pts) - 2), abs=1e-10)


@given(points, st.floats(-50, 50))
def test_translation_equivariance(pts, c):
    a, b = fit_slope(pts), fit_slope([(x, y + c) for x, y in pts])
    assert b.beta_M == pytest.approx(a.beta_M + c, abs=1e-7)
    assert b.beta_D == pytest.approx(a.beta_D, abs=1e-9)
    assert b.std_err == pytest.approx(a.std_err, abs=1e-8)
    if a.std_err > 1e-6:
        assert b.t_value == pytest.approx(a.t_value, rel=1e-6)
        assert b.p_value == pytest.approx(a.p_value, abs=1e-8)


@given(points, st.sampled_from([0.5, 2.0, 10.0, 0.01]))
def test_x_scale_equivariance(pts, s):
    a, b = fit_slope(pts), fit_slope([(x * s, y) for x, y in pts])
    assert b.beta_D == pytest.approx(a.beta_D / s, rel=1e-8, abs=1e-9)
    assert b.std_err == pytest.approx(a.std_err / s, rel=1e-8, abs=1e-9)
    if a.std_err > 1e-6:
        assert b.t_value == pytest.approx(a.t_value, rel=1e-6)
        assert b.p_value == pytest.approx(a.p_value, abs=1e-8)


def test_99_percent_interval_has_nominal_coverage():
    x = np.arange(30) * 5.0
    rng = np.random.default_rng(0)
    trials = 4000
    inside = 0
    for _ in range(trials):
        y = 50 - 0.1 * x + rng.normal(0, 0.5, 30)
        lo, hi = fit_slope(list(zip(x, y))).confidence_interval(0.99)
        inside += lo <= -0.1 <= hi
    # binomial sd of the miss count is about 6.3 around the expected 40
    assert abs((trials - inside) - 40) <= 4 * 6.3


def test_interval_matches_textbook_formula():
    x = np.arange(10.0)
    y = 2 * x + np.random.default_rng(0).normal(0, 1, 10)
    f = fit_slope(list(zip(x, y)))
    half = sps.t.ppf(0.975, 8) * f.std_err
    assert f.confidence_interval(0.95) == pytest.approx((f.beta_D - half, f.beta_D + half))
    assert math.isfinite(f.t_value)
