import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, stats

from pstrata.distributions import (HpdInterval, TruncWeibullSpec, WeibullSpec, hpd_interval, logistic_prob,
                                   trunc_weibull_cdf, trunc_weibull_logpdf, trunc_weibull_logsurv,
                                   trunc_weibull_mean, trunc_weibull_sample, weibull_cdf, weibull_logpdf,
                                   weibull_logsurv, weibull_mean, weibull_sample)
from pstrata.errors import ValidationError

shapes = st.floats(0.3, 4.0)
linpreds = st.floats(-3.0, 2.0)


def scipy_weibull(spec):
    # rate form lam y^a  <->  scipy scale lam^(-1/a)
    return stats.weibull_min(spec.shape, scale=math.exp(-spec.linpred / spec.shape))


# --- Weibull ---------------------------------------------------------------

def test_logpdf_unit_exponential():
    assert weibull_logpdf(1.0, WeibullSpec(1.0, 0.0)) == pytest.approx(-1.0, abs=1e-15)


def test_logpdf_shape_two():
    assert weibull_logpdf(1.0, WeibullSpec(2.0, 0.0)) == pytest.approx(math.log(2) - 1, abs=1e-14)


def test_logpdf_matches_cdf_derivative():
    spec = WeibullSpec(1.7, -0.4)
    h = 1e-5
    num = (weibull_cdf(2.5 + h, spec) - weibull_cdf(2.5 - h, spec)) / (2 * h)
    assert math.exp(weibull_logpdf(2.5, spec)) == pytest.approx(num, abs=1e-6)


def test_logpdf_matches_scipy():
    spec = WeibullSpec(1.3, -0.7)
    y = np.linspace(0.1, 8, 30)
    np.testing.assert_allclose(weibull_logpdf(y, spec), scipy_weibull(spec).logpdf(y), rtol=1e-12)


def test_logsurv_values():
    assert weibull_logsurv(1.0, WeibullSpec(2.0, 0.0)) == pytest.approx(-1.0)
    assert weibull_logsurv(0.0, WeibullSpec(0.7, 1.2)) == 0.0


def test_logsurv_vs_tail_quadrature():
    spec = WeibullSpec(0.8, 0.5)
    assert weibull_logsurv(3.0, spec) == pytest.approx(-math.exp(0.5) * 3 ** 0.8, rel=1e-14)
    tail, _ = integrate.quad(lambda t: math.exp(weibull_logpdf(t, spec)), 3.0, np.inf, epsabs=1e-13)
    assert math.exp(weibull_logsurv(3.0, spec)) == pytest.approx(tail, abs=1e-6)


def test_sample_exponential_mean():
    x = weibull_sample(WeibullSpec(1.0, 0.0), np.random.default_rng(1), 100_000)
    assert abs(x.mean() - 1.0) < 3 * x.std() / math.sqrt(x.size)


def test_sample_deterministic():
    spec = WeibullSpec(1.4, 0.3)
    a = weibull_sample(spec, np.random.default_rng(5), 50)
    b = weibull_sample(spec, np.random.default_rng(5), 50)
    assert np.array_equal(a, b)


def test_sample_ks():
    spec = WeibullSpec(2.0, 1.0)
    x = weibull_sample(spec, np.random.default_rng(2), 100_000)
    assert stats.kstest(x, lambda t: weibull_cdf(t, spec)).pvalue > 0.01


def test_mean_closed_forms():
    assert weibull_mean(WeibullSpec(1.0, 0.0)) == pytest.approx(1.0, abs=1e-14)
    assert weibull_mean(WeibullSpec(2.0, 0.0)) == pytest.approx(math.sqrt(math.pi) / 2, abs=1e-14)


def test_mean_monte_carlo():
    spec = WeibullSpec(1.3, -0.7)
    x = weibull_sample(spec, np.random.default_rng(3), 1_000_000)
    assert abs(x.mean() - weibull_mean(spec)) < 3 * x.std() / 1000


def test_spec_validation():
    with pytest.raises(ValidationError):
        WeibullSpec(0.0, 0.0)
    with pytest.raises(ValidationError):
        WeibullSpec(1.0, math.inf)
    with pytest.raises(ValidationError):
        weibull_logpdf(-1.0, WeibullSpec(1.0, 0.0))


@settings(max_examples=40, deadline=None)
@given(shapes, linpreds)
def test_pdf_normalizes(a, lp):
    spec = WeibullSpec(a, lp)
    # integrate on the Exp(1) scale t = lam y^a to avoid the spike at 0 for a < 1
    f = lambda y: math.exp(weibull_logpdf(y, spec)) if y > 0 else 0.0
    med = math.exp((math.log(math.log(2)) - lp) / a)
    total = sum(integrate.quad(f, lo, hi, epsabs=1e-12, epsrel=1e-10, limit=200)[0]
                for lo, hi in ((0, med), (med, np.inf)))
    assert total == pytest.approx(1.0, abs=1e-6)


@settings(max_examples=60, deadline=None)
@given(shapes, linpreds, st.floats(0.01, 30.0))
def test_survival_is_one_minus_cdf(a, lp, y):
    spec = WeibullSpec(a, lp)
    ref = scipy_weibull(spec).sf(y)
    assert math.exp(weibull_logsurv(y, spec)) == pytest.approx(ref, abs=1e-9)


# --- truncated Weibull ------------------------------------------------------

def test_trunc_below_is_impossible():
    spec = TruncWeibullSpec(WeibullSpec(1.4, 0.1), 2.0)
    assert trunc_weibull_logpdf(1.0, spec) == -math.inf


def test_trunc_memoryless():
    spec = TruncWeibullSpec(WeibullSpec(1.0, 0.0), 2.0)
    assert trunc_weibull_logpdf(3.0, spec) == pytest.approx(-1.0, abs=1e-14)
    assert trunc_weibull_logsurv(3.0, spec) == pytest.approx(-1.0, abs=1e-14)
    assert trunc_weibull_logsurv(2.0, spec) == 0.0
    assert trunc_weibull_mean(spec) == pytest.approx(3.0, abs=1e-8)


def test_trunc_normalizes():
    spec = TruncWeibullSpec(WeibullSpec(1.5, 0.2), 1.0)
    val, _ = integrate.quad(lambda y: math.exp(trunc_weibull_logpdf(y, spec)), 1.0, np.inf, epsabs=1e-12)
    assert val == pytest.approx(1.0, abs=1e-6)


def test_trunc_survival_vs_quadrature():
    spec = TruncWeibullSpec(WeibullSpec(0.9, -0.3), 1.5)
    mass, _ = integrate.quad(lambda y: math.exp(trunc_weibull_logpdf(y, spec)), 1.5, 4.0, epsabs=1e-13)
    assert math.exp(trunc_weibull_logsurv(4.0, spec)) == pytest.approx(1 - mass, abs=1e-6)


def test_trunc_sample_bounds_and_mean():
    spec = TruncWeibullSpec(WeibullSpec(1.0, 0.0), 2.0)
    x = trunc_weibull_sample(spec, np.random.default_rng(4), 100_000)
    assert x.min() >= 2.0
    assert abs(x.mean() - 3.0) < 3 * x.std() / math.sqrt(x.size)


def test_trunc_sample_ks():
    spec = TruncWeibullSpec(WeibullSpec(1.7, -0.8), 1.2)
    x = trunc_weibull_sample(spec, np.random.default_rng(6), 100_000)
    assert stats.kstest(x, lambda t: trunc_weibull_cdf(t, spec)).pvalue > 0.01


def test_trunc_mean_limit_and_mc():
    base = WeibullSpec(1.3, -0.2)
    assert trunc_weibull_mean(TruncWeibullSpec(base, 1e-9)) == pytest.approx(weibull_mean(base), abs=1e-6)
    spec = TruncWeibullSpec(WeibullSpec(2.0, 0.0), 1.0)
    x = trunc_weibull_sample(spec, np.random.default_rng(7), 1_000_000)
    assert abs(x.mean() - trunc_weibull_mean(spec)) < 3 * x.std() / 1000


@settings(max_examples=60, deadline=None)
@given(shapes, linpreds, st.floats(0.05, 10.0), st.floats(0.0, 20.0))
def test_trunc_log_identity(a, lp, d, excess):
    base = WeibullSpec(a, lp)
    y = d + excess
    lhs = trunc_weibull_logpdf(y, TruncWeibullSpec(base, d))
    rhs = weibull_logpdf(y, base) - weibull_logsurv(d, base)
    assert lhs == pytest.approx(rhs, abs=1e-12 * max(1.0, abs(rhs)))


@settings(max_examples=40, deadline=None)
@given(shapes, linpreds, st.floats(0.05, 10.0))
def test_trunc_mean_incomplete_gamma(a, lp, d):
    # independent closed form: d + e^s Gamma(1/a, s) / (a lam^(1/a))
    from scipy import special
    s = math.exp(lp + a * math.log(d))
    A = 1 / a
    if s > 600:
        return
    ref = d + math.exp(s) * special.gammaincc(A, s) * special.gamma(A) / (a * math.exp(lp * A))
    assert trunc_weibull_mean(TruncWeibullSpec(WeibullSpec(a, lp), d)) == pytest.approx(ref, rel=1e-7)


# --- logistic and HPD ---------------------------------------------------------

def test_logistic_values():
    assert logistic_prob([1.0, -2.0], 0.0, [0.0, 0.0]) == 0.5
    assert logistic_prob([0.3], math.log(3), [0.0]) == pytest.approx(0.75)
    p = logistic_prob([1.0], -800.0, [0.0])
    assert p == 0.0 and not math.isnan(p)
    with pytest.raises(ValidationError):
        logistic_prob([1.0, 2.0], 0.0, [1.0])


@given(st.floats(-5, 5), st.floats(0.01, 3), st.floats(-3, 3), st.floats(0.01, 2))
def test_logistic_monotone(g0, g, x, dx):
    assert logistic_prob([x + dx], g0, [g]) >= logistic_prob([x], g0, [g])


def test_hpd_integers():
    h = hpd_interval(np.arange(1, 101), 0.95)
    assert (h.lower, h.upper) == (1.0, 95.0)


def test_hpd_constant():
    h = hpd_interval(np.full(50, 2.5))
    assert (h.lower, h.upper) == (2.5, 2.5) and h.width == 0


def test_hpd_normal():
    h = hpd_interval(np.random.default_rng(8).standard_normal(100_000), 0.95)
    assert abs(h.lower + 1.96) < 0.05 and abs(h.upper - 1.96) < 0.05


def test_hpd_errors():
    with pytest.raises(ValidationError):
        hpd_interval([])
    with pytest.raises(ValidationError):
        hpd_interval([1.0, 2.0], 1.5)


def test_hpd_covers():
    h = HpdInterval(1.0, 2.0, 0.95)
    assert h.covers(1.0) and h.covers(2.0) and not h.covers(2.0001)


@settings(max_examples=80, deadline=None)
@given(st.lists(st.floats(-100, 100), min_size=1, max_size=200), st.floats(0.05, 0.99))
def test_hpd_brute_force(xs, level):
    x = np.sort(np.asarray(xs))
    n = x.size
    m = math.ceil(level * n - 1e-9)
    h = hpd_interval(x, level)
    inside = np.sum((x >= h.lower) & (x <= h.upper))
    assert inside >= m
    best = min(x[i + m - 1] - x[i] for i in range(n - m + 1))
    assert h.width <= best + 1e-12
