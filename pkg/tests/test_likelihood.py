import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, special, stats

from pstrata import layout
from pstrata.dataset import Dataset
from pstrata.errors import ValidationError
from pstrata.likelihood import (ParamVector, PriorConfig, QuadConfig, check_latents, complete_loglik,
                                complete_logpost, log_prior, observed_loglik)
from pstrata.sampler import LatentState

from conftest import make_dataset

K = 3


def random_theta(rng, K=3):
    th = rng.normal(0, 0.4, layout.n_params(K))
    idx = layout.index(K)
    th[layout.shape_indices(K)] = rng.uniform(0.7, 1.8, 5)
    for nm in ("beta_D", "beta_nd1", "beta_d1", "beta_nd0", "beta_d0"):
        th[idx[nm]] = rng.uniform(-2.5, -1.0)
    th[0] = rng.uniform(-0.5, 1.5)
    return th


def one_unit(z, c, y, event, d, disc, x):
    return Dataset(z=[z], c=[c], y_tilde=[y], event=[event], d_tilde=[d], disc=[disc], X=[x])


# --- independent oracle built from scipy.stats ------------------------------

def wb(a, lp):
    return stats.weibull_min(a, scale=math.exp(-lp / a))


def oracle_unit(th, x, z, c, y, ev, disc, nd, d):
    """Complete-data log likelihood of one unit, written from scratch."""
    ix = layout.index(len(x))
    g = lambda name: th[ix[name]]
    vec = lambda pre: np.array([th[ix[f"{pre}{k + 1}"]] for k in range(len(x))])
    t = g("gamma0") + x @ vec("gamma")
    out = math.log(special.expit(t)) if nd else math.log(special.expit(-t))
    eY = x @ vec("eta_Y")
    lpD = g("beta_D") + x @ vec("eta_D")
    if not nd:
        fD = wb(g("alpha_D"), lpD)
        out += fD.logsf(c) if (z == 1 and disc == 0) else fD.logpdf(d)
    if z == 1 and nd:
        dist = wb(g("alpha_nd1"), g("beta_nd1") + eY)
        out += dist.logpdf(y) if ev else dist.logsf(y)
    elif z == 1 and disc == 1:
        dist = wb(g("alpha_d1"), g("beta_d1") + eY + g("delta") * math.log(d))
        out += (dist.logpdf(y) if ev else dist.logsf(y)) - dist.logsf(d)
    elif z == 0 and nd:
        dist = wb(g("alpha_nd0"), g("beta_nd0") + eY)
        out += dist.logpdf(y) if ev else dist.logsf(y)
    elif z == 0:
        dist = wb(g("alpha_d0"), g("beta_d0") + eY + g("delta") * math.log(d))
        out += dist.logpdf(y) if ev else dist.logsf(y)
    return out


def initial_latents(ds, rng):
    lat = LatentState.initial(ds, random_theta(rng), rng)
    return lat


# --- priors -------------------------------------------------------------------

def test_prior_closed_form():
    th = np.zeros(layout.n_params(K))
    th[layout.shape_indices(K)] = 1.0
    ref = 0.0
    names = layout.names(K)
    for j, nm in enumerate(names):
        if j in layout.shape_indices(K):
            ref += stats.gamma(0.5, scale=0.5).logpdf(1.0)
        elif nm.startswith("beta") or nm == "delta":
            ref += stats.norm(0, 10).logpdf(0.0)
        else:
            ref += stats.norm(0, 5).logpdf(0.0)
    assert log_prior(th, PriorConfig(), K) == pytest.approx(ref, abs=1e-10)


def test_prior_gaussian_step():
    th = np.zeros(layout.n_params(K))
    th[layout.shape_indices(K)] = 1.0
    j = layout.index(K)["beta_nd1"]
    a, b = th.copy(), th.copy()
    a[j], b[j] = 1.5, 3.0
    delta = log_prior(a, K=K) - log_prior(b, K=K)
    assert delta == pytest.approx((3.0 ** 2 - 1.5 ** 2) / (2 * 100), abs=1e-12)


def test_prior_shape_boundary():
    th = np.zeros(layout.n_params(K))
    th[layout.shape_indices(K)] = 1.0
    j = layout.index(K)["alpha_D"]
    for v in (0.0, -1.0):
        th[j] = v
        lp = log_prior(th, K=K)
        assert lp == -math.inf and not math.isnan(lp)
    # the Gamma(0.5, .) density itself diverges at 0+, so log-prior grows without bound
    th[j] = 1e-12
    assert log_prior(th, K=K) > log_prior(np.where(np.arange(th.size) == j, 1.0, th), K=K)


def test_prior_config_validation():
    with pytest.raises(ValidationError):
        PriorConfig(gamma_rate=0.0)
    with pytest.raises(ValidationError):
        PriorConfig.from_dict({"nope": 1})


def test_param_vector():
    th = np.arange(layout.n_params(K), dtype=float) + 1
    pv = ParamVector(th, K)
    assert pv["delta"] == th[-1]
    np.testing.assert_array_equal(pv.block("eta_y"), th[2 * K + 11:3 * K + 11])
    assert ParamVector.from_dict(pv.to_dict(), K).values.tolist() == th.tolist()
    with pytest.raises(ValidationError):
        ParamVector(th[:-1], K)


# --- complete-data likelihood ---------------------------------------------------

def test_single_treated_nd_unit():
    rng = np.random.default_rng(1)
    th = random_theta(rng)
    x = np.array([0.3, 1.0, 0.0])
    ds = one_unit(1, 20.0, 4.0, 1, 20.0, 0, x)
    ix = layout.index(K)
    t = th[0] + x @ th[1:4]
    lp = th[ix["beta_nd1"]] + x @ th[2 * K + 11:3 * K + 11]
    a = th[ix["alpha_nd1"]]
    ref = math.log(special.expit(t)) + math.log(a) + (a - 1) * math.log(4.0) + lp - math.exp(lp) * 4.0 ** a
    assert complete_loglik(th, ds, [1], [np.nan]) == pytest.approx(ref, abs=1e-10)


def test_single_control_nd_censored():
    rng = np.random.default_rng(2)
    th = random_theta(rng)
    x = np.array([-0.5, 0.0, 1.0])
    ds = one_unit(0, 15.0, 15.0, 0, 15.0, 0, x)
    ix = layout.index(K)
    lp = th[ix["beta_nd0"]] + x @ th[2 * K + 11:3 * K + 11]
    ref = math.log(special.expit(th[0] + x @ th[1:4])) - math.exp(lp) * 15.0 ** th[ix["alpha_nd0"]]
    assert complete_loglik(th, ds, [1], [np.nan]) == pytest.approx(ref, abs=1e-10)


@pytest.mark.parametrize("seed", range(5))
def test_complete_loglik_vs_oracle(seed):
    rng = np.random.default_rng(seed)
    ds = make_dataset(rng, n=5)
    th = random_theta(rng)
    lat = initial_latents(ds, rng)
    ref = sum(oracle_unit(th, ds.X[i], ds.z[i], ds.c[i], ds.y_tilde[i], ds.event[i], ds.disc[i],
                          lat.i_nd[i], lat.d1[i]) for i in range(ds.n))
    assert complete_loglik(th, ds, lat.i_nd, lat.d1) == pytest.approx(ref, abs=1e-10)


def test_complete_logpost_adds_prior(small_ds, rng):
    th = random_theta(rng)
    lat = initial_latents(small_ds, rng)
    lp = complete_logpost(th, small_ds, lat)
    assert lp == pytest.approx(log_prior(th, K=K) + complete_loglik(th, small_ds, lat.i_nd, lat.d1))


def test_natural_constraint_violation_is_impossible(small_ds, rng):
    th = random_theta(rng)
    lat = initial_latents(small_ds, rng)
    i = 2  # treated, censored on both endpoints
    i_nd, d1 = lat.i_nd.copy(), lat.d1.copy()
    i_nd[i], d1[i] = 0, small_ds.c[i] * 0.5
    assert complete_loglik(th, small_ds, i_nd, d1) == -math.inf


def test_check_latents(small_ds, rng):
    lat = initial_latents(small_ds, rng)
    check_latents(small_ds, lat.i_nd, lat.d1)
    bad = lat.i_nd.copy()
    bad[0] = 1  # observed discontinuer cannot be ND
    d1 = lat.d1.copy()
    d1[0] = np.nan
    with pytest.raises(ValidationError):
        check_latents(small_ds, bad, d1)


# --- observed-data likelihood -----------------------------------------------------

def marginal_oracle(th, ds):
    """Enumerate strata and integrate control D(1) of the complete likelihood.

    Treated units censored on both endpoints enter the complete likelihood
    through G_D(C) only, so they are enumerated without an integral.
    """
    tot = 0.0
    for i in range(ds.n):
        u = ds.subset(np.arange(ds.n) == i)
        pinned_d = u.z[0] == 1 and u.disc[0] == 1
        pinned_nd = u.z[0] == 1 and u.disc[0] == 0 and u.event[0] == 1
        if pinned_d:
            tot += complete_loglik(th, u, [0], [u.d_tilde[0]])
            continue
        if pinned_nd:
            tot += complete_loglik(th, u, [1], [np.nan])
            continue
        l_nd = complete_loglik(th, u, [1], [np.nan])
        if u.z[0] == 1:
            l_d = complete_loglik(th, u, [0], [u.c[0] * 2 + 1])
        else:
            ref = complete_loglik(th, u, [0], [1.0])
            f = lambda d: math.exp(complete_loglik(th, u, [0], [d]) - ref) if d > 0 else 0.0
            val = sum(integrate.quad(f, lo, hi, epsabs=0, epsrel=1e-10, limit=400)[0]
                      for lo, hi in ((0, 1), (1, 10), (10, np.inf)))
            l_d = ref + math.log(val)
        tot += np.logaddexp(l_nd, l_d)
    return tot


@pytest.mark.parametrize("seed", range(4))
def test_observed_loglik_marginalization(seed):
    rng = np.random.default_rng(100 + seed)
    ds = make_dataset(rng, n=4).subset(np.arange(4) < 3 + seed % 2)
    th = random_theta(rng)
    obs = observed_loglik(th, ds)
    ref = marginal_oracle(th, ds)
    assert obs == pytest.approx(ref, rel=1e-6)


def test_complete_loglik_factorizes(small_ds, rng):
    th = random_theta(rng)
    lat = initial_latents(small_ds, rng)
    parts = sum(complete_loglik(th, small_ds.subset(np.arange(small_ds.n) == i), lat.i_nd[i:i + 1], lat.d1[i:i + 1])
                for i in range(small_ds.n))
    assert complete_loglik(th, small_ds, lat.i_nd, lat.d1) == pytest.approx(parts, abs=1e-10)


def test_pinned_only_dataset_equals_complete(rng):
    ds = make_dataset(rng, n=10)
    keep = (ds.z == 1) & ((ds.disc == 1) | (ds.event == 1))
    sub = ds.subset(keep)
    th = random_theta(rng)
    i_nd = np.where(sub.disc == 1, 0, 1)
    d1 = np.where(sub.disc == 1, sub.d_tilde, np.nan)
    lat = LatentState(i_nd.astype(np.int8), d1)
    expect = complete_logpost(th, sub, lat) - log_prior(th, K=K)
    assert observed_loglik(th, sub) == pytest.approx(expect, abs=1e-10)


def test_single_control_mc_marginalization():
    rng = np.random.default_rng(7)
    th = random_theta(rng)
    x = np.array([0.2, 1.0, 1.0])
    ds = one_unit(0, 25.0, 6.0, 1, 25.0, 0, x)
    ix = layout.index(K)
    p = special.expit(th[0] + x @ th[1:4])
    eY = x @ th[2 * K + 11:3 * K + 11]
    lpD = th[ix["beta_D"]] + x @ th[K + 3:2 * K + 3]
    d = wb(th[ix["alpha_D"]], lpD).rvs(size=1_000_000, random_state=np.random.default_rng(8))
    a0 = th[ix["alpha_d0"]]
    lp0 = th[ix["beta_d0"]] + eY + th[ix["delta"]] * np.log(d)
    f0 = np.exp(np.log(a0) + (a0 - 1) * math.log(6.0) + lp0 - np.exp(lp0) * 6.0 ** a0)
    f_nd = wb(th[ix["alpha_nd0"]], th[ix["beta_nd0"]] + eY).pdf(6.0)
    mc = p * f_nd + (1 - p) * f0.mean()
    se = (1 - p) * f0.std() / 1000
    assert abs(math.exp(observed_loglik(th, ds)) - mc) < 3 * se


def test_membership_certain_reduces_to_nd(rng):
    ds = make_dataset(rng, n=8)
    keep = ~((ds.z == 1) & (ds.disc == 1))
    sub = ds.subset(keep)
    th = random_theta(rng)
    th[0] = 60.0
    lat = LatentState(np.ones(sub.n, dtype=np.int8), np.full(sub.n, np.nan))
    nd_only = complete_loglik(th, sub, lat.i_nd, lat.d1)
    assert observed_loglik(th, sub) == pytest.approx(nd_only, abs=1e-8)


def test_delta_zero_removes_d_dependence():
    rng = np.random.default_rng(9)
    th = random_theta(rng)
    th[layout.index(K)["delta"]] = 0.0
    ds = one_unit(0, 20.0, 3.0, 1, 20.0, 0, np.array([0.1, 0.0, 1.0]))
    K_ = 3
    ref_a = complete_loglik(th, ds, [0], [1.0]) - oracle_fd(th, ds, 1.0)
    ref_b = complete_loglik(th, ds, [0], [7.0]) - oracle_fd(th, ds, 7.0)
    assert ref_a == pytest.approx(ref_b, abs=1e-12)


def oracle_fd(th, ds, d):
    ix = layout.index(K)
    lpD = th[ix["beta_D"]] + ds.X[0] @ th[K + 3:2 * K + 3]
    return wb(th[ix["alpha_D"]], lpD).logpdf(d) + math.log(special.expit(-(th[0] + ds.X[0] @ th[1:4])))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_complete_loglik_finite_for_valid_latents(seed):
    rng = np.random.default_rng(seed)
    ds = make_dataset(rng, n=6)
    th = random_theta(rng)
    lat = initial_latents(ds, rng)
    assert np.isfinite(complete_loglik(th, ds, lat.i_nd, lat.d1))
