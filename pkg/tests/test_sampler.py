import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, special, stats

from pstrata import layout
from pstrata.dataset import Dataset
from pstrata.errors import ValidationError
from pstrata.likelihood import check_latents
from pstrata.sampler import (Chain, LatentState, SamplerConfig, augment_control, augment_treated, initial_theta,
                             load_chains, pooled_draws, run_chain, run_chains, rw_metropolis_step,
                             update_parameters)

from conftest import make_dataset
from test_likelihood import random_theta, wb

K = 3


def clones(z, c, y, event, x, n):
    return Dataset(z=[z] * n, c=[c] * n, y_tilde=[y] * n, event=[event] * n, d_tilde=[c] * n,
                   disc=[0] * n, X=np.tile(x, (n, 1)))


# --- generic random walk ----------------------------------------------------------

def test_rw_metropolis_gaussian_moments():
    rng = np.random.default_rng(0)
    target = lambda v: -0.5 * float(v @ v)
    x = np.zeros(1)
    lx = target(x)
    chol = np.eye(1) * 2.4
    out = np.empty(60_000)
    for t in range(out.size):
        x, lx, _ = rw_metropolis_step(target, x, lx, chol, rng.standard_normal(1), math.log(rng.uniform()))
        out[t] = x[0]
    out = out[1000:]
    assert abs(out.mean()) < 0.05
    assert abs(out.var() - 1.0) < 0.06


def test_rw_metropolis_tiny_step_accepts():
    rng = np.random.default_rng(1)
    target = lambda v: -0.5 * float(v @ v)
    x = np.array([0.3, -0.2])
    lx = target(x)
    acc = 0
    for _ in range(2000):
        x, lx, a = rw_metropolis_step(target, x, lx, np.eye(2) * 1e-6, rng.standard_normal(2),
                                      math.log(rng.uniform()))
        acc += a
    assert acc / 2000 > 0.99


def test_rw_metropolis_rejects_impossible():
    x, lx, a = rw_metropolis_step(lambda v: -math.inf, np.zeros(1), 0.0, np.eye(1), np.ones(1), -1e-9)
    assert not a and lx == 0.0 and x[0] == 0.0


# --- augmentation -------------------------------------------------------------------

def test_augment_treated_membership_and_d1():
    rng = np.random.default_rng(2)
    th = random_theta(rng)
    x = np.array([0.4, 1.0, 0.0])
    c = 12.0
    n = 40_000
    ds = clones(1, c, c, 0, x, n)
    lat = LatentState(np.ones(n, dtype=np.int8), np.full(n, np.nan))
    augment_treated(th, ds, lat, rng)
    ix = layout.index(K)
    p = special.expit(th[0] + x @ th[1:4])
    eY = x @ th[2 * K + 11:3 * K + 11]
    s_nd = wb(th[ix["alpha_nd1"]], th[ix["beta_nd1"]] + eY).sf(c)
    fD = wb(th[ix["alpha_D"]], th[ix["beta_D"]] + x @ th[K + 3:2 * K + 3])
    q = p * s_nd / (p * s_nd + (1 - p) * fD.sf(c))
    share = lat.i_nd.mean()
    assert abs(share - q) < 4 * math.sqrt(q * (1 - q) / n)
    d = lat.d1[lat.i_nd == 0]
    assert np.all(d > c)
    cdf = lambda t: 1 - fD.sf(t) / fD.sf(c)
    assert stats.kstest(d, cdf).pvalue > 0.001


def control_posterior_nd(th, x, y, ev):
    """P(ND | Y(0) observed) for one control unit, by quadrature over D(1)."""
    ix = layout.index(K)
    p = special.expit(th[0] + x @ th[1:4])
    eY = x @ th[2 * K + 11:3 * K + 11]
    nd = wb(th[ix["alpha_nd0"]], th[ix["beta_nd0"]] + eY)
    l_nd = nd.pdf(y) if ev else nd.sf(y)
    fD = wb(th[ix["alpha_D"]], th[ix["beta_D"]] + x @ th[K + 3:2 * K + 3])

    def integrand(d):
        w = wb(th[ix["alpha_d0"]], th[ix["beta_d0"]] + eY + th[ix["delta"]] * math.log(d))
        return fD.pdf(d) * (w.pdf(y) if ev else w.sf(y))
    l_d = sum(integrate.quad(integrand, lo, hi, limit=400)[0] for lo, hi in ((0, 1), (1, 20), (20, np.inf)))
    return p * l_nd / (p * l_nd + (1 - p) * l_d)


@pytest.mark.parametrize("ev", [1, 0])
def test_augment_control_stationary(ev):
    rng = np.random.default_rng(3 + ev)
    th = random_theta(rng)
    th[layout.index(K)["delta"]] = 0.6
    x = np.array([-0.3, 0.0, 1.0])
    n = 20_000
    y = 4.0
    ds = clones(0, 20.0, y if ev else 20.0, ev, x, n)
    lat = LatentState.initial(ds, th, rng)
    for _ in range(40):
        augment_control(th, ds, lat, rng)
    q = control_posterior_nd(th, x, ds.y_tilde[0], ev)
    share = lat.i_nd.mean()
    assert abs(share - q) < 4 * math.sqrt(q * (1 - q) / n)


def test_augment_control_grid_support():
    rng = np.random.default_rng(5)
    th = random_theta(rng)
    ds = clones(0, 20.0, 5.0, 1, np.array([0.1, 1.0, 0.0]), 500)
    lat = LatentState.initial(ds, th, rng)
    grid = [1.0, 2.0, 4.0]
    for _ in range(10):
        augment_control(th, ds, lat, rng, d_grid=grid)
    d = lat.d1[lat.i_nd == 0]
    assert d.size and np.isin(d, grid).all()


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_augment_leaves_pinned_units(seed):
    rng = np.random.default_rng(seed)
    ds = make_dataset(rng, n=15)
    th = random_theta(rng)
    lat = LatentState.initial(ds, th, rng)
    obs_d, obs_nd = LatentState.pinned_masks(ds)
    before = lat.copy()
    augment_treated(th, ds, lat, rng)
    augment_control(th, ds, lat, rng)
    pinned = obs_d | obs_nd
    np.testing.assert_array_equal(lat.i_nd[pinned], before.i_nd[pinned])
    np.testing.assert_array_equal(lat.d1[pinned], before.d1[pinned])
    check_latents(ds, lat.i_nd, lat.d1)
    t = (ds.z == 1) & (lat.i_nd == 0)
    assert np.all(lat.d1[t & ~obs_d] > ds.c[t & ~obs_d])


def test_update_parameters_shapes_stay_positive(small_ds, rng):
    th = initial_theta(small_ds)
    lat = LatentState.initial(small_ds, th, rng)
    for _ in range(50):
        th, acc = update_parameters(th, small_ds, lat, rng, scales={nm: 1.0 for nm in ("alpha_D",)})
        assert np.all(th[layout.shape_indices(K)] > 0)
    assert set(acc) and all(isinstance(v, bool) for v in acc.values())


# --- chains -------------------------------------------------------------------------

def short_cfg(**kw):
    base = dict(iters=600, burnin=300, thin=5, chains=1, seed=11)
    base.update(kw)
    return SamplerConfig(**base)


def test_config_validation():
    with pytest.raises(ValidationError):
        SamplerConfig(iters=10, burnin=10)
    with pytest.raises(ValidationError):
        SamplerConfig(thin=0)
    with pytest.raises(ValidationError):
        SamplerConfig.from_dict({"iterations": 5})
    assert SamplerConfig(iters=100, burnin=40, thin=7).n_keep == 8


def test_chain_deterministic(rng):
    ds = make_dataset(rng, n=30)
    a = run_chain(ds, cfg=short_cfg())
    b = run_chain(ds, cfg=short_cfg())
    np.testing.assert_array_equal(a.draws, b.draws)
    np.testing.assert_array_equal(a.i_nd, b.i_nd)
    c = run_chain(ds, cfg=short_cfg(), chain_id=1)
    assert not np.array_equal(a.draws, c.draws)


def test_chain_shapes_and_latents(rng):
    ds = make_dataset(rng, n=30)
    ch = run_chain(ds, cfg=short_cfg())
    assert ch.draws.shape == (60, layout.n_params(K))
    assert ch.i_nd.shape == (60, 30) and np.isfinite(ch.logpost).all()
    for s in range(0, 60, 10):
        check_latents(ds, ch.i_nd[s], ch.d1[s])


def test_adaptation_frozen_after_burnin(rng):
    ds = make_dataset(rng, n=30)
    a = run_chain(ds, cfg=short_cfg(iters=400))
    b = run_chain(ds, cfg=short_cfg(iters=700))
    assert a.scales == b.scales
    np.testing.assert_array_equal(a.draws, b.draws[:len(a)])


def test_fixed_parameters(rng):
    ds = make_dataset(rng, n=20)
    th = random_theta(rng)
    ch = run_chain(ds, cfg=short_cfg(update_params=False), theta0=th)
    assert np.all(ch.draws == th)


def test_bad_start_raises(rng):
    from pstrata.errors import NumericError
    ds = make_dataset(rng, n=20)
    th = initial_theta(ds)
    th[layout.index(K)["alpha_D"]] = -1.0
    with pytest.raises(NumericError):
        run_chain(ds, cfg=short_cfg(), theta0=th)


def test_chain_save_load(tmp_path, rng):
    ds = make_dataset(rng, n=20)
    chains = run_chains(ds, cfg=short_cfg(chains=2))
    for ch in chains:
        ch.save(tmp_path)
    back = load_chains(tmp_path)
    assert len(back) == 2
    for a, b in zip(chains, back):
        np.testing.assert_array_equal(a.draws, b.draws)
        np.testing.assert_array_equal(a.logpost, b.logpost)
        np.testing.assert_array_equal(a.i_nd, b.i_nd)
        assert a.scales == b.scales and a.acceptance == b.acceptance
    assert pooled_draws(back).shape[0] == 2 * len(chains[0])
    with pytest.raises(ValidationError):
        load_chains(tmp_path / "empty")


def test_empty_dataset_samples_prior():
    from pstrata.dataset import empty_dataset
    ch = run_chain(empty_dataset(K), cfg=short_cfg(iters=3000, burnin=500, thin=1))
    assert ch.i_nd is None
    delta = ch.column("delta")
    assert abs(delta.mean()) < 5 and 4 < delta.std() < 16
