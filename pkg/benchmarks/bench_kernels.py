"""Numba vs numpy kernel timings on a Scenario I sized problem.

    python3 benchmarks/bench_kernels.py [--n 335] [--repeat 20] [--sweeps 300]

Kernel timings call both implementations directly.  The sweep timing runs
the sampler once per backend in a subprocess, since ``PSTRATA_BACKEND`` is
read at import.
"""
import argparse
import os
import subprocess
import sys
import time

import numpy as np

from pstrata._rng import open_uniform
from pstrata.dataset import standardize_covariates
from pstrata.kernels import _numba as nb
from pstrata.kernels import _numpy as npk
from pstrata.sampler import LatentState, initial_theta
from pstrata.simulator import load_default, simulate

SWEEP = """
import time
from pstrata.dataset import standardize_covariates
from pstrata.sampler import SamplerConfig, run_chain
from pstrata.simulator import load_default, simulate
_, ds = simulate(load_default("I").with_n({n}), seed=1)
ds = standardize_covariates(ds)
run_chain(ds, cfg=SamplerConfig(iters=20, burnin=10, thin=1, chains=1))  # compile
t = time.perf_counter()
run_chain(ds, cfg=SamplerConfig(iters={sweeps}, burnin=1, thin=1, chains=1, store_latents=False))
print((time.perf_counter() - t) / {sweeps})
"""


def best(fn, repeat):
    fn()
    out = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        out.append(time.perf_counter() - t)
    return min(out)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=335)
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--sweeps", type=int, default=300)
    a = ap.parse_args()

    _, ds = simulate(load_default("I").with_n(a.n), seed=1)
    ds = standardize_covariates(ds)
    K = ds.K
    th = initial_theta(ds)
    th[-1] = 0.3
    rng = np.random.default_rng(0)
    lat = LatentState.initial(ds, th, rng)
    X = np.ascontiguousarray(ds.X)
    z, ev, disc = ds.z.astype(np.int64), ds.event.astype(np.int64), ds.disc.astype(np.int64)
    it = np.flatnonzero((ds.z == 1) & (ds.disc == 0) & (ds.event == 0)).astype(np.int64)
    ic = np.flatnonzero(ds.z == 0).astype(np.int64)
    ut, uc = open_uniform(rng, (2, it.size)), open_uniform(rng, (3, ic.size))
    u_mc = open_uniform(rng, (ds.n, 50))
    dg, yg = np.arange(1, 25) * 0.5, np.arange(1, 49) * 0.5
    grid = np.empty(0)

    cases = {
        "loglik (all blocks)": lambda m: (m.loglik_membership(th, K, X, lat.i_nd)
                                          + m.loglik_disc(th, K, X, z, ds.c, disc, lat.i_nd, lat.d1)
                                          + m.loglik_outcome(th, K, X, z, ds.y_tilde, ev, disc, lat.i_nd,
                                                             lat.d1, 15)),
        "augment (treated+control)": lambda m: (
            m.augment_treated(th, K, X, ds.c, it, ut[0], ut[1], lat.i_nd.copy(), lat.d1.copy()),
            m.augment_control(th, K, X, ds.y_tilde, ev, ic, uc[0], uc[1], uc[2], lat.i_nd.copy(), lat.d1.copy(),
                              grid)),
        "nd_effect": lambda m: m.nd_effect(th, K, X, True),
        "ace_d_mc (50/unit)": lambda m: m.ace_d_mc(th, K, X, u_mc, True),
        "ace_d_curve (24 d)": lambda m: m.ace_d_curve(th, K, X, dg, True),
        "dce_d_surface (48x4)": lambda m: m.dce_d_surface(th, K, X, yg, dg[1:8:2], True),
    }
    print(f"n = {ds.n}, best of {a.repeat}")
    print(f"{'kernel':<28}{'numba ms':>10}{'numpy ms':>10}{'speedup':>9}")
    for name, fn in cases.items():
        t_nb = best(lambda: fn(nb), a.repeat) * 1e3
        t_np = best(lambda: fn(npk), a.repeat) * 1e3
        print(f"{name:<28}{t_nb:>10.3f}{t_np:>10.3f}{t_np / t_nb:>9.1f}")

    per = {}
    for backend in ("numba", "numpy"):
        env = dict(os.environ, PSTRATA_BACKEND=backend)
        res = subprocess.run([sys.executable, "-c", SWEEP.format(n=a.n, sweeps=a.sweeps)], env=env,
                             capture_output=True, text=True, check=True)
        per[backend] = float(res.stdout.strip().splitlines()[-1]) * 1e3
    print(f"{'full sweep':<28}{per['numba']:>10.3f}{per['numpy']:>10.3f}{per['numpy'] / per['numba']:>9.1f}")


if __name__ == "__main__":
    main()
