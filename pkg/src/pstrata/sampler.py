"""Metropolis-within-Gibbs with data augmentation.

One sweep:

1. Gibbs draw of stratum membership for treated units censored on both
   endpoints (``augment_treated``).
2. Independence Metropolis on ``(I^ND, D(1))`` for every control unit
   (``augment_control``).
3. Block random-walk Metropolis on the unconstrained parameters (log
   shapes), blocks in :func:`pstrata.layout.blocks` order.

Proposal scales adapt during burn-in only (Robbins-Monro towards the target
acceptance, plus an empirical block covariance learned from the second
quarter of burn-in) and are frozen afterwards.
"""
from __future__ import annotations

import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import kernels, layout
from ._rng import open_uniform, stream
from .dataset import Dataset
from .errors import NumericError, ValidationError
from .likelihood import PriorConfig, check_latents, complete_logpost

MEMBERSHIP, DISC = -1, -2


# ---------------------------------------------------------------------------
# latent state
# ---------------------------------------------------------------------------

@dataclass
class LatentState:
    """Per-unit stratum indicator and D(1) (NaN when ND)."""
    i_nd: np.ndarray
    d1: np.ndarray

    def copy(self) -> "LatentState":
        return LatentState(self.i_nd.copy(), self.d1.copy())

    @staticmethod
    def pinned_masks(ds: Dataset):
        """(observed D, observed ND) masks; these units are never re-drawn."""
        t = ds.z == 1
        return t & (ds.disc == 1), t & (ds.disc == 0) & (ds.event == 1)

    @classmethod
    def initial(cls, ds: Dataset, theta, rng: np.random.Generator) -> "LatentState":
        """Pinned units from the data; mixtures drawn from the prior given theta."""
        n, K = ds.n, ds.K
        obs_d, obs_nd = cls.pinned_masks(ds)
        i_nd = np.ones(n, dtype=np.int8)
        d1 = np.full(n, np.nan)
        i_nd[obs_d] = 0
        d1[obs_d] = ds.d_tilde[obs_d]
        mix = ~(obs_d | obs_nd)
        if mix.any():
            X = ds.X[mix]
            p = 1.0 / (1.0 + np.exp(-(theta[0] + X @ theta[1:K + 1])))
            lpD = theta[K + 2] + X @ theta[K + 3:2 * K + 3]
            u = open_uniform(rng, (2, mix.sum()))
            nd = u[0] < p
            d = np.exp((np.log(-np.log(u[1])) - lpD) / theta[K + 1])
            # treated mixtures need D(1) > C
            cm = ds.c[mix]
            tm = ds.z[mix] == 1
            d = np.where(tm & (d <= cm), cm * (1.0 + u[1]), d)
            i_nd[mix] = np.where(nd, 1, 0)
            d1[mix] = np.where(nd, np.nan, d)
        return cls(i_nd, d1)


# ---------------------------------------------------------------------------
# configuration and results
# ---------------------------------------------------------------------------

@dataclass
class SamplerConfig:
    iters: int = 30000
    burnin: int = 10000
    thin: int = 10
    chains: int = 4
    seed: int = 0
    target_accept: float = 0.44
    adapt_window: int = 50
    init_scale: float = 0.1
    scales: dict | None = None
    store_latents: bool = True
    update_params: bool = True
    d_grid: list | None = None
    jobs: int = 1

    def __post_init__(self):
        if not (0 <= self.burnin < self.iters):
            raise ValidationError("need 0 <= burnin < iters")
        if self.thin < 1 or self.chains < 1 or self.adapt_window < 1 or self.jobs < 1:
            raise ValidationError("thin, chains, adapt_window and jobs must be positive")
        if not 0 < self.target_accept < 1:
            raise ValidationError("target_accept must be in (0, 1)")
        if not self.init_scale > 0 or any(not v > 0 for v in (self.scales or {}).values()):
            raise ValidationError("proposal scales must be positive")

    @property
    def n_keep(self) -> int:
        return (self.iters - self.burnin) // self.thin

    @classmethod
    def from_dict(cls, d: dict) -> "SamplerConfig":
        try:
            return cls(**d)
        except TypeError as e:
            raise ValidationError(f"bad sampler config: {e}") from None


@dataclass
class Chain:
    """Retained draws of one chain.

    ``draws`` is ``(S, 3K+12)`` on the natural scale; ``i_nd``/``d1`` are
    ``(S, n)`` latent snapshots when stored.
    """
    draws: np.ndarray
    K: int
    acceptance: dict
    aug_acceptance: float
    logpost: np.ndarray
    scales: dict
    config: dict
    seed: int
    chain_id: int = 0
    i_nd: np.ndarray | None = None
    d1: np.ndarray | None = None
    wall_time: float = 0.0

    @property
    def names(self) -> list[str]:
        return layout.names(self.K)

    def __len__(self):
        return self.draws.shape[0]

    def column(self, name: str) -> np.ndarray:
        return self.draws[:, self.names.index(name)]

    def to_csv(self, path) -> None:
        header = ",".join(["draw"] + self.names + ["logpost"])
        rows = np.column_stack([np.arange(len(self)), self.draws, self.logpost])
        fmt = ["%d"] + ["%.17g"] * (rows.shape[1] - 1)
        np.savetxt(path, rows, delimiter=",", header=header, comments="", fmt=fmt)

    def manifest(self) -> dict:
        return {"chain_id": self.chain_id, "seed": self.seed, "K": self.K, "draws": len(self),
                "acceptance": self.acceptance, "aug_acceptance": self.aug_acceptance,
                "scales": self.scales, "config": self.config, "wall_time": self.wall_time}

    def save(self, directory) -> None:
        """Write ``chain_<id>.csv``, ``chain_<id>.json`` and, if stored, latents."""
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        self.to_csv(d / f"chain_{self.chain_id}.csv")
        (d / f"chain_{self.chain_id}.json").write_text(json.dumps(self.manifest(), indent=2) + "\n")
        if self.i_nd is not None:
            np.savez_compressed(d / f"latents_{self.chain_id}.npz", i_nd=self.i_nd, d1=self.d1)

    @classmethod
    def load(cls, directory, chain_id: int) -> "Chain":
        d = Path(directory)
        meta = json.loads((d / f"chain_{chain_id}.json").read_text())
        arr = np.loadtxt(d / f"chain_{chain_id}.csv", delimiter=",", skiprows=1, ndmin=2)
        lat = d / f"latents_{chain_id}.npz"
        i_nd = d1 = None
        if lat.is_file():
            with np.load(lat) as z:
                i_nd, d1 = z["i_nd"], z["d1"]
        return cls(draws=arr[:, 1:-1], K=meta["K"], acceptance=meta["acceptance"],
                   aug_acceptance=meta["aug_acceptance"], logpost=arr[:, -1], scales=meta["scales"],
                   config=meta["config"], seed=meta["seed"], chain_id=chain_id, i_nd=i_nd, d1=d1,
                   wall_time=meta.get("wall_time", 0.0))


def load_chains(directory) -> list[Chain]:
    d = Path(directory)
    ids = sorted(int(p.stem.split("_")[1]) for p in d.glob("chain_*.json"))
    if not ids:
        raise ValidationError(f"no chains found in {d}")
    return [Chain.load(d, i) for i in ids]


def pooled_draws(chains) -> np.ndarray:
    return np.concatenate([c.draws for c in chains], axis=0)


# ---------------------------------------------------------------------------
# generic random-walk step
# ---------------------------------------------------------------------------

def rw_metropolis_step(log_target, x, log_target_x, chol, eps, log_u):
    """One Gaussian random-walk Metropolis step.

    Parameters
    ----------
    log_target : callable
        Log density of the target (unnormalized) on the sampling scale.
    x : ndarray
        Current state; ``log_target_x`` its log density.
    chol : ndarray
        Lower Cholesky factor of the proposal covariance.
    eps : ndarray
        Standard normal draws, same length as ``x``.
    log_u : float
        Log of a uniform draw for the accept test.

    Returns
    -------
    x_new, log_target_new, accepted
    """
    prop = x + chol @ eps
    lp = log_target(prop)
    if log_u < lp - log_target_x:
        return prop, lp, True
    return x, log_target_x, False


# ---------------------------------------------------------------------------
# augmentation wrappers
# ---------------------------------------------------------------------------

def _treated_mix(ds: Dataset) -> np.ndarray:
    return np.flatnonzero((ds.z == 1) & (ds.disc == 0) & (ds.event == 0)).astype(np.int64)


def augment_treated(theta, ds: Dataset, lat: LatentState, rng: np.random.Generator) -> LatentState:
    """Gibbs update of treated units censored on both endpoints (in place)."""
    idx = _treated_mix(ds)
    u = open_uniform(rng, (2, idx.size))
    kernels.augment_treated(np.asarray(theta, float), ds.K, np.ascontiguousarray(ds.X), ds.c, idx,
                            u[0], u[1], lat.i_nd, lat.d1)
    return lat


def augment_control(theta, ds: Dataset, lat: LatentState, rng: np.random.Generator, d_grid=None) -> LatentState:
    """Independence Metropolis update of every control unit (in place)."""
    idx = np.flatnonzero(ds.z == 0).astype(np.int64)
    u = open_uniform(rng, (3, idx.size))
    grid = np.asarray(d_grid if d_grid is not None else [], dtype=float)
    kernels.augment_control(np.asarray(theta, float), ds.K, np.ascontiguousarray(ds.X), ds.y_tilde,
                            ds.event.astype(np.int64), idx, u[0], u[1], u[2], lat.i_nd, lat.d1, grid)
    return lat


# ---------------------------------------------------------------------------
# parameter updates
# ---------------------------------------------------------------------------

class _Target:
    """Cached block decomposition of the unconstrained log posterior."""

    def __init__(self, ds: Dataset, prior: PriorConfig, lat: LatentState):
        self.ds = ds
        self.K = ds.K
        self.X = np.ascontiguousarray(ds.X, dtype=np.float64)
        self.z = ds.z.astype(np.int64)
        self.ev = ds.event.astype(np.int64)
        self.disc = ds.disc.astype(np.int64)
        self.prior = prior
        self.lat = lat
        self.shape_mask = np.zeros(layout.n_params(self.K), dtype=bool)
        self.shape_mask[layout.shape_indices(self.K)] = True
        self.blocks = [(nm, idx, g) for nm, idx, g in layout.blocks(self.K) if idx.size]
        self.terms = self._prior_terms()
        self.all_idx = list(range(layout.n_params(self.K)))

    def _prior_terms(self):
        # per element: (is_shape, constant, coefficient) for the log density on the u scale
        K, pr = self.K, self.prior
        var = pr.variances(K)
        a, b = pr.gamma_shape, pr.gamma_rate
        cg = a * math.log(b) - math.lgamma(a)
        terms = []
        for i in range(layout.n_params(K)):
            if self.shape_mask[i]:
                terms.append((True, cg, b))
            else:
                terms.append((False, -0.5 * math.log(2 * math.pi * var[i]), 0.5 / var[i]))
        return terms

    def prior_u(self, u, idx):
        """Prior log density of unconstrained elements ``idx`` with Jacobian."""
        a = self.prior.gamma_shape
        tot = 0.0
        for i in idx:
            x = float(u[i])
            sh, c0, c1 = self.terms[i]
            if sh:
                # Gamma density of e^x times the Jacobian e^x
                tot += c0 + a * x - c1 * math.exp(x) if x < 700.0 else -math.inf
            else:
                tot += c0 - c1 * x * x
        return tot

    def part(self, theta, g):
        ds, lat = self.ds, self.lat
        if ds.n == 0:
            return 0.0
        if g == MEMBERSHIP:
            return kernels.loglik_membership(theta, self.K, self.X, lat.i_nd)
        if g == DISC:
            return kernels.loglik_disc(theta, self.K, self.X, self.z, ds.c, self.disc, lat.i_nd, lat.d1)
        return kernels.loglik_outcome(theta, self.K, self.X, self.z, ds.y_tilde, self.ev, self.disc,
                                      lat.i_nd, lat.d1, g)

    def refresh(self, theta):
        """Recompute every likelihood part (after latents change)."""
        self.ll = {MEMBERSHIP: self.part(theta, MEMBERSHIP), DISC: self.part(theta, DISC)}
        for g in (1, 2, 4, 8):
            self.ll[g] = self.part(theta, g)

    def cached(self, g):
        if g < 0:
            return self.ll[g]
        return sum(self.ll[b] for b in (1, 2, 4, 8) if g & b)

    def store(self, theta, g, value):
        if g < 0 or g in (1, 2, 4, 8):
            self.ll[g] = value
        else:
            for b in (1, 2, 4, 8):
                if g & b:
                    self.ll[b] = self.part(theta, b)

    def total(self, u):
        return self.prior_u(u, self.all_idx) + sum(self.ll.values())


def _to_theta(u, shape_mask):
    th = u.copy()
    th[shape_mask] = np.exp(u[shape_mask])
    return th


def _sweep_params(tg: _Target, u, theta, chols, eps, log_u):
    """One pass over the blocks; returns (u, theta, accepted flags)."""
    acc = np.zeros(len(tg.blocks), dtype=bool)
    for b, (nm, idx, g) in enumerate(tg.blocks):
        old_part = tg.cached(g)
        old = tg.prior_u(u, idx) + old_part
        holder = {}

        def log_target(xb, idx=idx, g=g):
            uu = u.copy()
            uu[idx] = xb
            th = _to_theta(uu, tg.shape_mask)
            val = tg.part(th, g) if g < 0 else kernels.loglik_outcome(
                th, tg.K, tg.X, tg.z, tg.ds.y_tilde, tg.ev, tg.disc, tg.lat.i_nd, tg.lat.d1, g) \
                if tg.ds.n else 0.0
            holder["th"], holder["uu"], holder["part"] = th, uu, val
            if not math.isfinite(val):
                return -math.inf
            return tg.prior_u(uu, idx) + val

        xb, _, ok = rw_metropolis_step(log_target, u[idx], old, chols[b], eps[b], log_u[b])
        if ok:
            u, theta = holder["uu"], holder["th"]
            tg.store(theta, g, holder["part"])
            acc[b] = True
    return u, theta, acc


def update_parameters(theta, ds: Dataset, lat: LatentState, rng: np.random.Generator, scales=None,
                      prior: PriorConfig = PriorConfig()):
    """One block random-walk sweep over all parameters.

    ``scales`` maps block name to a proposal SD on the unconstrained scale
    (default 0.1).  Returns the new natural-scale vector and per-block
    acceptance flags.
    """
    tg = _Target(ds, prior, lat)
    theta = np.asarray(theta, dtype=float)
    tg.refresh(theta)
    u = layout.to_unconstrained(theta, ds.K)
    scales = scales or {}
    chols = [np.eye(idx.size) * scales.get(nm, 0.1) for nm, idx, _ in tg.blocks]
    eps = [rng.standard_normal(idx.size) for _, idx, _ in tg.blocks]
    log_u = np.log(open_uniform(rng, len(tg.blocks)))
    u, theta, acc = _sweep_params(tg, u, theta, chols, eps, log_u)
    return theta, {tg.blocks[b][0]: bool(acc[b]) for b in range(len(acc))}


# ---------------------------------------------------------------------------
# initialization
# ---------------------------------------------------------------------------

def _exp_rate(events, exposure):
    return math.log(events / exposure) if events > 0 and exposure > 0 else 0.0


def initial_theta(ds: Dataset) -> np.ndarray:
    """Starting values from observed-profile frequencies and exponential fits.

    Shapes start at 1; intercepts are censored-exponential log rates per
    observed profile; coefficients and delta start at 0.
    """
    K = ds.K
    th = np.zeros(layout.n_params(K))
    th[layout.shape_indices(K)] = 1.0
    if ds.n == 0:
        return th
    t = ds.z == 1
    obs_d = t & (ds.disc == 1)
    nt = max(int(t.sum()), 1)
    pi = min(max(1.0 - obs_d.sum() / nt, 0.05), 0.95)
    th[0] = math.log(pi / (1 - pi))
    th[K + 2] = _exp_rate(obs_d.sum(), ds.d_tilde[t].sum())
    o = 2 * K + 3
    nd1 = t & ~obs_d
    th[o + 1] = _exp_rate(ds.event[nd1].sum(), ds.y_tilde[nd1].sum())
    th[o + 3] = _exp_rate(ds.event[obs_d].sum(), (ds.y_tilde - ds.d_tilde)[obs_d].sum())
    ctrl = ds.z == 0
    r0 = _exp_rate(ds.event[ctrl].sum(), ds.y_tilde[ctrl].sum())
    th[o + 5] = th[o + 7] = r0
    return th


# ---------------------------------------------------------------------------
# chains
# ---------------------------------------------------------------------------

_CHUNK = 200


def run_chain(ds: Dataset, prior: PriorConfig = PriorConfig(), cfg: SamplerConfig = SamplerConfig(),
              chain_id: int = 0, theta0=None, lat0: LatentState | None = None) -> Chain:
    """Run one chain; deterministic given ``cfg.seed`` and ``chain_id``.

    Raises
    ------
    NumericError
        If the starting point has a non-finite log posterior.
    """
    t0 = time.perf_counter()
    K, n = ds.K, ds.n
    rng = stream(cfg.seed, "chain", chain_id)
    theta = np.array(initial_theta(ds) if theta0 is None else theta0, dtype=float)
    lat = lat0.copy() if lat0 is not None else LatentState.initial(ds, theta, stream(cfg.seed, "init", chain_id))
    check_latents(ds, lat.i_nd, lat.d1)
    lp0 = complete_logpost(theta, ds, lat, prior)
    if not math.isfinite(lp0):
        raise NumericError(f"non-finite log posterior at initialization ({lp0}); try other starting values")

    tg = _Target(ds, prior, lat)
    blocks = tg.blocks
    B = len(blocks)
    dims = [idx.size for _, idx, _ in blocks]
    scales0 = cfg.scales or {}
    log_scale = np.array([math.log(scales0.get(nm, cfg.init_scale)) for nm, _, _ in blocks])
    covs = [np.eye(d) for d in dims]
    chols = [np.linalg.cholesky(c) * math.exp(s) for c, s in zip(covs, log_scale)]

    X = np.ascontiguousarray(ds.X, dtype=np.float64)
    idx_t = _treated_mix(ds)
    idx_c = np.flatnonzero(ds.z == 0).astype(np.int64)
    ev = ds.event.astype(np.int64)
    grid = np.asarray(cfg.d_grid if cfg.d_grid is not None else [], dtype=float)
    nt, nc = idx_t.size, idx_c.size
    J = layout.n_params(K)

    S = cfg.n_keep
    draws = np.empty((S, J))
    lps = np.empty(S)
    keep_lat = cfg.store_latents and n > 0
    lat_i = np.empty((S, n), dtype=np.int8) if keep_lat else None
    lat_d = np.empty((S, n)) if keep_lat else None

    win_acc = np.zeros(B)
    post_acc = np.zeros(B)
    aug_acc = 0
    cov_start = cfg.burnin // 4
    cov_updates = {cfg.burnin // 2, (3 * cfg.burnin) // 4} if cfg.burnin >= 200 else set()
    hist = []
    n_adapt = 0
    u = layout.to_unconstrained(theta, K)
    s = 0

    for start in range(0, cfg.iters, _CHUNK):
        m = min(_CHUNK, cfg.iters - start)
        ut = open_uniform(rng, (m, 2, nt))
        uc = open_uniform(rng, (m, 3, nc))
        eps_all = rng.standard_normal((m, J))
        logu_all = np.log(open_uniform(rng, (m, B)))
        for j in range(m):
            it = start + j
            if n:
                kernels.augment_treated(theta, K, X, ds.c, idx_t, ut[j, 0], ut[j, 1], lat.i_nd, lat.d1)
                aug_acc += kernels.augment_control(theta, K, X, ds.y_tilde, ev, idx_c, uc[j, 0], uc[j, 1],
                                                   uc[j, 2], lat.i_nd, lat.d1, grid)
            if cfg.update_params:
                tg.refresh(theta)
                eps = [eps_all[j, idx] for _, idx, _ in blocks]
                u, theta, acc = _sweep_params(tg, u, theta, chols, eps, logu_all[j])
            else:
                acc = np.zeros(B, dtype=bool)

            if it < cfg.burnin:
                win_acc += acc
                if it >= cov_start:
                    hist.append(u.copy())
                if (it + 1) % cfg.adapt_window == 0 and cfg.update_params:
                    n_adapt += 1
                    rate = win_acc / cfg.adapt_window
                    log_scale += (rate - cfg.target_accept) * min(1.0, 3.0 / math.sqrt(n_adapt))
                    win_acc[:] = 0
                    if (it + 1) in cov_updates and len(hist) > 50:
                        H = np.asarray(hist)
                        for b, (_, idx, _) in enumerate(blocks):
                            hb = H[:, idx]
                            cv = np.atleast_2d(np.cov(hb, rowvar=False)) + 1e-10 * np.eye(dims[b])
                            cv += 1e-6 * np.diag(np.diag(cv)).max() * np.eye(dims[b])
                            covs[b] = cv
                            log_scale[b] = math.log(2.38 / math.sqrt(dims[b]))
                    chols = [np.linalg.cholesky(c) * math.exp(sc) for c, sc in zip(covs, log_scale)]
            else:
                post_acc += acc
                if (it - cfg.burnin + 1) % cfg.thin == 0 and s < S:
                    draws[s] = theta
                    if keep_lat:
                        lat_i[s] = lat.i_nd
                        lat_d[s] = lat.d1
                    tg.refresh(theta)
                    lps[s] = tg.total(u)
                    s += 1

    n_post = cfg.iters - cfg.burnin
    acceptance = {nm: float(post_acc[b] / n_post) for b, (nm, _, _) in enumerate(blocks)}
    aug_rate = float(aug_acc / (cfg.iters * nc)) if nc else float("nan")
    scales = {nm: float(math.exp(log_scale[b])) for b, (nm, _, _) in enumerate(blocks)}
    return Chain(draws=draws, K=K, acceptance=acceptance, aug_acceptance=aug_rate, logpost=lps,
                 scales=scales, config=asdict(cfg), seed=cfg.seed, chain_id=chain_id,
                 i_nd=lat_i, d1=lat_d, wall_time=time.perf_counter() - t0)


def _run_one(args):
    ds, prior, cfg, k = args
    return run_chain(ds, prior, cfg, chain_id=k)


def run_chains(ds: Dataset, prior: PriorConfig = PriorConfig(), cfg: SamplerConfig = SamplerConfig()) -> list:
    """Run ``cfg.chains`` independent chains, in a process pool if ``cfg.jobs > 1``."""
    jobs = [(ds, prior, cfg, k) for k in range(cfg.chains)]
    if cfg.jobs > 1 and cfg.chains > 1:
        with ProcessPoolExecutor(max_workers=min(cfg.jobs, cfg.chains)) as ex:
            return list(ex.map(_run_one, jobs))
    return [_run_one(a) for a in jobs]
