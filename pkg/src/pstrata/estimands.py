"""Principal causal estimands from posterior draws.

Every estimand averages conditional effects over the empirical covariate
matrix of the full sample.  By default the average is taken within the
stratum: ND effects weight unit ``i`` by its membership probability
``p_i``, D effects by ``1 - p_i`` (and, for ``ACE_D(d)``, by the density of
``D(1) = d`` at ``x_i``).  With these weights ``pi_ND * ACE_ND + (1 - pi_ND)
* ACE_D`` is the marginal ITT effect.  ``weighting="empirical"`` gives every
unit weight one instead.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import kernels
from ._rng import open_uniform, stream
from .dataset import Dataset
from .distributions import HpdInterval, hpd_interval
from .errors import ValidationError
from .likelihood import ParamVector

DEFAULT_D_GRID = tuple(np.arange(1, 25) * 0.5)
DEFAULT_Y_GRID = tuple(np.arange(1, 49) * 0.5)
DEFAULT_DCE_D_GRID = (1.0, 2.0, 3.0, 4.0)
SCALARS = ("pi_nd", "itt", "ace_nd", "ace_d")
LABELS = {"pi_nd": "pi_ND", "itt": "ITT", "ace_nd": "ACE_ND", "ace_d": "ACE_D"}


def _theta(theta, K=None):
    if isinstance(theta, ParamVector):
        return np.ascontiguousarray(theta.values)
    return np.ascontiguousarray(theta, dtype=np.float64)


def _X(X_emp):
    X = np.ascontiguousarray(np.atleast_2d(np.asarray(X_emp, dtype=np.float64)))
    if X.shape[0] == 0:
        raise ValidationError("X_emp must have at least one row")
    return X


def _weighted(weighting: str) -> bool:
    if weighting not in ("stratum", "empirical"):
        raise ValidationError(f"weighting must be 'stratum' or 'empirical', got {weighting!r}")
    return weighting == "stratum"


@dataclass(frozen=True)
class Grids:
    """Evaluation grids for the curve estimands (months)."""
    d: tuple = DEFAULT_D_GRID
    y: tuple = DEFAULT_Y_GRID
    dce_d: tuple = DEFAULT_DCE_D_GRID

    def __post_init__(self):
        for k in ("d", "y", "dce_d"):
            v = np.asarray(getattr(self, k), dtype=float)
            if v.ndim != 1 or v.size == 0 or not np.all(np.isfinite(v)):
                raise ValidationError(f"grid {k} must be a non-empty 1-D list of finite numbers")
            if k == "y" and np.any(v < 0):
                raise ValidationError("y grid must be non-negative")
            if k != "y" and np.any(v <= 0):
                raise ValidationError(f"grid {k} must be positive")
            object.__setattr__(self, k, tuple(float(x) for x in v))

    def arrays(self):
        return (np.asarray(self.d), np.asarray(self.y), np.asarray(self.dce_d))

    def to_dict(self) -> dict:
        return {"d": list(self.d), "y": list(self.y), "dce_d": list(self.dce_d)}

    @classmethod
    def from_dict(cls, d: dict) -> "Grids":
        unknown = set(d) - {"d", "y", "dce_d"}
        if unknown:
            raise ValidationError(f"unknown grid keys: {sorted(unknown)}")
        return cls(**d)


@dataclass(frozen=True)
class McConfig:
    """Monte Carlo settings for ``ACE_D``.

    Parameters
    ----------
    draws : int
        D(1) draws per unit and posterior draw.
    seed : int
        Seed of the uniform stream.
    weighting : {"stratum", "empirical"}
    """
    draws: int = 50
    seed: int = 0
    weighting: str = "stratum"

    def __post_init__(self):
        if int(self.draws) < 1:
            raise ValidationError("mc draws must be >= 1")
        _weighted(self.weighting)

    @classmethod
    def from_dict(cls, d: dict) -> "McConfig":
        try:
            return cls(**d)
        except TypeError as e:
            raise ValidationError(f"bad mc config: {e}") from None


# ---------------------------------------------------------------------------
# single-draw estimands
# ---------------------------------------------------------------------------

def pi_nd(theta, X_emp) -> float:
    """Covariate-averaged ND membership probability."""
    return float(kernels.nd_effect(_theta(theta), _X(X_emp).shape[1], _X(X_emp), True)[0])


def ace_nd(theta, X_emp, weighting: str = "stratum") -> float:
    """Average causal effect on expected survival among ND units."""
    X = _X(X_emp)
    return float(kernels.nd_effect(_theta(theta), X.shape[1], X, _weighted(weighting))[1])


def ace_d_at(theta, X_emp, d: float, weighting: str = "stratum") -> float:
    """Average causal effect among units with ``D(1) = d``."""
    if not d > 0:
        raise ValidationError("d must be positive")
    X = _X(X_emp)
    return float(kernels.ace_d_curve(_theta(theta), X.shape[1], X, np.array([float(d)]), _weighted(weighting))[0])


def ace_d_curve(theta, X_emp, d_grid, weighting: str = "stratum") -> np.ndarray:
    X = _X(X_emp)
    return kernels.ace_d_curve(_theta(theta), X.shape[1], X, np.asarray(d_grid, dtype=float), _weighted(weighting))


def ace_d(theta, X_emp, mc: int = 50, rng: np.random.Generator | None = None,
          weighting: str = "stratum") -> float:
    """Monte Carlo ``ACE_D``: ``mc`` draws of ``D(1)`` from its law at each unit."""
    if mc < 1:
        raise ValidationError("mc must be >= 1")
    X = _X(X_emp)
    rng = rng if rng is not None else np.random.default_rng(0)
    u = open_uniform(rng, (X.shape[0], mc))
    return float(kernels.ace_d_mc(_theta(theta), X.shape[1], X, u, _weighted(weighting)))


def dce_nd(theta, X_emp, y, weighting: str = "stratum"):
    """Survival difference among ND units at time(s) ``y``."""
    X = _X(X_emp)
    yy = np.atleast_1d(np.asarray(y, dtype=float))
    if np.any(yy < 0):
        raise ValidationError("y must be non-negative")
    out = kernels.dce_nd_curve(_theta(theta), X.shape[1], X, yy, _weighted(weighting))
    return float(out[0]) if np.ndim(y) == 0 else out


def dce_d(theta, X_emp, y, d, weighting: str = "stratum"):
    """Survival difference among units with ``D(1) = d`` at time(s) ``y``.

    Returns a scalar for scalar inputs, else a ``(len(y), len(d))`` array.
    """
    X = _X(X_emp)
    yy = np.atleast_1d(np.asarray(y, dtype=float))
    dd = np.atleast_1d(np.asarray(d, dtype=float))
    if np.any(yy < 0) or np.any(dd <= 0):
        raise ValidationError("need y >= 0 and d > 0")
    out = kernels.dce_d_surface(_theta(theta), X.shape[1], X, yy, dd, _weighted(weighting))
    return float(out[0, 0]) if np.ndim(y) == 0 and np.ndim(d) == 0 else out


# ---------------------------------------------------------------------------
# posterior summaries
# ---------------------------------------------------------------------------

@dataclass
class DrawEstimands:
    """Per-draw estimand values (rows are posterior draws)."""
    scalars: dict
    ace_d_curve: np.ndarray
    dce_nd: np.ndarray
    dce_d: np.ndarray
    grids: Grids
    indicator_share: np.ndarray | None = None


def draw_estimands(draws, X_emp, grids: Grids = Grids(), mc_cfg: McConfig = McConfig(),
                   curves: bool = True) -> DrawEstimands:
    """Evaluate every estimand at every row of ``draws``.

    The uniforms for ``ACE_D`` are drawn once from a named stream and reused
    for every draw, so the output depends only on the inputs and the seed
    and identical draws give identical values.
    ``ITT`` is formed as ``pi * ACE_ND + (1 - pi) * ACE_D`` per draw.
    """
    draws = np.atleast_2d(np.asarray(draws, dtype=np.float64))
    X = _X(X_emp)
    K = X.shape[1]
    if draws.shape[1] != 3 * K + 12:
        raise ValidationError(f"draws have {draws.shape[1]} columns, expected {3 * K + 12} for K={K}")
    S = draws.shape[0]
    w = _weighted(mc_cfg.weighting)
    dg, yg, ddg = grids.arrays()
    # common random numbers: every draw sees the same D(1) uniforms
    u = open_uniform(stream(mc_cfg.seed, "ace_d"), (X.shape[0], mc_cfg.draws))
    pi = np.empty(S)
    a_nd = np.empty(S)
    a_d = np.empty(S)
    # the ACE_D(d) curve is always kept since coverage needs its d = 1..4 points
    curve = np.empty((S, dg.size))
    dnd = np.empty((S, yg.size)) if curves else np.empty((S, 0))
    dd = np.empty((S, yg.size, ddg.size)) if curves else np.empty((S, 0, 0))
    for s in range(S):
        th = np.ascontiguousarray(draws[s])
        p, e = kernels.nd_effect(th, K, X, True)
        pi[s] = p
        a_nd[s] = e if w else kernels.nd_effect(th, K, X, False)[1]
        a_d[s] = kernels.ace_d_mc(th, K, X, u, w)
        curve[s] = kernels.ace_d_curve(th, K, X, dg, w)
        if curves:
            dnd[s] = kernels.dce_nd_curve(th, K, X, yg, w)
            dd[s] = kernels.dce_d_surface(th, K, X, yg, ddg, w)
    itt = pi * a_nd + (1.0 - pi) * a_d
    return DrawEstimands({"pi_nd": pi, "itt": itt, "ace_nd": a_nd, "ace_d": a_d}, curve, dnd, dd, grids)


@dataclass
class EstimandReport:
    """Posterior means and HPD intervals for scalar and curve estimands."""
    scalars: dict
    ace_d_curve: list
    dce_nd: list
    dce_d: list
    level: float
    n_draws: int
    grids: Grids
    weighting: str = "stratum"
    indicator_share: dict | None = None
    draws: DrawEstimands | None = field(default=None, repr=False)

    def scalar(self, name: str) -> tuple[float, HpdInterval]:
        return self.scalars[name]

    def ace_d_at(self, d: float) -> tuple[float, HpdInterval]:
        for g, m, h in self.ace_d_curve:
            if math.isclose(g, d):
                return m, h
        raise KeyError(f"d={d} is not on the report grid")

    def to_dict(self) -> dict:
        def row(m, h):
            return {"mean": m, "hpd_lo": h.lower, "hpd_hi": h.upper}
        return {
            "level": self.level, "n_draws": self.n_draws, "weighting": self.weighting,
            "grids": self.grids.to_dict(),
            "scalars": {LABELS[k]: row(*v) for k, v in self.scalars.items()},
            "ace_d_curve": [dict(d=g, **row(m, h)) for g, m, h in self.ace_d_curve],
            "dce_nd": [dict(y=g, **row(m, h)) for g, m, h in self.dce_nd],
            "dce_d": [dict(d=d, y=y, **row(m, h)) for d, y, m, h in self.dce_d],
            "indicator_share": self.indicator_share,
        }

    def write(self, directory) -> list[Path]:
        """Write scalar and curve CSVs plus ``report.json``; return the paths."""
        out = Path(directory)
        out.mkdir(parents=True, exist_ok=True)
        paths = []

        def emit(name, header, rows):
            p = out / name
            with open(p, "w", newline="") as fh:
                wr = csv.writer(fh)
                wr.writerow(header)
                wr.writerows(rows)
            paths.append(p)

        emit("scalars.csv", ["estimand", "mean", "hpd_lo", "hpd_hi"],
             [[LABELS[k], repr(m), repr(h.lower), repr(h.upper)] for k, (m, h) in self.scalars.items()])
        emit("ace_d_curve.csv", ["d", "mean", "hpd_lo", "hpd_hi"],
             [[repr(g), repr(m), repr(h.lower), repr(h.upper)] for g, m, h in self.ace_d_curve])
        emit("dce_nd.csv", ["y", "mean", "hpd_lo", "hpd_hi"],
             [[repr(g), repr(m), repr(h.lower), repr(h.upper)] for g, m, h in self.dce_nd])
        emit("dce_d.csv", ["d", "y", "mean", "hpd_lo", "hpd_hi"],
             [[repr(d), repr(y), repr(m), repr(h.lower), repr(h.upper)] for d, y, m, h in self.dce_d])
        if self.draws is not None:
            sc = self.draws.scalars
            emit("estimand_draws.csv", ["draw"] + [LABELS[k] for k in SCALARS],
                 [[s] + [repr(float(sc[k][s])) for k in SCALARS] for s in range(self.n_draws)])
        p = out / "report.json"
        p.write_text(json.dumps(self.to_dict(), indent=2) + "\n")
        paths.append(p)
        return paths


def _summ(x, level):
    x = np.asarray(x, dtype=float)
    ok = x[np.isfinite(x)]
    if ok.size == 0:
        return math.nan, HpdInterval(math.nan, math.nan, level)
    return float(ok.mean()), hpd_interval(ok, level)


def _as_chains(chain):
    return list(chain) if isinstance(chain, (list, tuple)) else [chain]


def summarize_posterior(chain, X_emp, grids: Grids = Grids(), mc_cfg: McConfig = McConfig(),
                        level: float = 0.95, curves: bool = True) -> EstimandReport:
    """Posterior mean and HPD interval of every estimand.

    Parameters
    ----------
    chain : Chain or list of Chain
        Retained draws; several chains are pooled in order.
    X_emp : ndarray
        Full-sample covariate matrix on the model scale.
    """
    chains = _as_chains(chain)
    draws = np.vstack([c.draws for c in chains])
    if draws.shape[0] == 0:
        raise ValidationError("chain has no retained draws")
    de = draw_estimands(draws, X_emp, grids, mc_cfg, curves=curves)
    scal = {k: _summ(de.scalars[k], level) for k in SCALARS}
    dg, yg, ddg = grids.arrays()
    curve = [(float(g),) + _summ(de.ace_d_curve[:, j], level) for j, g in enumerate(dg)]
    dnd, dd = [], []
    if curves:
        dnd = [(float(g),) + _summ(de.dce_nd[:, j], level) for j, g in enumerate(yg)]
        dd = [(float(d), float(y)) + _summ(de.dce_d[:, j, k], level)
              for k, d in enumerate(ddg) for j, y in enumerate(yg)]
    share = None
    if all(c.i_nd is not None for c in chains):
        sh = np.concatenate([c.i_nd.mean(axis=1) for c in chains])
        de.indicator_share = sh
        m, h = _summ(sh, level)
        share = {"mean": m, "hpd_lo": h.lower, "hpd_hi": h.upper}
    return EstimandReport(scal, curve, dnd, dd, level, draws.shape[0], grids, mc_cfg.weighting, share, de)


# ---------------------------------------------------------------------------
# stratum characterization
# ---------------------------------------------------------------------------

CLASSES = ("ND", "D-early", "D-late")


@dataclass
class StrataProfile:
    """Covariate distributions of the latent classes, pooled over draws.

    ``continuous[name][cls]`` holds mean, sd and a histogram; ``binary[name][cls]``
    the share of ones.  ``weights[cls]`` is the mean class fraction per draw.
    """
    continuous: dict
    binary: dict
    weights: dict
    counts: dict
    n_draws: int
    skipped_draws: int
    bin_edges: dict

    @property
    def classes(self) -> list[str]:
        return [c for c in CLASSES if self.counts.get(c, 0) > 0]

    def mean(self, covariate: str, cls: str) -> float:
        if covariate in self.continuous:
            return self.continuous[covariate][cls]["mean"]
        return self.binary[covariate][cls]

    def to_dict(self) -> dict:
        return {"continuous": self.continuous, "binary": self.binary, "weights": self.weights,
                "counts": self.counts, "n_draws": self.n_draws, "skipped_draws": self.skipped_draws,
                "bin_edges": {k: v.tolist() for k, v in self.bin_edges.items()}}

    def to_rows(self) -> list[list]:
        rows = []
        for nm, per in self.continuous.items():
            for c, s in per.items():
                rows.append([nm, c, "mean", s["mean"]])
                rows.append([nm, c, "sd", s["sd"]])
        for nm, per in self.binary.items():
            for c, v in per.items():
                rows.append([nm, c, "share", v])
        for c, v in self.weights.items():
            rows.append(["class", c, "fraction", v])
        return rows


def classify_draw(i_nd, d1):
    """Label units 0 = ND, 1 = early D, 2 = late D for one draw.

    D units are early when their ``D(1)`` is at or below the median over the
    draw's D units.  Returns None when the draw has no D units.
    """
    i_nd = np.asarray(i_nd)
    d1 = np.asarray(d1, dtype=float)
    lab = np.zeros(i_nd.shape, dtype=np.int8)
    dmask = i_nd == 0
    if not dmask.any():
        return None
    med = np.median(d1[dmask])
    lab[dmask] = np.where(d1[dmask] <= med, 1, 2)
    return lab


def characterize_strata(chain, ds: Dataset, raw: bool = True, bins: int = 20) -> StrataProfile:
    """Pool per-draw latent classifications into covariate summaries.

    Parameters
    ----------
    chain : Chain, list of Chain, or tuple ``(i_nd, d1)`` of ``(S, n)`` arrays
        Latent snapshots; a complete-data truth can be passed as a tuple.
    ds : Dataset
    raw : bool
        Summarize covariates on the original scale.
    """
    if isinstance(chain, tuple) and len(chain) == 2 and not hasattr(chain[0], "draws"):
        I = np.atleast_2d(np.asarray(chain[0]))
        D = np.atleast_2d(np.asarray(chain[1], dtype=float))
    else:
        chains = _as_chains(chain)
        if any(c.i_nd is None for c in chains):
            raise ValidationError("chain has no stored latents; fit with store_latents=True")
        I = np.vstack([c.i_nd for c in chains])
        D = np.vstack([c.d1 for c in chains])
    if I.shape[1] != ds.n:
        raise ValidationError(f"latents cover {I.shape[1]} units but the dataset has {ds.n}")
    X = ds.raw_covariates() if raw else ds.X
    names = ds.covariate_names
    S = I.shape[0]
    # pooled sums per class: count, then per covariate sum and sum of squares
    cnt = np.zeros(3)
    s1 = np.zeros((3, len(names)))
    s2 = np.zeros((3, len(names)))
    frac = np.zeros(3)
    skipped = 0
    cont_idx = [j for j, c in enumerate(ds.continuous) if c]
    edges = {names[j]: np.histogram_bin_edges(X[:, j], bins=bins) for j in cont_idx}
    hist = {names[j]: np.zeros((3, bins)) for j in cont_idx}
    for s in range(S):
        lab = classify_draw(I[s], D[s])
        if lab is None:
            skipped += 1
            lab = np.zeros(ds.n, dtype=np.int8)
        for k in range(3):
            m = lab == k
            nk = int(m.sum())
            if nk == 0:
                continue
            cnt[k] += nk
            frac[k] += nk / ds.n
            Xk = X[m]
            s1[k] += Xk.sum(axis=0)
            s2[k] += (Xk ** 2).sum(axis=0)
            for j in cont_idx:
                hist[names[j]][k] += np.histogram(Xk[:, j], bins=edges[names[j]])[0]
    continuous, binary = {}, {}
    for j, nm in enumerate(names):
        per_c, per_b = {}, {}
        for k, cls in enumerate(CLASSES):
            if cnt[k] == 0:
                continue
            mu = s1[k, j] / cnt[k]
            if ds.continuous[j]:
                var = max(s2[k, j] / cnt[k] - mu ** 2, 0.0)
                per_c[cls] = {"mean": float(mu), "sd": float(math.sqrt(var)),
                              "hist": (hist[nm][k] / cnt[k]).tolist()}
            else:
                per_b[cls] = float(mu)
        if ds.continuous[j]:
            continuous[nm] = per_c
        else:
            binary[nm] = per_b
    counts = {cls: int(cnt[k]) for k, cls in enumerate(CLASSES)}
    weights = {cls: float(frac[k] / S) for k, cls in enumerate(CLASSES) if cnt[k] > 0}
    return StrataProfile(continuous, binary, weights, counts, S, skipped, edges)


def pooled_d_class(profile: StrataProfile, covariate: str) -> float:
    """Mean of ``covariate`` over both D classes together."""
    num = den = 0.0
    for cls in ("D-early", "D-late"):
        n = profile.counts.get(cls, 0)
        if n:
            num += n * profile.mean(covariate, cls)
            den += n
    return num / den if den else math.nan
