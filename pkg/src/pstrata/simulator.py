"""Synthetic trials with known potential outcomes.

Two data-generating scenarios share the membership model, the
discontinuation-time model and the never-discontinuing (ND) outcomes:

* Scenario I: for discontinuing (D) units ``Y(1)`` is a Weibull
  left-truncated at ``D(1)`` and ``Y(0)`` an ordinary Weibull, both with a
  ``delta * log D(1)`` term in the linear predictor.
* Scenario II: ``Y(1)`` and ``Y(0)`` of D units are iid from the same
  truncated Weibull, so every D-stratum effect is exactly zero.

Linear predictors use ``x1`` standardized by the covariate model's
``x1_mean``/``x1_sd`` and the binary ``x2``, ``x3`` as is.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from importlib import resources
from pathlib import Path

import numpy as np
from scipy import integrate, special

from . import layout
from ._rng import open_uniform, stream
from .dataset import COVARIATES, Dataset
from .errors import ValidationError
from .kernels import _numpy as nk

DEFAULT_D_GRID = np.arange(1, 25) * 0.5
DEFAULT_Y_GRID = np.arange(1, 49) * 0.5
DCE_D_GRID = np.array([1.0, 2.0, 3.0, 4.0])


@dataclass
class WeibullBlock:
    shape: float
    intercept: float
    coef: list
    delta: float = 0.0

    def linpred(self, Xs, d=None):
        lp = self.intercept + Xs @ np.asarray(self.coef, dtype=float)
        if d is not None:
            lp = lp + self.delta * np.log(d)
        return lp


@dataclass
class CovariateModel:
    x1_mean: float = 63.09
    x1_sd: float = 10.46
    x1_min: float = 25.0
    x1_max: float = 92.0
    x2_rate: float = 0.4388
    x3_rate: float = 0.2537


@dataclass
class ScenarioConfig:
    """Complete data-generating description of one scenario.

    Scenario II uses ``d_arm1`` for both arms of the D stratum; ``d_arm0`` is
    overwritten with a copy on construction.
    """
    scenario: str
    membership: dict
    disc: WeibullBlock
    nd_arm1: WeibullBlock
    nd_arm0: WeibullBlock
    d_arm1: WeibullBlock
    d_arm0: WeibullBlock
    n: int = 335
    n_treated: int = 181
    covariates: CovariateModel = field(default_factory=CovariateModel)
    enrollment_window: float = 23.0
    cutoff: float = 33.0
    seed: int = 0

    def __post_init__(self):
        if self.scenario not in ("I", "II"):
            raise ValidationError(f"scenario must be 'I' or 'II', got {self.scenario!r}")
        for nm in ("disc", "nd_arm1", "nd_arm0", "d_arm1", "d_arm0"):
            b = getattr(self, nm)
            if isinstance(b, dict):
                b = WeibullBlock(**b)
                setattr(self, nm, b)
            if not b.shape > 0:
                raise ValidationError(f"{nm}.shape must be positive")
            if len(b.coef) != len(COVARIATES):
                raise ValidationError(f"{nm}.coef needs {len(COVARIATES)} entries")
        if isinstance(self.covariates, dict):
            self.covariates = CovariateModel(**self.covariates)
        if len(self.membership.get("gamma", ())) != len(COVARIATES):
            raise ValidationError(f"membership.gamma needs {len(COVARIATES)} entries")
        if self.scenario == "II":
            self.d_arm0 = replace(self.d_arm1, coef=list(self.d_arm1.coef))
        if not 0 <= self.n_treated <= self.n:
            raise ValidationError("n_treated must lie in [0, n]")
        if not 0 < self.enrollment_window < self.cutoff:
            raise ValidationError("need 0 < enrollment_window < cutoff")

    @property
    def treated_share(self) -> float:
        return self.n_treated / self.n if self.n else 0.0

    def with_n(self, n: int) -> "ScenarioConfig":
        """Same scenario at sample size ``n`` keeping the treated share."""
        return replace(self, n=n, n_treated=int(round(n * self.treated_share)))

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioConfig":
        try:
            return cls(**d)
        except TypeError as e:
            raise ValidationError(f"bad scenario config: {e}") from None

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path) -> "ScenarioConfig":
        path = Path(path)
        if not path.is_file():
            raise ValidationError(f"config file not found: {path}")
        try:
            return cls.from_dict(json.loads(path.read_text()))
        except json.JSONDecodeError as e:
            raise ValidationError(f"{path}: invalid JSON ({e})") from None

    def standardize(self, X_raw):
        """Covariates on the generative scale (``x1`` centred and scaled)."""
        Xs = np.array(X_raw, dtype=float, copy=True)
        Xs[:, 0] = (Xs[:, 0] - self.covariates.x1_mean) / self.covariates.x1_sd
        return Xs

    def to_model_scale(self, standardization: dict | None = None) -> np.ndarray:
        """True parameters as a flat vector in the fitting model's layout.

        ``standardization`` is the ``{"x1": (center, scale)}`` used for the
        fit; the intercepts absorb the change of centre and the ``x1``
        coefficients the change of scale.  Only meaningful when the four
        outcome blocks share their coefficients (Scenario I defaults).
        """
        m_f, s_f = (standardization or {}).get("x1", (self.covariates.x1_mean, self.covariates.x1_sd))
        m_g, s_g = self.covariates.x1_mean, self.covariates.x1_sd

        def lin(intercept, coef):
            coef = np.asarray(coef, dtype=float).copy()
            b = intercept + coef[0] * (m_f - m_g) / s_g
            coef[0] *= s_f / s_g
            return b, coef

        K = len(COVARIATES)
        th = np.zeros(layout.n_params(K))
        g0, g = lin(self.membership["gamma0"], self.membership["gamma"])
        th[0], th[1:K + 1] = g0, g
        bD, eD = lin(self.disc.intercept, self.disc.coef)
        th[K + 1], th[K + 2], th[K + 3:2 * K + 3] = self.disc.shape, bD, eD
        o = 2 * K + 3
        eta = None
        for gidx, blk in enumerate((self.nd_arm1, self.d_arm1, self.nd_arm0, self.d_arm0)):
            b, e = lin(blk.intercept, blk.coef)
            th[o + 2 * gidx], th[o + 2 * gidx + 1] = blk.shape, b
            eta = e if eta is None else eta
        th[2 * K + 11:3 * K + 11] = eta
        th[3 * K + 11] = self.d_arm1.delta
        return th


def load_default(scenario: str) -> ScenarioConfig:
    """Packaged calibrated configuration for scenario 'I' or 'II'."""
    if scenario not in ("I", "II"):
        raise ValidationError(f"scenario must be 'I' or 'II', got {scenario!r}")
    text = resources.files("pstrata").joinpath(f"configs/scenario_{scenario}.json").read_text()
    return ScenarioConfig.from_dict(json.loads(text))


# ---------------------------------------------------------------------------
# complete data
# ---------------------------------------------------------------------------

@dataclass
class CompleteData:
    """All potential outcomes; ``d1`` is NaN for ND units."""
    X: np.ndarray
    i_nd: np.ndarray
    d1: np.ndarray
    y1: np.ndarray
    y0: np.ndarray
    z: np.ndarray
    scenario: str
    c: np.ndarray | None = None

    @property
    def n(self) -> int:
        return len(self.z)

    @property
    def y_obs(self) -> np.ndarray:
        return np.where(self.z == 1, self.y1, self.y0)


def _weibull(u, a, lp):
    return np.exp((np.log(-np.log(u)) - lp) / a)


def _trunc_weibull(u, a, lp, d):
    x1 = a * np.log(d)
    x2 = np.log(-np.log(u)) - lp
    return np.maximum(np.exp(np.logaddexp(x1, x2) / a), d)


def draw_covariates(cfg: ScenarioConfig, rng: np.random.Generator, n: int) -> np.ndarray:
    cm = cfg.covariates
    x1 = np.clip(rng.normal(cm.x1_mean, cm.x1_sd, n), cm.x1_min, cm.x1_max)
    x2 = (rng.random(n) < cm.x2_rate).astype(float)
    x3 = (rng.random(n) < cm.x3_rate).astype(float)
    return np.column_stack([x1, x2, x3])


def simulate_complete(cfg: ScenarioConfig, rng: np.random.Generator) -> CompleteData:
    """Draw covariates, strata, discontinuation times, both potential outcomes
    and the randomized arm (a permutation with exactly ``n_treated`` treated)."""
    n = cfg.n
    X = draw_covariates(cfg, rng, n)
    Xs = cfg.standardize(X)
    m = cfg.membership
    p = special.expit(m["gamma0"] + Xs @ np.asarray(m["gamma"], dtype=float))
    i_nd = (rng.random(n) < p).astype(np.int8)
    u = open_uniform(rng, (4, n))
    nd = i_nd == 1
    d1 = np.where(nd, np.nan, _weibull(u[0], cfg.disc.shape, cfg.disc.linpred(Xs)))
    dsafe = np.where(nd, 1.0, d1)

    y1 = _weibull(u[1], cfg.nd_arm1.shape, cfg.nd_arm1.linpred(Xs))
    y0 = _weibull(u[2], cfg.nd_arm0.shape, cfg.nd_arm0.linpred(Xs))
    b1 = cfg.d_arm1
    y1_d = _trunc_weibull(u[3], b1.shape, b1.linpred(Xs, dsafe), dsafe)
    u0 = open_uniform(rng, n)
    b0 = cfg.d_arm0
    if cfg.scenario == "I":
        y0_d = _weibull(u0, b0.shape, b0.linpred(Xs, dsafe))
    else:
        y0_d = _trunc_weibull(u0, b0.shape, b0.linpred(Xs, dsafe), dsafe)
    y1 = np.where(nd, y1, y1_d)
    y0 = np.where(nd, y0, y0_d)

    z = np.zeros(n, dtype=np.int64)
    z[rng.permutation(n)[: cfg.n_treated]] = 1
    return CompleteData(X=X, i_nd=i_nd, d1=d1, y1=y1, y0=y0, z=z, scenario=cfg.scenario)


def apply_censoring(cd: CompleteData, cfg: ScenarioConfig, rng: np.random.Generator) -> Dataset:
    """Staggered entry over the enrollment window and a common cutoff.

    ``C = cutoff - entry`` with uniform entry; discontinuation is observed
    only for treated D units with ``D(1) < C``.
    """
    n = cd.n
    entry = rng.uniform(0.0, cfg.enrollment_window, n)
    c = cfg.cutoff - entry
    cd.c = c
    y_obs = cd.y_obs
    event = (y_obs <= c).astype(np.int64)
    y_tilde = np.minimum(y_obs, c)
    dvals = np.where(np.isnan(cd.d1), np.inf, cd.d1)
    disc = ((cd.z == 1) & (cd.i_nd == 0) & (dvals < c)).astype(np.int64)
    d_tilde = np.where(disc == 1, dvals, c)
    return Dataset(z=cd.z, c=c, y_tilde=y_tilde, event=event, d_tilde=d_tilde, disc=disc, X=cd.X)


def simulate(cfg: ScenarioConfig, seed: int | None = None, replicate: int = 0):
    """Complete and observed data from named sub-streams of ``seed``."""
    seed = cfg.seed if seed is None else seed
    cd = simulate_complete(cfg, stream(seed, "simulate", replicate))
    ds = apply_censoring(cd, cfg, stream(seed, "censor", replicate))
    return cd, ds


# ---------------------------------------------------------------------------
# true values
# ---------------------------------------------------------------------------

@dataclass
class TrueValues:
    """Finite-sample and model-based true estimands for one complete dataset.

    ``finite`` holds plug-in values from the simulated potential outcomes
    (stratum share, mean ``Y(1) - Y(0)`` within each stratum and overall).
    ``model`` holds the same scalars computed from the true parameters on the
    sample's covariates, with stratum-conditional covariate weighting.
    Curves are model-based only, since ``{D(1) = d}`` has probability zero.
    """
    finite: dict
    model: dict
    d_grid: np.ndarray
    ace_d_curve: np.ndarray
    y_grid: np.ndarray
    dce_nd: np.ndarray
    dce_d_grid: np.ndarray
    dce_d: np.ndarray

    def ace_d_at(self, d: float) -> float:
        i = np.flatnonzero(np.isclose(self.d_grid, d))
        if i.size == 0:
            raise KeyError(f"d={d} is not on the truth grid")
        return float(self.ace_d_curve[i[0]])

    def to_dict(self) -> dict:
        return {
            "finite": self.finite, "model": self.model,
            "ace_d_curve": {"d": self.d_grid.tolist(), "value": self.ace_d_curve.tolist()},
            "dce_nd": {"y": self.y_grid.tolist(), "value": self.dce_nd.tolist()},
            "dce_d": {"y": self.y_grid.tolist(), "d": self.dce_d_grid.tolist(), "value": self.dce_d.tolist()},
        }


def _d_effect_true(cfg: ScenarioConfig, Xs, d):
    """E[Y(1) - Y(0) | D(1)=d, x] under the true law; broadcast over (n, m)."""
    if cfg.scenario == "II":
        return np.zeros(np.broadcast_shapes(Xs.shape[:1] + (1,), np.shape(d)))
    b1, b0 = cfg.d_arm1, cfg.d_arm0
    lp1 = b1.linpred(Xs)[:, None] + b1.delta * np.log(d)
    lp0 = b0.linpred(Xs)[:, None] + b0.delta * np.log(d)
    return nk._twb_mean(b1.shape, lp1, d) - nk._wb_mean(b0.shape, lp0)


def _d_surv_true(cfg: ScenarioConfig, Xs, y, d):
    """P(Y(1) > y | d, x) - P(Y(0) > y | d, x); arrays shaped (n, Y, G)."""
    if cfg.scenario == "II":
        return np.zeros((Xs.shape[0], len(y), len(d)))
    b1, b0 = cfg.d_arm1, cfg.d_arm0
    dd = np.asarray(d)[None, None, :]
    yy = np.asarray(y)[None, :, None]
    lp1 = b1.linpred(Xs)[:, None, None] + b1.delta * np.log(dd)
    lp0 = b0.linpred(Xs)[:, None, None] + b0.delta * np.log(dd)
    return np.exp(nk._twb_logsurv(yy, b1.shape, lp1, dd)) - np.exp(nk._wb_logsurv(yy, b0.shape, lp0))


def model_estimands(cfg: ScenarioConfig, X_raw, d_grid=DEFAULT_D_GRID, y_grid=DEFAULT_Y_GRID,
                    dce_d_grid=DCE_D_GRID):
    """Scalar and curve estimands from the true parameters on covariates ``X_raw``.

    A stratum with zero total weight gives NaN for its effects.
    """
    with np.errstate(invalid="ignore", divide="ignore"):
        return _model_estimands(cfg, X_raw, d_grid, y_grid, dce_d_grid)


def _model_estimands(cfg, X_raw, d_grid, y_grid, dce_d_grid):
    Xs = cfg.standardize(X_raw)
    m = cfg.membership
    p = special.expit(m["gamma0"] + Xs @ np.asarray(m["gamma"], dtype=float))
    q = 1.0 - p
    diff_nd = (nk._wb_mean(cfg.nd_arm1.shape, cfg.nd_arm1.linpred(Xs))
               - nk._wb_mean(cfg.nd_arm0.shape, cfg.nd_arm0.linpred(Xs)))
    pi = float(p.mean())
    ace_nd = float(np.sum(p * diff_nd) / p.sum())

    aD, lpD = cfg.disc.shape, cfg.disc.linpred(Xs)

    if cfg.scenario == "II":
        ace_d = 0.0
    else:
        # integrate over t = lam_D d^a ~ Exp(1) for every unit at once
        def integrand(t):
            d = np.exp((math.log(t) - lpD) / aD)[:, None] if t > 0 else np.full((len(lpD), 1), 1e-300)
            return _d_effect_true(cfg, Xs, d)[:, 0] * math.exp(-t)
        per_unit, _ = integrate.quad_vec(integrand, 0.0, np.inf, epsrel=1e-9)
        ace_d = float(np.sum(q * per_unit) / q.sum())

    d_grid = np.asarray(d_grid, dtype=float)
    w = q[:, None] * np.exp(nk._wb_logpdf(d_grid[None, :], aD, lpD[:, None]))
    curve = (w * _d_effect_true(cfg, Xs, d_grid[None, :])).sum(axis=0) / w.sum(axis=0)

    y_grid = np.asarray(y_grid, dtype=float)
    s1 = np.exp(nk._wb_logsurv(y_grid[None, :], cfg.nd_arm1.shape, cfg.nd_arm1.linpred(Xs)[:, None]))
    s0 = np.exp(nk._wb_logsurv(y_grid[None, :], cfg.nd_arm0.shape, cfg.nd_arm0.linpred(Xs)[:, None]))
    dce_nd = (p[:, None] * (s1 - s0)).sum(axis=0) / p.sum()

    dce_d_grid = np.asarray(dce_d_grid, dtype=float)
    wd = q[:, None] * np.exp(nk._wb_logpdf(dce_d_grid[None, :], aD, lpD[:, None]))
    dce_d = (wd[:, None, :] * _d_surv_true(cfg, Xs, y_grid, dce_d_grid)).sum(axis=0) / wd.sum(axis=0)

    scalars = {"pi_nd": pi, "ace_nd": ace_nd, "ace_d": ace_d, "itt": pi * ace_nd + (1 - pi) * ace_d}
    return scalars, curve, dce_nd, dce_d


def true_estimands(cd: CompleteData, cfg: ScenarioConfig, d_grid=DEFAULT_D_GRID,
                   y_grid=DEFAULT_Y_GRID, dce_d_grid=DCE_D_GRID) -> TrueValues:
    """Finite-sample and model-based truths for a complete dataset.

    An empty stratum gives NaN for that stratum's finite-sample effect.
    """
    nd = cd.i_nd == 1
    eff = cd.y1 - cd.y0
    finite = {
        "pi_nd": float(nd.mean()) if cd.n else math.nan,
        "ace_nd": float(eff[nd].mean()) if nd.any() else math.nan,
        "ace_d": float(eff[~nd].mean()) if (~nd).any() else math.nan,
        "itt": float(eff.mean()) if cd.n else math.nan,
    }
    model, curve, dce_nd, dce_d = model_estimands(cfg, cd.X, d_grid, y_grid, dce_d_grid)
    return TrueValues(finite=finite, model=model, d_grid=np.asarray(d_grid, float), ace_d_curve=curve,
                      y_grid=np.asarray(y_grid, float), dce_nd=dce_nd,
                      dce_d_grid=np.asarray(dce_d_grid, float), dce_d=dce_d)


def calibrate(cfg0: ScenarioConfig, targets: dict | None = None, budget: int = 200, **kw):
    """Coordinate search of free parameters towards summary and effect targets.

    See :func:`pstrata.calibration.calibrate`.
    """
    from .calibration import calibrate as _cal
    return _cal(cfg0, targets=targets, budget=budget, **kw)
