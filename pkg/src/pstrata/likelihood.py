"""Priors, complete-data log posterior and the observed-data log likelihood.

The complete-data posterior drives the sampler.  The observed-data
likelihood integrates the latent strata and discontinuation times out
numerically and serves as an independent check.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate, special

from . import kernels, layout
from .dataset import Dataset
from .errors import NumericError, ValidationError
from .kernels import _numpy as nk


class ParamVector:
    """Named view of the flat natural-scale parameter vector.

    Parameters
    ----------
    values : array_like
        Length ``3K + 12`` vector in :mod:`pstrata.layout` order.
    K : int
        Number of covariates.
    """

    def __init__(self, values, K: int):
        values = np.asarray(values, dtype=float)
        if values.shape != (layout.n_params(K),):
            raise ValidationError(f"parameter vector must have length {layout.n_params(K)}, got {values.shape}")
        self.values = values
        self.K = K
        self._idx = layout.index(K)

    def __getitem__(self, name: str) -> float:
        return float(self.values[self._idx[name]])

    def block(self, name: str) -> np.ndarray:
        for nm, idx, _ in layout.blocks(self.K):
            if nm == name:
                return self.values[idx]
        raise KeyError(name)

    @property
    def names(self) -> list[str]:
        return layout.names(self.K)

    def valid(self) -> bool:
        return bool(np.all(np.isfinite(self.values)) and np.all(self.values[layout.shape_indices(self.K)] > 0))

    def to_dict(self) -> dict:
        return dict(zip(self.names, self.values.tolist()))

    @classmethod
    def from_dict(cls, d: dict, K: int) -> "ParamVector":
        return cls(np.array([d[n] for n in layout.names(K)], dtype=float), K)

    def __repr__(self):
        return f"ParamVector(K={self.K}, {self.to_dict()})"


@dataclass(frozen=True)
class PriorConfig:
    """Independent priors for every element of the parameter vector.

    Weibull shapes get Gamma(``gamma_shape``, rate ``gamma_rate``); the
    default rate 2 is a scale of 0.5.  Weibull intercepts and ``delta`` get
    N(0, 100); the membership intercept and all coefficient vectors N(0, 25).
    """
    gamma_shape: float = 0.5
    gamma_rate: float = 2.0
    intercept_var: float = 100.0
    delta_var: float = 100.0
    gamma0_var: float = 25.0
    coef_var: float = 25.0

    def __post_init__(self):
        for k, v in self.__dict__.items():
            if not (np.isfinite(v) and v > 0):
                raise ValidationError(f"prior hyperparameter {k} must be positive, got {v}")

    def variances(self, K: int) -> np.ndarray:
        """Normal prior variance per element (NaN at shape positions)."""
        v = np.full(layout.n_params(K), self.coef_var)
        v[0] = self.gamma0_var
        v[layout.intercept_indices(K)] = self.intercept_var
        v[3 * K + 11] = self.delta_var
        v[layout.shape_indices(K)] = np.nan
        return v

    def mean_var(self, K: int):
        """Prior means and variances per element, for prior-recovery checks."""
        v = self.variances(K)
        m = np.zeros_like(v)
        s = layout.shape_indices(K)
        m[s] = self.gamma_shape / self.gamma_rate
        v[s] = self.gamma_shape / self.gamma_rate ** 2
        return m, v

    @classmethod
    def from_dict(cls, d: dict) -> "PriorConfig":
        try:
            return cls(**d)
        except TypeError as e:
            raise ValidationError(f"bad prior config: {e}") from None


def log_prior_elements(theta, K: int, cfg: PriorConfig) -> np.ndarray:
    """Per-element prior log densities (``-inf`` for a non-positive shape)."""
    theta = np.asarray(theta, dtype=float)
    var = cfg.variances(K)
    out = -0.5 * (np.log(2 * np.pi * var) + theta ** 2 / var)
    s = layout.shape_indices(K)
    x = theta[s]
    a, b = cfg.gamma_shape, cfg.gamma_rate
    with np.errstate(divide="ignore", invalid="ignore"):
        g = a * math.log(b) - special.gammaln(a) + (a - 1.0) * np.log(x) - b * x
    out[s] = np.where(x > 0, g, -np.inf)
    return out


def log_prior(theta, cfg: PriorConfig = PriorConfig(), K: int | None = None) -> float:
    """Sum of independent prior log densities."""
    if isinstance(theta, ParamVector):
        theta, K = theta.values, theta.K
    theta = np.asarray(theta, dtype=float)
    if K is None:
        K = (theta.size - 12) // 3
    return float(np.sum(log_prior_elements(theta, K, cfg)))


# ---------------------------------------------------------------------------
# complete-data posterior
# ---------------------------------------------------------------------------

def _arrays(ds: Dataset):
    return (np.ascontiguousarray(ds.X, dtype=np.float64), ds.z.astype(np.int64), ds.c,
            ds.y_tilde, ds.event.astype(np.int64), ds.disc.astype(np.int64))


def check_latents(ds: Dataset, i_nd, d1) -> None:
    """Raise ValidationError if latents contradict the observed data."""
    i_nd = np.asarray(i_nd)
    d1 = np.asarray(d1, dtype=float)
    if i_nd.shape != (ds.n,) or d1.shape != (ds.n,):
        raise ValidationError("latent arrays must have one entry per unit")
    nd = i_nd == 1
    if np.any(nd & ~np.isnan(d1)) or np.any(~nd & ~(d1 > 0)):
        raise ValidationError("latent i_nd=1 requires undefined d1 and i_nd=0 a positive d1")
    obs_d = (ds.z == 1) & (ds.disc == 1)
    if np.any(obs_d & (nd | (d1 != ds.d_tilde))):
        raise ValidationError("observed discontinuers must keep i_nd=0 and d1=d_tilde")
    obs_nd = (ds.z == 1) & (ds.disc == 0) & (ds.event == 1)
    if np.any(obs_nd & ~nd):
        raise ValidationError("treated units with an event and no discontinuation are ND")


def complete_loglik(theta, ds: Dataset, i_nd, d1) -> float:
    """Complete-data log likelihood given latent strata and D(1).

    Returns ``-inf`` when a latent violates the natural constraint
    ``D(1) < Y(1)`` for a treated unit or lies on the wrong side of ``C``.
    """
    theta = np.asarray(theta, dtype=float)
    K = ds.K
    if ds.n == 0:
        return 0.0
    X, z, c, y, ev, disc = _arrays(ds)
    i_nd = np.asarray(i_nd, dtype=np.int8)
    d1 = np.asarray(d1, dtype=float)
    t_aug = (z == 1) & (disc == 0) & (i_nd == 0)
    if np.any(t_aug & ~(d1 > c)):
        return -math.inf
    tot = (kernels.loglik_membership(theta, K, X, i_nd)
           + kernels.loglik_disc(theta, K, X, z, c, disc, i_nd, d1)
           + kernels.loglik_outcome(theta, K, X, z, y, ev, disc, i_nd, d1, kernels.ALL_GROUPS))
    return float(tot) if not math.isnan(tot) else -math.inf


def complete_logpost(theta, ds: Dataset, lat, cfg: PriorConfig = PriorConfig()) -> float:
    """Log prior plus complete-data log likelihood.

    ``lat`` is any object with ``i_nd`` and ``d1`` arrays (a LatentState).
    """
    if isinstance(theta, ParamVector):
        theta = theta.values
    lp = log_prior(theta, cfg, ds.K)
    if not np.isfinite(lp):
        return -math.inf
    return lp + complete_loglik(theta, ds, lat.i_nd, lat.d1)


# ---------------------------------------------------------------------------
# observed-data likelihood
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class QuadConfig:
    epsrel: float = 1e-6
    limit: int = 200


def _lse(a, b):
    return float(np.logaddexp(a, b))


def observed_loglik(theta, ds: Dataset, quad_cfg: QuadConfig = QuadConfig()) -> float:
    """Observed-data log likelihood with strata and D(1) marginalized.

    Mixture units (treated censored on both endpoints, all controls) mix the
    ND and D contributions; for controls the D part integrates over ``D(1)``
    against its Weibull density by adaptive quadrature on ``t = lam_D d^a``.

    Raises
    ------
    NumericError
        If a quadrature misses its tolerance.
    """
    if isinstance(theta, ParamVector):
        theta = theta.values
    theta = np.asarray(theta, dtype=float)
    K = ds.K
    o, ey, dl = 2 * K + 3, 2 * K + 11, 3 * K + 11
    aD = theta[K + 1]
    tot = 0.0
    for i in range(ds.n):
        x = ds.X[i]
        t = theta[0] + x @ theta[1:K + 1]
        lp_nd, lp_d = -np.logaddexp(0.0, -t), -np.logaddexp(0.0, t)
        lpD = theta[K + 2] + x @ theta[K + 3:2 * K + 3]
        xe = x @ theta[ey:ey + K]
        y, c, ev = ds.y_tilde[i], ds.c[i], ds.event[i]
        if ds.z[i] == 1:
            if ds.disc[i] == 1:
                d = ds.d_tilde[i]
                lp1 = theta[o + 3] + xe + theta[dl] * math.log(d)
                ly = nk._twb_logpdf(y, theta[o + 2], lp1, d) if ev else nk._twb_logsurv(y, theta[o + 2], lp1, d)
                tot += lp_d + nk._wb_logpdf(d, aD, lpD) + float(ly)
            elif ev == 1:
                tot += lp_nd + nk._wb_logpdf(y, theta[o], theta[o + 1] + xe)
            else:
                a = lp_nd + float(nk._wb_logsurv(c, theta[o], theta[o + 1] + xe))
                b = lp_d + float(nk._wb_logsurv(c, aD, lpD))
                tot += _lse(a, b)
        else:
            a0, b0 = theta[o + 4], theta[o + 5] + xe
            l_nd = nk._wb_logpdf(y, a0, b0) if ev else nk._wb_logsurv(y, a0, b0)
            tot += _lse(lp_nd + float(l_nd), lp_d + _control_d_integral(theta, K, xe, lpD, y, ev, quad_cfg))
    return float(tot)


def _control_d_integral(theta, K, xe, lpD, y, ev, qc: QuadConfig) -> float:
    """log of int f_{Y(0)}(y | d)^ev G_{Y(0)}(y | d)^(1-ev) f_D(d) dd."""
    o, dl = 2 * K + 3, 3 * K + 11
    aD, a0, b0, delta = theta[K + 1], theta[o + 6], theta[o + 7] + xe, theta[dl]

    def logterm(t):
        logd = (math.log(t) - lpD) / aD
        lp = b0 + delta * logd
        return float(nk._wb_logpdf(y, a0, lp) if ev else nk._wb_logsurv(y, a0, lp))

    # scale out the integrand's value at the median of t to avoid underflow
    ref = logterm(math.log(2.0))
    f = lambda t: math.exp(logterm(t) - ref - t) if t > 0 else 0.0
    val, err = 0.0, 0.0
    for lo, hi in ((0.0, 1.0), (1.0, np.inf)):
        v, e, info = integrate.quad(f, lo, hi, epsabs=0.0, epsrel=qc.epsrel, limit=qc.limit, full_output=1)[:3]
        val, err = val + v, err + e
    if not (np.isfinite(val) and val > 0) or err > 10 * qc.epsrel * val:
        raise NumericError(f"control-arm integral over D(1) failed: value={val:.4g}, error={err:.3g}")
    return ref + math.log(val)
