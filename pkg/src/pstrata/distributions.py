"""Weibull and left-truncated Weibull kernels, logistic membership, HPD intervals.

All Weibulls are parameterized by ``shape`` (alpha) and ``linpred``, the log of
the rate: ``f(y) = alpha y^(alpha-1) exp(linpred - e^linpred y^alpha)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate, special

from .errors import NumericError, ValidationError


@dataclass(frozen=True)
class WeibullSpec:
    shape: float
    linpred: float

    def __post_init__(self):
        if not (np.isfinite(self.shape) and self.shape > 0):
            raise ValidationError(f"Weibull shape must be positive, got {self.shape}")
        if not np.isfinite(self.linpred):
            raise ValidationError(f"Weibull linpred must be finite, got {self.linpred}")

    @property
    def rate(self) -> float:
        return math.exp(self.linpred)


@dataclass(frozen=True)
class TruncWeibullSpec:
    base: WeibullSpec
    trunc: float

    def __post_init__(self):
        if not (np.isfinite(self.trunc) and self.trunc > 0):
            raise ValidationError(f"truncation point must be positive, got {self.trunc}")


@dataclass(frozen=True)
class HpdInterval:
    lower: float
    upper: float
    level: float

    @property
    def width(self) -> float:
        return self.upper - self.lower

    def covers(self, value: float) -> bool:
        return bool(self.lower <= value <= self.upper)


def _positive(y, name="y", strict=True):
    y = np.asarray(y, dtype=float)
    bad = ~(y > 0) if strict else ~(y >= 0)
    if np.any(bad):
        raise ValidationError(f"{name} must be {'positive' if strict else 'non-negative'}")
    return y


def _out(v):
    return float(v) if np.ndim(v) == 0 else v


# ---------------------------------------------------------------------------
# Weibull
# ---------------------------------------------------------------------------

def weibull_logpdf(y, spec: WeibullSpec):
    """Log density at ``y > 0``.

    Parameters
    ----------
    y : float or array_like
        Evaluation points, strictly positive.
    spec : WeibullSpec

    Returns
    -------
    float or ndarray
    """
    y = _positive(y)
    a, lp = spec.shape, spec.linpred
    ly = np.log(y)
    return _out(math.log(a) + (a - 1.0) * ly + lp - np.exp(lp + a * ly))


def weibull_logsurv(y, spec: WeibullSpec):
    """Log survival ``-e^linpred y^alpha``; zero at the origin."""
    y = _positive(y, strict=False)
    with np.errstate(divide="ignore"):
        v = -np.exp(spec.linpred + spec.shape * np.log(y))
    return _out(np.where(y > 0, v, 0.0))


def weibull_cdf(y, spec: WeibullSpec):
    return _out(-np.expm1(weibull_logsurv(y, spec)))


def weibull_sample(spec: WeibullSpec, rng: np.random.Generator, size=None):
    """Inverse-CDF draws ``(-log U / e^linpred)^(1/alpha)``."""
    u = 1.0 - rng.random(size)  # (0, 1]
    return _out(np.exp((np.log(-np.log(u)) - spec.linpred) / spec.shape))


def weibull_mean(spec: WeibullSpec) -> float:
    """``Gamma(1 + 1/alpha) exp(-linpred/alpha)``."""
    return math.exp(special.gammaln(1.0 + 1.0 / spec.shape) - spec.linpred / spec.shape)


# ---------------------------------------------------------------------------
# left-truncated Weibull
# ---------------------------------------------------------------------------

def _excess_cumhaz(y, a, lp, d):
    # e^lp (y^a - d^a) for y >= d, stable for large arguments
    ld = math.log(d)
    return np.exp(lp + a * ld) * np.expm1(a * (np.log(y) - ld))


def trunc_weibull_logpdf(y, spec: TruncWeibullSpec):
    """Log density of the Weibull conditioned on exceeding ``spec.trunc``.

    Returns ``-inf`` below the truncation point so Metropolis ratios reject
    rather than fail.
    """
    y = _positive(y)
    a, lp, d = spec.base.shape, spec.base.linpred, spec.trunc
    yy = np.maximum(y, d)
    v = math.log(a) + (a - 1.0) * np.log(yy) + lp - _excess_cumhaz(yy, a, lp, d)
    return _out(np.where(y < d, -np.inf, v))


def trunc_weibull_logsurv(y, spec: TruncWeibullSpec):
    """Log survival; zero up to the truncation point."""
    y = _positive(y, strict=False)
    a, lp, d = spec.base.shape, spec.base.linpred, spec.trunc
    v = -_excess_cumhaz(np.maximum(y, d), a, lp, d)
    return _out(np.where(y <= d, 0.0, v))


def trunc_weibull_cdf(y, spec: TruncWeibullSpec):
    return _out(-np.expm1(trunc_weibull_logsurv(y, spec)))


def trunc_weibull_sample(spec: TruncWeibullSpec, rng: np.random.Generator, size=None):
    """Draws ``(d^alpha - log U / e^linpred)^(1/alpha)``, always ``>= trunc``."""
    a, lp, d = spec.base.shape, spec.base.linpred, spec.trunc
    u = 1.0 - rng.random(size)
    x1 = a * math.log(d)
    with np.errstate(divide="ignore"):
        x2 = np.log(-np.log(u)) - lp
    y = np.exp(np.logaddexp(x1, x2) / a)
    return _out(np.maximum(y, d))


def trunc_weibull_mean(spec: TruncWeibullSpec, epsrel: float = 1e-8) -> float:
    """Mean by adaptive quadrature of the survival function above ``trunc``.

    With ``s = e^linpred d^alpha`` the excess over ``d`` is integrated on a
    scale-free variable: ``u = lam (y^alpha - d^alpha)`` when ``s >= 1``,
    ``v = y lam^(1/alpha)`` otherwise.

    Raises
    ------
    NumericError
        If quadrature does not reach the requested tolerance.
    """
    a, lp, d = spec.base.shape, spec.base.linpred, spec.trunc
    A = 1.0 / a
    s = math.exp(lp + a * math.log(d))
    if s >= 1.0:
        # excess = d / (a s) * int_0^inf e^-u (1 + u/s)^(A-1) du
        f = lambda u: math.exp(-u + (A - 1.0) * math.log1p(u / s))
        val, err, info = _quad(f, 0.0, np.inf, epsrel)[:3]
        excess = d / (a * s) * val
    else:
        # excess = sigma * int_{v0}^inf exp(-(v^a - v0^a)) dv,  sigma = lam^(-1/a)
        v0 = s ** A
        def f(v):
            t = a * math.log(v) if v > 0 else -np.inf
            return 0.0 if t > 700.0 else math.exp(s - math.exp(t))
        val, err, info = _quad(f, v0, np.inf, epsrel)[:3]
        excess = math.exp(-lp / a) * val
    return d + excess


def _quad(f, lo, hi, epsrel):
    val, err, info = integrate.quad(f, lo, hi, epsabs=0.0, epsrel=epsrel, limit=200, full_output=1)[:3]
    if not np.isfinite(val) or err > max(10 * epsrel * abs(val), 1e-300):
        raise NumericError(
            f"quadrature did not converge: value={val:.6g}, abs error={err:.3g}, "
            f"evaluations={info.get('neval')}"
        )
    return val, err, info


# ---------------------------------------------------------------------------
# membership and HPD
# ---------------------------------------------------------------------------

def logistic_prob(x, gamma0: float, gamma) -> float:
    """``expit(gamma0 + x'gamma)``; stable for any finite linear predictor."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    gamma = np.atleast_1d(np.asarray(gamma, dtype=float))
    if x.shape[-1] != gamma.shape[0]:
        raise ValidationError(f"covariate length {x.shape[-1]} does not match coefficients {gamma.shape[0]}")
    return _out(special.expit(gamma0 + x @ gamma))


def hpd_interval(samples, level: float = 0.95) -> HpdInterval:
    """Shortest interval over sorted samples holding ``ceil(level N)`` points.

    Ties between equally short windows go to the lowest lower bound.
    """
    x = np.sort(np.asarray(samples, dtype=float).ravel())
    if x.size == 0:
        raise ValidationError("hpd_interval needs at least one sample")
    if not 0.0 < level < 1.0:
        raise ValidationError(f"level must be in (0, 1), got {level}")
    if np.isnan(x).any():
        raise ValidationError("hpd_interval got NaN samples")
    n = x.size
    m = max(1, math.ceil(level * n - 1e-9))
    widths = x[m - 1:] - x[: n - m + 1]
    i = int(np.argmin(widths))
    return HpdInterval(float(x[i]), float(x[i + m - 1]), level)
