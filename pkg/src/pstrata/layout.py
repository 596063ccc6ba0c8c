"""Flat parameter vector layout shared by the likelihood, sampler and kernels.

For ``K`` covariates the natural-scale vector has ``3K + 12`` entries::

    gamma0, gamma[K]                      membership logit
    alpha_D, beta_D, eta_D[K]             discontinuation time D(1)
    alpha_nd1, beta_nd1, alpha_d1, beta_d1,
    alpha_nd0, beta_nd0, alpha_d0, beta_d0   four outcome regressions
    eta_Y[K]                              shared outcome coefficients
    delta                                 log D(1) slope in the D outcomes

Weibull shapes (the ``alpha_*``) are positive; the sampler works with their
logs.
"""
from __future__ import annotations

import numpy as np

OUTCOME_GROUPS = ("nd1", "d1", "nd0", "d0")


def n_params(K: int) -> int:
    return 3 * K + 12


def names(K: int) -> list[str]:
    out = ["gamma0"] + [f"gamma{k + 1}" for k in range(K)]
    out += ["alpha_D", "beta_D"] + [f"eta_D{k + 1}" for k in range(K)]
    for g in OUTCOME_GROUPS:
        out += [f"alpha_{g}", f"beta_{g}"]
    out += [f"eta_Y{k + 1}" for k in range(K)] + ["delta"]
    return out


def index(K: int) -> dict[str, int]:
    return {nm: i for i, nm in enumerate(names(K))}


def shape_indices(K: int) -> np.ndarray:
    """Positions of the positive Weibull shape parameters."""
    o = 2 * K + 3
    return np.array([K + 1] + [o + 2 * g for g in range(4)], dtype=np.int64)


def intercept_indices(K: int) -> np.ndarray:
    """Positions of the Weibull intercepts (beta_D and the four beta_*)."""
    o = 2 * K + 3
    return np.array([K + 2] + [o + 2 * g + 1 for g in range(4)], dtype=np.int64)


def blocks(K: int) -> list[tuple[str, np.ndarray, int]]:
    """Metropolis blocks as ``(name, indices, loglik groups)``.

    The group code says which likelihood parts depend on the block:
    ``-1`` membership, ``-2`` discontinuation, otherwise a bitmask over the
    outcome regressions (nd1=1, d1=2, nd0=4, d0=8).
    """
    o = 2 * K + 3
    ar = np.arange
    return [
        ("membership", ar(0, K + 1), -1),
        ("disc", ar(K + 1, 2 * K + 3), -2),
        ("nd1", ar(o, o + 2), 1),
        ("d1", ar(o + 2, o + 4), 2),
        ("nd0", ar(o + 4, o + 6), 4),
        ("d0", ar(o + 6, o + 8), 8),
        ("eta_y", ar(2 * K + 11, 3 * K + 11), 15),
        ("delta", ar(3 * K + 11, 3 * K + 12), 10),
    ]


def to_unconstrained(theta: np.ndarray, K: int) -> np.ndarray:
    u = np.array(theta, dtype=float, copy=True)
    s = shape_indices(K)
    u[..., s] = np.log(u[..., s])
    return u


def to_natural(u: np.ndarray, K: int) -> np.ndarray:
    theta = np.array(u, dtype=float, copy=True)
    s = shape_indices(K)
    theta[..., s] = np.exp(theta[..., s])
    return theta
