"""Convergence summaries: batch-means MCSE/ESS and split R-hat."""
from __future__ import annotations

import numpy as np


def batch_means_mcse(x, n_batches: int | None = None) -> float:
    """Monte Carlo standard error of the mean by non-overlapping batch means."""
    x = np.asarray(x, dtype=float)
    n = x.size
    if n < 4:
        return float("nan")
    b = n_batches or max(2, int(np.sqrt(n)))
    m = n // b
    means = x[: m * b].reshape(b, m).mean(axis=1)
    return float(np.sqrt(means.var(ddof=1) * m / n))


def ess(x) -> float:
    """Effective sample size ``var(x) / mcse^2``."""
    x = np.asarray(x, dtype=float)
    se = batch_means_mcse(x)
    v = x.var(ddof=1) if x.size > 1 else 0.0
    if not np.isfinite(se) or se == 0.0:
        return float(x.size)
    return float(min(v / se ** 2, x.size * 10))


def split_rhat(chains) -> float:
    """Split R-hat over a list of equal-length 1-D draw arrays."""
    halves = []
    for c in chains:
        c = np.asarray(c, dtype=float)
        h = c.size // 2
        if h < 2:
            return float("nan")
        halves += [c[:h], c[h: 2 * h]]
    H = np.asarray(halves)
    n = H.shape[1]
    W = H.var(axis=1, ddof=1).mean()
    B = n * H.mean(axis=1).var(ddof=1)
    if W == 0.0:
        return 1.0 if B == 0.0 else float("inf")
    var_plus = (n - 1) / n * W + B / n
    return float(np.sqrt(var_plus / W))


def summarize_chains(chains) -> dict:
    """Per-parameter mean, sd, ESS (summed over chains) and split R-hat."""
    names = chains[0].names
    out = {}
    for j, nm in enumerate(names):
        cols = [c.draws[:, j] for c in chains]
        pooled = np.concatenate(cols)
        out[nm] = {"mean": float(pooled.mean()), "sd": float(pooled.std(ddof=1)) if pooled.size > 1 else 0.0,
                   "ess": float(sum(ess(c) for c in cols)), "rhat": split_rhat(cols)}
    return out
