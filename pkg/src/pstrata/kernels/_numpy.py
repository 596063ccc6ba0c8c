"""Vectorized numpy kernels, drop-in replacements for :mod:`._numba`."""
import numpy as np
from scipy import special

NAN = np.nan


def _lin(X, theta, start, K):
    return X @ theta[start:start + K]


def _log_sigmoid(t):
    return -np.logaddexp(0.0, -t)


def _sigmoid(t):
    return special.expit(t)


def _wb_logpdf(y, a, lp):
    ly = np.log(y)
    return np.log(a) + (a - 1.0) * ly + lp - np.exp(lp + a * ly)


def _wb_logsurv(y, a, lp):
    y = np.asarray(y, dtype=float)
    with np.errstate(divide="ignore"):
        out = -np.exp(lp + a * np.log(y))
    return np.where(y > 0.0, out, 0.0)


def _excess_hazard(y, a, lp, d):
    y, d = np.broadcast_arrays(np.asarray(y, float), np.asarray(d, float))
    ld = np.log(d)
    with np.errstate(invalid="ignore", over="ignore", divide="ignore"):
        h = np.exp(lp + a * ld) * np.expm1(a * (np.log(y) - ld))
    return np.where(y > d, h, 0.0)


def _twb_logpdf(y, a, lp, d):
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(a) + (a - 1.0) * np.log(y) + lp - _excess_hazard(y, a, lp, d)
    return np.where(np.asarray(y) < d, -np.inf, out)


def _twb_logsurv(y, a, lp, d):
    return -_excess_hazard(y, a, lp, d)


def _wb_mean(a, lp):
    return np.exp(special.gammaln(1.0 + 1.0 / a) - lp / a)


def _twb_mean(a, lp, d):
    """Left-truncated Weibull mean, d + e^s Gamma(1/a, s) / (a lam^(1/a))."""
    a, lp, d = np.broadcast_arrays(np.asarray(a, float), np.asarray(lp, float), np.asarray(d, float))
    A = 1.0 / a
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        s = np.exp(lp + a * np.log(d))
        small = s < 200.0
        # regularized Q underflows past s ~ 700; switch to the asymptotic series early
        ss = np.where(small, s, 1.0)
        log_upper = np.log(special.gammaincc(A, ss)) + special.gammaln(A) + ss
        excess_small = np.exp(log_upper - np.log(a) - lp / a)
        sl = np.where(small, 1.0, s)
        term = np.ones_like(sl)
        series = np.ones_like(sl)
        for k in range(1, 25):
            term = term * (A - k) / sl
            series = series + term
        excess_large = d * series / (sl * a)
        out = d + np.where(small, excess_small, excess_large)
    return np.where(d > 0.0, out, _wb_mean(a, lp))


def upper_gamma_scaled(A, s):
    return float(np.exp(s) * special.gammaincc(A, s) * special.gamma(A))


# ---------------------------------------------------------------------------
# log-likelihood blocks
# ---------------------------------------------------------------------------

def loglik_membership(theta, K, X, i_nd):
    t = theta[0] + _lin(X, theta, 1, K)
    return float(np.sum(np.where(i_nd == 1, _log_sigmoid(t), _log_sigmoid(-t))))


def loglik_disc(theta, K, X, z, c, disc, i_nd, d1):
    aD, bD = theta[K + 1], theta[K + 2]
    isd = i_nd == 0
    if not isd.any():
        return 0.0
    lp = bD + _lin(X[isd], theta, K + 3, K)
    cens = (z[isd] == 1) & (disc[isd] == 0)
    dd = np.where(cens, 1.0, d1[isd])
    terms = np.where(cens, _wb_logsurv(c[isd], aD, lp), _wb_logpdf(dd, aD, lp))
    return float(terms.sum())


def _outcome_group(z, disc, i_nd):
    g = np.where(z == 1, np.where(i_nd == 1, 0, np.where(disc == 0, -1, 1)),
                 np.where(i_nd == 1, 2, 3))
    return g


def loglik_outcome(theta, K, X, z, y, event, disc, i_nd, d1, groups):
    o = 2 * K + 3
    delta = theta[3 * K + 11]
    g = _outcome_group(z, disc, i_nd)
    keep = (g >= 0) & (((groups >> np.maximum(g, 0)) & 1) == 1)
    if not keep.any():
        return 0.0
    g = g[keep]
    a = theta[o + 2 * g]
    lp = theta[o + 2 * g + 1] + _lin(X[keep], theta, 2 * K + 11, K)
    isd = (g == 1) | (g == 3)
    d = np.where(isd, d1[keep], 1.0)
    lp = lp + np.where(isd, delta * np.log(d), 0.0)
    yk = y[keep]
    ev = event[keep] == 1
    trunc = g == 1
    plain = np.where(ev, _wb_logpdf(yk, a, lp), _wb_logsurv(yk, a, lp))
    tr = np.where(ev, _twb_logpdf(yk, a, lp, d), _twb_logsurv(yk, a, lp, d))
    return float(np.sum(np.where(trunc, tr, plain)))


# ---------------------------------------------------------------------------
# data augmentation
# ---------------------------------------------------------------------------

def augment_treated(theta, K, X, c, idx, u_memb, u_d, i_nd, d1):
    if idx.shape[0] == 0:
        return
    o = 2 * K + 3
    aD, bD = theta[K + 1], theta[K + 2]
    Xi = X[idx]
    ci = c[idx]
    t = theta[0] + _lin(Xi, theta, 1, K)
    la = _log_sigmoid(t) + _wb_logsurv(ci, theta[o], theta[o + 1] + _lin(Xi, theta, 2 * K + 11, K))
    lpD = bD + _lin(Xi, theta, K + 3, K)
    lb = _log_sigmoid(-t) + _wb_logsurv(ci, aD, lpD)
    nd = u_memb < _sigmoid(la - lb)
    x1 = aD * np.log(ci)
    x2 = np.log(-np.log(u_d)) - lpD
    dnew = np.exp(np.logaddexp(x1, x2) / aD)
    i_nd[idx] = np.where(nd, 1, 0)
    d1[idx] = np.where(nd, NAN, dnew)


def _y0_term(theta, K, Xi, y, event, nd, d):
    o = 2 * K + 3
    xe = _lin(Xi, theta, 2 * K + 11, K)
    dd = np.where(nd == 1, 1.0, d)
    a = np.where(nd == 1, theta[o + 4], theta[o + 6])
    lp = np.where(nd == 1, theta[o + 5] + xe, theta[o + 7] + xe + theta[3 * K + 11] * np.log(dd))
    return np.where(event == 1, _wb_logpdf(y, a, lp), _wb_logsurv(y, a, lp))


def augment_control(theta, K, X, y, event, idx, u_prop, u_d, u_acc, i_nd, d1, d_grid):
    if idx.shape[0] == 0:
        return 0
    aD, bD = theta[K + 1], theta[K + 2]
    Xi = X[idx]
    p = _sigmoid(theta[0] + _lin(Xi, theta, 1, K))
    new_nd = (u_prop < p).astype(np.int8)
    lpD = bD + _lin(Xi, theta, K + 3, K)
    if d_grid.shape[0] == 0:
        dnew = np.exp((np.log(-np.log(u_d)) - lpD) / aD)
    else:
        lw = _wb_logpdf(d_grid[None, :], aD, lpD[:, None])
        w = np.exp(lw - lw.max(axis=1, keepdims=True))
        cw = np.cumsum(w, axis=1)
        target = u_d * cw[:, -1]
        k = np.minimum((cw <= target[:, None]).sum(axis=1), d_grid.shape[0] - 1)
        dnew = d_grid[k]
    dnew = np.where(new_nd == 1, NAN, dnew)
    yi, ei = y[idx], event[idx]
    ll_new = _y0_term(theta, K, Xi, yi, ei, new_nd, dnew)
    ll_old = _y0_term(theta, K, Xi, yi, ei, i_nd[idx], d1[idx])
    acc = np.log(u_acc) < ll_new - ll_old
    sel = idx[acc]
    i_nd[sel] = new_nd[acc]
    d1[sel] = dnew[acc]
    return int(acc.sum())


# ---------------------------------------------------------------------------
# estimands for one parameter draw
# ---------------------------------------------------------------------------

def nd_effect(theta, K, X, weighted):
    o = 2 * K + 3
    p = _sigmoid(theta[0] + _lin(X, theta, 1, K))
    xe = _lin(X, theta, 2 * K + 11, K)
    diff = _wb_mean(theta[o], theta[o + 1] + xe) - _wb_mean(theta[o + 4], theta[o + 5] + xe)
    w = p if weighted else np.ones_like(p)
    return float(p.mean()), float(np.sum(w * diff) / np.sum(w))


def _d_effect(theta, K, xe, d):
    o = 2 * K + 3
    shift = theta[3 * K + 11] * np.log(d)
    m1 = _twb_mean(theta[o + 2], theta[o + 3] + xe + shift, d)
    m0 = _wb_mean(theta[o + 6], theta[o + 7] + xe + shift)
    return m1 - m0


def _d_weights(theta, K, X, d, weighted):
    if not weighted:
        return np.ones(np.broadcast_shapes((X.shape[0], 1), np.shape(d)))
    q = 1.0 - _sigmoid(theta[0] + _lin(X, theta, 1, K))
    lpD = theta[K + 2] + _lin(X, theta, K + 3, K)
    return q[:, None] * np.exp(_wb_logpdf(d, theta[K + 1], lpD[:, None]))


def ace_d_curve(theta, K, X, d_grid, weighted):
    xe = _lin(X, theta, 2 * K + 11, K)[:, None]
    eff = _d_effect(theta, K, xe, d_grid[None, :])
    w = _d_weights(theta, K, X, d_grid[None, :], weighted)
    den = w.sum(axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(den > 0.0, (w * eff).sum(axis=0) / den, NAN)


def ace_d_mc(theta, K, X, u, weighted):
    aD = theta[K + 1]
    lpD = theta[K + 2] + _lin(X, theta, K + 3, K)
    d = np.exp((np.log(-np.log(u)) - lpD[:, None]) / aD)
    xe = _lin(X, theta, 2 * K + 11, K)[:, None]
    per_unit = _d_effect(theta, K, xe, d).mean(axis=1)
    if weighted:
        w = 1.0 - _sigmoid(theta[0] + _lin(X, theta, 1, K))
    else:
        w = np.ones(X.shape[0])
    den = w.sum()
    return float(np.sum(w * per_unit) / den) if den > 0.0 else NAN


def dce_nd_curve(theta, K, X, y_grid, weighted):
    o = 2 * K + 3
    xe = _lin(X, theta, 2 * K + 11, K)[:, None]
    s1 = np.exp(_wb_logsurv(y_grid[None, :], theta[o], theta[o + 1] + xe))
    s0 = np.exp(_wb_logsurv(y_grid[None, :], theta[o + 4], theta[o + 5] + xe))
    w = _sigmoid(theta[0] + _lin(X, theta, 1, K)) if weighted else np.ones(X.shape[0])
    return (w[:, None] * (s1 - s0)).sum(axis=0) / w.sum()


def dce_d_surface(theta, K, X, y_grid, d_grid, weighted):
    o = 2 * K + 3
    delta = theta[3 * K + 11]
    xe = _lin(X, theta, 2 * K + 11, K)[:, None, None]
    d = d_grid[None, None, :]
    yy = y_grid[None, :, None]
    shift = delta * np.log(d)
    s1 = np.exp(_twb_logsurv(yy, theta[o + 2], theta[o + 3] + xe + shift, d))
    s0 = np.exp(_wb_logsurv(yy, theta[o + 6], theta[o + 7] + xe + shift))
    w = _d_weights(theta, K, X, d_grid[None, :], weighted)[:, None, :]
    den = w.sum(axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(den > 0.0, (w * (s1 - s0)).sum(axis=0) / den, NAN)
