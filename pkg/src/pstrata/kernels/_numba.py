"""Loop kernels compiled with numba.

Every kernel takes the flat natural-scale parameter vector ``theta`` and the
covariate dimension ``K``; see :mod:`pstrata.layout` for the layout.
Randomness is never drawn here: callers pass pre-drawn uniforms, so the numba
and numpy backends make identical accept/reject decisions.
"""
import math

import numpy as np
from numba import njit

NAN = np.nan
NEG_INF = -np.inf


# ---------------------------------------------------------------------------
# scalar helpers
# ---------------------------------------------------------------------------

@njit(cache=True, inline="always")
def _dot(X, i, theta, start, K):
    s = 0.0
    for k in range(K):
        s += X[i, k] * theta[start + k]
    return s


@njit(cache=True)
def _log_sigmoid(t):
    if t >= 0.0:
        return -math.log1p(math.exp(-t))
    return t - math.log1p(math.exp(t))


@njit(cache=True)
def _sigmoid(t):
    if t >= 0.0:
        return 1.0 / (1.0 + math.exp(-t))
    e = math.exp(t)
    return e / (1.0 + e)


@njit(cache=True)
def _wb_logpdf(y, a, lp):
    ly = math.log(y)
    return math.log(a) + (a - 1.0) * ly + lp - math.exp(lp + a * ly)


@njit(cache=True)
def _wb_logsurv(y, a, lp):
    if y <= 0.0:
        return 0.0
    return -math.exp(lp + a * math.log(y))


@njit(cache=True)
def _excess_hazard(y, a, lp, d):
    # e^lp (y^a - d^a), written to stay finite when both powers are huge
    if y <= d:
        return 0.0
    ld = math.log(d)
    return math.exp(lp + a * ld) * math.expm1(a * (math.log(y) - ld))


@njit(cache=True)
def _twb_logpdf(y, a, lp, d):
    if y < d:
        return NEG_INF
    return math.log(a) + (a - 1.0) * math.log(y) + lp - _excess_hazard(y, a, lp, d)


@njit(cache=True)
def _twb_logsurv(y, a, lp, d):
    return -_excess_hazard(y, a, lp, d)


@njit(cache=True)
def _wb_mean(a, lp):
    return math.exp(math.lgamma(1.0 + 1.0 / a) - lp / a)


@njit(cache=True)
def _twb_mean(a, lp, d):
    """Mean of a left-truncated Weibull via the upper incomplete gamma."""
    if d <= 0.0:
        return _wb_mean(a, lp)
    return _twb_mean_lg(a, lp, d, math.lgamma(1.0 / a))


@njit(cache=True)
def _twb_mean_lg(a, lp, d, lgA):
    """``_twb_mean`` with ``lgA = lgamma(1/a)`` precomputed by the caller."""
    A = 1.0 / a
    logs = lp + a * math.log(d)
    s = math.exp(logs)
    if s < A + 8.0:
        # series for the lower incomplete gamma, x^A * sum = e^s * gamma_lower(A, s);
        # the continued fraction converges slowly just above s = A + 1, and the
        # cancellation below s = A + 8 costs at most about 1e-12 relative
        ap = A
        tot = 1.0 / A
        term = tot
        for _ in range(2000):
            ap += 1.0
            term *= s / ap
            tot += term
            if term < tot * 1e-16:
                break
        upper = math.exp(s + lgA) - math.exp(A * logs) * tot
        return d + upper * math.exp(-math.log(a) - lp / a)
    # Lentz continued fraction: e^s Gamma(A, s) = s^A h, and s^A / lam^A = d
    b = s + 1.0 - A
    c = 1e300
    dd = 1.0 / b
    h = dd
    for i in range(1, 2000):
        an = -i * (i - A)
        b += 2.0
        dd = an * dd + b
        if abs(dd) < 1e-300:
            dd = 1e-300
        c = b + an / c
        if abs(c) < 1e-300:
            c = 1e-300
        dd = 1.0 / dd
        delta = dd * c
        h *= delta
        if abs(delta - 1.0) < 1e-15:
            break
    return d + d * h / a


@njit(cache=True)
def upper_gamma_scaled(A, s):
    """e^s * Gamma(A, s), exposed for cross-checks against scipy."""
    # reuse the truncated-mean path with a=1/A, lp chosen so lam d^a = s, d = 1
    a = 1.0 / A
    lp = math.log(s)
    m = _twb_mean(a, lp, 1.0)
    # m = 1 + e^s Gamma(A, s) / (a * lam^A), lam = s
    return (m - 1.0) * a * math.exp(A * lp)


# ---------------------------------------------------------------------------
# log-likelihood blocks
# ---------------------------------------------------------------------------

@njit(cache=True)
def loglik_membership(theta, K, X, i_nd):
    tot = 0.0
    for i in range(X.shape[0]):
        t = theta[0] + _dot(X, i, theta, 1, K)
        if i_nd[i] == 1:
            tot += _log_sigmoid(t)
        else:
            tot += _log_sigmoid(-t)
    return tot


@njit(cache=True)
def loglik_disc(theta, K, X, z, c, disc, i_nd, d1):
    aD = theta[K + 1]
    bD = theta[K + 2]
    tot = 0.0
    for i in range(X.shape[0]):
        if i_nd[i] == 1:
            continue
        lp = bD + _dot(X, i, theta, K + 3, K)
        if z[i] == 1 and disc[i] == 0:
            # treated, discontinuation censored at C
            tot += _wb_logsurv(c[i], aD, lp)
        else:
            tot += _wb_logpdf(d1[i], aD, lp)
    return tot


@njit(cache=True)
def _outcome_group(z, disc, i_nd):
    if z == 1:
        if i_nd == 1:
            return 0
        if disc == 0:
            return -1
        return 1
    if i_nd == 1:
        return 2
    return 3


@njit(cache=True)
def loglik_outcome(theta, K, X, z, y, event, disc, i_nd, d1, groups):
    o = 2 * K + 3
    ey = 2 * K + 11
    delta = theta[3 * K + 11]
    tot = 0.0
    for i in range(X.shape[0]):
        g = _outcome_group(z[i], disc[i], i_nd[i])
        if g < 0 or ((groups >> g) & 1) == 0:
            continue
        a = theta[o + 2 * g]
        lp = theta[o + 2 * g + 1] + _dot(X, i, theta, ey, K)
        if g == 1 or g == 3:
            lp += delta * math.log(d1[i])
        if g == 1:
            if event[i] == 1:
                tot += _twb_logpdf(y[i], a, lp, d1[i])
            else:
                tot += _twb_logsurv(y[i], a, lp, d1[i])
        else:
            if event[i] == 1:
                tot += _wb_logpdf(y[i], a, lp)
            else:
                tot += _wb_logsurv(y[i], a, lp)
    return tot


# ---------------------------------------------------------------------------
# data augmentation
# ---------------------------------------------------------------------------

@njit(cache=True)
def augment_treated(theta, K, X, c, idx, u_memb, u_d, i_nd, d1):
    """Gibbs draw of stratum membership for treated units censored on both
    endpoints; D draws get a discontinuation time from f_D truncated to (C, inf)."""
    o = 2 * K + 3
    ey = 2 * K + 11
    aD = theta[K + 1]
    bD = theta[K + 2]
    for j in range(idx.shape[0]):
        i = idx[j]
        t = theta[0] + _dot(X, i, theta, 1, K)
        la = _log_sigmoid(t) + _wb_logsurv(c[i], theta[o], theta[o + 1] + _dot(X, i, theta, ey, K))
        lpD = bD + _dot(X, i, theta, K + 3, K)
        lb = _log_sigmoid(-t) + _wb_logsurv(c[i], aD, lpD)
        if u_memb[j] < _sigmoid(la - lb):
            i_nd[i] = 1
            d1[i] = NAN
        else:
            i_nd[i] = 0
            e = -math.log(u_d[j])
            x1 = aD * math.log(c[i])
            x2 = math.log(e) - lpD
            m = max(x1, x2)
            d1[i] = math.exp((m + math.log(math.exp(x1 - m) + math.exp(x2 - m))) / aD)


@njit(cache=True)
def _y0_term(theta, K, X, i, y, event, nd, d):
    o = 2 * K + 3
    ey = 2 * K + 11
    if nd == 1:
        a = theta[o + 4]
        lp = theta[o + 5] + _dot(X, i, theta, ey, K)
    else:
        a = theta[o + 6]
        lp = theta[o + 7] + _dot(X, i, theta, ey, K) + theta[3 * K + 11] * math.log(d)
    if event == 1:
        return _wb_logpdf(y, a, lp)
    return _wb_logsurv(y, a, lp)


@njit(cache=True)
def augment_control(theta, K, X, y, event, idx, u_prop, u_d, u_acc, i_nd, d1, d_grid):
    """Independence Metropolis step on (I^ND, D(1)) for control units.

    Proposals come from the membership model and f_D; the prior parts cancel
    and the acceptance ratio reduces to the Y(0) likelihood ratio.  A
    non-empty ``d_grid`` restricts D(1) to those points with weights
    proportional to f_D.
    """
    aD = theta[K + 1]
    bD = theta[K + 2]
    G = d_grid.shape[0]
    accepted = 0
    for j in range(idx.shape[0]):
        i = idx[j]
        p = _sigmoid(theta[0] + _dot(X, i, theta, 1, K))
        if u_prop[j] < p:
            new_nd = 1
            new_d = NAN
        else:
            new_nd = 0
            lpD = bD + _dot(X, i, theta, K + 3, K)
            if G == 0:
                new_d = math.exp((math.log(-math.log(u_d[j])) - lpD) / aD)
            else:
                w = np.empty(G)
                mx = NEG_INF
                for k in range(G):
                    w[k] = _wb_logpdf(d_grid[k], aD, lpD)
                    if w[k] > mx:
                        mx = w[k]
                tot = 0.0
                for k in range(G):
                    w[k] = math.exp(w[k] - mx)
                    tot += w[k]
                target = u_d[j] * tot
                acc = 0.0
                new_d = d_grid[G - 1]
                for k in range(G):
                    acc += w[k]
                    if target < acc:
                        new_d = d_grid[k]
                        break
        ll_new = _y0_term(theta, K, X, i, y[i], event[i], new_nd, new_d)
        ll_old = _y0_term(theta, K, X, i, y[i], event[i], i_nd[i], d1[i])
        if math.log(u_acc[j]) < ll_new - ll_old:
            i_nd[i] = new_nd
            d1[i] = new_d
            accepted += 1
    return accepted


# ---------------------------------------------------------------------------
# estimands for one parameter draw
# ---------------------------------------------------------------------------

@njit(cache=True)
def nd_effect(theta, K, X, weighted):
    """Return (pi_ND, ACE_ND) for one draw."""
    o = 2 * K + 3
    ey = 2 * K + 11
    n = X.shape[0]
    psum = 0.0
    num = 0.0
    wsum = 0.0
    for i in range(n):
        p = _sigmoid(theta[0] + _dot(X, i, theta, 1, K))
        xe = _dot(X, i, theta, ey, K)
        diff = _wb_mean(theta[o], theta[o + 1] + xe) - _wb_mean(theta[o + 4], theta[o + 5] + xe)
        w = p if weighted else 1.0
        psum += p
        num += w * diff
        wsum += w
    return psum / n, num / wsum


@njit(cache=True)
def _d_effect(theta, K, i, xe, d, lgA1, lg0):
    """E[Y(1) - Y(0) | D(1)=d, x_i] with the shapes' log-gammas precomputed."""
    o = 2 * K + 3
    shift = theta[3 * K + 11] * math.log(d)
    a0 = theta[o + 6]
    m1 = _twb_mean_lg(theta[o + 2], theta[o + 3] + xe + shift, d, lgA1)
    m0 = math.exp(lg0 - (theta[o + 7] + xe + shift) / a0)
    return m1 - m0


@njit(cache=True)
def _d_consts(theta, K):
    o = 2 * K + 3
    return math.lgamma(1.0 / theta[o + 2]), math.lgamma(1.0 + 1.0 / theta[o + 6])


@njit(cache=True)
def ace_d_curve(theta, K, X, d_grid, weighted):
    ey = 2 * K + 11
    aD = theta[K + 1]
    bD = theta[K + 2]
    lgA1, lg0 = _d_consts(theta, K)
    G = d_grid.shape[0]
    num = np.zeros(G)
    den = np.zeros(G)
    for i in range(X.shape[0]):
        xe = _dot(X, i, theta, ey, K)
        q = 1.0 - _sigmoid(theta[0] + _dot(X, i, theta, 1, K))
        lpD = bD + _dot(X, i, theta, K + 3, K)
        for g in range(G):
            w = q * math.exp(_wb_logpdf(d_grid[g], aD, lpD)) if weighted else 1.0
            num[g] += w * _d_effect(theta, K, i, xe, d_grid[g], lgA1, lg0)
            den[g] += w
    out = np.empty(G)
    for g in range(G):
        out[g] = num[g] / den[g] if den[g] > 0.0 else NAN
    return out


@njit(cache=True)
def ace_d_mc(theta, K, X, u, weighted):
    """Monte Carlo ACE_D: u[i, m] are uniforms mapped to D(1) ~ f_D(.|x_i)."""
    ey = 2 * K + 11
    aD = theta[K + 1]
    bD = theta[K + 2]
    lgA1, lg0 = _d_consts(theta, K)
    M = u.shape[1]
    num = 0.0
    den = 0.0
    for i in range(X.shape[0]):
        xe = _dot(X, i, theta, ey, K)
        w = 1.0 - _sigmoid(theta[0] + _dot(X, i, theta, 1, K)) if weighted else 1.0
        lpD = bD + _dot(X, i, theta, K + 3, K)
        acc = 0.0
        for m in range(M):
            d = math.exp((math.log(-math.log(u[i, m])) - lpD) / aD)
            acc += _d_effect(theta, K, i, xe, d, lgA1, lg0)
        num += w * acc / M
        den += w
    return num / den if den > 0.0 else NAN


@njit(cache=True)
def dce_nd_curve(theta, K, X, y_grid, weighted):
    o = 2 * K + 3
    ey = 2 * K + 11
    Y = y_grid.shape[0]
    # y^a depends on the draw only, so it is hoisted out of the unit loop
    p1 = np.empty(Y)
    p0 = np.empty(Y)
    for j in range(Y):
        p1[j] = y_grid[j] ** theta[o]
        p0[j] = y_grid[j] ** theta[o + 4]
    num = np.zeros(Y)
    den = 0.0
    for i in range(X.shape[0]):
        xe = _dot(X, i, theta, ey, K)
        w = _sigmoid(theta[0] + _dot(X, i, theta, 1, K)) if weighted else 1.0
        den += w
        l1 = math.exp(theta[o + 1] + xe)
        l0 = math.exp(theta[o + 5] + xe)
        for j in range(Y):
            num[j] += w * (math.exp(-l1 * p1[j]) - math.exp(-l0 * p0[j]))
    return num / den


@njit(cache=True)
def dce_d_surface(theta, K, X, y_grid, d_grid, weighted):
    o = 2 * K + 3
    ey = 2 * K + 11
    delta = theta[3 * K + 11]
    aD = theta[K + 1]
    bD = theta[K + 2]
    Y = y_grid.shape[0]
    G = d_grid.shape[0]
    p1 = np.empty(Y)
    p0 = np.empty(Y)
    for j in range(Y):
        p1[j] = y_grid[j] ** theta[o + 2]
        p0[j] = y_grid[j] ** theta[o + 6]
    num = np.zeros((Y, G))
    den = np.zeros(G)
    for i in range(X.shape[0]):
        xe = _dot(X, i, theta, ey, K)
        q = 1.0 - _sigmoid(theta[0] + _dot(X, i, theta, 1, K))
        lpD = bD + _dot(X, i, theta, K + 3, K)
        for g in range(G):
            d = d_grid[g]
            w = q * math.exp(_wb_logpdf(d, aD, lpD)) if weighted else 1.0
            den[g] += w
            shift = delta * math.log(d)
            l1 = math.exp(theta[o + 3] + xe + shift)
            l0 = math.exp(theta[o + 7] + xe + shift)
            da = d ** theta[o + 2]
            for j in range(Y):
                s1 = math.exp(-l1 * (p1[j] - da)) if y_grid[j] > d else 1.0
                num[j, g] += w * (s1 - math.exp(-l0 * p0[j]))
    out = np.empty((Y, G))
    for g in range(G):
        for j in range(Y):
            out[j, g] = num[j, g] / den[g] if den[g] > 0.0 else NAN
    return out
