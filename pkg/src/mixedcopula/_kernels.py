"""Compiled inner loops for the RQMC box integrals.

Everything here works on plain arrays so it can be called from ``prange``
loops.  The public wrappers with validation live in :mod:`mvn_rqmc`.
"""
import math

import numpy as np
from numba import njit, prange

SQRT2 = math.sqrt(2.0)
INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)
W_FLOOR = 1e-300
PPF_CLAMP = 8.0
PD_RTOL = 1e-12
TINY = np.finfo(np.float64).tiny

# status codes besides a failing pivot index (>= 0)
OK = -1


@njit(cache=True)
def norm_cdf(x):
    return 0.5 * math.erfc(-x / SQRT2)


@njit(cache=True)
def norm_pdf(x):
    return INV_SQRT_2PI * math.exp(-0.5 * x * x)


@njit(cache=True)
def norm_ppf(p):
    """Wichura's AS241 (PPND16), saturating at +-8 for p outside (0, 1)."""
    if not p > 0.0:
        return -PPF_CLAMP
    if not p < 1.0:
        return PPF_CLAMP
    q = p - 0.5
    if abs(q) <= 0.425:
        r = 0.180625 - q * q
        num = (((((((2509.0809287301226727 * r + 33430.575583588128105) * r
                    + 67265.770927008700853) * r + 45921.953931549871457) * r
                  + 13731.693765509461125) * r + 1971.5909503065514427) * r
                + 133.14166789178437745) * r + 3.387132872796366608)
        den = (((((((5226.495278852545925 * r + 28729.085735721942674) * r
                    + 39307.89580009271061) * r + 21213.794301586595867) * r
                  + 5394.1960214247511077) * r + 687.1870074920579083) * r
                + 42.313330701600911252) * r + 1.0)
        return q * num / den
    r = p if q < 0.0 else 1.0 - p
    r = math.sqrt(-math.log(r))
    if r <= 5.0:
        r -= 1.6
        num = (((((((7.7454501427834140764e-4 * r + 0.0227238449892691845833) * r
                    + 0.24178072517745061177) * r + 1.27045825245236838258) * r
                  + 3.64784832476320460504) * r + 5.7694972214606914055) * r
                + 4.6303378461565452959) * r + 1.42343711074968357734)
        den = (((((((1.05075007164441684324e-9 * r + 5.475938084995344946e-4) * r
                    + 0.0151986665636164571966) * r + 0.14810397642748007459) * r
                  + 0.68976733498510000455) * r + 1.6763848301838038494) * r
                + 2.05319162663775882187) * r + 1.0)
    else:
        r -= 5.0
        num = (((((((2.01033439929228813265e-7 * r + 2.71155556874348757815e-5) * r
                    + 0.0012426609473880784386) * r + 0.026532189526576123093) * r
                  + 0.29656057182850489123) * r + 1.7848265399172913358) * r
                + 5.4637849111641143699) * r + 6.6579046435011037772)
        den = (((((((2.04426310338993978564e-15 * r + 1.4215117583164458887e-7) * r
                    + 1.8463183175100546818e-5) * r + 7.868691311456132591e-4) * r
                  + 0.0148753612908506148525) * r + 0.13692988092273580531) * r
                + 0.59983220655588793769) * r + 1.0)
    val = num / den
    return -val if q < 0.0 else val


@njit(cache=True)
def interval_prob(a, b):
    """P(a < X < b) for standard normal X, accurate in both tails."""
    if a > 0.0:
        return norm_cdf(-a) - norm_cdf(-b)
    return norm_cdf(b) - norm_cdf(a)


@njit(cache=True)
def _tail_cdfs(a, b):
    # (P(X < a), P(X < b)) or, when a > 0, the upper-tail pair (P(X > a), P(X > b))
    if a > 0.0:
        pb = 0.0 if b == np.inf else norm_cdf(-b)
        return norm_cdf(-a), pb
    pa = 0.0 if a == -np.inf else norm_cdf(a)
    return pa, norm_cdf(b)


@njit(cache=True)
def _x_pdf(x):
    # x * phi(x) with the limit 0 at +-inf
    if math.isinf(x):
        return 0.0
    return x * norm_pdf(x)


@njit(cache=True)
def truncated_moments(a, b, w):
    """First and second moments of N(0, 1) truncated to (a, b)."""
    if w < 1e-200:
        # both bounds deep in one tail; collapse onto the nearer bound
        if a > 0.0:
            m = a
        elif b < 0.0:
            m = b
        else:
            m = 0.0
        return m, m * m
    m1 = (norm_pdf(a) - norm_pdf(b)) / w
    m2 = 1.0 + (_x_pdf(a) - _x_pdf(b)) / w
    return m1, m2


@njit(cache=True)
def splitmix64(x):
    x = x + np.uint64(0x9E3779B97F4A7C15)
    z = (x ^ (x >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


@njit(cache=True)
def shift_uniform(seed, level, rand, dim):
    """Cranley-Patterson shift coordinate derived from its indices."""
    h = splitmix64(seed ^ splitmix64(np.uint64(level)))
    h = splitmix64(h ^ splitmix64(np.uint64(rand) + np.uint64(0x51ED27)))
    h = splitmix64(h ^ np.uint64(dim))
    return float(h >> np.uint64(11)) * (1.0 / 9007199254740992.0)


@njit(cache=True)
def reorder_factor(lower, upper, mean, cov, L, lo, hi, perm):
    """Greedy variable ordering with a simultaneous Cholesky factorization.

    At step ``i`` the remaining variable with the smallest conditional
    interval probability (evaluated at the truncated conditional means of
    the variables already placed) is moved to position ``i``.  Fills the
    permuted lower Cholesky factor `L`, the centred permuted bounds `lo`,
    `hi` and `perm`.  Returns ``OK`` or the original index of a variable
    whose conditional variance is not positive.
    """
    k = lower.shape[0]
    C = cov.copy()
    y = np.zeros(k)
    for j in range(k):
        lo[j] = lower[j] - mean[j]
        hi[j] = upper[j] - mean[j]
        perm[j] = j
        for l in range(k):
            L[j, l] = 0.0
    for i in range(k):
        best = -1
        best_p = 0.0
        best_s2 = 0.0
        best_a = 0.0
        best_b = 0.0
        for j in range(i, k):
            s2 = C[j, j]
            sh = 0.0
            for l in range(i):
                s2 -= L[j, l] * L[j, l]
                sh += L[j, l] * y[l]
            if not (s2 > PD_RTOL * C[j, j]) or not (C[j, j] > 0.0):
                return perm[j]
            s = math.sqrt(s2)
            aa = (lo[j] - sh) / s
            bb = (hi[j] - sh) / s
            p = interval_prob(aa, bb)
            if best < 0 or p < best_p or (p == best_p and perm[j] < perm[best]):
                best = j
                best_p = p
                best_s2 = s2
                best_a = aa
                best_b = bb
        if best != i:
            for l in range(k):
                t = C[i, l]
                C[i, l] = C[best, l]
                C[best, l] = t
            for l in range(k):
                t = C[l, i]
                C[l, i] = C[l, best]
                C[l, best] = t
            for l in range(i):
                t = L[i, l]
                L[i, l] = L[best, l]
                L[best, l] = t
            t = lo[i]
            lo[i] = lo[best]
            lo[best] = t
            t = hi[i]
            hi[i] = hi[best]
            hi[best] = t
            ti = perm[i]
            perm[i] = perm[best]
            perm[best] = ti
        d = math.sqrt(best_s2)
        L[i, i] = d
        for j in range(i + 1, k):
            v = C[j, i]
            for l in range(i):
                v -= L[j, l] * L[i, l]
            L[j, i] = v / d
        m1, _ = truncated_moments(best_a, best_b, max(best_p, W_FLOOR))
        y[i] = m1
    return OK


@njit(cache=True)
def _korobov(n, a, dim):
    z = np.empty(dim, dtype=np.int64)
    if dim > 0:
        z[0] = 1
    for j in range(1, dim):
        z[j] = (z[j - 1] * a) % n
    return z


@njit(cache=True)
def _lattice_coord(i, zj, n, shift):
    t = ((i * zj) % n) / n + shift
    t -= math.floor(t)
    return abs(2.0 * t - 1.0)  # baker's transform


@njit(cache=True)
def _start_level(sizes, n_rand, min_samples):
    for i in range(sizes.shape[0]):
        if sizes[i] * n_rand >= min_samples:
            return i
    return sizes.shape[0] - 1


@njit(cache=True)
def cdf_core(lower, upper, mean, cov, want_grad, sizes, mults, min_samples,
             max_samples, n_rand, rel_tol, abs_tol, seed, dmean, dcov):
    """Adaptive RQMC estimate of a box probability and optionally its gradient.

    The last ordered variable is integrated analytically, so the lattice has
    ``k - 1`` dimensions.  Returns ``(value, error, samples, converged,
    status)``; `dmean` and `dcov` are filled when `want_grad` is set.
    """
    k = lower.shape[0]
    L = np.empty((k, k))
    lo = np.empty(k)
    hi = np.empty(k)
    perm = np.empty(k, dtype=np.int64)
    status = reorder_factor(lower, upper, mean, cov, L, lo, hi, perm)
    if status != OK:
        return np.nan, np.nan, 0, False, status

    Ls = np.empty((k, k))
    los = np.empty(k)
    his = np.empty(k)
    for j in range(k):
        d = L[j, j]
        los[j] = lo[j] / d
        his[j] = hi[j] / d
        for l in range(j):
            Ls[j, l] = L[j, l] / d

    dim = k - 1
    x = np.zeros(k)
    fr = np.empty(n_rand)
    s1 = np.zeros(k)
    s2 = np.zeros((k, k))
    tot_s1 = np.zeros(k)
    tot_s2 = np.zeros((k, k))
    shifts = np.empty(dim)
    est = 0.0
    err = 0.0
    used = 0
    converged = False
    level = _start_level(sizes, n_rand, min_samples)
    first = True
    while level < sizes.shape[0]:
        n = sizes[level]
        if not first and used + n * n_rand > max_samples:
            break
        z = _korobov(n, mults[level], dim)
        for a in range(k):
            s1[a] = 0.0
            for b in range(k):
                s2[a, b] = 0.0
        for r in range(n_rand):
            for j in range(dim):
                shifts[j] = shift_uniform(seed, level, r, j)
            acc = 0.0
            for i in range(n):
                w = 1.0
                m1 = 0.0
                m2 = 0.0
                for j in range(k):
                    s = 0.0
                    for l in range(j):
                        s += Ls[j, l] * x[l]
                    aa = los[j] - s
                    bb = his[j] - s
                    pa, pb = _tail_cdfs(aa, bb)
                    upper_tail = aa > 0.0
                    wj = pa - pb if upper_tail else pb - pa
                    if wj < W_FLOOR:
                        wj = W_FLOOR
                    w *= wj
                    if j < dim:
                        u = _lattice_coord(i, z[j], n, shifts[j])
                        if upper_tail:
                            x[j] = -norm_ppf(pa - u * wj)
                        else:
                            x[j] = norm_ppf(pa + u * wj)
                    elif want_grad:
                        m1, m2 = truncated_moments(aa, bb, wj)
                acc += w
                if want_grad:
                    x[k - 1] = m1
                    for a in range(k - 1):
                        wa = w * x[a]
                        s1[a] += wa
                        for b in range(a + 1):
                            s2[a, b] += wa * x[b]
                    s1[k - 1] += w * m1
                    for b in range(k - 1):
                        s2[k - 1, b] += w * m1 * x[b]
                    s2[k - 1, k - 1] += w * m2
            fr[r] = acc / n
        used += n * n_rand
        lvl_est = 0.0
        for r in range(n_rand):
            lvl_est += fr[r]
        lvl_est /= n_rand
        var = 0.0
        for r in range(n_rand):
            var += (fr[r] - lvl_est) ** 2
        lvl_err = 3.0 * math.sqrt(var / (n_rand - 1) / n_rand)
        norm = 1.0 / (n * n_rand)
        if first:
            wt = 1.0
        elif lvl_err == 0.0:
            wt = 1.0
        elif err == 0.0:
            wt = 0.0
        else:
            wt = 1.0 / (1.0 + (lvl_err / err) ** 2)
        est += wt * (lvl_est - est)
        if want_grad:
            for a in range(k):
                tot_s1[a] += wt * (s1[a] * norm - tot_s1[a])
                for b in range(a + 1):
                    tot_s2[a, b] += wt * (s2[a, b] * norm - tot_s2[a, b])
        if wt > 0.0:
            err = math.sqrt(wt) * lvl_err
        first = False
        if err <= max(abs_tol, rel_tol * abs(est)):
            converged = True
            break
        level += 1

    if not est > W_FLOOR:
        # every draw hit the weight floor: the probability has underflowed
        est = max(est, TINY)
        converged = False

    if want_grad:
        for a in range(k):
            for b in range(a):
                tot_s2[b, a] = tot_s2[a, b]
        # inverse of the lower factor by forward substitution
        Li = np.zeros((k, k))
        for c in range(k):
            Li[c, c] = 1.0 / L[c, c]
            for rr in range(c + 1, k):
                v = 0.0
                for l in range(c, rr):
                    v -= L[rr, l] * Li[l, c]
                Li[rr, c] = v / L[rr, rr]
        gm = np.zeros(k)
        for a in range(k):
            v = 0.0
            for b in range(a, k):
                v += Li[b, a] * tot_s1[b]
            gm[a] = v
        for a in range(k):
            tot_s2[a, a] -= est
        # half * Li^T (S2 - est I) Li
        tmp = np.zeros((k, k))
        for a in range(k):
            for c in range(k):
                v = 0.0
                for b in range(a, k):
                    v += Li[b, a] * tot_s2[b, c]
                tmp[a, c] = v
        for a in range(k):
            dmean[perm[a]] = gm[a]
            for c in range(k):
                v = 0.0
                for b in range(c, k):
                    v += tmp[a, b] * Li[b, c]
                dcov[perm[a], perm[c]] = 0.5 * v
    return est, err, used, converged, OK


@njit(parallel=True, cache=True)
def cdf_batch(lower, upper, means, cov, want_grad, sizes, mults, min_samples,
              max_samples, n_rand, rel_tol, abs_tol, seeds, values, errors,
              samples, converged, status, dmean, dcov):
    """Row-parallel :func:`cdf_core` over boxes sharing one covariance."""
    for i in prange(lower.shape[0]):
        v, e, s, c, st = cdf_core(
            lower[i], upper[i], means[i], cov, want_grad, sizes, mults,
            min_samples, max_samples, n_rand, rel_tol, abs_tol, seeds[i],
            dmean[i], dcov[i])
        values[i] = v
        errors[i] = e
        samples[i] = s
        converged[i] = c
        status[i] = st


@njit(cache=True)
def sample_level(L, lo, hi, perm, mean, n, mult, n_rand, seed, level,
                 weights, points):
    """Weighted draws of the full latent vector for one lattice size.

    All ``k`` ordered variables are drawn (lattice of dimension ``k``).
    `weights` has shape ``(n_rand, n)`` and `points` ``(n_rand, n, k)``;
    points are returned in the original variable order.
    """
    k = lo.shape[0]
    Ls = np.empty((k, k))
    los = np.empty(k)
    his = np.empty(k)
    for j in range(k):
        d = L[j, j]
        los[j] = lo[j] / d
        his[j] = hi[j] / d
        for l in range(j):
            Ls[j, l] = L[j, l] / d
    z = _korobov(n, mult, k)
    x = np.zeros(k)
    shifts = np.empty(k)
    for r in range(n_rand):
        for j in range(k):
            shifts[j] = shift_uniform(seed, level, r, j)
        for i in range(n):
            w = 1.0
            for j in range(k):
                s = 0.0
                for l in range(j):
                    s += Ls[j, l] * x[l]
                aa = los[j] - s
                bb = his[j] - s
                pa, pb = _tail_cdfs(aa, bb)
                upper_tail = aa > 0.0
                wj = pa - pb if upper_tail else pb - pa
                if wj < W_FLOOR:
                    wj = W_FLOOR
                w *= wj
                u = _lattice_coord(i, z[j], n, shifts[j])
                if upper_tail:
                    x[j] = -norm_ppf(pa - u * wj)
                else:
                    x[j] = norm_ppf(pa + u * wj)
            weights[r, i] = w
            for j in range(k):
                v = 0.0
                for l in range(j + 1):
                    v += L[j, l] * x[l]
                points[r, i, perm[j]] = v + mean[perm[j]]
