"""Compiled inner loops for mixture reduction and clustering.

These are the per-component loops that dominate a consensus run; the numpy
versions pay a call overhead per component that swamps the arithmetic.
Every kernel signals failure through its return value (numba cannot raise
the package's exception types), and the Python wrappers translate it.
"""
from __future__ import annotations

import numpy as np
from numba import njit


@njit(cache=True)
def _chol_inplace(S):
    """Lower Cholesky factor of a small SPD matrix; False if not PD."""
    d = S.shape[0]
    L = np.zeros((d, d))
    for j in range(d):
        s = S[j, j]
        for k in range(j):
            s -= L[j, k] * L[j, k]
        if not s > 0.0:
            return L, False
        L[j, j] = np.sqrt(s)
        for i in range(j + 1, d):
            t = S[i, j]
            for k in range(j):
                t -= L[i, k] * L[j, k]
            L[i, j] = t / L[j, j]
    return L, True


@njit(cache=True)
def _quad_chol(L, x):
    # x' (L L')^-1 x via forward substitution
    d = x.shape[0]
    y = np.empty(d)
    q = 0.0
    for i in range(d):
        t = x[i]
        for k in range(i):
            t -= L[i, k] * y[k]
        y[i] = t / L[i, i]
        q += y[i] * y[i]
    return q


@njit(cache=True)
def gated_distances(means, covs, rho):
    """Symmetric corrected-Mahalanobis matrix; pairs that provably exceed
    ``rho`` are +inf. Returns (D, bad) with bad = -1 or a failing row."""
    K, d = means.shape
    D = np.zeros((K, K))
    tr = np.empty(K)
    for i in range(K):
        t = 0.0
        for a in range(d):
            t += covs[i, a, a]
        tr[i] = t
    S = np.empty((d, d))
    x = np.empty(d)
    for i in range(K):
        for j in range(i + 1, K):
            dm2 = 0.0
            for a in range(d):
                x[a] = means[i, a] - means[j, a]
                dm2 += x[a] * x[a]
            # |dm|^2 / lambda_max(Pa+Pb) <= D and lambda_max <= trace
            if dm2 > rho * (tr[i] + tr[j]):
                D[i, j] = np.inf
                D[j, i] = np.inf
                continue
            for a in range(d):
                for b in range(d):
                    S[a, b] = covs[i, a, b] + covs[j, a, b]
            L, ok = _chol_inplace(S)
            if not ok:
                return D, i
            q = _quad_chol(L, x)
            D[i, j] = q
            D[j, i] = q
    return D, -1


@njit(cache=True)
def _find(parent, x):
    root = x
    while parent[root] != root:
        root = parent[root]
    while parent[x] != root:
        nxt = parent[x]
        parent[x] = root
        x = nxt
    return root


@njit(cache=True)
def greedy_union_labels(D, rho):
    """Seeded greedy clusters (strict gate) closed under the <= rho relation,
    numbered by first member."""
    K = D.shape[0]
    label = np.full(K, -1, dtype=np.int64)
    g = 0
    for seed in range(K):
        if label[seed] >= 0:
            continue
        label[seed] = g
        for j in range(seed + 1, K):
            if label[j] < 0 and D[seed, j] < rho:
                label[j] = g
        g += 1
    parent = np.arange(g)
    for i in range(K):
        for j in range(i + 1, K):
            if D[i, j] <= rho and label[i] != label[j]:
                ra = _find(parent, label[i])
                rb = _find(parent, label[j])
                if ra != rb:
                    if rb < ra:
                        ra, rb = rb, ra
                    parent[rb] = ra
    out = np.empty(K, dtype=np.int64)
    rank = np.full(g, -1, dtype=np.int64)
    nxt = 0
    for i in range(K):
        r = _find(parent, label[i])
        if rank[r] < 0:
            rank[r] = nxt
            nxt += 1
        out[i] = rank[r]
    return out


@njit(cache=True)
def merge_sorted(w, m, P, thr):
    """Greedy moment-matching merge of components sorted heaviest first.

    Returns (weights, means, covs, bad) with bad = -1 or the index (in the
    sorted order) of a component whose covariance is not positive definite.
    """
    K, d = m.shape
    alive = np.ones(K, dtype=np.bool_)
    ow = np.empty(K)
    om = np.empty((K, d))
    oP = np.empty((K, d, d))
    n = 0
    x = np.empty(d)
    grp = np.empty(K, dtype=np.int64)
    for i in range(K):
        if not alive[i]:
            continue
        L, ok = _chol_inplace(P[i])
        if not ok:
            return ow[:0], om[:0], oP[:0], i
        ng = 0
        for j in range(i, K):
            if not alive[j]:
                continue
            for a in range(d):
                x[a] = m[j, a] - m[i, a]
            if _quad_chol(L, x) <= thr:
                grp[ng] = j
                ng += 1
                alive[j] = False
        if ng == 1:
            ow[n] = w[i]
            om[n] = m[i]
            oP[n] = P[i]
            n += 1
            continue
        tot = 0.0
        mean = np.zeros(d)
        for t in range(ng):
            j = grp[t]
            tot += w[j]
            for a in range(d):
                mean[a] += w[j] * m[j, a]
        for a in range(d):
            mean[a] /= tot
        cov = np.zeros((d, d))
        for t in range(ng):
            j = grp[t]
            for a in range(d):
                x[a] = m[j, a] - mean[a]
            for a in range(d):
                for b in range(d):
                    cov[a, b] += w[j] * (P[j, a, b] + x[a] * x[b])
        ow[n] = tot
        om[n] = mean
        for a in range(d):
            for b in range(d):
                oP[n, a, b] = 0.5 * (cov[a, b] + cov[b, a]) / tot
        n += 1
    return ow[:n], om[:n], oP[:n], -1


@njit(cache=True)
def convolve_truncated(rows, n_max):
    """Convolution of the rows of ``rows``, truncated at n_max (unnormalised).

    Returns (acc, bad) with bad = -1 or the first all-zero row."""
    acc = np.zeros(n_max + 1)
    acc[0] = 1.0
    tmp = np.empty(n_max + 1)
    top = 0  # last nonzero index of acc
    for g in range(rows.shape[0]):
        r = rows[g]
        last = -1
        for n in range(min(r.shape[0], n_max + 1)):
            if r[n] != 0.0:
                last = n
        if last < 0:
            return acc, g
        new_top = min(top + last, n_max)
        for n in range(new_top + 1):
            s = 0.0
            for k in range(max(0, n - top), min(n, last) + 1):
                s += r[k] * acc[n - k]
            tmp[n] = s
        for n in range(new_top + 1):
            acc[n] = tmp[n]
        top = new_top
    return acc, -1


@njit(cache=True)
def mb_rows(R, n_max, clamp):
    """Multi-Bernoulli cardinality laws of the rows of R (zero padded)."""
    G, M = R.shape
    top = min(n_max, M)
    out = np.zeros((G, n_max + 1))
    e = np.empty(top + 1)
    for g in range(G):
        scale = 1.0
        log_miss = 0.0
        for k in range(M):
            r = min(max(R[g, k], 0.0), 1.0 - clamp)
            beta = r / (1.0 - r)
            if beta > scale:
                scale = beta
            log_miss += np.log1p(-r)
        e[:] = 0.0
        e[0] = 1.0
        for k in range(M):
            r = min(max(R[g, k], 0.0), 1.0 - clamp)
            b = r / (1.0 - r) / scale
            if b == 0.0:
                continue
            for n in range(top, 0, -1):
                e[n] += b * e[n - 1]
        ls = np.log(scale)
        tot = 0.0
        for n in range(top + 1):
            if e[n] > 0.0:
                out[g, n] = np.exp(log_miss + np.log(e[n]) + n * ls)
            tot += out[g, n]
        for n in range(top + 1):
            out[g, n] /= tot
    return out


@njit(cache=True)
def _chol_inv_logdet(P):
    """Inverse and log-determinant of an SPD matrix; ok flag."""
    d = P.shape[0]
    L, ok = _chol_inplace(P)
    inv = np.zeros((d, d))
    if not ok:
        return inv, 0.0, False
    ld = 0.0
    for i in range(d):
        ld += 2.0 * np.log(L[i, i])
    # columns of L^-1, then inv = L^-T L^-1
    Li = np.zeros((d, d))
    for c in range(d):
        for i in range(c, d):
            t = 1.0 if i == c else 0.0
            for k in range(c, i):
                t -= L[i, k] * Li[k, c]
            Li[i, c] = t / L[i, i]
    for i in range(d):
        for j in range(i, d):
            s = 0.0
            for k in range(j, d):
                s += Li[k, i] * Li[k, j]
            inv[i, j] = s
            inv[j, i] = s
    return inv, ld, True


@njit(cache=True)
def gci_pairs(wa, ma, Pa, wb, mb, Pb, ia, ib, omega):
    """Fused log-weight, mean and covariance for component pairs.

    Status: 0 ok, 1 singular input covariance, 2 singular fused information
    matrix, 3 singular agreement covariance.
    """
    Ja, d = ma.shape
    Jb = mb.shape[0]
    om1 = 1.0 - omega
    l2pi = np.log(2.0 * np.pi)
    Ia = np.empty((Ja, d, d))
    Ib = np.empty((Jb, d, d))
    lka = np.empty(Ja)
    lkb = np.empty(Jb)
    ya = np.zeros((Ja, d))
    yb = np.zeros((Jb, d))
    K = ia.shape[0]
    logw = np.empty(K)
    means = np.empty((K, d))
    covs = np.empty((K, d, d))
    for p in range(Ja):
        inv, ld, ok = _chol_inv_logdet(Pa[p])
        if not ok:
            return logw, means, covs, 1
        Ia[p] = inv
        ld += d * l2pi
        # log kappa(w, P) = (logdet(2 pi P) - d log w) / 2 - w logdet(2 pi P) / 2
        lka[p] = 0.5 * (ld - d * np.log(omega)) - 0.5 * omega * ld
        for i in range(d):
            for j in range(d):
                ya[p, i] += omega * inv[i, j] * ma[p, j]
    for q in range(Jb):
        inv, ld, ok = _chol_inv_logdet(Pb[q])
        if not ok:
            return logw, means, covs, 1
        Ib[q] = inv
        ld += d * l2pi
        lkb[q] = 0.5 * (ld - d * np.log(om1)) - 0.5 * om1 * ld
        for i in range(d):
            for j in range(d):
                yb[q, i] += om1 * inv[i, j] * mb[q, j]
    J = np.empty((d, d))
    S = np.empty((d, d))
    x = np.empty(d)
    for k in range(K):
        p = ia[k]
        q = ib[k]
        for i in range(d):
            for j in range(d):
                J[i, j] = omega * Ia[p, i, j] + om1 * Ib[q, i, j]
                S[i, j] = Pa[p, i, j] / omega + Pb[q, i, j] / om1
        P, _, ok = _chol_inv_logdet(J)
        if not ok:
            return logw, means, covs, 2
        covs[k] = P
        for i in range(d):
            t = 0.0
            for j in range(d):
                t += P[i, j] * (ya[p, j] + yb[q, j])
            means[k, i] = t
        L, ok = _chol_inplace(S)
        if not ok:
            return logw, means, covs, 3
        for i in range(d):
            x[i] = ma[p, i] - mb[q, i]
        ldS = 0.0
        for i in range(d):
            ldS += 2.0 * np.log(L[i, i])
        quad = _quad_chol(L, x)
        la = np.log(wa[p]) if wa[p] > 0.0 else -np.inf
        lb = np.log(wb[q]) if wb[q] > 0.0 else -np.inf
        logw[k] = omega * la + om1 * lb + lka[p] + lkb[q] - 0.5 * (quad + ldS + d * l2pi)
    return logw, means, covs, 0
