"""Compiled inner loops for the per-arm mixed model.

Subjects sharing the same observed visit times share ``S = G'G`` and hence
the q x q matrix ``M = s2 I + L' S L`` (``D = L L'``) through which the
marginal covariance ``G D G' + s2 I`` is inverted (Woodbury).  Everything
else reduces to per-pattern sums:

    cnt, sum r, sum r r', sum y'y          (alpha independent)
    sum w, sum w^2, sum w r                (recomputed for each alpha)

with ``r = G'y`` and ``w = alpha'x``.  Costs per iteration therefore scale
with the number of distinct visit patterns, not with the number of subjects.
"""

import numpy as np
from numba import njit

LOG2PI = np.log(2.0 * np.pi)

EM = 0
SCORING = 1


@njit(cache=True)
def _chol(a, out):
    """Lower Cholesky of ``a`` into ``out``; returns the log-determinant, nan if not PD."""
    q = a.shape[0]
    logdet = 0.0
    for j in range(q):
        s = a[j, j]
        for k in range(j):
            s -= out[j, k] * out[j, k]
        if not s > 0.0:
            return np.nan
        d = np.sqrt(s)
        out[j, j] = d
        logdet += 2.0 * np.log(d)
        for i in range(j + 1, q):
            s = a[i, j]
            for k in range(j):
                s -= out[i, k] * out[j, k]
            out[i, j] = s / d
        for i in range(j):
            out[i, j] = 0.0
    return logdet


@njit(cache=True)
def _chol_solve_vec(c, b):
    q = c.shape[0]
    out = np.empty(q)
    for i in range(q):
        s = b[i]
        for k in range(i):
            s -= c[i, k] * out[k]
        out[i] = s / c[i, i]
    for i in range(q - 1, -1, -1):
        s = out[i]
        for k in range(i + 1, q):
            s -= c[k, i] * out[k]
        out[i] = s / c[i, i]
    return out


@njit(cache=True)
def _solve_spd(a, b):
    """Solve a x = b for SPD ``a``; falls back to least squares when singular."""
    c = np.zeros_like(a)
    if np.isnan(_chol(a, c)):
        return np.linalg.lstsq(a, b)[0]
    return _chol_solve_vec(c, b)


@njit(cache=True)
def _mm(a, b):
    n, k = a.shape
    m = b.shape[1]
    out = np.zeros((n, m))
    for i in range(n):
        for j in range(m):
            s = 0.0
            for t in range(k):
                s += a[i, t] * b[t, j]
            out[i, j] = s
    return out


@njit(cache=True)
def _mv(a, v):
    n, k = a.shape
    out = np.zeros(n)
    for i in range(n):
        s = 0.0
        for t in range(k):
            s += a[i, t] * v[t]
        out[i] = s
    return out


@njit(cache=True)
def _tr(a, b):
    """trace(a @ b)."""
    s = 0.0
    for i in range(a.shape[0]):
        for j in range(a.shape[1]):
            s += a[i, j] * b[j, i]
    return s


@njit(cache=True)
def floored_cholesky(d, floor):
    """Cholesky factor of ``d`` with every diagonal pivot bounded below by ``floor``."""
    q = d.shape[0]
    out = np.zeros((q, q))
    for j in range(q):
        s = d[j, j]
        for k in range(j):
            s -= out[j, k] * out[j, k]
        piv = np.sqrt(s) if s > floor * floor else floor
        out[j, j] = piv
        for i in range(j + 1, q):
            s = d[i, j]
            for k in range(j):
                s -= out[i, k] * out[j, k]
            out[i, j] = s / piv
    return out


@njit(cache=True)
def _vech_terms(q):
    """Index pairs (a, b), a >= b, of the lower triangle in row-major order."""
    k = q * (q + 1) // 2
    ia = np.empty(k, dtype=np.int64)
    ib = np.empty(k, dtype=np.int64)
    t = 0
    for a in range(q):
        for b in range(a + 1):
            ia[t] = a
            ib[t] = b
            t += 1
    return ia, ib


@njit(cache=True)
def _mm_into(a, b, out):
    n, k = a.shape
    m = b.shape[1]
    for i in range(n):
        for j in range(m):
            s = 0.0
            for t in range(k):
                s += a[i, t] * b[t, j]
            out[i, j] = s


@njit(cache=True)
def _pattern_factor(S, L, s2, M, mc, Z, R, SR, B, A):
    """Woodbury pieces for one visit pattern; returns log det M (nan if not PD).

    R = L M^{-1} L', B = (I - S R) / s2 = Z'V^{-1}e map, A = G'V^{-1}G.
    """
    q = S.shape[0]
    _mm_into(S, L, SR)
    _mm_into(L.T, SR, M)
    for a in range(q):
        M[a, a] += s2
    ld = _chol(M, mc)
    if np.isnan(ld):
        return ld
    # Z = mc^{-1} L', R = Z'Z
    for j in range(q):
        for i in range(q):
            v = L[j, i]
            for k in range(i):
                v -= mc[i, k] * Z[k, j]
            Z[i, j] = v / mc[i, i]
    for i in range(q):
        for j in range(i + 1):
            v = 0.0
            for k in range(q):
                v += Z[k, i] * Z[k, j]
            R[i, j] = v
            R[j, i] = v
    _mm_into(S, R, SR)
    for i in range(q):
        for j in range(q):
            B[i, j] = ((1.0 if i == j else 0.0) - SR[i, j]) / s2
    for i in range(q):
        for j in range(i + 1):
            v = S[i, j]
            for k in range(q):
                v -= SR[i, k] * S[k, j]
            A[i, j] = v / s2
            A[j, i] = v / s2
    return ld


@njit(cache=True)
def evaluate(Sp, mp, cnt, sr, srr, syy, sw, sw2, swr, L, s2, want_derivs):
    """Profiled log-likelihood at variance parameters (L, s2).

    Returns (ok, loglik, phi, D_em, s2_em, grad, fisher) where phi is the GLS
    fixed-effect vector (beta, gamma), (D_em, s2_em) the EM update from this
    point, and grad/fisher the score and expected information of the
    profiled log-likelihood in (vech D, s2).
    """
    npat, q = Sp.shape[0], Sp.shape[1]
    nv = q * (q + 1) // 2 + 1
    Rs = np.empty((npat, q, q))
    Bs = np.empty((npat, q, q))
    As = np.empty((npat, q, q))
    ldv = np.empty(npat)
    xtx = np.zeros((2 * q, 2 * q))
    xty = np.zeros(2 * q)
    M = np.empty((q, q))
    mc = np.zeros((q, q))
    Z = np.empty((q, q))
    SR = np.empty((q, q))
    logs2 = np.log(s2)
    phi = np.full(2 * q, np.nan)
    grad = np.zeros(nv)
    fisher = np.zeros((nv, nv))
    d_em = np.zeros((q, q))
    for p in range(npat):
        ld = _pattern_factor(Sp[p], L, s2, M, mc, Z, Rs[p], SR, Bs[p], As[p])
        if np.isnan(ld):
            return False, -np.inf, phi, d_em, s2, grad, fisher
        ldv[p] = (mp[p] - q) * logs2 + ld
        B = Bs[p]
        A = As[p]
        for a in range(q):
            c0 = 0.0
            c1 = 0.0
            for b in range(q):
                c0 += B[a, b] * sr[p, b]
                c1 += B[a, b] * swr[p, b]
                xtx[a, b] += cnt[p] * A[a, b]
                xtx[a, q + b] += sw[p] * A[a, b]
                xtx[q + a, b] += sw[p] * A[a, b]
                xtx[q + a, q + b] += sw2[p] * A[a, b]
            xty[a] += c0
            xty[q + a] += c1
    phi = _solve_spd(xtx, xty)
    beta = phi[:q]
    gam = phi[q:]
    ll = 0.0
    rss = 0.0
    ntot = 0.0
    nsub = 0.0
    gd = np.zeros((q, q))
    gs = 0.0
    ia, ib = _vech_terms(q)
    nk = ia.size
    suu = np.empty((q, q))
    su_s = np.empty((q, q))
    sgg = np.empty((q, q))
    t1 = np.empty((q, q))
    t2 = np.empty((q, q))
    for p in range(npat):
        S = Sp[p]
        R = Rs[p]
        B = Bs[p]
        A = As[p]
        n = cnt[p]
        sur = 0.0
        for a in range(q):
            sur += beta[a] * sr[p, a] + gam[a] * swr[p, a]
            for b in range(q):
                suu[a, b] = (n * beta[a] * beta[b] + sw[p] * (beta[a] * gam[b] + gam[a] * beta[b])
                             + sw2[p] * gam[a] * gam[b])
        # sum g g' with g = r - S u
        _mm_into(suu, S, t1)
        _mm_into(S, t1, su_s)
        for a in range(q):
            for b in range(q):
                rs_ab = 0.0
                rs_ba = 0.0
                for k in range(q):
                    rs_ab += (sr[p, a] * beta[k] + swr[p, a] * gam[k]) * S[k, b]
                    rs_ba += (sr[p, b] * beta[k] + swr[p, b] * gam[k]) * S[k, a]
                sgg[a, b] = srr[p, a, b] - rs_ab - rs_ba + su_s[a, b]
        see = syy[p] - 2.0 * sur + _tr(S, suu)
        trrg = _tr(R, sgg)
        ll += -0.5 * (n * (mp[p] * LOG2PI + ldv[p]) + (see - trrg) / s2)
        _mm_into(S, R, SR)           # SR = S R
        _mm_into(sgg, R, t1)         # t1 = sgg R
        _mm_into(R, t1, t2)          # t2 = R sgg R
        tr_rs = 0.0
        rsrg = 0.0
        for a in range(q):
            tr_rs += SR[a, a]
        # tr(R S R sgg) = tr(SR . t1)
        rsrg = _tr(SR, t1)
        resid2 = see - 2.0 * trrg + rsrg
        for a in range(q):
            for b in range(q):
                d_em[a, b] += t2[a, b] + n * s2 * R[a, b]
        rss += resid2 + n * s2 * tr_rs
        ntot += n * mp[p]
        nsub += n
        if want_derivs:
            _mm_into(sgg, B.T, t1)
            _mm_into(B, t1, t2)      # B sgg B'
            for a in range(q):
                for b in range(q):
                    gd[a, b] += -0.5 * (n * A[a, b] - t2[a, b])
            gs += -0.5 * (n * (mp[p] - tr_rs) / s2 - resid2 / (s2 * s2))
            _mm_into(S, B.T, t1)
            _mm_into(B, t1, t2)      # B S B'
            for u in range(nk):
                a, b = ia[u], ib[u]
                for v in range(u + 1):
                    c, d = ia[v], ib[v]
                    # 0.5 * n * tr(E_u A E_v A) with E symmetric unit matrices
                    val = A[b, c] * A[d, a]
                    if a != b:
                        val += A[a, c] * A[d, b]
                    if c != d:
                        val += A[b, d] * A[c, a]
                        if a != b:
                            val += A[a, d] * A[c, b]
                    fisher[u, v] += 0.5 * n * val
                eu = t2[a, a] if a == b else t2[a, b] + t2[b, a]
                fisher[u, nv - 1] += 0.5 * n * eu
            fisher[nv - 1, nv - 1] += 0.5 * n * (mp[p] - 2.0 * tr_rs + _tr(SR, SR)) / (s2 * s2)
    if want_derivs:
        for u in range(nk):
            a, b = ia[u], ib[u]
            grad[u] = gd[a, a] if a == b else gd[a, b] + gd[b, a]
            for v in range(u):
                fisher[v, u] = fisher[u, v]
            fisher[nv - 1, u] = fisher[u, nv - 1]
        grad[nv - 1] = gs
    d_em /= nsub
    for a in range(q):
        for b in range(a):
            sym = 0.5 * (d_em[a, b] + d_em[b, a])
            d_em[a, b] = sym
            d_em[b, a] = sym
    return True, ll, phi, d_em, rss / ntot, grad, fisher


@njit(cache=True)
def _min_eig_at_least(d, c):
    """True when every eigenvalue of symmetric ``d`` is >= c (Cholesky of d - cI)."""
    q = d.shape[0]
    shifted = d.copy()
    for a in range(q):
        shifted[a, a] -= c
    return not np.isnan(_chol(shifted, np.zeros((q, q))))


@njit(cache=True)
def _project_psd(d, min_eig):
    """Nearest symmetric matrix (Frobenius) with eigenvalues >= min_eig."""
    if _min_eig_at_least(d, min_eig):
        return d
    vals, vecs = np.linalg.eigh(0.5 * (d + d.T))
    for k in range(vals.size):
        if vals[k] < min_eig:
            vals[k] = min_eig
    return (vecs * vals) @ vecs.T


@njit(cache=True)
def _face_step(D, fisher, grad, step, ia, ib, tiny):
    """Scoring step constrained to keep boundary eigenvalues of D fixed.

    For each eigenvector v of D whose eigenvalue is below ``tiny`` and which
    the free step would push further down, impose v' dD v = 0 and solve the
    equality-constrained scoring system.
    """
    if _min_eig_at_least(D, tiny):
        return step
    vals, vecs = np.linalg.eigh(D)
    q = D.shape[0]
    nv = step.size
    rows = []
    for k in range(q):
        if vals[k] >= tiny:
            continue
        c = np.zeros(nv)
        for u in range(ia.size):
            a, b = ia[u], ib[u]
            c[u] = vecs[a, k] * vecs[b, k] * (1.0 if a == b else 2.0)
        if np.dot(c, step) < 0:
            rows.append(c)
    m = len(rows)
    if m == 0:
        return step
    kkt = np.zeros((nv + m, nv + m))
    rhs = np.zeros(nv + m)
    kkt[:nv, :nv] = fisher
    rhs[:nv] = grad
    for j in range(m):
        kkt[:nv, nv + j] = rows[j]
        kkt[nv + j, :nv] = rows[j]
    sol = np.linalg.solve(kkt, rhs)
    return sol[:nv]


@njit(cache=True)
def fit(Sp, mp, cnt, sr, srr, syy, sw, sw2, swr, L0, s20, max_iter, tol, floor, method):
    """Maximize the profiled log-likelihood by EM or by Fisher scoring.

    Every eigenvalue of D and s2 are kept >= floor (which also bounds the
    Cholesky pivots of D below by sqrt(floor)).  Scoring works on
    (vech D, s2); a step leaving the admissible set is projected back onto it,
    so iterates can slide along the boundary.  Steps are halved until the
    log-likelihood does not decrease; if none qualifies an EM step is taken
    instead.

    Returns (phi, L, s2, trace, converged); ``trace[t]`` is the profiled
    log-likelihood at the t-th iterate.
    """
    q = Sp.shape[1]
    ia, ib = _vech_terms(q)
    L = L0.copy()
    s2 = s20
    trace = np.full(max_iter + 1, np.nan)
    ok, ll, phi, d_em, s2_em, grad, fisher = evaluate(
        Sp, mp, cnt, sr, srr, syy, sw, sw2, swr, L, s2, method == SCORING)
    if not ok:
        return phi, L, s2, trace[:1], False
    trace[0] = ll
    converged = False
    it = 0
    while it < max_iter:
        accepted = False
        if method == SCORING:
            fc = np.zeros_like(fisher)
            if not np.isnan(_chol(fisher, fc)):
                step = _chol_solve_vec(fc, grad)
                D = _mm(L, L.T)
                step = _face_step(D, fisher, grad, step, ia, ib, 4.0 * floor)
                lam = 1.0
                for _ in range(16):
                    Dn = D.copy()
                    for u in range(ia.size):
                        Dn[ia[u], ib[u]] += lam * step[u]
                        if ia[u] != ib[u]:
                            Dn[ib[u], ia[u]] += lam * step[u]
                    Ln = floored_cholesky(_project_psd(Dn, floor), floor)
                    s2n = max(s2 + lam * step[-1], floor)
                    okn, lln, phin, d_emn, s2_emn, gradn, fishern = evaluate(
                        Sp, mp, cnt, sr, srr, syy, sw, sw2, swr, Ln, s2n, True)
                    if okn and lln >= ll:
                        L, s2 = Ln, s2n
                        phi, d_em, s2_em, grad, fisher = phin, d_emn, s2_emn, gradn, fishern
                        accepted = True
                        break
                    lam *= 0.5
        if not accepted:
            L = floored_cholesky(_project_psd(d_em, floor), floor)
            s2 = max(s2_em, floor)
            okn, lln, phi, d_em, s2_em, grad, fisher = evaluate(
                Sp, mp, cnt, sr, srr, syy, sw, sw2, swr, L, s2, method == SCORING)
            if not okn:
                break
        it += 1
        trace[it] = lln
        delta = lln - ll
        ll = lln
        if abs(delta) < tol:
            converged = True
            break
    return phi, L, s2, trace[: it + 1], converged


@njit(cache=True)
def ols_resid_var(Sp, mp, cnt, sr, srr, syy, sw, sw2, swr):
    """Residual variance of pooled least squares on the stacked fixed design."""
    npat, q = Sp.shape[0], Sp.shape[1]
    xtx = np.zeros((2 * q, 2 * q))
    xty = np.zeros(2 * q)
    for p in range(npat):
        for a in range(q):
            xty[a] += sr[p, a]
            xty[q + a] += swr[p, a]
            for b in range(q):
                xtx[a, b] += cnt[p] * Sp[p, a, b]
                xtx[a, q + b] += sw[p] * Sp[p, a, b]
                xtx[q + a, b] += sw[p] * Sp[p, a, b]
                xtx[q + a, q + b] += sw2[p] * Sp[p, a, b]
    phi = _solve_spd(xtx, xty)
    rss = syy.sum() - 2.0 * np.dot(phi, xty) + np.dot(phi, _mv(xtx, phi))
    nobs = np.dot(cnt, mp)
    return max(rss / max(nobs - 2 * q, 1.0), 0.0)


@njit(cache=True)
def loglik_at(Sp, mp, cnt, sr, srr, syy, sw, sw2, swr, phi, L, s2):
    """Log-likelihood at arbitrary (phi, L, s2), not profiled."""
    npat, q = Sp.shape[0], Sp.shape[1]
    beta = phi[:q]
    gam = phi[q:]
    ll = 0.0
    mc = np.zeros((q, q))
    for p in range(npat):
        S = Sp[p]
        M = _mm(L.T, _mm(S, L))
        for a in range(q):
            M[a, a] += s2
        ld = _chol(M, mc)
        if np.isnan(ld):
            return -np.inf
        minv_lt = np.empty((q, q))
        for b in range(q):
            minv_lt[:, b] = _chol_solve_vec(mc, L[b, :].copy())
        R = _mm(L, minv_lt)
        n = cnt[p]
        suu = np.empty((q, q))
        sru = np.empty((q, q))
        for a in range(q):
            for b in range(q):
                suu[a, b] = (n * beta[a] * beta[b] + sw[p] * (beta[a] * gam[b] + gam[a] * beta[b])
                             + sw2[p] * gam[a] * gam[b])
                sru[a, b] = sr[p, a] * beta[b] + swr[p, a] * gam[b]
        sur = 0.0
        for a in range(q):
            sur += beta[a] * sr[p, a] + gam[a] * swr[p, a]
        srus = _mm(sru, S)
        sgg = srr[p] - srus - srus.T + _mm(S, _mm(suu, S))
        see = syy[p] - 2.0 * sur + _tr(S, suu)
        ldv = (mp[p] - q) * np.log(s2) + ld
        ll += -0.5 * (n * (mp[p] * LOG2PI + ldv) + (see - _tr(R, sgg)) / s2)
    return ll
