"""Compiled per-support kernels.

Every kernel evaluates one support at a time from precomputed Gram
matrices, so a support's value never depends on how supports are batched
or distributed over workers.
"""

import math

import numpy as np
from numba import njit

OK = 0
SINGULAR = 1
PRIOR_DIVERGED = 2
PRIOR_NOCONV = 3
NONFINITE = 4

STATUS_TEXT = {
    OK: "ok",
    SINGULAR: "singular normal equations",
    PRIOR_DIVERGED: "prior scale fixed point diverged (flat likelihood in z)",
    PRIOR_NOCONV: "prior scale fixed point did not converge",
    NONFINITE: "non-finite value",
}

COND_MAX = 1e12

MODE_ESTIMATED = 0
MODE_FIXED = 1
MODE_UNIFORM = 2

CRIT_FE = 0
CRIT_CVE = 1
CRIT_TABLE = 2


# ---------------------------------------------------------------------------
# combinatorics


def binomial_table(n, k):
    """Exact C(i, j) for 0 <= i <= n, 0 <= j <= k as int64 (raises on overflow)."""
    tab = np.zeros((n + 1, k + 1), dtype=np.int64)
    for i in range(n + 1):
        for j in range(min(i, k) + 1):
            v = math.comb(i, j)
            if v >= 2**63:
                raise OverflowError(f"C({i},{j}) does not fit in int64")
            tab[i, j] = v
    return tab


@njit(cache=True, nogil=True)
def unrank_into(rank, n, k, binom, out):
    """Write the lexicographic ``rank``-th k-subset of range(n) into ``out``."""
    x = 0
    r = rank
    for i in range(k):
        while True:
            # combinations whose i-th element is x
            c = binom[n - x - 1, k - i - 1]
            if r < c:
                break
            r -= c
            x += 1
        out[i] = x
        x += 1


@njit(cache=True, nogil=True)
def rank_of(idx, n, k, binom):
    """Lexicographic rank of a sorted k-subset."""
    r = 0
    prev = -1
    for i in range(k):
        for x in range(prev + 1, idx[i]):
            r += binom[n - x - 1, k - i - 1]
        prev = idx[i]
    return r


@njit(cache=True, nogil=True)
def next_combination(idx, n, k):
    i = k - 1
    while i >= 0 and idx[i] == n - k + i:
        i -= 1
    if i < 0:
        return False
    idx[i] += 1
    for j in range(i + 1, k):
        idx[j] = idx[j - 1] + 1
    return True


# ---------------------------------------------------------------------------
# prior scale fixed point (in the eigenbasis of X_I^T W X_I)


@njit(cache=True, nogil=True)
def _dfe_dz(b, rr2, z):
    K = b.shape[0]
    d = 0.0
    for k in range(K):
        t = 1.0 / (b[k] + z)
        d += rr2[k] * t * t + t
    return -K / (2.0 * z) + 0.5 * d


@njit(cache=True, nogil=True)
def _d2fe_dz2(b, rr2, z):
    K = b.shape[0]
    d = 0.0
    for k in range(K):
        t = 1.0 / (b[k] + z)
        d += -2.0 * rr2[k] * t * t * t - t * t
    return K / (2.0 * z * z) + 0.5 * d


@njit(cache=True, nogil=True)
def initial_z(b, rr2):
    K = b.shape[0]
    mb = 0.0
    for k in range(K):
        mb += b[k]
    mb /= K
    zr = 1e-6 * mb if mb > 0 else 1e-6
    m2 = 0.0
    for k in range(K):
        t = 1.0 / (b[k] + zr)
        m2 += rr2[k] * t * t
    return K / (m2 + 1e-300)


@njit(cache=True, nogil=True)
def prior_fixed_point(b, rr2, z0, tol, max_iter):
    """Picard iteration of z = K / (mu^T mu + Tr Lambda).

    Returns (z, status, iterations).  Damping by 0.5 switches on once the
    iterates oscillate; a few Newton steps polish the converged point.
    """
    K = b.shape[0]
    # a_k = rr2_k - b_k; 2 z dFE/dz = sum_k (z a_k - b_k^2) / (b_k + z)^2
    pos = 0.0
    for k in range(K):
        pos += max(rr2[k] - b[k], 0.0)
    if pos == 0.0:
        # every term is negative for all z > 0: FE decreases monotonically in z
        return z0, PRIOR_DIVERGED, 0
    z = z0
    prev = 0.0
    damp = 1.0
    for it in range(max_iter):
        d = 0.0
        for k in range(K):
            t = 1.0 / (b[k] + z)
            d += rr2[k] * t * t + t
        step = K / d - z
        if step * prev < 0.0:
            damp = 0.5
        znew = z + damp * step
        if not (znew > 1e-300) or not np.isfinite(znew):
            return z, PRIOR_DIVERGED, it + 1
        if abs(znew - z) <= tol * z:
            z = znew
            for _ in range(3):
                g = _dfe_dz(b, rr2, z)
                h = _d2fe_dz2(b, rr2, z)
                if not (h > 0.0):
                    break
                zn = z - g / h
                if not (zn > 0.0) or abs(_dfe_dz(b, rr2, zn)) >= abs(g):
                    break
                z = zn
            return z, OK, it + 1
        z = znew
        prev = step
        if step > 0.0:
            # for all z' >= z the negative terms dominate: sum_{a<=0} |a_k| / (1 + b_k/z)^2 > sum_{a>0} a_k
            neg = 0.0
            for k in range(K):
                a = rr2[k] - b[k]
                if a <= 0.0:
                    neg += -a / (1.0 + b[k] / z) ** 2
            if neg > pos:
                return z, PRIOR_DIVERGED, it + 1
    return z, PRIOR_NOCONV, max_iter


@njit(cache=True, nogil=True)
def _diverges_above(b, rr2, z):
    """True if dFE/dz < 0 for every z' >= z (sufficient test)."""
    K = b.shape[0]
    pos = 0.0
    neg = 0.0
    for k in range(K):
        a = rr2[k] - b[k]
        if a > 0.0:
            pos += a
        else:
            neg += -a / (1.0 + b[k] / z) ** 2
    return neg > pos


@njit(cache=True, nogil=True)
def prior_root(b, rr2, z0, tol, max_iter):
    """Stationary point of FE in z reached from z0, by bracketing plus Newton.

    Walks in the direction the Picard map would move (up while dFE/dz < 0,
    down while > 0), doubling or halving z until the derivative changes
    sign, then refines with Newton steps in log z safeguarded by bisection.
    Same return convention as :func:`prior_fixed_point`.
    """
    K = b.shape[0]
    pos = 0.0
    for k in range(K):
        pos += max(rr2[k] - b[k], 0.0)
    if pos == 0.0:
        return z0, PRIOR_DIVERGED, 0
    z = z0
    g = _dfe_dz(b, rr2, z)
    if g == 0.0:
        return z, OK, 0
    it = 0
    if g < 0.0:
        lo = z
        hi = z
        while True:
            it += 1
            if it > max_iter:
                return hi, PRIOR_NOCONV, it
            if _diverges_above(b, rr2, hi) or hi > 1e300:
                return hi, PRIOR_DIVERGED, it
            lo = hi
            hi = 2.0 * hi
            if _dfe_dz(b, rr2, hi) >= 0.0:
                break
    else:
        lo = z
        hi = z
        while True:
            it += 1
            if it > max_iter or lo < 1e-300:
                return lo, PRIOR_DIVERGED, it
            hi = lo
            lo = 0.5 * lo
            if _dfe_dz(b, rr2, lo) <= 0.0:
                break
    # g(lo) < 0 <= g(hi); work in u = log z
    ulo = math.log(lo)
    uhi = math.log(hi)
    u = 0.5 * (ulo + uhi)
    for _ in range(200):
        it += 1
        z = math.exp(u)
        g = _dfe_dz(b, rr2, z)
        if g < 0.0:
            ulo = u
        else:
            uhi = u
        gu = g * z
        hu = _d2fe_dz2(b, rr2, z) * z * z + gu
        if hu > 0.0:
            un = u - gu / hu
        else:
            un = 0.5 * (ulo + uhi)
        if not (ulo < un < uhi):
            un = 0.5 * (ulo + uhi)
        if abs(un - u) <= tol or uhi - ulo <= tol:
            return math.exp(un), OK, it
        u = un
    return math.exp(u), PRIOR_NOCONV, it


@njit(cache=True, nogil=True)
def fe_from_spectrum(b, rr2, const, z, log_s_term):
    """FE = const [+ K log s] - 1/2 sum rr^2/(b+z) + 1/2 sum log(b+z), s = z^-1/2."""
    K = b.shape[0]
    acc = 0.0
    for k in range(K):
        bz = b[k] + z
        if not (bz > 0.0):
            return np.nan
        acc += -0.5 * rr2[k] / bz + 0.5 * math.log(bz)
    if log_s_term:
        acc += -0.5 * K * math.log(z)
    return const + acc


JACOBI_MAX_K = 5


@njit(cache=True, nogil=True)
def jacobi_eigh(A, V, w):
    """Eigen-decomposition of a small symmetric matrix by cyclic Jacobi rotations.

    ``A`` is overwritten; on return ``w`` holds the eigenvalues and the
    columns of ``V`` the eigenvectors.  Returns False if the sweeps did not
    reduce the off-diagonal mass to rounding level.
    """
    K = A.shape[0]
    for i in range(K):
        for j in range(K):
            V[i, j] = 0.0
        V[i, i] = 1.0
    scale = 0.0
    for i in range(K):
        for j in range(K):
            scale += A[i, j] * A[i, j]
    ok = False
    for _ in range(60):
        off = 0.0
        for i in range(K):
            for j in range(i + 1, K):
                off += A[i, j] * A[i, j]
        if off <= 1e-28 * scale:
            ok = True
            break
        for p in range(K - 1):
            for q in range(p + 1, K):
                apq = A[p, q]
                if apq == 0.0:
                    continue
                theta = (A[q, q] - A[p, p]) / (2.0 * apq)
                t = 1.0 / (abs(theta) + math.sqrt(theta * theta + 1.0))
                if theta < 0.0:
                    t = -t
                c = 1.0 / math.sqrt(t * t + 1.0)
                sn = t * c
                for k in range(K):
                    akp = A[k, p]
                    akq = A[k, q]
                    A[k, p] = c * akp - sn * akq
                    A[k, q] = sn * akp + c * akq
                for k in range(K):
                    apk = A[p, k]
                    aqk = A[q, k]
                    A[p, k] = c * apk - sn * aqk
                    A[q, k] = sn * apk + c * aqk
                A[p, q] = 0.0
                A[q, p] = 0.0
                for k in range(K):
                    vkp = V[k, p]
                    vkq = V[k, q]
                    V[k, p] = c * vkp - sn * vkq
                    V[k, q] = sn * vkp + c * vkq
    for i in range(K):
        w[i] = A[i, i]
    return ok


@njit(cache=True, nogil=True)
def eval_fe(idx, G, r, const, mode, z_fixed, tol, max_iter):
    """Free energy of one support; returns (fe, z, status)."""
    K = idx.shape[0]
    GI = np.empty((K, K))
    V = np.empty((K, K))
    b = np.empty(K)
    rI = np.empty(K)
    for a in range(K):
        rI[a] = r[idx[a]]
        for c in range(K):
            GI[a, c] = G[idx[a], idx[c]]
    # Jacobi beats the LAPACK call overhead up to about K = 5
    if K <= JACOBI_MAX_K:
        if not jacobi_eigh(GI, V, b):
            return np.nan, np.nan, NONFINITE
    else:
        b, V = np.linalg.eigh(GI)
    rr2 = np.empty(K)
    for k in range(K):
        s = 0.0
        for a in range(K):
            s += V[a, k] * rI[a]
        rr2[k] = s * s
    if mode == MODE_ESTIMATED:
        z, status, _ = prior_root(b, rr2, initial_z(b, rr2), tol, max_iter)
        if status != OK:
            return np.nan, z, status
        fe = fe_from_spectrum(b, rr2, const, z, True)
    elif mode == MODE_FIXED:
        z = z_fixed
        fe = fe_from_spectrum(b, rr2, const, z, True)
    else:
        z = z_fixed
        fe = fe_from_spectrum(b, rr2, const, z, False)
    if not np.isfinite(fe):
        return np.nan, z, NONFINITE
    return fe, z, OK


# ---------------------------------------------------------------------------
# weighted least squares and cross-validation


@njit(cache=True, nogil=True)
def chol_solve(A, rhs, K, L, out):
    """Solve A x = rhs by Cholesky; returns False if A is (numerically) singular."""
    for j in range(K):
        s = A[j, j]
        for m in range(j):
            s -= L[j, m] * L[j, m]
        if not (s > 0.0):
            return False
        L[j, j] = math.sqrt(s)
        for i in range(j + 1, K):
            t = A[i, j]
            for m in range(j):
                t -= L[i, m] * L[j, m]
            L[i, j] = t / L[j, j]
    lo = L[0, 0]
    hi = L[0, 0]
    for j in range(1, K):
        lo = min(lo, L[j, j])
        hi = max(hi, L[j, j])
    if (hi / lo) ** 2 > COND_MAX:
        return False
    for i in range(K):
        t = rhs[i]
        for m in range(i):
            t -= L[i, m] * out[m]
        out[i] = t / L[i, i]
    for i in range(K - 1, -1, -1):
        t = out[i]
        for m in range(i + 1, K):
            t -= L[m, i] * out[m]
        out[i] = t / L[i, i]
    return True


@njit(cache=True, nogil=True)
def eval_cve(idx, Gt, rt, Gv, rv, yyv, Xv, yv, wv, offsets, wsum):
    """M-fold weighted CVE of one support from per-fold Gram matrices.

    Fold is the last axis (``Gt[i, j, m]``, ``rt[i, m]``) so one gather per
    column pair serves every fold.  The held-out weighted SSE is expanded
    through the validation Gram; when that expansion cancels to below 1e-8
    of y^T W y on the fold it is recomputed row by row.  Returns
    (cve, status, failing_fold).
    """
    K = idx.shape[0]
    M = Gt.shape[2]
    At = np.empty((M, K, K))
    Av = np.empty((M, K, K))
    bt = np.empty((M, K))
    bv = np.empty((M, K))
    for a in range(K):
        ia = idx[a]
        for m in range(M):
            bt[m, a] = rt[ia, m]
            bv[m, a] = rv[ia, m]
        for c in range(K):
            ic = idx[c]
            for m in range(M):
                At[m, a, c] = Gt[ia, ic, m]
                Av[m, a, c] = Gv[ia, ic, m]
    L = np.zeros((K, K))
    beta = np.empty(K)
    total = 0.0
    for m in range(M):
        if not chol_solve(At[m], bt[m], K, L, beta):
            return np.nan, SINGULAR, m
        sse = yyv[m]
        for a in range(K):
            q = 0.0
            for c in range(K):
                q += Av[m, a, c] * beta[c]
            sse += beta[a] * (q - 2.0 * bv[m, a])
        if sse < 1e-8 * yyv[m]:
            sse = 0.0
            for mu in range(offsets[m], offsets[m + 1]):
                pred = 0.0
                for a in range(K):
                    pred += Xv[mu, idx[a]] * beta[a]
                e = yv[mu] - pred
                sse += wv[mu] * e * e
        total += sse / wsum[m]
    cve = total / M
    if not np.isfinite(cve):
        return np.nan, NONFINITE, -1
    return cve, OK, -1


# ---------------------------------------------------------------------------
# block evaluation for exhaustive search


@njit(cache=True, nogil=True)
def eval_block(start, count, n, k, binom, do_fe, do_cve,
               G, r, const, mode, z_fixed, tol, max_iter,
               Gt, rt, Gv, rv, yyv, Xv, yv, wv, offsets, wsum,
               fe_out, cve_out, status_out):
    idx = np.empty(k, dtype=np.int64)
    unrank_into(start, n, k, binom, idx)
    for t in range(count):
        st = OK
        if do_fe:
            fe, _, s1 = eval_fe(idx, G, r, const, mode, z_fixed, tol, max_iter)
            fe_out[t] = fe
            if s1 != OK:
                st = s1
        if do_cve:
            cve, s2, _ = eval_cve(idx, Gt, rt, Gv, rv, yyv, Xv, yv, wv, offsets, wsum)
            cve_out[t] = cve
            if s2 != OK and st == OK:
                st = s2
        status_out[t] = st
        if t + 1 < count:
            next_combination(idx, n, k)


# ---------------------------------------------------------------------------
# replica-exchange Monte Carlo


@njit(cache=True, nogil=True)
def _energy(active, n, crit, scratch, binom, table,
            G, r, const, mode, z_fixed, tol, max_iter,
            Gt, rt, Gv, rv, yyv, Xv, yv, wv, offsets, wsum):
    k = active.shape[0]
    for i in range(k):
        scratch[i] = active[i]
    scratch.sort()
    if crit == CRIT_FE:
        e, _, st = eval_fe(scratch, G, r, const, mode, z_fixed, tol, max_iter)
    elif crit == CRIT_CVE:
        e, st, _ = eval_cve(scratch, Gt, rt, Gv, rv, yyv, Xv, yv, wv, offsets, wsum)
    else:
        e = table[rank_of(scratch, n, k, binom)]
        st = OK if np.isfinite(e) else NONFINITE
    if st != OK:
        return np.inf
    return e


@njit(cache=True, nogil=True)
def remc_chunk(active, inactive, energies, betas, slot_of_temp,
               out_draw, in_draw, u_draw, ex_draw,
               sweep0, n_sweeps, exchange_interval, burn_in,
               rec_E, rec_offset, best_state, best_E,
               move_acc, ex_try, ex_acc,
               n, crit, binom, table,
               G, r, const, mode, z_fixed, tol, max_iter,
               Gt, rt, Gv, rv, yyv, Xv, yv, wv, offsets, wsum):
    """Advance all replicas by ``n_sweeps`` sweeps.

    Replica state ``j`` lives in ``active[j]``; ``slot_of_temp[w]`` names
    the state currently held at inverse temperature ``betas[w]``.  Random
    draws are indexed by temperature slot, so the sample path is fixed by
    the seed alone.
    """
    W = betas.shape[0]
    k = active.shape[1]
    scratch = np.empty(k, dtype=np.int64)
    prop = np.empty(k, dtype=np.int64)
    for t in range(n_sweeps):
        sweep = sweep0 + t
        for w in range(W):
            j = slot_of_temp[w]
            beta = betas[w]
            for q in range(k):
                i_out = out_draw[w, t, q]
                i_in = in_draw[w, t, q]
                for a in range(k):
                    prop[a] = active[j, a]
                prop[i_out] = inactive[j, i_in]
                e_new = _energy(prop, n, crit, scratch, binom, table,
                                G, r, const, mode, z_fixed, tol, max_iter,
                                Gt, rt, Gv, rv, yyv, Xv, yv, wv, offsets, wsum)
                d_e = e_new - energies[j]
                accept = False
                if d_e <= 0.0:
                    accept = True
                elif np.isfinite(e_new):
                    accept = u_draw[w, t, q] < math.exp(-beta * d_e)
                if accept:
                    tmp = active[j, i_out]
                    active[j, i_out] = inactive[j, i_in]
                    inactive[j, i_in] = tmp
                    energies[j] = e_new
                    move_acc[w] += 1
                    if e_new < best_E[0]:
                        best_E[0] = e_new
                        for a in range(k):
                            best_state[a] = active[j, a]
        if (sweep + 1) % exchange_interval == 0:
            parity = ((sweep + 1) // exchange_interval - 1) % 2
            for w in range(parity, W - 1, 2):
                ja = slot_of_temp[w]
                jb = slot_of_temp[w + 1]
                ex_try[w] += 1
                ea = energies[ja]
                eb = energies[jb]
                if ea == eb:
                    swap = True
                elif not (np.isfinite(ea) and np.isfinite(eb)):
                    swap = not np.isfinite(ea) and np.isfinite(eb)
                else:
                    lr = (betas[w + 1] - betas[w]) * (eb - ea)
                    swap = lr >= 0.0 or ex_draw[t, w] < math.exp(lr)
                if swap:
                    slot_of_temp[w] = jb
                    slot_of_temp[w + 1] = ja
                    ex_acc[w] += 1
        if sweep >= burn_in:
            row = rec_offset + (sweep - burn_in)
            for w in range(W):
                rec_E[row, w] = energies[slot_of_temp[w]]


# ---------------------------------------------------------------------------
# LASSO coordinate descent (covariance updates)


@njit(cache=True, nogil=True)
def lasso_cd(G, c, lam, beta, tol, max_iter):
    """Minimize 1/2 b^T G b - c^T b + lam |b|_1 in place.

    ``G = X^T W X`` and ``c = X^T W y``.  Cycles over the active set until
    it settles, then re-checks all coordinates.  Returns sweeps used, or -1
    on non-convergence.
    """
    N = G.shape[0]
    grad = c.copy()
    for j in range(N):
        if beta[j] != 0.0:
            for i in range(N):
                grad[i] -= G[i, j] * beta[j]
    sweeps = 0
    while sweeps < max_iter:
        # full pass
        dmax = 0.0
        for j in range(N):
            g = grad[j] + G[j, j] * beta[j]
            if g > lam:
                nb = (g - lam) / G[j, j]
            elif g < -lam:
                nb = (g + lam) / G[j, j]
            else:
                nb = 0.0
            d = nb - beta[j]
            if d != 0.0:
                for i in range(N):
                    grad[i] -= G[i, j] * d
                beta[j] = nb
                dmax = max(dmax, abs(d))
        sweeps += 1
        if dmax < tol:
            return sweeps
        # active-set passes
        while sweeps < max_iter:
            dmax = 0.0
            for j in range(N):
                if beta[j] == 0.0:
                    continue
                g = grad[j] + G[j, j] * beta[j]
                if g > lam:
                    nb = (g - lam) / G[j, j]
                elif g < -lam:
                    nb = (g + lam) / G[j, j]
                else:
                    nb = 0.0
                d = nb - beta[j]
                if d != 0.0:
                    for i in range(N):
                        grad[i] -= G[i, j] * d
                    beta[j] = nb
                    dmax = max(dmax, abs(d))
            sweeps += 1
            if dmax < tol:
                break
    return -1
