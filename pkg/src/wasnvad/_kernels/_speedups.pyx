# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled hot kernels: Gram-cached lasso SPG and MNICA update loops.

Must stay numerically interchangeable with `reference.py`.
"""
import numpy as np

cimport numpy as cnp
from libc.math cimport fabs

cnp.import_array()

cdef double _EPS = 1e-12


cdef double _eval_fg(double[:, ::1] G, double[::1] c, double n, double alpha,
                     double[::1] p, double[::1] m,
                     double[::1] gp, double[::1] gm, double[::1] Gb) nogil:
    cdef Py_ssize_t M = G.shape[0]
    cdef Py_ssize_t i, j
    cdef double bi, acc, f = 0.0, quad = 0.0, lin = 0.0, l1 = 0.0, g
    for i in range(M):
        acc = 0.0
        for j in range(M):
            acc += G[i, j] * (p[j] - m[j])
        Gb[i] = acc
    for i in range(M):
        bi = p[i] - m[i]
        quad += bi * Gb[i]
        lin += c[i] * bi
        l1 += p[i] + m[i]
        g = (Gb[i] - c[i]) / n
        gp[i] = g + alpha
        gm[i] = -g + alpha
    f = (0.5 * quad - lin) / n + alpha * l1
    return f


def lasso_spg_gram(G, c, double n, double alpha, beta_init=None,
                   int max_iter=1000, double tol=1e-10):
    """Compiled counterpart of reference.lasso_spg_gram. Returns (b, iters)."""
    cdef cnp.ndarray[cnp.float64_t, ndim=2, mode="c"] G_ = \
        np.ascontiguousarray(G, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1, mode="c"] c_ = \
        np.ascontiguousarray(c, dtype=np.float64)
    cdef Py_ssize_t M = G_.shape[0]
    cdef cnp.ndarray[cnp.float64_t, ndim=1] p_ = np.zeros(M)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] m_ = np.zeros(M)
    if beta_init is not None:
        b0 = np.asarray(beta_init, dtype=np.float64)
        p_ = np.maximum(b0, 0.0)
        m_ = np.maximum(-b0, 0.0)
    cdef double[::1] p = p_, m = m_
    cdef double[::1] gp = np.empty(M), gm = np.empty(M), Gb = np.empty(M)
    cdef double[::1] pn = np.empty(M), mn = np.empty(M)
    cdef double[::1] gpn = np.empty(M), gmn = np.empty(M)
    cdef double[:, ::1] Gv = G_
    cdef double[::1] cv = c_

    cdef double fhist[10]
    cdef int hist_len = 1, hist_pos = 0
    cdef double f, fn, fref, step, dd, ss, sz, tr, pg, worst
    cdef Py_ssize_t i, it = 0, bt, hi

    tr = 0.0
    for i in range(M):
        tr += Gv[i, i]
    step = 1.0 / (tr / n if tr / n > _EPS else _EPS)

    f = _eval_fg(Gv, cv, n, alpha, p, m, gp, gm, Gb)
    fhist[0] = f

    for it in range(max_iter):
        for i in range(M):
            pn[i] = p[i] - step * gp[i]
            if pn[i] < 0.0:
                pn[i] = 0.0
            mn[i] = m[i] - step * gm[i]
            if mn[i] < 0.0:
                mn[i] = 0.0
        dd = 0.0
        for i in range(M):
            dd += (pn[i] - p[i]) * gp[i] + (mn[i] - m[i]) * gm[i]
        if dd > -1e-300:
            break
        fref = fhist[0]
        for hi in range(1, hist_len):
            if fhist[hi] > fref:
                fref = fhist[hi]
        fn = _eval_fg(Gv, cv, n, alpha, pn, mn, gpn, gmn, Gb)
        bt = 0
        while fn > fref + 1e-4 * dd and bt < 30:
            step *= 0.5
            for i in range(M):
                pn[i] = p[i] - step * gp[i]
                if pn[i] < 0.0:
                    pn[i] = 0.0
                mn[i] = m[i] - step * gm[i]
                if mn[i] < 0.0:
                    mn[i] = 0.0
            dd = 0.0
            for i in range(M):
                dd += (pn[i] - p[i]) * gp[i] + (mn[i] - m[i]) * gm[i]
            fn = _eval_fg(Gv, cv, n, alpha, pn, mn, gpn, gmn, Gb)
            bt += 1
        ss = 0.0
        sz = 0.0
        for i in range(M):
            ss += (pn[i] - p[i]) ** 2 + (mn[i] - m[i]) ** 2
            sz += (pn[i] - p[i]) * (gpn[i] - gp[i]) + (mn[i] - m[i]) * (gmn[i] - gm[i])
        if sz > 1e-300:
            step = ss / sz
        else:
            step = step * 2.0
        if step < 1e-12:
            step = 1e-12
        elif step > 1e12:
            step = 1e12
        for i in range(M):
            p[i] = pn[i]
            m[i] = mn[i]
            gp[i] = gpn[i]
            gm[i] = gmn[i]
        f = fn
        if hist_len < 10:
            fhist[hist_len] = f
            hist_len += 1
        else:
            fhist[hist_pos] = f
            hist_pos = (hist_pos + 1) % 10
        worst = 0.0
        for i in range(M):
            if p[i] > 0.0:
                pg = fabs(gp[i])
            else:
                pg = fabs(gp[i]) if gp[i] < 0.0 else 0.0
            if pg > worst:
                worst = pg
            if m[i] > 0.0:
                pg = fabs(gm[i])
            else:
                pg = fabs(gm[i]) if gm[i] < 0.0 else 0.0
            if pg > worst:
                worst = pg
        if worst < tol:
            break
    out = np.empty(M)
    for i in range(M):
        out[i] = p[i] - m[i]
    return out, int(it + 1)


def mnica_run(Y, H, S, double gamma, int max_iters, double tol):
    """Compiled counterpart of reference.mnica_run.

    Returns (H, S, objective history, converged).
    """
    cdef cnp.ndarray[cnp.float64_t, ndim=2, mode="c"] Y_ = \
        np.ascontiguousarray(Y, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=2, mode="c"] H_ = \
        np.ascontiguousarray(H, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=2, mode="c"] S_ = \
        np.ascontiguousarray(S, dtype=np.float64)
    cdef Py_ssize_t M = Y_.shape[0], N = Y_.shape[1], q = H_.shape[1]
    cdef double[:, ::1] Yv = Y_, Hv = H_, Sv = S_
    cdef cnp.ndarray[cnp.float64_t, ndim=2] SST_ = np.empty((q, q))
    cdef cnp.ndarray[cnp.float64_t, ndim=2] HTH_ = np.empty((q, q))
    cdef cnp.ndarray[cnp.float64_t, ndim=2] NUM_ = np.empty((M, q))
    cdef cnp.ndarray[cnp.float64_t, ndim=2] DEN_ = np.empty((M, q))
    cdef cnp.ndarray[cnp.float64_t, ndim=2] QN_ = np.empty((q, N))
    cdef cnp.ndarray[cnp.float64_t, ndim=2] QD_ = np.empty((q, N))
    cdef double[:, ::1] SST = SST_, HTH = HTH_, NUM = NUM_, DEN = DEN_
    cdef double[:, ::1] QN = QN_, QD = QD_
    cdef Py_ssize_t i, j, k, t, it
    cdef double acc, cur, prev, colsum, denv
    objs = []

    prev = _mnica_objective(Yv, Hv, Sv, gamma)
    objs.append(prev)
    converged = False
    for it in range(max_iters):
        # H <- H * (Y S') / (H (S S'))
        for i in range(q):
            for j in range(q):
                acc = 0.0
                for t in range(N):
                    acc += Sv[i, t] * Sv[j, t]
                SST[i, j] = acc
        for k in range(M):
            for j in range(q):
                acc = 0.0
                for t in range(N):
                    acc += Yv[k, t] * Sv[j, t]
                NUM[k, j] = acc
                acc = 0.0
                for i in range(q):
                    acc += Hv[k, i] * SST[i, j]
                DEN[k, j] = acc if acc > _EPS else _EPS
        for k in range(M):
            for j in range(q):
                Hv[k, j] *= NUM[k, j] / DEN[k, j]
        # S <- S * (H'Y) / (H'H S + gamma (colsum(S) - S))
        for i in range(q):
            for j in range(q):
                acc = 0.0
                for k in range(M):
                    acc += Hv[k, i] * Hv[k, j]
                HTH[i, j] = acc
        for i in range(q):
            for t in range(N):
                acc = 0.0
                for k in range(M):
                    acc += Hv[k, i] * Yv[k, t]
                QN[i, t] = acc
        for t in range(N):
            colsum = 0.0
            for i in range(q):
                colsum += Sv[i, t]
            for i in range(q):
                acc = 0.0
                for j in range(q):
                    acc += HTH[i, j] * Sv[j, t]
                denv = acc + gamma * (colsum - Sv[i, t])
                QD[i, t] = denv if denv > _EPS else _EPS
        for i in range(q):
            for t in range(N):
                Sv[i, t] *= QN[i, t] / QD[i, t]
        cur = _mnica_objective(Yv, Hv, Sv, gamma)
        objs.append(cur)
        if prev - cur <= tol * (prev if prev > 1e-300 else 1e-300):
            converged = True
            break
        prev = cur
    return H_, S_, np.array(objs), converged


cdef double _mnica_objective(double[:, ::1] Y, double[:, ::1] H,
                             double[:, ::1] S, double gamma) nogil:
    cdef Py_ssize_t M = Y.shape[0], N = Y.shape[1], q = H.shape[1]
    cdef Py_ssize_t k, t, i
    cdef double acc, r, resid = 0.0, tot, tot2 = 0.0, diag2 = 0.0
    for k in range(M):
        for t in range(N):
            acc = 0.0
            for i in range(q):
                acc += H[k, i] * S[i, t]
            r = Y[k, t] - acc
            resid += r * r
    for t in range(N):
        tot = 0.0
        for i in range(q):
            tot += S[i, t]
            diag2 += S[i, t] * S[i, t]
        tot2 += tot * tot
    return 0.5 * resid + gamma * 0.5 * (tot2 - diag2)
