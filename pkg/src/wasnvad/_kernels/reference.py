"""Pure-python fallback implementations of the numeric hot kernels.

The compiled extension (`_speedups`) implements the same routines with the
same iteration math; either backend may be active, selected at import time
in `wasnvad._kernels`.
"""
import numpy as np

_EPS = 1e-12


def lasso_spg_gram(G, c, n, alpha, beta_init=None, max_iter=1000, tol=1e-10):
    """Solve min_b (0.5 b'Gb - c'b)/n + alpha*||b||_1 from Gram-cached data.

    Splits b = p - m with p, m >= 0 and runs projected gradient with a
    Barzilai-Borwein step and a non-monotone line search. Returns (b, iters).
    """
    G = np.ascontiguousarray(G, dtype=np.float64)
    c = np.ascontiguousarray(c, dtype=np.float64)
    M = G.shape[0]
    if beta_init is not None:
        p = np.maximum(beta_init, 0.0).astype(np.float64)
        m = np.maximum(-np.asarray(beta_init, dtype=np.float64), 0.0)
    else:
        p = np.zeros(M)
        m = np.zeros(M)

    def fg(p, m):
        b = p - m
        Gb = G @ b
        f = (0.5 * np.dot(b, Gb) - np.dot(c, b)) / n + alpha * (p.sum() + m.sum())
        g = (Gb - c) / n
        return f, g + alpha, -g + alpha

    f, gp, gm = fg(p, m)
    fhist = [f]
    step = 1.0 / max(np.trace(G) / n, _EPS)
    it = 0
    for it in range(max_iter):
        pn = np.maximum(p - step * gp, 0.0)
        mn = np.maximum(m - step * gm, 0.0)
        dp, dm = pn - p, mn - m
        dd = float(np.dot(dp, gp) + np.dot(dm, gm))
        if dd > -1e-300:  # no descent direction left: stationary point
            break
        fref = max(fhist[-10:])
        fn, gpn, gmn = fg(pn, mn)
        bt = 0
        while fn > fref + 1e-4 * dd and bt < 30:
            step *= 0.5
            pn = np.maximum(p - step * gp, 0.0)
            mn = np.maximum(m - step * gm, 0.0)
            dp, dm = pn - p, mn - m
            dd = float(np.dot(dp, gp) + np.dot(dm, gm))
            fn, gpn, gmn = fg(pn, mn)
            bt += 1
        zp, zm = gpn - gp, gmn - gm
        ss = float(np.dot(dp, dp) + np.dot(dm, dm))
        sz = float(np.dot(dp, zp) + np.dot(dm, zm))
        step = ss / sz if sz > 1e-300 else step * 2.0
        step = float(np.clip(step, 1e-12, 1e12))
        p, m, gp, gm, f = pn, mn, gpn, gmn, fn
        fhist.append(f)
        pgp = np.where(p > 0, gp, np.minimum(gp, 0.0))
        pgm = np.where(m > 0, gm, np.minimum(gm, 0.0))
        if max(np.max(np.abs(pgp)), np.max(np.abs(pgm))) < tol:
            break
    return p - m, it + 1


def mnica_run(Y, H, S, gamma, max_iters, tol):
    """Multiplicative non-negative updates with a decorrelation penalty.

    Iterates H <- H * (Y S') / (H S S'), S <- S * (H'Y) / (H'H S + gamma C S)
    with C = 11' - I, tracking 0.5||Y-HS||_F^2 + gamma * sum_{i<j} s_i's_j.
    Returns (H, S, objective history, converged).
    """
    Y = np.ascontiguousarray(Y, dtype=np.float64)
    H = np.ascontiguousarray(H, dtype=np.float64)
    S = np.ascontiguousarray(S, dtype=np.float64)

    def objective(H, S):
        R = Y - H @ S
        tot = S.sum(axis=0)
        pen = 0.5 * (float(tot @ tot) - float(np.einsum("ij,ij->", S, S)))
        return 0.5 * float(np.einsum("ij,ij->", R, R)) + gamma * pen

    objs = [objective(H, S)]
    converged = False
    for _ in range(max_iters):
        H *= (Y @ S.T) / np.maximum(H @ (S @ S.T), _EPS)
        # C @ S with C = 11' - I equals colsum(S) - S
        CS = S.sum(axis=0)[None, :] - S
        S *= (H.T @ Y) / np.maximum((H.T @ H) @ S + gamma * CS, _EPS)
        cur = objective(H, S)
        objs.append(cur)
        if objs[-2] - cur <= tol * max(objs[-2], 1e-300):
            converged = True
            break
    return H, S, np.array(objs), converged
