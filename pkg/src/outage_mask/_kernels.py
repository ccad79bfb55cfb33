"""Hot numeric kernels, each in a numba and a pure-numpy flavour.

The numba versions are used when numba imports and the environment variable
``OUTAGE_MASK_DISABLE_NUMBA`` is unset (or ``0``). Both flavours implement
the same algorithm step for step; results agree to rounding.
"""

from __future__ import annotations

import os

import numpy as np

STATUS_OPTIMAL = 0
STATUS_UNBOUNDED = 1
STATUS_ITER_LIMIT = 2

# consecutive degenerate pivots before switching to Bland's rule
_BLAND_AFTER = 50


def _env_disabled() -> bool:
    return os.environ.get("OUTAGE_MASK_DISABLE_NUMBA", "").strip().lower() not in ("", "0", "false", "no")


try:
    from numba import njit
    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and not _env_disabled()


# ---------------------------------------------------------------------------
# simplex pivoting on a dense tableau
# ---------------------------------------------------------------------------
#
# Tableau layout: rows 0..m-1 are constraints, row m holds reduced costs of a
# minimization, the last column is the right-hand side. ``basis[r]`` is the
# column basic in row r. Only columns < n_enter may enter the basis.

def simplex_iterate_numpy(T, basis, n_enter, max_iter, tol):
    m = T.shape[0] - 1
    rhs = T.shape[1] - 1
    degenerate = 0
    for it in range(max_iter):
        rc = T[m, :n_enter]
        if degenerate >= _BLAND_AFTER:
            neg = np.nonzero(rc < -tol)[0]
            if neg.size == 0:
                return STATUS_OPTIMAL, it
            c = neg[0]
        else:
            c = int(np.argmin(rc))
            if rc[c] >= -tol:
                return STATUS_OPTIMAL, it
        col = T[:m, c]
        rows = np.nonzero(col > tol)[0]
        if rows.size == 0:
            return STATUS_UNBOUNDED, it
        ratios = T[rows, rhs] / col[rows]
        best = ratios.min()
        tied = rows[ratios <= best + tol * max(1.0, abs(best))]
        r = tied[np.argmin(basis[tied])]
        if T[r, rhs] <= tol:
            degenerate += 1
        else:
            degenerate = 0
        T[r] /= T[r, c]
        factors = T[:, c].copy()
        factors[r] = 0.0
        T -= np.outer(factors, T[r])
        T[:, c] = 0.0
        T[r, c] = 1.0
        basis[r] = c
    return STATUS_ITER_LIMIT, max_iter


def _simplex_iterate_loops(T, basis, n_enter, max_iter, tol):
    m = T.shape[0] - 1
    ncol = T.shape[1]
    rhs = ncol - 1
    degenerate = 0
    for it in range(max_iter):
        c = -1
        if degenerate >= _BLAND_AFTER:
            for jj in range(n_enter):
                if T[m, jj] < -tol:
                    c = jj
                    break
        else:
            best_rc = -tol
            for jj in range(n_enter):
                if T[m, jj] < best_rc:
                    best_rc = T[m, jj]
                    c = jj
        if c < 0:
            return STATUS_OPTIMAL, it
        best = np.inf
        for i in range(m):
            if T[i, c] > tol:
                ratio = T[i, rhs] / T[i, c]
                if ratio < best:
                    best = ratio
        if best == np.inf:
            return STATUS_UNBOUNDED, it
        slack = tol * max(1.0, abs(best))
        r = -1
        for i in range(m):
            if T[i, c] > tol:
                ratio = T[i, rhs] / T[i, c]
                if ratio <= best + slack and (r < 0 or basis[i] < basis[r]):
                    r = i
        if T[r, rhs] <= tol:
            degenerate += 1
        else:
            degenerate = 0
        piv = T[r, c]
        for jj in range(ncol):
            T[r, jj] /= piv
        for i in range(m + 1):
            if i == r:
                continue
            f = T[i, c]
            if f != 0.0:
                for jj in range(ncol):
                    T[i, jj] -= f * T[r, jj]
        for i in range(m + 1):
            T[i, c] = 0.0
        T[r, c] = 1.0
        basis[r] = c
    return STATUS_ITER_LIMIT, max_iter


# ---------------------------------------------------------------------------
# residual of observations against single-direction fits
# ---------------------------------------------------------------------------
#
# For each direction column d (beta2 of a candidate line) and observation
# column b, the best scalar f minimises ||b + f d||; returns that minimum and
# f* = -d.b / d.d. Directions with ||d|| < tol are unobservable: r = ||b||,
# f* = 0.

def orthogonal_residuals_numpy(D, Bobs, tol):
    dd = np.einsum("sc,sc->c", D, D)
    obs_ok = np.sqrt(dd) >= tol
    safe = np.where(obs_ok, dd, 1.0)
    dots = D.T @ Bobs                                   # C x T
    fstar = np.where(obs_ok[:, None], -dots / safe[:, None], 0.0)
    resid = Bobs[None, :, :] + fstar[:, None, :] * D.T[:, :, None]   # C x s x T
    r = np.sqrt(np.einsum("cst,cst->ct", resid, resid))
    return r, fstar


def _orthogonal_residuals_loops(D, Bobs, tol):
    s, C = D.shape
    T = Bobs.shape[1]
    r = np.empty((C, T))
    fstar = np.zeros((C, T))
    for c in range(C):
        dd = 0.0
        for i in range(s):
            dd += D[i, c] * D[i, c]
        observable = np.sqrt(dd) >= tol
        for t in range(T):
            f = 0.0
            if observable:
                dot = 0.0
                for i in range(s):
                    dot += D[i, c] * Bobs[i, t]
                f = -dot / dd
            acc = 0.0
            for i in range(s):
                v = Bobs[i, t] + f * D[i, c]
                acc += v * v
            r[c, t] = np.sqrt(acc)
            fstar[c, t] = f
    return r, fstar


if HAVE_NUMBA:
    simplex_iterate_numba = njit(cache=True)(_simplex_iterate_loops)
    orthogonal_residuals_numba = njit(cache=True)(_orthogonal_residuals_loops)
else:  # pragma: no cover
    simplex_iterate_numba = None
    orthogonal_residuals_numba = None


def simplex_iterate(T, basis, n_enter, max_iter=10_000, tol=1e-10):
    """Run primal simplex pivots in place. Returns ``(status, iterations)``."""
    if USE_NUMBA:
        status, it = simplex_iterate_numba(T, basis, n_enter, max_iter, tol)
        return int(status), int(it)
    return simplex_iterate_numpy(T, basis, n_enter, max_iter, tol)


def orthogonal_residuals(D, Bobs, tol=1e-12):
    D = np.ascontiguousarray(D, dtype=np.float64)
    Bobs = np.ascontiguousarray(Bobs, dtype=np.float64)
    if USE_NUMBA:
        return orthogonal_residuals_numba(D, Bobs, tol)
    return orthogonal_residuals_numpy(D, Bobs, tol)


def backend() -> str:
    return "numba" if USE_NUMBA else "numpy"
