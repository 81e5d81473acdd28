"""Hot loops: exhaustive verification of  A<x,y> z = x <y,z>B  on basis triples.

Both kernels have a numba implementation and a pure-numpy one.  The numba path
is used when numba imports and ``CSTARBIMOD_DISABLE_NUMBA`` is unset (or "0").
The numpy path is always importable as ``*_numpy`` so the two can be compared.
"""
import os

import numpy as np

_flag = os.environ.get("CSTARBIMOD_DISABLE_NUMBA", "").strip().lower()
try:
    if _flag not in ("", "0", "false", "no"):
        raise ImportError("disabled by CSTARBIMOD_DISABLE_NUMBA")
    from numba import njit
    HAVE_NUMBA = True
except ImportError:
    HAVE_NUMBA = False


# --------------------------------------------------------------------------
# fibered form: flat coordinates, block-diagonal metric G, each coordinate
# tagged with its left point (rows) and right point (cols)


def fibered_identity_residual_numpy(G, rows, cols):
    N = G.shape[0]
    if N == 0:
        return 0.0, -1, -1, -1
    i = np.arange(N)[:, None, None]
    j = np.arange(N)[None, :, None]
    k = np.arange(N)[None, None, :]
    lhs = G.T[:, :, None] * ((rows[i] == rows[k]) & (rows[j] == rows[k]))
    rhs = G[None, :, :] * ((cols[j] == cols[i]) & (cols[k] == cols[i]))
    res = np.where(i == k, np.abs(lhs - rhs), np.maximum(np.abs(lhs), np.abs(rhs)))
    flat = int(np.argmax(res))
    a, b, c = np.unravel_index(flat, res.shape)
    return float(res.flat[flat]), int(a), int(b), int(c)


def _fibered_identity_residual_loop(G, rows, cols):
    N = G.shape[0]
    worst = 0.0
    wi = wj = wk = -1
    for i in range(N):
        for j in range(N):
            gji = G[j, i]
            for k in range(N):
                lhs = gji if (rows[i] == rows[k] and rows[j] == rows[k]) else 0j
                rhs = G[j, k] if (cols[j] == cols[i] and cols[k] == cols[i]) else 0j
                if i == k:
                    r = abs(lhs - rhs)
                else:
                    r = max(abs(lhs), abs(rhs))
                if r > worst or wi < 0:
                    worst = r
                    wi, wj, wk = i, j, k
    return worst, wi, wj, wk


# --------------------------------------------------------------------------
# presented form: idempotents P (left), Q (right) and Gram forms L, R,
# all stacked as (points, D, D)


def presented_identity_residual_numpy(L, P, R, Q):
    D = P.shape[1]
    worst, witness = 0.0, (-1, -1, -1)
    for j in range(D):
        lhs = np.einsum("pi,plk->ilk", L[:, j, :], P)
        rhs = np.einsum("pk,pli->ilk", R[:, j, :], Q)
        err = np.max(np.abs(lhs - rhs), axis=1)
        flat = int(np.argmax(err))
        if err.flat[flat] > worst or witness[0] < 0:
            i, k = np.unravel_index(flat, err.shape)
            worst, witness = float(err.flat[flat]), (int(i), j, int(k))
    return (worst,) + witness


def _presented_identity_residual_loop(L, P, R, Q):
    m, D = P.shape[0], P.shape[1]
    n = Q.shape[0]
    worst = 0.0
    wi = wj = wk = -1
    for i in range(D):
        for j in range(D):
            for k in range(D):
                r = 0.0
                for l in range(D):
                    s = 0j
                    for p in range(m):
                        s += L[p, j, i] * P[p, l, k]
                    for q in range(n):
                        s -= R[q, j, k] * Q[q, l, i]
                    if abs(s) > r:
                        r = abs(s)
                if r > worst or wi < 0:
                    worst = r
                    wi, wj, wk = i, j, k
    return worst, wi, wj, wk


if HAVE_NUMBA:
    _fib = njit(cache=True)(_fibered_identity_residual_loop)
    _pres = njit(cache=True)(_presented_identity_residual_loop)

    def fibered_identity_residual(G, rows, cols):
        if G.shape[0] == 0:
            return 0.0, -1, -1, -1
        r, i, j, k = _fib(np.ascontiguousarray(G, dtype=np.complex128),
                          np.ascontiguousarray(rows, dtype=np.int64),
                          np.ascontiguousarray(cols, dtype=np.int64))
        return float(r), int(i), int(j), int(k)

    def presented_identity_residual(L, P, R, Q):
        r, i, j, k = _pres(*(np.ascontiguousarray(x, dtype=np.complex128)
                             for x in (L, P, R, Q)))
        return float(r), int(i), int(j), int(k)
else:
    fibered_identity_residual = fibered_identity_residual_numpy
    presented_identity_residual = presented_identity_residual_numpy

BACKEND = "numba" if HAVE_NUMBA else "numpy"
