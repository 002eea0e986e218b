"""Symmetric tridiagonal LDL^T elimination and the fused time-step kernel."""

from __future__ import annotations

import numpy as np
from numba import njit

__all__ = ["ldl_factor", "ldl_solve", "fused_step"]


@njit(cache=True)
def ldl_factor(diag, off):
    """Factor ``K = L D L^T``; returns ``(l, d)`` with ``l[0]`` unused.

    Returns ``d`` containing a non-positive pivot if ``K`` is not positive
    definite; callers check.
    """
    n = diag.size
    l = np.zeros(n)
    d = np.empty(n)
    d[0] = diag[0]
    for i in range(1, n):
        l[i] = off[i - 1] / d[i - 1]
        d[i] = diag[i] - l[i] * off[i - 1]
    return l, d


@njit(cache=True)
def _ldl_solve_rows(l, d, x):
    R, n = x.shape
    for r in range(R):
        for i in range(1, n):
            x[r, i] -= l[i] * x[r, i - 1]
        x[r, n - 1] /= d[n - 1]
        for i in range(n - 2, -1, -1):
            x[r, i] = x[r, i] / d[i] - l[i + 1] * x[r, i + 1]


def ldl_solve(l, d, rhs):
    """Solve with a factor from :func:`ldl_factor`; ``rhs`` is ``(n,)`` or ``(R, n)``."""
    x = np.array(rhs, dtype=float, order="C")
    _ldl_solve_rows(l, d, x.reshape(-1, x.shape[-1]))
    return x


_GN = 0.5 + np.array([-np.sqrt(15.0) / 10.0, 0.0, np.sqrt(15.0) / 10.0])
_GW = np.array([5.0, 8.0, 5.0]) / 18.0


@njit(cache=True)
def fused_step(U, dW, h_gauss, coef, kap, dx, lo, a_diag, a_off, bnd, fl, fd, out):
    """One semi-implicit step for every row of the nodal array ``U``.

    ``U`` and ``dW`` are ``(R, M + 1)``; the unknowns are ``U[:, lo:lo + n]``
    with ``n = a_diag.size``. ``coef`` is ``dt * lam * e^{-3 gamma t}``,
    ``kap`` the noise amplitude, ``bnd`` the Robin load added to the first
    and last unknown. Writes the new unknowns into ``out[:, lo:lo + n]``.
    """
    R, P = U.shape
    M = P - 1
    n = a_diag.size
    gn0, gn1, gn2 = _GN[0], _GN[1], _GN[2]
    load = np.empty(P)
    rhs = np.empty(n)
    for r in range(R):
        for i in range(P):
            load[i] = 0.0
        for e in range(M):
            ul = U[r, e]
            du = U[r, e + 1] - ul
            wl = dW[r, e]
            dw = dW[r, e + 1] - wl
            sl = 0.0
            sr = 0.0
            for g in range(3):
                xg = gn0 if g == 0 else (gn1 if g == 1 else gn2)
                gap = 1.0 - (ul + xg * du)
                val = coef * h_gauss[e, g] / (gap * gap)
                if kap != 0.0:
                    val += kap * gap * (wl + xg * dw)
                sl += _GW[g] * (1.0 - xg) * val
                sr += _GW[g] * xg * val
            load[e] += sl * dx
            load[e + 1] += sr * dx
        for i in range(n):
            v = a_diag[i] * U[r, lo + i]
            if i > 0:
                v += a_off[i - 1] * U[r, lo + i - 1]
            if i < n - 1:
                v += a_off[i] * U[r, lo + i + 1]
            rhs[i] = v + load[lo + i]
        rhs[0] += bnd
        rhs[n - 1] += bnd
        for i in range(1, n):
            rhs[i] -= fl[i] * rhs[i - 1]
        out[r, lo + n - 1] = rhs[n - 1] / fd[n - 1]
        for i in range(n - 2, -1, -1):
            out[r, lo + i] = rhs[i] / fd[i] - fl[i + 1] * out[r, lo + i + 1]
