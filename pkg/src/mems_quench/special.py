"""Regularized incomplete gamma functions.

Series expansion for ``x < a + 1`` and a modified-Lentz continued fraction
otherwise (the usual split, where each converges fast).
"""

from __future__ import annotations

import math

__all__ = ["gammainc_lower", "gammainc_upper", "gammainc_pair"]

_EPS = 1e-15
_TINY = 1e-300
_MAX_ITER = 100_000


def _check(a: float, x: float) -> None:
    if not a > 0:
        raise ValueError(f"shape a must be > 0, got {a}")
    if not x >= 0:
        raise ValueError(f"argument x must be >= 0, got {x}")


def _log_prefactor(a: float, x: float) -> float:
    return a * math.log(x) - x - math.lgamma(a)


def _series(a: float, x: float) -> float:
    """P(a, x) by its power series."""
    term = 1.0 / a
    total = term
    ap = a
    for _ in range(_MAX_ITER):
        ap += 1.0
        term *= x / ap
        total += term
        if abs(term) < abs(total) * _EPS:
            return total * math.exp(_log_prefactor(a, x))
    raise ArithmeticError(f"incomplete gamma series did not converge (a={a}, x={x})")


def _continued_fraction(a: float, x: float) -> float:
    """Q(a, x) by the Legendre continued fraction."""
    b = x + 1.0 - a
    c = 1.0 / _TINY
    d = 1.0 / b
    h = d
    for i in range(1, _MAX_ITER):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < _TINY:
            d = _TINY
        c = b + an / c
        if abs(c) < _TINY:
            c = _TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _EPS:
            return h * math.exp(_log_prefactor(a, x))
    raise ArithmeticError(f"incomplete gamma continued fraction did not converge (a={a}, x={x})")


def gammainc_pair(a: float, x: float) -> tuple[float, float]:
    """``(P, Q)`` with ``P + Q == 1`` exactly in floating point.

    The smaller of the two is computed directly and the other as its
    complement, so the small one keeps full relative accuracy.
    """
    _check(a, x)
    if x == 0.0:
        return 0.0, 1.0
    if math.isinf(x):
        return 1.0, 0.0
    if x < a + 1.0:
        p = min(1.0, _series(a, x))
        return p, 1.0 - p
    q = min(1.0, _continued_fraction(a, x))
    return 1.0 - q, q


def gammainc_lower(a: float, x: float) -> float:
    """Regularized lower incomplete gamma P(a, x)."""
    return gammainc_pair(a, x)[0]


def gammainc_upper(a: float, x: float) -> float:
    """Regularized upper incomplete gamma Q(a, x)."""
    return gammainc_pair(a, x)[1]
