"""Gauss hypergeometric function on [0, 1) and the helpers it needs.

Everything here is compiled with numba so the simulation kernels can call it
per time step. Python callers go through :func:`hyp2f1`, which validates input
and raises ordinary exceptions.

For x <= 1/2 the Gauss series is summed directly. For x > 1/2 the 1 - x
connection formula is used; when c - a - b is an integer the two connection
terms have poles that cancel, so the logarithmic forms of Abramowitz & Stegun
15.3.10-12 are used instead.
"""

from __future__ import annotations

import math

import numba
import numpy as np

EULER_GAMMA = 0.57721566490153286061
MAX_TERMS = 200_000
SERIES_RTOL = 1e-17
# distance of c - a - b to an integer below which the log formulas apply
DEGENERATE_TOL = 1e-9


class NumericalError(ArithmeticError):
    """A numerical routine failed to reach its accuracy target."""


@numba.njit(cache=True)
def _is_nonpos_int(z):
    return z <= 0.0 and z == math.floor(z)


@numba.njit(cache=True)
def digamma(x):
    if _is_nonpos_int(x):
        return math.nan
    if x < 0.0:
        # reflection
        return digamma(1.0 - x) - math.pi / math.tan(math.pi * x)
    acc = 0.0
    while x < 10.0:
        acc -= 1.0 / x
        x += 1.0
    inv = 1.0 / x
    inv2 = inv * inv
    series = inv2 * (1.0 / 12 - inv2 * (1.0 / 120 - inv2 * (1.0 / 252 - inv2 * (
        1.0 / 240 - inv2 * (1.0 / 132 - inv2 * (691.0 / 32760 - inv2 / 12.0))))))
    return acc + math.log(x) - 0.5 * inv - series


@numba.njit(cache=True)
def _gamma_sign(x):
    if x > 0.0:
        return 1.0
    k = math.ceil(-x)
    return -1.0 if int(k) % 2 == 1 else 1.0


@numba.njit(cache=True)
def _gamma_ratio(num1, num2, den1, den2):
    """Gamma(num1)Gamma(num2) / (Gamma(den1)Gamma(den2)), zero at denominator poles."""
    if _is_nonpos_int(den1) or _is_nonpos_int(den2):
        return 0.0
    lg = math.lgamma(num1) + math.lgamma(num2) - math.lgamma(den1) - math.lgamma(den2)
    s = _gamma_sign(num1) * _gamma_sign(num2) * _gamma_sign(den1) * _gamma_sign(den2)
    return s * math.exp(lg)


@numba.njit(cache=True)
def _series(a, b, c, x):
    """Plain Gauss series; returns (value, converged)."""
    total = 1.0
    term = 1.0
    n = 0
    quiet = 0
    while n < MAX_TERMS:
        term *= (a + n) * (b + n) / ((c + n) * (n + 1.0)) * x
        total += term
        n += 1
        if term == 0.0:
            return total, True
        if abs(term) <= SERIES_RTOL * abs(total):
            quiet += 1
            if quiet >= 2:
                return total, True
        else:
            quiet = 0
    return total, False


@numba.njit(cache=True)
def _log_sum(a, b, m, y, shift):
    """Sum_{n>=0} (a+shift)_n (b+shift)_n / (n! (n+m)!) y^n [ln y - psi(n+1) - psi(n+m+1) + psi(a+n+shift) + psi(b+n+shift)]."""
    ln_y = math.log(y) if y > 0.0 else -math.inf
    aa = a + shift
    bb = b + shift
    psi1 = -EULER_GAMMA  # psi(n+1)
    psim = digamma(m + 1.0)  # psi(n+m+1)
    psia = digamma(aa)
    psib = digamma(bb)
    coef = 1.0 / math.gamma(m + 1.0)
    total = 0.0
    quiet = 0
    for n in range(MAX_TERMS):
        if n > 0:
            coef *= (aa + n - 1) * (bb + n - 1) / (n * (n + m)) * y
            psi1 += 1.0 / n
            psim += 1.0 / (n + m)
            psia += 1.0 / (aa + n - 1)
            psib += 1.0 / (bb + n - 1)
        if coef == 0.0:
            return total, True
        term = coef * (ln_y - psi1 - psim + psia + psib)
        total += term
        if n > 2 and abs(term) <= SERIES_RTOL * abs(total):
            quiet += 1
            if quiet >= 2:
                return total, True
        else:
            quiet = 0
    return total, False


@numba.njit(cache=True)
def _poly_sum(a, b, m, y):
    """Sum_{n<m} (a)_n (b)_n / (n! (1-m)_n) y^n."""
    total = 0.0
    coef = 1.0
    for n in range(m):
        if n > 0:
            coef *= (a + n - 1) * (b + n - 1) / (n * (n - m)) * y
        total += coef
    return total


@numba.njit(cache=True)
def hyp2f1_kernel(a, b, c, x):
    """2F1(a, b; c; x) for 0 <= x < 1. Returns NaN when a series does not converge."""
    if x == 0.0:
        return 1.0
    if x <= 0.5 or _is_nonpos_int(a) or _is_nonpos_int(b):
        val, ok = _series(a, b, c, x)
        return val if ok else math.nan
    y = 1.0 - x
    d = c - a - b
    m_round = math.floor(d + 0.5)
    if abs(d - m_round) > DEGENERATE_TOL:
        s1, ok1 = _series(a, b, a + b - c + 1.0, y)
        s2, ok2 = _series(c - a, c - b, d + 1.0, y)
        if not (ok1 and ok2):
            return math.nan
        g1 = _gamma_ratio(c, d, c - a, c - b)
        g2 = _gamma_ratio(c, -d, a, b)
        return g1 * s1 + math.pow(y, d) * g2 * s2
    m = int(m_round)
    if m >= 0:
        # c = a + b + m
        t1 = 0.0
        if m > 0:
            t1 = _gamma_ratio(float(m), c, a + m, b + m) * _poly_sum(a, b, m, y)
        pref = _gamma_ratio(c, 1.0, a, b)
        if pref == 0.0:
            return t1
        ls, ok = _log_sum(a, b, float(m), y, float(m))
        if not ok:
            return math.nan
        sign = -1.0 if m % 2 == 1 else 1.0  # (z - 1)^m = (-1)^m y^m
        return t1 - sign * math.pow(y, m) * pref * ls
    m = -m
    # c = a + b - m
    t1 = _gamma_ratio(float(m), c, a, b) * math.pow(y, -m) * _poly_sum(a - m, b - m, m, y)
    pref = _gamma_ratio(c, 1.0, a - m, b - m)
    if pref == 0.0:
        return t1
    ls, ok = _log_sum(a, b, float(m), y, 0.0)
    if not ok:
        return math.nan
    sign = -1.0 if m % 2 == 1 else 1.0
    return t1 - sign * pref * ls


def hyp2f1(a: float, b: float, c: float, x: float) -> float:
    """Gauss hypergeometric function 2F1(a, b; c; x) for 0 <= x < 1.

    Raises ValueError when c is a non-positive integer or x is outside [0, 1),
    and NumericalError when a series fails to converge.
    """
    a, b, c, x = float(a), float(b), float(c), float(x)
    if c <= 0 and c == math.floor(c):
        raise ValueError(f"2F1 has a pole at c={c}")
    if not 0.0 <= x < 1.0:
        raise ValueError(f"x={x} outside [0, 1)")
    val = hyp2f1_kernel(a, b, c, x)
    if not np.isfinite(val):
        raise NumericalError(f"2F1({a}, {b}; {c}; {x}) did not converge")
    return float(val)


@numba.njit(cache=True)
def connection_constants(a, b, c):
    """(g1, g2, degenerate) for the 1 - x connection formula of 2F1(a, b; c; x)."""
    d = c - a - b
    if abs(d - math.floor(d + 0.5)) <= DEGENERATE_TOL:
        return 0.0, 0.0, True
    return _gamma_ratio(c, d, c - a, c - b), _gamma_ratio(c, -d, a, b), False


@numba.njit(cache=True)
def _series_d(a, b, c, x):
    """Gauss series and its x-derivative from one pass; third value flags convergence."""
    total = 1.0
    dtotal = 0.0
    term = 1.0
    quiet = 0
    for n in range(MAX_TERMS):
        # d/dx of term_{n+1} x^{n+1} is (n+1) term_{n+1} / x; accumulate without dividing by x
        coef = (a + n) * (b + n) / ((c + n) * (n + 1.0))
        dtotal += term * coef * (n + 1.0)
        term *= coef * x
        total += term
        if term == 0.0:
            return total, dtotal, True
        if abs(term) <= SERIES_RTOL * abs(total):
            quiet += 1
            if quiet >= 2:
                return total, dtotal, True
        else:
            quiet = 0
    return total, dtotal, False


@numba.njit(cache=True)
def hyp2f1_d_kernel(a, b, c, x, g1, g2, degenerate):
    """(2F1, d/dx 2F1) at 0 <= x < 1 with precomputed connection constants."""
    if x <= 0.5 or degenerate:
        if x <= 0.5:
            f, df, ok = _series_d(a, b, c, x)
            return (f, df) if ok else (math.nan, math.nan)
        f = hyp2f1_kernel(a, b, c, x)
        return f, a * b / c * hyp2f1_kernel(a + 1.0, b + 1.0, c + 1.0, x)
    y = 1.0 - x
    d = c - a - b
    s1, ds1, ok1 = _series_d(a, b, a + b - c + 1.0, y)
    s2, ds2, ok2 = _series_d(c - a, c - b, d + 1.0, y)
    if not (ok1 and ok2):
        return math.nan, math.nan
    yd = math.pow(y, d)
    f = g1 * s1 + yd * g2 * s2
    df = -(g1 * ds1 + g2 * (d * yd / y * s2 + yd * ds2))
    return f, df
