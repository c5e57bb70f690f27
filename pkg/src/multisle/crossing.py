"""Closed-form crossing probabilities for the four-point configuration 0 < x < 1 < infinity.

Configuration I pairs the curves from 0 and x; configuration II pairs x and 1.
The named models are special values of kappa in the generic ratio of pure
partition functions; the quadrature forms are kept as independent routes.
"""

from __future__ import annotations

import math
from typing import Callable

import numpy as np
from scipy.integrate import quad

from .partition import PartitionDomainError, log_z_pure_II

QUAD_TOL = 1e-10
MODELS = ("percolation", "ising_spin", "fk_ising", "potts", "generic")


class CrossingDomainError(ValueError):
    pass


def _check_x(x: float) -> float:
    x = float(x)
    if not 0.0 < x < 1.0:
        raise CrossingDomainError(f"x must lie in (0,1), got {x}")
    return x


def generic_crossing(x: float, kappa: float, p_i: float = 1.0, p_ii: float = 1.0) -> float:
    """p_I Z_I / (p_I Z_I + p_II Z_II) at harmonic ratio x."""
    x = _check_x(x)
    if p_i < 0 or p_ii < 0 or p_i + p_ii == 0:
        raise CrossingDomainError("p_I, p_II must be >= 0 and not both zero")
    if p_ii == 0:
        return 1.0
    if p_i == 0:
        return 0.0
    try:
        log_i = log_z_pure_II(1.0 - x, kappa)
        log_ii = log_z_pure_II(x, kappa)
    except PartitionDomainError as exc:
        raise CrossingDomainError(str(exc)) from exc
    # logistic form avoids overflow when one block dominates
    d = math.log(p_ii) - math.log(p_i) + log_ii - log_i
    if d > 0:
        e = math.exp(-d)
        return e / (1.0 + e)
    return 1.0 / (1.0 + math.exp(d))


def _endpoint_integral(p: float, q: float, g: Callable[[float], float], lo: float, hi: float) -> float:
    """Integral of s^p (1-s)^q g(s) over [lo, hi] within [0, 1].

    The pieces below and above 1/2 are mapped with s = u^3 and 1 - s = v^3 so
    that fractional endpoint powers become smooth.
    """
    total = 0.0
    mid = min(max(0.5, lo), hi)
    if lo < mid:
        f = lambda u: 3.0 * u ** (2 + 3 * p) * (1.0 - u ** 3) ** q * g(u ** 3)
        total += quad(f, lo ** (1 / 3), mid ** (1 / 3), epsabs=QUAD_TOL, epsrel=1e-12, limit=200)[0]
    if mid < hi:
        f = lambda v: 3.0 * v ** (2 + 3 * q) * (1.0 - v ** 3) ** p * g(1.0 - v ** 3)
        total += quad(f, (1.0 - hi) ** (1 / 3), (1.0 - mid) ** (1 / 3), epsabs=QUAD_TOL,
                      epsrel=1e-12, limit=200)[0]
    return total


def _one(_s: float) -> float:
    return 1.0


def cardy_crossing(x: float) -> float:
    """Percolation: Gamma(2/3)/Gamma(1/3)^2 * int_x^1 s^(-2/3) (1-s)^(-2/3) ds."""
    x = _check_x(x)
    norm = math.gamma(2 / 3) / math.gamma(1 / 3) ** 2
    return norm * _endpoint_integral(-2 / 3, -2 / 3, _one, x, 1.0)


def _ising_weight(y: float) -> float:
    return 1.0 / (1.0 - y + y * y) ** 2


def ising_spin_crossing(x: float) -> float:
    """Ising spin: int_x^1 w / int_0^1 w with w(y) = (y(1-y))^(2/3) / (1-y+y^2)^2."""
    x = _check_x(x)
    full = _endpoint_integral(2 / 3, 2 / 3, _ising_weight, 0.0, 1.0)
    return _endpoint_integral(2 / 3, 2 / 3, _ising_weight, x, 1.0) / full


def fk_ising_crossing(x: float) -> float:
    x = _check_x(x)
    y = 1.0 - x
    right = math.sqrt(y + y ** 1.5)
    return right / (math.sqrt(x + x ** 1.5) + right)


def potts_kappa(q: float) -> float:
    """kappa in [4, 8] with Q = 4 cos^2(4 pi / kappa)."""
    q = float(q)
    if not 0.0 <= q <= 4.0:
        raise CrossingDomainError(f"Q must lie in [0,4], got {q}")
    # 4 pi / kappa runs over [pi/2, pi] where the cosine is -sqrt(Q)/2
    return 4.0 * math.pi / math.acos(-math.sqrt(q) / 2.0)


def potts_crossing(x: float, q: float) -> float:
    """Crossing probability for the FK cluster boundaries of the Q-state Potts model."""
    kappa = potts_kappa(q)
    if kappa >= 8.0:
        raise CrossingDomainError("Q=0 gives kappa=8, outside the range of the partition functions")
    return generic_crossing(x, kappa, 1.0, 1.0)


def crossing_probability(model: str, x: float, kappa: float | None = None, q: float | None = None,
                         p_i: float = 1.0, p_ii: float = 1.0) -> float:
    if model == "percolation":
        return cardy_crossing(x)
    if model == "ising_spin":
        return ising_spin_crossing(x)
    if model == "fk_ising":
        return fk_ising_crossing(x)
    if model == "potts":
        if q is None:
            raise CrossingDomainError("potts needs Q")
        return potts_crossing(x, q)
    if model == "generic":
        if kappa is None:
            raise CrossingDomainError("generic needs kappa")
        return generic_crossing(x, kappa, p_i, p_ii)
    raise CrossingDomainError(f"unknown model {model!r}; choose from {', '.join(MODELS)}")


def crossing_grid(grid: int) -> np.ndarray:
    """Interior grid i/(grid+1), i = 1..grid."""
    if grid < 1:
        raise CrossingDomainError("grid must be >= 1")
    return np.arange(1, grid + 1) / (grid + 1)


def crossing_table(model: str, grid: int, **kw) -> list[tuple[float, float]]:
    return [(float(x), crossing_probability(model, float(x), **kw)) for x in crossing_grid(grid)]
