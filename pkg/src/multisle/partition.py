"""Partition functions Z(x_1, ..., x_n) that drive multiple SLEs.

A partition function is positive on ordered tuples, translation invariant,
homogeneous (except the two-term mixture) and annihilated by the level-two
null-vector operators. The engine only needs grad log Z, so every kind has a
compiled log-value and analytic log-gradient kernel keyed by an integer code.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Sequence

import numba
import numpy as np

from .special import NumericalError, connection_constants, hyp2f1_d_kernel, hyp2f1_kernel

CONST, Z0, Z2, MIXTURE, CHORDAL, FOURPOINT, POWER = range(7)
KIND_NAMES = {CONST: "const", Z0: "Z0", Z2: "Z2", MIXTURE: "mixture", CHORDAL: "chordal",
              FOURPOINT: "fourpoint", POWER: "power"}

# finite-difference steps as fractions of the smallest gap
GRAD_STEP = 1e-4
HESS_STEP = 1e-3


class PartitionDomainError(ValueError):
    pass


def _check_kappa(kappa: float, upper: float = 8.0) -> None:
    if not 0.0 < kappa < upper:
        raise PartitionDomainError(f"kappa must lie in (0,{upper:g}), got {kappa}")


def h_weight(m: int, kappa: float) -> float:
    """Boundary weight h_m(kappa) = m(2(m+2) - kappa) / (2 kappa)."""
    if kappa <= 0:
        raise PartitionDomainError(f"kappa must be positive, got {kappa}")
    if m < 0:
        raise PartitionDomainError(f"m must be nonnegative, got {m}")
    return m * (2 * (m + 2) - kappa) / (2 * kappa)


def central_charge(kappa: float) -> float:
    # (6-k)(3k-8)/(2k); the /(16k) variant misses c=1/2 at k=3 and k=16/3
    return (6 - kappa) * (3 * kappa - 8) / (2 * kappa)


@dataclass(frozen=True)
class ConformalData:
    kappa: float

    def h(self, m: int) -> float:
        return h_weight(m, self.kappa)

    @property
    def central_charge(self) -> float:
        return central_charge(self.kappa)


# ---------------------------------------------------------------------------
# compiled kernels
# ---------------------------------------------------------------------------

@numba.njit(cache=True)
def _block_params(kappa):
    return 4.0 / kappa, (12.0 - kappa) / kappa, 8.0 / kappa


@numba.njit(cache=True)
def _log_norm(kappa):
    # Gamma-function connection coefficient fixing Z_I ~ x^((kappa-6)/kappa) at 0
    a, b, c = _block_params(kappa)
    return math.lgamma(a) + math.lgamma(b) - math.lgamma(c) - math.lgamma(a + b - c)


@numba.njit(cache=True)
def block_constants(kappa):
    """Per-kappa constants of Z_II: (log normalisation, g1, g2, degenerate flag)."""
    a, b, c = _block_params(kappa)
    g1, g2, deg = connection_constants(a, b, c)
    return np.array([_log_norm(kappa), g1, g2, 1.0 if deg else 0.0])


@numba.njit(cache=True)
def _zII_log_c(x, kappa, cst):
    a, b, c = _block_params(kappa)
    p = 2.0 / kappa
    f, fp = hyp2f1_d_kernel(a, b, c, x, cst[1], cst[2], cst[3] > 0.5)
    logv = cst[0] + p * math.log(x) + p * math.log1p(-x) + math.log(f)
    dlog = p / x - p / (1.0 - x) + fp / f
    return logv, dlog


@numba.njit(cache=True)
def zII_log(x, kappa):
    """(log Z_II(x), d/dx log Z_II(x)) for 0 < x < 1."""
    return _zII_log_c(x, kappa, block_constants(kappa))


@numba.njit(cache=True)
def _mix_log_c(x, kappa, p_i, p_ii, cst):
    li, di = _zII_log_c(1.0 - x, kappa, cst)
    di = -di
    if p_ii == 0.0:
        return math.log(p_i) + li, di
    lii, dii = _zII_log_c(x, kappa, cst)
    if p_i == 0.0:
        return math.log(p_ii) + lii, dii
    u = math.log(p_i) + li
    v = math.log(p_ii) + lii
    top = max(u, v)
    wu = math.exp(u - top)
    wv = math.exp(v - top)
    s = wu + wv
    return top + math.log(s), (wu * di + wv * dii) / s


@numba.njit(cache=True)
def mix_log(x, kappa, p_i, p_ii):
    """(log, d log) of p_I Z_I(x) + p_II Z_II(x)."""
    return _mix_log_c(x, kappa, p_i, p_ii, block_constants(kappa))


@numba.njit(cache=True)
def _fourpoint_mix(ratio, kappa, prm):
    # prm = (p_I, p_II[, block constants]); the constants are cached by PartitionFunction.prm
    if prm.shape[0] >= 6:
        return _mix_log_c(ratio, kappa, prm[0], prm[1], prm[2:6])
    return mix_log(ratio, kappa, prm[0], prm[1])


@numba.njit(cache=True)
def log_z_kernel(kind, prm, kappa, x):
    n = x.shape[0]
    if kind == CONST:
        return 0.0
    if kind == Z0 or kind == Z2 or kind == POWER:
        if kind == Z0:
            e = (kappa - 6.0) / kappa
        elif kind == Z2:
            e = 2.0 / kappa
        else:
            e = prm[0]
        return e * math.log(x[1] - x[0])
    if kind == MIXTURE:
        g = math.log(x[1] - x[0])
        u = (kappa - 6.0) / kappa * g
        v = 2.0 / kappa * g
        if prm[1] == 0.0:
            return math.log(prm[0]) + u
        if prm[0] == 0.0:
            return math.log(prm[1]) + v
        u += math.log(prm[0])
        v += math.log(prm[1])
        top = max(u, v)
        return top + math.log(math.exp(u - top) + math.exp(v - top))
    if kind == CHORDAL:
        acc = 0.0
        for i in range(n):
            for j in range(i + 1, n):
                acc += math.log(x[j] - x[i])
        return 2.0 / kappa * acc
    if kind == FOURPOINT:
        e0 = (kappa - 6.0) / kappa
        if n == 3:
            d31 = x[2] - x[0]
            ratio = (x[1] - x[0]) / d31
            lm, _ = _fourpoint_mix(ratio, kappa, prm)
            return e0 * math.log(d31) + lm
        d31 = x[2] - x[0]
        d42 = x[3] - x[1]
        ratio = (x[1] - x[0]) * (x[3] - x[2]) / (d31 * d42)
        lm, _ = _fourpoint_mix(ratio, kappa, prm)
        return e0 * (math.log(d31) + math.log(d42)) + lm
    return math.nan


@numba.njit(cache=True)
def grad_log_z_kernel(kind, prm, kappa, x, out):
    n = x.shape[0]
    for i in range(n):
        out[i] = 0.0
    if kind == CONST:
        return
    if kind == Z0 or kind == Z2 or kind == POWER or kind == MIXTURE:
        gap = x[1] - x[0]
        if kind == Z0:
            d = (kappa - 6.0) / kappa / gap
        elif kind == Z2:
            d = 2.0 / kappa / gap
        elif kind == POWER:
            d = prm[0] / gap
        else:
            e0 = (kappa - 6.0) / kappa
            e2 = 2.0 / kappa
            # weights of the two terms, evaluated in log space
            u = e0 * math.log(gap) + (math.log(prm[0]) if prm[0] > 0 else -math.inf)
            v = e2 * math.log(gap) + (math.log(prm[1]) if prm[1] > 0 else -math.inf)
            top = max(u, v)
            wu = math.exp(u - top)
            wv = math.exp(v - top)
            d = (wu * e0 + wv * e2) / (wu + wv) / gap
        out[0] = -d
        out[1] = d
        return
    if kind == CHORDAL:
        for i in range(n):
            acc = 0.0
            for j in range(n):
                if j != i:
                    acc += 1.0 / (x[i] - x[j])
            out[i] = 2.0 / kappa * acc
        return
    if kind == FOURPOINT:
        e0 = (kappa - 6.0) / kappa
        if n == 3:
            d31 = x[2] - x[0]
            ratio = (x[1] - x[0]) / d31
            _, dm = _fourpoint_mix(ratio, kappa, prm)
            out[0] = -e0 / d31 - dm * (x[2] - x[1]) / (d31 * d31)
            out[1] = dm / d31
            out[2] = e0 / d31 - dm * (x[1] - x[0]) / (d31 * d31)
            return
        d21 = x[1] - x[0]
        d31 = x[2] - x[0]
        d42 = x[3] - x[1]
        d43 = x[3] - x[2]
        ratio = d21 * d43 / (d31 * d42)
        _, dm = _fourpoint_mix(ratio, kappa, prm)
        s = dm * ratio
        out[0] = -e0 / d31 + s * (-1.0 / d21 + 1.0 / d31)
        out[1] = -e0 / d42 + s * (1.0 / d21 + 1.0 / d42)
        out[2] = e0 / d31 + s * (-1.0 / d43 - 1.0 / d31)
        out[3] = e0 / d42 + s * (1.0 / d43 - 1.0 / d42)
        return


# ---------------------------------------------------------------------------
# scalar building blocks
# ---------------------------------------------------------------------------

def _ordered(x: Sequence[float]) -> np.ndarray:
    arr = np.asarray(x, dtype=float)
    if arr.ndim != 1 or arr.size == 0:
        raise PartitionDomainError("points must be a nonempty 1-d sequence")
    if np.any(np.diff(arr) <= 0) or not np.all(np.isfinite(arr)):
        raise PartitionDomainError(f"points must be finite and strictly increasing: {arr}")
    return arr


def z_pair(x1: float, x2: float, variant: str, kappa: float) -> float:
    """The two n=2 solutions: Z0 (one arch) and Z2 (two lines to infinity)."""
    if not x1 < x2:
        raise PartitionDomainError(f"need x1 < x2, got {x1}, {x2}")
    if kappa <= 0:
        raise PartitionDomainError("kappa must be positive")
    gap = x2 - x1
    if variant == "Z0":
        return gap ** ((kappa - 6) / kappa)
    if variant == "Z2":
        return gap ** (2 / kappa)
    raise PartitionDomainError(f"unknown variant {variant!r}")


def z_mixture(x1: float, x2: float, lam: float, mu: float, kappa: float) -> float:
    if lam < 0 or mu < 0 or lam + mu == 0:
        raise PartitionDomainError("need lam, mu >= 0, not both zero")
    return lam * z_pair(x1, x2, "Z0", kappa) + mu * z_pair(x1, x2, "Z2", kappa)


def z_chordal_factorizable(x: Sequence[float], kappa: float) -> float:
    arr = _ordered(x)
    gaps = arr[None, :] - arr[:, None]
    iu = np.triu_indices(arr.size, 1)
    return float(np.prod(gaps[iu]) ** (2 / kappa))


def z_triple_symmetric(x: Sequence[float], kappa: float) -> float:
    x1, x2, x3 = _ordered(x)
    return ((x2 - x1) * (x3 - x1) * (x3 - x2)) ** (2 / kappa)


def _check_unit(x: float) -> None:
    if not 0.0 < x < 1.0:
        raise PartitionDomainError(f"x must lie in (0,1), got {x}")


def log_z_pure_II(x: float, kappa: float) -> float:
    _check_unit(x)
    _check_kappa(kappa)
    val, _ = zII_log(float(x), float(kappa))
    if not math.isfinite(val):
        raise NumericalError(f"Z_II({x}) at kappa={kappa} did not evaluate")
    return val


def z_pure_II(x: float, kappa: float) -> float:
    """Pure block for the arches [x,1] and [infinity,0], normalised so that
    Z_II(x) (1-x)^((6-kappa)/kappa) -> 1 as x -> 1."""
    return math.exp(log_z_pure_II(x, kappa))


def z_pure_I(x: float, kappa: float) -> float:
    """Pure block for the arches [0,x] and [1,infinity]: Z_I(x) = Z_II(1-x)."""
    _check_unit(x)
    return z_pure_II(1.0 - x, kappa)


def harmonic_ratio(X1: float, X2: float, X3: float, X4: float = math.inf) -> float:
    """Cross ratio (X2-X1)(X4-X3) / ((X3-X1)(X4-X2)); X4 may be +inf."""
    pts = [X1, X2, X3] + ([] if math.isinf(X4) else [X4])
    if math.isinf(X4) and X4 < 0:
        raise PartitionDomainError("X4 must be finite or +inf")
    if any(b <= a for a, b in zip(pts, pts[1:])):
        raise PartitionDomainError(f"points must be strictly increasing: {pts}")
    first = (X2 - X1) / (X3 - X1)
    if math.isinf(X4):
        return first
    return first * (X4 - X3) / (X4 - X2)


def z_four_point(X1: float, X2: float, X3: float, X4: float, kappa: float,
                 p_I: float, p_II: float) -> float:
    """Four-point function [(X4-X2)(X3-X1)]^((kappa-6)/kappa) (p_I Z_I + p_II Z_II)(X).

    With X4 = +inf the divergent (X4-X2) factor is dropped, which gives the
    three-point function of the sector with weight h_1 at infinity.
    """
    _check_kappa(kappa)
    if p_I < 0 or p_II < 0 or p_I + p_II == 0:
        raise PartitionDomainError("need p_I, p_II >= 0, not both zero")
    x = harmonic_ratio(X1, X2, X3, X4)
    e0 = (kappa - 6) / kappa
    pref = (X3 - X1) ** e0
    if not math.isinf(X4):
        pref *= (X4 - X2) ** e0
    lm, _ = mix_log(x, float(kappa), float(p_I), float(p_II))
    return pref * math.exp(lm)


# ---------------------------------------------------------------------------
# PartitionFunction objects
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PartitionFunction:
    """Evaluator bundle for one choice of Z at fixed kappa and point count."""

    kind: int
    n: int
    kappa: float
    params: tuple[float, ...] = ()
    label: str = ""
    m: int | None = None
    weight: float | None = field(default=None)

    @property
    def prm(self) -> np.ndarray:
        base = np.array(self.params + (0.0,) * (2 - len(self.params)), dtype=float)
        if self.kind == FOURPOINT:
            return np.concatenate([base, block_constants(self.kappa)])
        return base

    @property
    def scale_invariant(self) -> bool:
        return self.weight is not None

    def _points(self, x) -> np.ndarray:
        arr = _ordered(x)
        if arr.size != self.n:
            raise PartitionDomainError(f"{self.label} needs {self.n} points, got {arr.size}")
        return arr

    def log_value(self, x) -> float:
        arr = self._points(x)
        try:
            val = log_z_kernel(self.kind, self.prm, self.kappa, arr)
        except ZeroDivisionError as exc:
            # the hypergeometric series overflows for very small kappa
            raise NumericalError(f"log {self.label} overflowed at {arr}") from exc
        if not math.isfinite(val):
            raise NumericalError(f"log {self.label} not finite at {list(x)}")
        return float(val)

    def value(self, x) -> float:
        return math.exp(self.log_value(x))

    def __call__(self, x) -> float:
        return self.value(x)

    def log_gradient(self, x) -> np.ndarray:
        arr = self._points(x)
        out = np.empty(self.n)
        try:
            grad_log_z_kernel(self.kind, self.prm, self.kappa, arr, out)
        except ZeroDivisionError as exc:
            raise NumericalError(f"grad log {self.label} overflowed at {arr}") from exc
        if not np.all(np.isfinite(out)):
            raise NumericalError(f"grad log {self.label} not finite at {arr}")
        return out


def _make(kind, n, kappa, params=(), label="", m=None, weight=None) -> PartitionFunction:
    return PartitionFunction(kind, n, float(kappa), tuple(float(p) for p in params), label, m, weight)


def _parse_pair(text: str, what: str) -> tuple[float, float]:
    try:
        a, b = (float(v) for v in text.split(","))
    except ValueError as exc:
        raise PartitionDomainError(f"{what} needs two comma-separated numbers, got {text!r}") from exc
    if a < 0 or b < 0 or a + b == 0:
        raise PartitionDomainError(f"{what} coefficients must be >= 0 and not both zero")
    return a, b


def make_partition_function(selection: str, n: int, kappa: float) -> PartitionFunction:
    """Build Z from a selection string: Z0, Z2, mixture:lam,mu, chordal, triple,
    fourpoint:pI,pII, power:exponent, const."""
    _check_kappa(kappa)
    name, _, arg = selection.partition(":")
    h1 = h_weight(1, kappa)
    if name == "const":
        if n != 1:
            raise PartitionDomainError("const is only a solution for n=1")
        return _make(CONST, 1, kappa, label="const", m=0, weight=0.0)
    if name in ("Z0", "Z2", "mixture", "power") and n != 2:
        raise PartitionDomainError(f"{name} needs n=2, got n={n}")
    if name == "Z0":
        return _make(Z0, 2, kappa, label="Z0", m=1, weight=(kappa - 6) / kappa)
    if name == "Z2":
        return _make(Z2, 2, kappa, label="Z2", m=0, weight=2 / kappa)
    if name == "mixture":
        lam, mu = _parse_pair(arg, "mixture")
        return _make(MIXTURE, 2, kappa, (lam, mu), f"mixture:{lam:g},{mu:g}", m=1 if lam > 0 else 0)
    if name == "power":
        e = float(arg)
        return _make(POWER, 2, kappa, (e,), f"power:{e:g}", weight=e)
    if name == "chordal":
        return _make(CHORDAL, n, kappa, label="chordal", m=0, weight=n * (n - 1) / kappa)
    if name == "triple":
        if n != 3:
            raise PartitionDomainError("triple needs n=3")
        return _make(CHORDAL, 3, kappa, label="triple", m=0, weight=6 / kappa)
    if name == "fourpoint":
        if n not in (3, 4):
            raise PartitionDomainError("fourpoint needs n=3 (X4 at infinity) or n=4")
        p_i, p_ii = _parse_pair(arg or "1,1", "fourpoint")
        m = 1 if n == 3 else 2
        return _make(FOURPOINT, n, kappa, (p_i, p_ii), f"fourpoint:{p_i:g},{p_ii:g}", m=m,
                     weight=h_weight(n - 2 * m, kappa) - n * h1)
    raise PartitionDomainError(f"unknown partition function {selection!r}")


def target_arches(z: PartitionFunction) -> int:
    """Arches the process is expected to close before it can stop."""
    return z.m if z.m is not None else 0


def reduced_after_collision(z: PartitionFunction, n_alive: int) -> PartitionFunction:
    """Partition function for the points left after one pair has merged."""
    if n_alive <= 1:
        return _make(CONST, max(n_alive, 1), z.kappa, label="const", m=0, weight=0.0)
    if z.kind == FOURPOINT and n_alive == 2:
        return make_partition_function("Z0", 2, z.kappa)
    if z.kind == CHORDAL:
        return make_partition_function("chordal", n_alive, z.kappa)
    raise PartitionDomainError(f"no reduction of {z.label} to {n_alive} points")


# ---------------------------------------------------------------------------
# derivative oracles
# ---------------------------------------------------------------------------

LogFn = Callable[[np.ndarray], float]


def _log_fn(z) -> LogFn:
    if isinstance(z, PartitionFunction):
        return z.log_value
    return lambda x: math.log(z(x))


def finite_difference_gradient(z, x: Sequence[float], rel_step: float = GRAD_STEP) -> np.ndarray:
    """Central-difference grad log Z with the step scaled to the smallest gap."""
    arr = _ordered(x)
    f = _log_fn(z)
    h = rel_step * (np.min(np.diff(arr)) if arr.size > 1 else 1.0)
    out = np.empty(arr.size)
    for i in range(arr.size):
        e = np.zeros(arr.size)
        e[i] = h
        out[i] = (f(arr + e) - f(arr - e)) / (2 * h)
    return out


def grad_log_z(z, x: Sequence[float]) -> np.ndarray:
    """grad log Z: analytic for PartitionFunction objects, central differences otherwise."""
    if isinstance(z, PartitionFunction):
        return z.log_gradient(x)
    return finite_difference_gradient(z, x)


def null_vector_residual(z, x: Sequence[float], i: int, kappa: float,
                         rel_step: float = HESS_STEP) -> float:
    """(D_i Z)/Z by central differences; i is 0-based.

    D_i = (kappa/2) d_i^2 + 2 sum_{j != i} [ d_j / (x_j - x_i) - h_1 / (x_j - x_i)^2 ].
    """
    arr = _ordered(x)
    f = _log_fn(z)
    gap = np.min(np.diff(arr)) if arr.size > 1 else 1.0
    h2 = rel_step * gap
    h1 = GRAD_STEP * gap
    f0 = f(arr)

    def ratio(j, h):
        e = np.zeros(arr.size)
        e[j] = h
        return math.exp(f(arr + e) - f0)

    second = (ratio(i, h2) - 2.0 + ratio(i, -h2)) / h2**2
    total = kappa / 2 * second
    hw = h_weight(1, kappa)
    for j in range(arr.size):
        if j == i:
            continue
        d = arr[j] - arr[i]
        first = (ratio(j, h1) - ratio(j, -h1)) / (2 * h1)
        total += 2 * (first / d - hw / d**2)
    return float(total)


@lru_cache(maxsize=None)
def block_normalisation(kappa: float) -> float:
    """Constant multiplying x^(2/k)(1-x)^(2/k) 2F1 in Z_II."""
    _check_kappa(kappa)
    return math.exp(_log_norm(float(kappa)))
