"""The kappa -> 0 limit: U_i = kappa d_i log Z solve an algebraic system.

The system is

    1/2 U_i^2 + 2 sum_{j != i} ( U_j / (x_j - x_i) - 3 / (x_j - x_i)^2 ) = 0,

supplemented by translation invariance, sum_i U_i = 0. Branches are found by
Gauss-Newton from seeds and then followed along the deterministic driving flow.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .engine import LoewnerChain
from .partition import PartitionDomainError, make_partition_function, reduced_after_collision
from .special import NumericalError

log = logging.getLogger(__name__)

SEED_KAPPA = 0.05
MERGE_TOL = 1e-8
RESIDUAL_TOL = 1e-10
MAX_N = 6


class ClassicalBranchLost(RuntimeError):
    def __init__(self, message: str, last_state: dict):
        super().__init__(message)
        self.last_state = last_state


class ClassicalDomainError(ValueError):
    pass


def _points(x) -> np.ndarray:
    arr = np.asarray(x, dtype=float)
    if arr.ndim != 1 or arr.size == 0 or np.any(np.diff(arr) <= 0) or not np.all(np.isfinite(arr)):
        raise ClassicalDomainError(f"points must be finite and strictly increasing, got {x}")
    return arr


def classical_residual(u: Sequence[float], x: Sequence[float], i: int, printed: bool = False) -> float:
    """Residual of equation i (0-based).

    ``printed=True`` uses U_i instead of U_j in the cross term; that variant is
    not satisfied by the two-point limits and is kept only for comparison.
    """
    u = np.asarray(u, dtype=float)
    x = _points(x)
    d = np.delete(x - x[i], i)
    cross = np.delete(u, i) if not printed else np.full(d.size, u[i])
    return float(0.5 * u[i] ** 2 + 2.0 * np.sum(cross / d - 3.0 / d ** 2))


def residual_vector(u: np.ndarray, x: np.ndarray) -> np.ndarray:
    diff = x[None, :] - x[:, None]
    np.fill_diagonal(diff, np.inf)
    return 0.5 * u ** 2 + 2.0 * ((u[None, :] / diff).sum(axis=1) - (3.0 / diff ** 2).sum(axis=1))


def _jacobian(u: np.ndarray, x: np.ndarray) -> np.ndarray:
    diff = x[None, :] - x[:, None]
    np.fill_diagonal(diff, np.inf)
    jac = 2.0 / diff
    jac[np.diag_indices_from(jac)] = u
    return jac


def newton_solve(x: np.ndarray, u0: np.ndarray, tol: float = 1e-13, max_iter: int = 100):
    """Damped Gauss-Newton on the residuals plus sum U = 0.

    Works in units of the smallest gap. Returns (U, max residual, converged).
    """
    scale = float(np.min(np.diff(x))) if x.size > 1 else 1.0
    xs = (x - x[0]) / scale
    u = np.asarray(u0, dtype=float) * scale
    n = x.size

    def full(v):
        return np.append(residual_vector(v, xs), v.sum())

    r = full(u)
    norm = float(np.linalg.norm(r))
    for _ in range(max_iter):
        if norm <= tol:
            break
        jac = np.vstack([_jacobian(u, xs), np.ones(n)])
        step = np.linalg.lstsq(jac, -r, rcond=None)[0]
        lam = 1.0
        while lam > 1e-6:
            trial = u + lam * step
            rt = full(trial)
            nt = float(np.linalg.norm(rt))
            if nt < norm:
                break
            lam /= 2
        else:
            break
        u, r, norm = trial, rt, nt
    res = float(np.max(np.abs(residual_vector(u, xs)))) if n else 0.0
    ok = norm <= 1e-9 and res <= RESIDUAL_TOL
    # residuals have units 1/length^2
    return u / scale, res / scale ** 2, ok


@dataclass
class ClassicalGradient:
    points: tuple[float, ...]
    values: tuple[float, ...]
    branch: str
    residual: float

    def to_json(self) -> dict:
        return {"points": list(self.points), "values": list(self.values), "branch": self.branch,
                "residual": self.residual}


def seed_partitions(n: int) -> list[str]:
    """Partition functions whose small-kappa gradients seed the branch search."""
    if n == 1:
        return ["const"]
    if n == 2:
        return ["Z0", "Z2"]
    if n in (3, 4):
        return ["chordal", "fourpoint:1,0", "fourpoint:0,1", "fourpoint:1,1"]
    return ["chordal"]


def kappa_gradient(selection: str, x: Sequence[float], kappa: float) -> np.ndarray:
    """kappa * grad log Z for a partition selection string."""
    x = _points(x)
    z = make_partition_function(selection, x.size, kappa)
    return kappa * z.log_gradient(x)


def _seeds(x: np.ndarray) -> list[tuple[str, np.ndarray]]:
    out = []
    for sel in seed_partitions(x.size):
        try:
            out.append((sel, kappa_gradient(sel, x, SEED_KAPPA)))
        except (PartitionDomainError, NumericalError, OverflowError) as exc:
            log.info("seed %s unavailable at kappa=%g: %s", sel, SEED_KAPPA, exc)
    if x.size == 2:
        gap = x[1] - x[0]
        for mag in (1.0, 4.0, 10.0):
            for sign in (1.0, -1.0):
                out.append((f"sign:{'+' if sign > 0 else '-'}{mag:g}", np.array([sign * mag, -sign * mag]) / gap))
    return out


def solve_classical_gradients(x: Sequence[float]) -> list[ClassicalGradient]:
    """All branches reached from the seeds, duplicates merged, sorted by U_1."""
    x = _points(x)
    if x.size > MAX_N:
        raise ClassicalDomainError(f"n={x.size} exceeds {MAX_N}")
    if x.size == 1:
        return [ClassicalGradient((float(x[0]),), (0.0,), "const", 0.0)]
    scale = float(np.min(np.diff(x)))
    found: list[ClassicalGradient] = []
    for label, seed in _seeds(x):
        if not np.all(np.isfinite(seed)):
            log.info("seed %s is not finite; skipped", label)
            continue
        u, res, ok = newton_solve(x, seed)
        if not ok:
            log.info("Newton from seed %s did not converge (residual %.3g); skipped", label, res)
            continue
        if any(np.max(np.abs(np.array(g.values) - u)) * scale <= MERGE_TOL for g in found):
            continue
        found.append(ClassicalGradient(tuple(map(float, x)), tuple(map(float, u)), label, res))
    found.sort(key=lambda g: g.values)
    return found


# ---------------------------------------------------------------------------
# deterministic flow
# ---------------------------------------------------------------------------

@dataclass
class ClassicalRun:
    stop_reason: str
    t: float
    collisions: list[tuple[int, int]]
    times: np.ndarray
    positions: np.ndarray
    gradients: np.ndarray
    chain: LoewnerChain
    metadata: dict = field(default_factory=lambda: {"classical": True})

    @property
    def capacity(self) -> float:
        return 2 * self.t

    def to_json(self) -> dict:
        return {"stop_reason": self.stop_reason, "tau": self.t, "capacity": self.capacity,
                "collisions": [list(c) for c in self.collisions],
                "positions": self.positions[-1].tolist(), "steps": int(self.times.size - 1),
                **self.metadata}


def _slit(z: float, xi: float, four_delta: float) -> float:
    w = z - xi
    s = math.sqrt(w * w + four_delta)
    return z + four_delta / (w + s) if w > 0 else z + four_delta / (w - s)


def _speeds(speeds, n: int) -> Callable[[float], np.ndarray]:
    if speeds is None:
        return lambda t: np.full(n, 1.0 / n)
    if callable(speeds):
        return lambda t: np.asarray(speeds(t), dtype=float)
    arr = np.asarray(speeds, dtype=float)
    if arr.size != n or np.any(arr < 0) or abs(arr.sum() - 1) > 1e-9:
        raise ClassicalDomainError("speeds need one nonnegative entry per point, summing to 1")
    return lambda t: arr


def integrate_classical(x: Sequence[float], branch: ClassicalGradient | Sequence[float],
                        speeds=None, horizon: float = 50.0, dt_base: float = 1e-4,
                        epsilon: float | None = None, gap_scale: float | None = None,
                        max_steps: int = 2_000_000) -> ClassicalRun:
    """Integrate dX_i = U_i a_i dt + sum_j 2 a_j dt / (X_i - X_j) up to capacity ``horizon``.

    U is re-solved by Newton at each step from the previous value. A step whose
    solution moves far from the prediction is halved; if that keeps failing the
    branch is declared lost. After a collision the branch of the reduced system
    is re-seeded from the reduced partition function where one is known.
    """
    x = _points(x).copy()
    n = x.size
    u = np.asarray(branch.values if isinstance(branch, ClassicalGradient) else branch, dtype=float)
    label = branch.branch if isinstance(branch, ClassicalGradient) else ""
    if u.size != n:
        raise ClassicalDomainError("branch and points differ in length")
    a_of = _speeds(speeds, n)
    spread = x[-1] - x[0] if n > 1 else 1.0
    eps = 1e-4 * spread if epsilon is None else epsilon
    g_scale = gap_scale if gap_scale is not None else (float(np.min(np.diff(x))) if n > 1 else 1.0)
    alive = np.ones(n, dtype=bool)
    chain = LoewnerChain()
    times, hist_x, hist_u = [0.0], [x.copy()], [u.copy()]
    collisions: list[tuple[int, int]] = []
    t = 0.0
    t_end = horizon / 2
    reason = "capacity-cap"
    steps = 0
    while t < t_end:
        idx = np.flatnonzero(alive)
        xs = x[idx]
        if idx.size >= 2:
            gaps = np.diff(xs)
            k = int(np.argmin(gaps))
            if gaps[k] < eps:
                pair = (int(idx[k]) + 1, int(idx[k + 1]) + 1)
                collisions.append(pair)
                alive[idx[k]] = alive[idx[k + 1]] = False
                u[idx[k]] = u[idx[k + 1]] = 0.0
                left = np.flatnonzero(alive)
                if left.size < 2:
                    reason = "collision-complete"
                    break
                label, new_u = _reseed(label, x[left])
                if new_u is None:
                    reason = "collision-complete"
                    break
                u[left] = new_u
                continue
            dt = dt_base * (gaps[k] / g_scale) ** 2
        else:
            dt = dt_base
        dt = min(dt, t_end - t)
        a = a_of(t)
        for _attempt in range(20):
            new_x = x.copy()
            poles = []
            for i in idx:
                if a[i] > 0:
                    poles.append((int(i), float(new_x[i])))
                    for j in idx:
                        if j != i:
                            new_x[j] = _slit(new_x[j], new_x[i], 4 * a[i] * dt)
            new_x[idx] += u[idx] * a[idx] * dt
            if np.any(np.diff(new_x[idx]) <= 0):
                dt /= 2
                continue
            if idx.size >= 2:
                new_u, res, ok = newton_solve(new_x[idx], u[idx])
                jump = np.max(np.abs(new_u - u[idx])) * float(np.min(np.diff(new_x[idx])))
                if not ok or jump > 0.5:
                    dt /= 2
                    continue
            else:
                new_u = np.zeros(idx.size)
            break
        else:
            raise ClassicalBranchLost(f"branch lost at t={t:g}", {"t": t, "positions": x.tolist(),
                                                                 "gradient": u.tolist()})
        for i, xi in poles:
            chain.append(i, xi, 2 * a[i] * dt)
        x = new_x
        u[idx] = new_u
        t += dt
        steps += 1
        times.append(t)
        hist_x.append(x.copy())
        hist_u.append(u.copy())
        if steps >= max_steps:
            reason = "step-limit"
            break
    return ClassicalRun(reason, t, collisions, np.array(times), np.array(hist_x), np.array(hist_u), chain,
                        {"classical": True, "branch": label, "dt_base": dt_base, "epsilon": eps})


def _reseed(label: str, xs: np.ndarray):
    try:
        z = make_partition_function(label, xs.size + 2, 1.0) if label and not label.startswith("sign") else None
        if z is None:
            return label, None
        reduced = reduced_after_collision(z, xs.size)
    except PartitionDomainError:
        return label, None
    if xs.size == 1:
        return reduced.label, np.zeros(1)
    sel = reduced.label
    u, _, ok = newton_solve(xs, kappa_gradient(sel, xs, SEED_KAPPA))
    return (sel, u) if ok else (sel, None)
