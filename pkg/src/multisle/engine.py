"""Discretised multiple-SLE dynamics in the upper half plane.

Each global time step dt is realised as n vertical-slit maps, one per alive
curve, with capacity 2 a_i dt placed at the current driving position. The
other driving points are carried along by the exact slit map, which is how the
pairwise 2 a_j dt / (X_i - X_j) drift enters; the partition-function drift and
the Brownian part are added with an Euler-Maruyama increment.
"""

from __future__ import annotations

import cmath
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numba
import numpy as np

from .arches import ArchConfiguration, classify_outcome
from .partition import (
    CHORDAL, CONST, FOURPOINT, Z0, PartitionFunction, grad_log_z_kernel,
    make_partition_function, reduced_after_collision, target_arches,
)

log = logging.getLogger(__name__)

COLLISION, CAPACITY_CAP, NUMERICAL_FAILURE = 0, 1, 2
NOISE_BANK = 256
STOP_NAMES = {COLLISION: "collision-complete", CAPACITY_CAP: "capacity-cap",
              NUMERICAL_FAILURE: "numerical-failure"}


class NumericalFailure(RuntimeError):
    def __init__(self, message: str, diagnostics: dict | None = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class EngineDomainError(ValueError):
    pass


# ---------------------------------------------------------------------------
# parameters and state
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SleParameters:
    kappa: float
    points: tuple[float, ...]
    speeds: tuple[float, ...] | None = None
    partition: str = "chordal"
    dt_base: float = 1e-4
    collision_epsilon: float | None = None
    capacity_cap: float = 50.0
    rng_seed: int = 0
    gap_scale: float | None = None
    noise: bool = True
    dt_max: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "points", tuple(float(p) for p in self.points))
        n = len(self.points)
        speeds = self.speeds if self.speeds is not None else (1.0 / max(n, 1),) * n
        object.__setattr__(self, "speeds", tuple(float(s) for s in speeds))
        problems = self.problems()
        if problems:
            raise EngineDomainError("; ".join(problems))

    def problems(self) -> list[str]:
        out = []
        if not 0 < self.kappa < 8:
            out.append("kappa must lie in (0,8)")
        pts = self.points
        if len(pts) == 0:
            out.append("need at least one point")
        if any(b <= a for a, b in zip(pts, pts[1:])) or not all(map(math.isfinite, pts)):
            out.append("points must be finite and strictly increasing")
        if len(self.speeds) != len(pts):
            out.append("one speed per point is required")
        if any(s < 0 for s in self.speeds):
            out.append("speeds must be nonnegative")
        if abs(sum(self.speeds) - 1.0) > 1e-9:
            out.append("speeds must sum to 1")
        for name in ("dt_base", "capacity_cap"):
            if not getattr(self, name) > 0:
                out.append(f"{name} must be positive")
        if self.collision_epsilon is not None and not self.collision_epsilon > 0:
            out.append("collision_epsilon must be positive")
        if self.gap_scale is not None and not self.gap_scale > 0:
            out.append("gap_scale must be positive")
        if self.dt_max is not None and not self.dt_max > 0:
            out.append("dt_max must be positive")
        return out

    @property
    def n(self) -> int:
        return len(self.points)

    @property
    def spread(self) -> float:
        return self.points[-1] - self.points[0] if self.n > 1 else 1.0

    @property
    def epsilon(self) -> float:
        return self.collision_epsilon if self.collision_epsilon is not None else 1e-4 * self.spread

    @property
    def gap(self) -> float:
        # default: the smallest initial gap, so the first steps run at dt_base
        if self.gap_scale is not None:
            return self.gap_scale
        if self.n < 2:
            return 1.0
        return min(b - a for a, b in zip(self.points, self.points[1:]))

    @property
    def dt_ceiling(self) -> float:
        return self.dt_max if self.dt_max is not None else math.inf

    def partition_function(self) -> PartitionFunction:
        if self.n == 1 and self.partition in ("chordal", "const"):
            return make_partition_function("const", 1, self.kappa)
        return make_partition_function(self.partition, self.n, self.kappa)

    def seed32(self) -> int:
        return int(np.random.SeedSequence(self.rng_seed).generate_state(1, np.uint32)[0])

    def to_json(self) -> dict:
        return {
            "kappa": self.kappa, "points": list(self.points), "speeds": list(self.speeds),
            "partition": self.partition, "dt_base": self.dt_base, "collision_epsilon": self.epsilon,
            "capacity_cap": self.capacity_cap, "rng_seed": self.rng_seed, "gap_scale": self.gap,
            "dt_max": self.dt_max, "noise": self.noise,
        }


@dataclass
class DrivingState:
    t: float
    positions: np.ndarray
    alive: np.ndarray
    partition: PartitionFunction
    collisions: list[tuple[int, int]] = field(default_factory=list)

    @classmethod
    def initial(cls, params: SleParameters) -> "DrivingState":
        return cls(0.0, np.array(params.points, dtype=float), np.ones(params.n, dtype=bool),
                   params.partition_function())

    def alive_positions(self) -> np.ndarray:
        return self.positions[self.alive]

    def min_gap(self) -> float:
        xs = self.alive_positions()
        return float(np.min(np.diff(xs))) if xs.size > 1 else math.inf


class LoewnerChain:
    """Time-ordered log of elementary slit maps (curve, driving point, capacity)."""

    def __init__(self, curve=(), xi=(), capacity=()):
        self.curve = list(curve)
        self.xi = list(xi)
        self.capacity = list(capacity)

    def append(self, curve: int, xi: float, capacity: float) -> None:
        if not capacity > 0:
            raise EngineDomainError("capacity increments must be positive")
        self.curve.append(int(curve))
        self.xi.append(float(xi))
        self.capacity.append(float(capacity))

    def __len__(self) -> int:
        return len(self.xi)

    @property
    def total_capacity(self) -> float:
        return float(math.fsum(self.capacity))

    def arrays(self):
        return (np.asarray(self.curve, dtype=np.int64), np.asarray(self.xi, dtype=float),
                np.asarray(self.capacity, dtype=float))


# ---------------------------------------------------------------------------
# compiled kernels
# ---------------------------------------------------------------------------

@numba.njit(cache=True)
def _compress(x, alive, buf, idx):
    k = 0
    for i in range(x.shape[0]):
        if alive[i]:
            buf[k] = x[i]
            idx[k] = i
            k += 1
    return k


@numba.njit(cache=True)
def _slit(z, xi, four_delta):
    # real point carried by the vertical slit map of capacity four_delta / 2
    w = z - xi
    s = math.sqrt(w * w + four_delta)
    return z + four_delta / (w + s) if w > 0 else z + four_delta / (w - s)


@numba.njit(cache=True)
def _advance(x, alive, a, kappa, kind, prm, dt, noise, xi_out, buf, idx, grad, incr):
    """One global step in place. Returns False if ordering or finiteness breaks."""
    k = _compress(x, alive, buf, idx)
    grad_log_z_kernel(kind, prm, kappa, buf[:k], grad[:k])
    for p in range(k):
        i = idx[p]
        incr[p] = math.sqrt(kappa * a[i] * dt) * noise[p] + kappa * a[i] * dt * grad[p]
    for p in range(k):
        i = idx[p]
        xi_out[p] = x[i]
        if a[i] > 0.0:
            fd = 4.0 * a[i] * dt
            for q in range(k):
                if q != p:
                    j = idx[q]
                    x[j] = _slit(x[j], x[i], fd)
    for p in range(k):
        x[idx[p]] += incr[p]
    prev = -math.inf
    for p in range(k):
        v = x[idx[p]]
        if not (v > prev) or not math.isfinite(v):
            return False
        prev = v
    return True


@numba.njit(cache=True)
def _min_gap(x, alive):
    best = math.inf
    arg = -1
    last = -1
    for i in range(x.shape[0]):
        if alive[i]:
            if last >= 0:
                g = x[i] - x[last]
                if g < best:
                    best = g
                    arg = last
            last = i
    return best, arg


@numba.njit(cache=True)
def _next_alive(alive, i):
    for j in range(i + 1, alive.shape[0]):
        if alive[j]:
            return j
    return -1


@numba.njit(cache=True)
def _reduce_kind(kind, n_alive):
    if n_alive <= 1:
        return CONST
    if kind == FOURPOINT and n_alive == 2:
        return Z0
    if kind == CHORDAL:
        return CHORDAL
    return -1


@numba.njit(cache=True)
def _evolve(x0, a, kappa, kind, prm, n_target, dt_base, gap_scale, dt_max, eps, cap, seed,
            use_noise, checkpoints, record_chain):
    n = x0.shape[0]
    x = x0.copy()
    alive = np.ones(n, dtype=np.bool_)
    buf = np.empty(n)
    idx = np.empty(n, dtype=np.int64)
    grad = np.empty(n)
    incr = np.empty(n)
    noise = np.zeros(n)
    bank = np.empty(NOISE_BANK)
    bank_pos = NOISE_BANK
    xi_out = np.empty(n)
    coll = -np.ones((max(n // 2, 1), 2), dtype=np.int64)
    n_coll = 0
    n_cp = checkpoints.shape[0]
    cp_x = np.full((n_cp, n), np.nan)
    cp_gap = np.full(n_cp, np.nan)
    cp_next = 0
    size = 1024 if record_chain else 1
    ch_curve = np.empty(size, dtype=np.int64)
    ch_xi = np.empty(size)
    ch_cap = np.empty(size)
    ch_len = 0
    np.random.seed(seed)
    t = 0.0
    t_cap = cap / 2.0
    steps = 0
    min_gap_seen = math.inf
    need = max(n_target, 1)
    reason = CAPACITY_CAP
    n_alive = n
    first_done = False
    while True:
        gap, arg = _min_gap(x, alive)
        if gap < min_gap_seen:
            min_gap_seen = gap
        # checkpoints record positions frozen at the first collision
        while cp_next < n_cp and (first_done or t >= checkpoints[cp_next] / 2.0 * (1.0 - 1e-12)):
            for i in range(n):
                cp_x[cp_next, i] = x[i]
            cp_gap[cp_next] = gap
            cp_next += 1
        if gap < eps:
            j = _next_alive(alive, arg)
            coll[n_coll, 0] = arg + 1
            coll[n_coll, 1] = j + 1
            n_coll += 1
            alive[arg] = False
            alive[j] = False
            n_alive -= 2
            if not first_done:
                first_done = True
                while cp_next < n_cp:
                    for i in range(n):
                        cp_x[cp_next, i] = x[i]
                    cp_gap[cp_next] = gap
                    cp_next += 1
            if n_coll >= need or n_alive < 2:
                reason = COLLISION
                break
            kind = _reduce_kind(kind, n_alive)
            if kind < 0:
                reason = NUMERICAL_FAILURE
                break
            continue
        if t >= t_cap:
            break
        scale = gap / gap_scale
        dt = dt_base * scale * scale if n_alive > 1 else dt_base
        if dt > dt_max:
            dt = dt_max
        if t + dt > t_cap:
            dt = t_cap - t
        if cp_next < n_cp and t + dt > checkpoints[cp_next] / 2.0:
            dt = checkpoints[cp_next] / 2.0 - t
        if not dt > 0.0:
            reason = NUMERICAL_FAILURE
            break
        if use_noise:
            for p in range(n_alive):
                if bank_pos == NOISE_BANK:
                    bank[:] = np.random.standard_normal(NOISE_BANK)
                    bank_pos = 0
                noise[p] = bank[bank_pos]
                bank_pos += 1
        ok = _advance(x, alive, a, kappa, kind, prm, dt, noise, xi_out, buf, idx, grad, incr)
        if record_chain:
            p = 0
            for i in range(n):
                if alive[i]:
                    if a[i] > 0.0:
                        if ch_len == ch_xi.shape[0]:
                            ch_curve = np.concatenate((ch_curve, np.empty(ch_len, dtype=np.int64)))
                            ch_xi = np.concatenate((ch_xi, np.empty(ch_len)))
                            ch_cap = np.concatenate((ch_cap, np.empty(ch_len)))
                        ch_curve[ch_len] = i
                        ch_xi[ch_len] = xi_out[p]
                        ch_cap[ch_len] = 2.0 * a[i] * dt
                        ch_len += 1
                    p += 1
        t += dt
        steps += 1
        if not ok:
            reason = NUMERICAL_FAILURE
            break
    return (reason, t, n_coll, coll, x, alive, steps, min_gap_seen, cp_x, cp_gap,
            ch_curve[:ch_len], ch_xi[:ch_len], ch_cap[:ch_len])


@numba.njit(cache=True, parallel=True)
def _evolve_many(x0, a, kappa, kind, prm, n_target, dt_base, gap_scale, dt_max, eps, cap, seeds,
                 use_noise, checkpoints):
    m = seeds.shape[0]
    n = x0.shape[0]
    reason = np.empty(m, dtype=np.int64)
    t_stop = np.empty(m)
    n_coll = np.empty(m, dtype=np.int64)
    coll = np.empty((m, max(n // 2, 1), 2), dtype=np.int64)
    x_final = np.empty((m, n))
    steps = np.empty(m, dtype=np.int64)
    min_gap = np.empty(m)
    cp_x = np.empty((m, checkpoints.shape[0], n))
    for s in numba.prange(m):
        out = _evolve(x0, a, kappa, kind, prm, n_target, dt_base, gap_scale, dt_max, eps, cap,
                      seeds[s], use_noise, checkpoints, False)
        reason[s] = out[0]
        t_stop[s] = out[1]
        n_coll[s] = out[2]
        coll[s] = out[3]
        x_final[s] = out[4]
        steps[s] = out[6]
        min_gap[s] = out[7]
        cp_x[s] = out[8]
    return reason, t_stop, n_coll, coll, x_final, steps, min_gap, cp_x


@numba.njit(cache=True)
def _upper_sqrt(u):
    s = cmath.sqrt(u)
    if s.imag < 0.0:
        s = -s
    return s


@numba.njit(cache=True)
def _forward(xi, cap, z):
    """Push z through all slit maps. Returns (image, displacement, swallowed)."""
    disp = 0j
    for k in range(xi.shape[0]):
        fd = 2.0 * cap[k]
        w = z - xi[k]
        s = _upper_sqrt(w * w + fd)
        if s.imag <= 1e-12 * (abs(s) + math.sqrt(fd)):
            return z, disp, True
        step = fd / (w + s)
        z = z + step
        disp = disp + step
    return z, disp, False


@numba.njit(cache=True)
def _inverse(xi, cap, upto, z):
    for k in range(upto, -1, -1):
        fd = 2.0 * cap[k]
        w = z - xi[k]
        s = cmath.sqrt(w * w - fd)
        if abs(s.imag) <= 1e-14 * (abs(s) + 1.0):
            r = abs(s.real) if w.real >= 0 else -abs(s.real)
            s = complex(r, abs(s.imag))
        elif s.imag < 0.0:
            s = -s
        z = xi[k] + s
        if z.imag < -1e-9:
            return z, False
    return z, True


@numba.njit(cache=True)
def _trace(curve, xi, cap, target, stride):
    picks = 0
    for k in range(curve.shape[0]):
        if curve[k] == target:
            picks += 1
    out = np.empty(picks // stride + 2, dtype=np.complex128)
    cnt = 0
    seen = 0
    last = -1
    for k in range(curve.shape[0]):
        if curve[k] != target:
            continue
        last = k
        if seen % stride == 0:
            z, ok = _inverse(xi, cap, k, complex(xi[k], 0.0))
            if not ok:
                return out[:cnt], False
            out[cnt] = z
            cnt += 1
        seen += 1
    if last >= 0 and (seen - 1) % stride != 0:
        z, ok = _inverse(xi, cap, last, complex(xi[last], 0.0))
        if not ok:
            return out[:cnt], False
        out[cnt] = z
        cnt += 1
    return out[:cnt], True


# ---------------------------------------------------------------------------
# public operations
# ---------------------------------------------------------------------------

def adaptive_dt(params: SleParameters, min_gap: float) -> float:
    if not math.isfinite(min_gap):
        return params.dt_base
    return min(params.dt_base * (min_gap / params.gap) ** 2, params.dt_ceiling)


def step(state: DrivingState, chain: LoewnerChain | None, params: SleParameters,
         increments: Sequence[float], dt: float | None = None):
    """Advance the driving points by one adaptive step using the given standard normals.

    ``increments`` holds one N(0,1) draw per alive curve in left-to-right order.
    """
    xs = state.alive_positions()
    noise = np.asarray(increments, dtype=float)
    if noise.shape != xs.shape:
        raise EngineDomainError(f"need {xs.size} increments, got {noise.size}")
    if xs.size > 1 and state.min_gap() <= params.epsilon:
        raise EngineDomainError("step requires the minimum gap to exceed collision_epsilon")
    if dt is None:
        dt = adaptive_dt(params, state.min_gap())
    n = params.n
    a = np.array(params.speeds)
    z = state.partition
    x = state.positions.copy()
    buf, grad, incr, xi_out = (np.empty(n) for _ in range(4))
    ok = _advance(x, state.alive, a, params.kappa, z.kind, z.prm, dt,
                  np.concatenate([noise, np.zeros(n - noise.size)]), xi_out, buf,
                  np.empty(n, dtype=np.int64), grad, incr)
    if not ok:
        raise NumericalFailure("driving points lost their ordering", {"dt": dt, "positions": x.tolist(),
                                                                     "before": state.positions.tolist()})
    if chain is not None:
        for p, i in enumerate(np.flatnonzero(state.alive)):
            if a[i] > 0:
                chain.append(int(i), xi_out[p], 2 * a[i] * dt)
    return replace(state, t=state.t + dt, positions=x, collisions=list(state.collisions)), chain


def detect_collision(state: DrivingState, epsilon: float) -> tuple[int, int] | None:
    """Leftmost-smallest adjacent alive pair closer than epsilon, 1-based."""
    ids = np.flatnonzero(state.alive)
    if ids.size < 2:
        return None
    gaps = np.diff(state.positions[ids])
    k = int(np.argmin(gaps))
    if gaps[k] < epsilon:
        return int(ids[k]) + 1, int(ids[k + 1]) + 1
    return None


def merge_pair(state: DrivingState, pair: tuple[int, int]) -> DrivingState:
    alive = state.alive.copy()
    alive[pair[0] - 1] = alive[pair[1] - 1] = False
    left = int(alive.sum())
    z = reduced_after_collision(state.partition, left) if left else state.partition
    return replace(state, alive=alive, partition=z, collisions=state.collisions + [pair])


def map_point(chain: LoewnerChain, z: complex) -> complex | None:
    """Image of z under f_t; None when z has been swallowed by the hulls."""
    if not complex(z).imag > 0:
        raise EngineDomainError("map_point needs Im z > 0")
    _, xi, cap = chain.arrays()
    w, _, swallowed = _forward(xi, cap, complex(z))
    return None if swallowed else complex(w)


def laurent_coefficient(chain: LoewnerChain) -> float:
    """Coefficient c in f_t(z) = z + c/z + O(z^-2), by two-point Richardson at i*infinity."""
    _, xi, cap = chain.arrays()
    if xi.size == 0:
        return 0.0
    scale = 1.0 + float(np.max(np.abs(xi))) + math.sqrt(float(np.sum(cap)))
    vals = []
    for y in (1e3 * scale, 2e3 * scale):
        _, disp, swallowed = _forward(xi, cap, complex(0.0, y))
        if swallowed:
            raise NumericalFailure("reference point swallowed while measuring capacity")
        vals.append(disp * complex(0.0, y))
    return float((2 * vals[1] - vals[0]).real)


def trace_points(chain: LoewnerChain, curve: int, stride: int = 1,
                 start: float | None = None) -> np.ndarray:
    """Tip positions of one curve (0-based index), oldest first.

    The tip after elementary step k is f_k^{-1}(xi_k): the pole of the k-th slit
    map pulled back through the maps up to and including k. ``start`` is
    prepended as the zero-capacity point.
    """
    if stride < 1:
        raise EngineDomainError("stride must be >= 1")
    cur, xi, cap = chain.arrays()
    pts, ok = _trace(cur, xi, cap, int(curve), int(stride))
    if not ok:
        raise NumericalFailure(f"inverse slit map left the upper half plane on curve {curve}")
    if start is not None:
        pts = np.concatenate([[complex(start, 0.0)], pts])
    return pts


@dataclass
class SimulationOutcome:
    stop_reason: str
    tau: float
    collisions: list[tuple[int, int]]
    arch: ArchConfiguration | None
    positions: np.ndarray
    diagnostics: dict
    chain: LoewnerChain | None = None
    traces: dict[int, np.ndarray] | None = None

    @property
    def capacity(self) -> float:
        return 2 * self.tau

    def to_json(self, sample_id: int | None = None) -> dict:
        out = {
            "stop_reason": self.stop_reason,
            "tau": self.tau,
            "capacity": self.capacity,
            "collisions": [list(c) for c in self.collisions],
            "arch": self.arch.to_json() if self.arch is not None else None,
            "positions": [float(v) for v in self.positions],
            "diagnostics": self.diagnostics,
        }
        if sample_id is not None:
            out["sample_id"] = sample_id
        return out


def _kernel_args(params: SleParameters):
    z = params.partition_function()
    return (np.array(params.points), np.array(params.speeds), float(params.kappa), z.kind, z.prm,
            target_arches(z), float(params.dt_base), float(params.gap), float(params.dt_ceiling),
            float(params.epsilon),
            float(params.capacity_cap))


def evolve_until(params: SleParameters, record_chain: bool = False, trace_stride: int | None = None,
                 checkpoints: Sequence[float] = (), seed32: int | None = None) -> SimulationOutcome:
    """Run one sample until its arches close, the capacity cap is hit, or the scheme fails.

    Checkpoints are capacities (2t); positions are frozen there at the first collision.
    """
    args = _kernel_args(params)
    cps = np.sort(np.asarray(checkpoints, dtype=float))
    seed = params.seed32() if seed32 is None else int(seed32)
    record = record_chain or trace_stride is not None
    (reason, t, n_coll, coll, x, alive, steps, min_gap, cp_x, cp_gap,
     ch_curve, ch_xi, ch_cap) = _evolve(*args, seed, params.noise, cps, record)
    collisions = [(int(coll[k, 0]), int(coll[k, 1])) for k in range(n_coll)]
    diagnostics = {"steps": int(steps), "min_gap": float(min_gap),
                   "checkpoint_capacity": cps.tolist(), "checkpoint_min_gap": cp_gap.tolist()}
    if cps.size:
        diagnostics["checkpoint_positions"] = cp_x.tolist()
    arch = None
    if reason != NUMERICAL_FAILURE:
        arch = classify_outcome(params.n, collisions)
    else:
        diagnostics["positions"] = x.tolist()
        log.warning("numerical failure after %d steps at t=%g", steps, t)
    chain = LoewnerChain(ch_curve, ch_xi, ch_cap) if record else None
    traces = None
    if trace_stride is not None:
        traces = {i: trace_points(chain, i, trace_stride, start=params.points[i])
                  for i in range(params.n) if params.speeds[i] > 0}
    return SimulationOutcome(STOP_NAMES[int(reason)], float(t), collisions, arch, x, diagnostics,
                             chain, traces)
