"""Monte-Carlo estimation of arch probabilities and hitting statistics.

Every sample draws its stream from ``SeedSequence(master_seed, spawn_key=(i,))``
so results do not depend on how samples are spread over threads.
"""

from __future__ import annotations

import logging
import math
import os
import time
import warnings
from collections import Counter
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numba
import numpy as np
from scipy.special import gammaincc
from scipy.stats import norm

from .arches import ArchConfiguration, classify_outcome
from .engine import (
    COLLISION, NUMERICAL_FAILURE, STOP_NAMES, SleParameters, _evolve_many,
    _kernel_args, evolve_until,
)
from .partition import PartitionFunction

log = logging.getLogger(__name__)

# numba probes an old TBB on some systems and falls back on its own
warnings.filterwarnings("ignore", message="The TBB threading layer", category=numba.NumbaWarning)

MAX_FAILURE_RATE = 0.05
# relative size below which a martingale drift is floating-point noise
RESOLUTION = 1e-10
Z95 = float(norm.ppf(0.975))


class HarnessError(RuntimeError):
    def __init__(self, message: str, estimate=None):
        super().__init__(message)
        self.estimate = estimate


class HarnessDomainError(ValueError):
    pass


# ---------------------------------------------------------------------------
# plans, seeds, threads
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EstimationPlan:
    params: SleParameters
    n_samples: int
    master_seed: int = 0
    threads: int | None = None
    checkpoints: tuple[float, ...] = ()

    def __post_init__(self):
        if self.n_samples < 1:
            raise HarnessDomainError("n_samples must be >= 1")
        if self.threads is not None and self.threads < 1:
            raise HarnessDomainError("threads must be >= 1")
        cps = tuple(sorted(float(c) for c in self.checkpoints))
        if any(c <= 0 for c in cps):
            raise HarnessDomainError("checkpoint capacities must be positive")
        object.__setattr__(self, "checkpoints", cps)

    def to_json(self) -> dict:
        return {"params": self.params.to_json(), "n_samples": self.n_samples,
                "master_seed": self.master_seed, "threads": self.threads,
                "checkpoints": list(self.checkpoints)}


def sample_seeds(master_seed: int, n: int, start: int = 0) -> np.ndarray:
    """32-bit kernel seeds for samples start..start+n-1."""
    return np.array([np.random.SeedSequence(master_seed, spawn_key=(i,)).generate_state(1, np.uint32)[0]
                     for i in range(start, start + n)], dtype=np.int64)


def configure_threads(hint: int | None = None) -> int:
    """Set numba's thread count from the hint, capped by MULTISLE_THREADS."""
    limit = numba.config.NUMBA_NUM_THREADS
    env = os.environ.get("MULTISLE_THREADS")
    if env:
        try:
            limit = min(limit, max(1, int(env)))
        except ValueError:
            log.warning("ignoring non-integer MULTISLE_THREADS=%r", env)
    k = min(limit, hint) if hint else limit
    numba.set_num_threads(k)
    return k


def wilson_interval(k: int, n: int, z: float = Z95) -> tuple[float, float]:
    if n == 0:
        return 0.0, 1.0
    p = k / n
    den = 1 + z * z / n
    centre = (p + z * z / (2 * n)) / den
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / den
    return max(0.0, centre - half), min(1.0, centre + half)


# ---------------------------------------------------------------------------
# raw batch
# ---------------------------------------------------------------------------

@dataclass
class SampleBatch:
    """Per-sample kernel output, indexed by sample id."""

    reason: np.ndarray
    tau: np.ndarray
    n_collisions: np.ndarray
    collisions: np.ndarray
    positions: np.ndarray
    steps: np.ndarray
    min_gap: np.ndarray
    checkpoint_positions: np.ndarray
    seeds: np.ndarray

    def collision_list(self, s: int) -> list[tuple[int, int]]:
        return [(int(self.collisions[s, k, 0]), int(self.collisions[s, k, 1]))
                for k in range(int(self.n_collisions[s]))]

    def record(self, s: int, n: int) -> dict:
        """JSON-lines outcome record of sample s."""
        coll = self.collision_list(s)
        ok = self.reason[s] != NUMERICAL_FAILURE
        return {
            "sample_id": s,
            "stop_reason": STOP_NAMES[int(self.reason[s])],
            "tau": float(self.tau[s]),
            "capacity": 2 * float(self.tau[s]),
            "collisions": [list(c) for c in coll],
            "arch": classify_outcome(n, coll).to_json() if ok else None,
            "positions": [float(v) for v in self.positions[s]],
            "diagnostics": {"steps": int(self.steps[s]), "min_gap": float(self.min_gap[s])},
        }


def run_batch(plan: EstimationPlan, checkpoints: Sequence[float] | None = None) -> SampleBatch:
    configure_threads(plan.threads)
    p = plan.params
    cps = np.asarray(plan.checkpoints if checkpoints is None else sorted(checkpoints), dtype=float)
    if cps.size and cps[-1] > p.capacity_cap * (1 + 1e-12):
        raise HarnessDomainError("checkpoints must not exceed the capacity cap")
    seeds = sample_seeds(plan.master_seed, plan.n_samples)
    out = _evolve_many(*_kernel_args(p), seeds, p.noise, cps)
    reason, tau, n_coll, coll, x, steps, min_gap, cp_x = out
    return SampleBatch(reason, tau, n_coll, coll, x, steps, min_gap, cp_x, seeds)


def sample_outcome(plan: EstimationPlan, s: int, trace_stride: int | None = None):
    """Replay sample s alone (same stream as in the batch), optionally with traces."""
    seed = int(sample_seeds(plan.master_seed, 1, start=s)[0])
    return evolve_until(plan.params, trace_stride=trace_stride, seed32=seed)


# ---------------------------------------------------------------------------
# arch probabilities
# ---------------------------------------------------------------------------

@dataclass
class ArchEstimate:
    n_samples: int
    arch_counts: dict[str, int]
    failures: int
    stop_reasons: dict[str, int]
    mean_capacity: float
    runtime_s: float
    collision_sequences: dict[str, int] = field(default_factory=dict)
    plan: EstimationPlan | None = None

    @property
    def n_classified(self) -> int:
        return self.n_samples - self.failures

    @property
    def estimates(self) -> dict[str, float]:
        n = self.n_classified
        return {k: (v / n if n else math.nan) for k, v in self.arch_counts.items()}

    @property
    def ci(self) -> dict[str, tuple[float, float]]:
        return {k: wilson_interval(v, self.n_classified) for k, v in self.arch_counts.items()}

    def probability(self, arch: ArchConfiguration | str) -> float:
        key = arch if isinstance(arch, str) else arch.label()
        n = self.n_classified
        return self.arch_counts.get(key, 0) / n if n else math.nan

    def sigma(self, arch: ArchConfiguration | str) -> float:
        p = self.probability(arch)
        return math.sqrt(p * (1 - p) / self.n_classified)

    def interval(self, arch: ArchConfiguration | str) -> tuple[float, float]:
        key = arch if isinstance(arch, str) else arch.label()
        return wilson_interval(self.arch_counts.get(key, 0), self.n_classified)

    @property
    def failure_rate(self) -> float:
        return self.failures / self.n_samples

    def to_json(self) -> dict:
        return {
            "plan": self.plan.to_json() if self.plan is not None else None,
            "arch_counts": dict(self.arch_counts),
            "estimates": self.estimates,
            "ci": {k: list(v) for k, v in self.ci.items()},
            "failures": self.failures,
            "runtime_s": self.runtime_s,
            "n_samples": self.n_samples,
            "stop_reasons": dict(self.stop_reasons),
            "mean_capacity": self.mean_capacity,
            "collision_sequences": dict(self.collision_sequences),
        }


def summarize(batch: SampleBatch, plan: EstimationPlan, runtime_s: float) -> ArchEstimate:
    n = plan.params.n
    counts: Counter[str] = Counter()
    sequences: Counter[str] = Counter()
    reasons = Counter(STOP_NAMES[int(r)] for r in batch.reason)
    failures = int(np.sum(batch.reason == NUMERICAL_FAILURE))
    for s in range(plan.n_samples):
        if batch.reason[s] == NUMERICAL_FAILURE:
            continue
        coll = batch.collision_list(s)
        counts[classify_outcome(n, coll).label()] += 1
        sequences[";".join(f"{i}-{j}" for i, j in coll) or "none"] += 1
    return ArchEstimate(plan.n_samples, dict(sorted(counts.items())), failures, dict(reasons),
                        float(np.mean(2 * batch.tau)), runtime_s, dict(sorted(sequences.items())), plan)


def estimate_arch_probabilities(plan: EstimationPlan) -> ArchEstimate:
    """Run the plan and tabulate the arch configuration of every sample.

    Raises HarnessError (with the estimate attached) when more than 5% of the
    samples end in numerical failure.
    """
    t0 = time.perf_counter()
    batch = run_batch(plan)
    est = summarize(batch, plan, time.perf_counter() - t0)
    if est.failure_rate > MAX_FAILURE_RATE:
        raise HarnessError(f"{est.failures}/{est.n_samples} samples failed numerically; "
                           "reduce dt_base or adjust gap_scale", est)
    return est


# ---------------------------------------------------------------------------
# two-point analytic companions
# ---------------------------------------------------------------------------

def bessel_effective_dimension(kappa: float, delta: float) -> float:
    """Dimension of the gap process of 2SLE driven by Z = gap^delta."""
    if not kappa > 0:
        raise HarnessDomainError("kappa must be positive")
    return 1 + 2 * delta + 4 / kappa


def _check_mixed(kappa, lam, mu, y):
    if not 0 < kappa < 8:
        raise HarnessDomainError("kappa must lie in (0,8)")
    if not y > 0:
        raise HarnessDomainError("y must be positive")
    if lam < 0 or mu < 0 or lam + mu == 0:
        raise HarnessDomainError("lambda, mu must be >= 0 and not both zero")


def hitting_probability_mixed(kappa: float, lam: float, mu: float, y: float) -> float:
    """P(tau < infinity) for Z = lam*Z0 + mu*Z2 started at gap y."""
    _check_mixed(kappa, lam, mu, y)
    return lam / (lam + mu * y ** ((8 - kappa) / kappa))


def hitting_probability_by(kappa: float, lam: float, mu: float, y: float, capacity: float) -> float:
    """P(tau < capacity/2) for the same mixture.

    The mixture is the weighted sum of its two pure laws; under Z0 the gap is
    sqrt(kappa) times a Bessel process of index nu = (8-kappa)/(2 kappa), whose
    hitting time of 0 from r is r^2 / (2 G) with G ~ Gamma(nu); under Z2 it never hits.
    """
    _check_mixed(kappa, lam, mu, y)
    if not capacity > 0:
        raise HarnessDomainError("capacity must be positive")
    nu = (8 - kappa) / (2 * kappa)
    t = capacity / 2
    return hitting_probability_mixed(kappa, lam, mu, y) * float(gammaincc(nu, y * y / (2 * kappa * t)))


@dataclass
class MixedHittingEstimate:
    caps: tuple[float, float]
    hits: tuple[int, int]
    n_samples: int
    failures: int
    analytic_infinite: float
    analytic_finite: tuple[float, float]
    runtime_s: float

    @property
    def frequencies(self) -> tuple[float, float]:
        n = self.n_samples - self.failures
        return self.hits[0] / n, self.hits[1] / n

    @property
    def ci(self) -> tuple[tuple[float, float], tuple[float, float]]:
        n = self.n_samples - self.failures
        return wilson_interval(self.hits[0], n), wilson_interval(self.hits[1], n)

    @property
    def cap_shift(self) -> float:
        f = self.frequencies
        return f[1] - f[0]

    def to_json(self) -> dict:
        return {"caps": list(self.caps), "hits": list(self.hits), "n_samples": self.n_samples,
                "frequencies": list(self.frequencies), "ci": [list(c) for c in self.ci],
                "cap_shift": self.cap_shift, "failures": self.failures,
                "analytic_infinite": self.analytic_infinite,
                "analytic_finite": list(self.analytic_finite), "runtime_s": self.runtime_s}


def _mixture_coefficients(z: PartitionFunction) -> tuple[float, float]:
    label = z.label
    if label == "Z0":
        return 1.0, 0.0
    if label == "Z2":
        return 0.0, 1.0
    if label.startswith("mixture"):
        return z.params[0], z.params[1]
    raise HarnessDomainError(f"mixed hitting needs an n=2 Z0/Z2/mixture plan, got {label}")


def estimate_mixed_hitting(plan: EstimationPlan, second_cap: float | None = None) -> MixedHittingEstimate:
    """Collision frequency before the plan's cap and before a second, larger cap.

    One run per sample to the larger cap serves both: a collision before the
    smaller cap is read off the same path, so the indicator is monotone in the
    cap for every seed.
    """
    p = plan.params
    if p.n != 2:
        raise HarnessDomainError("mixed hitting needs n=2")
    lam, mu = _mixture_coefficients(p.partition_function())
    cap_lo = p.capacity_cap
    cap_hi = 2 * cap_lo if second_cap is None else float(second_cap)
    if cap_hi < cap_lo:
        raise HarnessDomainError("second cap must be >= the plan cap")
    t0 = time.perf_counter()
    batch = run_batch(replace(plan, params=replace(p, capacity_cap=cap_hi)), checkpoints=())
    ok = batch.reason != NUMERICAL_FAILURE
    hit = ok & (batch.reason == COLLISION)
    hit_lo = hit & (2 * batch.tau <= cap_lo)
    failures = int(np.sum(~ok))
    y = p.points[1] - p.points[0]
    est = MixedHittingEstimate(
        (cap_lo, cap_hi), (int(hit_lo.sum()), int(hit.sum())), plan.n_samples, failures,
        hitting_probability_mixed(p.kappa, lam, mu, y),
        (hitting_probability_by(p.kappa, lam, mu, y, cap_lo), hitting_probability_by(p.kappa, lam, mu, y, cap_hi)),
        time.perf_counter() - t0)
    if failures / plan.n_samples > MAX_FAILURE_RATE:
        raise HarnessError(f"{failures}/{plan.n_samples} samples failed numerically", est)
    return est


# ---------------------------------------------------------------------------
# martingale diagnostic
# ---------------------------------------------------------------------------

LogFunction = Callable[[np.ndarray], float]


def _as_log(f) -> LogFunction:
    if isinstance(f, PartitionFunction):
        return f.log_value
    return f


def power_log(z: PartitionFunction, p: float) -> LogFunction:
    """log of Z^p, for negative controls."""
    return lambda x: p * z.log_value(x)


@dataclass
class MartingaleSeries:
    checkpoints: list[float]
    initial: float
    mean: list[float]
    stderr: list[float]
    n_samples: int
    failures: int
    runtime_s: float
    band_sigmas: float = 3.0

    @property
    def ci(self) -> list[tuple[float, float]]:
        return [(m - Z95 * s, m + Z95 * s) for m, s in zip(self.mean, self.stderr)]

    @property
    def deviations(self) -> list[float]:
        """(mean - initial) / stderr; differences below round-off count as 0."""
        out = []
        floor = RESOLUTION * max(abs(self.initial), 1.0)
        for m, s in zip(self.mean, self.stderr):
            d = m - self.initial
            if abs(d) <= floor:
                out.append(0.0)
            else:
                out.append(d / s if s > 0 else math.copysign(math.inf, d))
        return out

    @property
    def within_band(self) -> list[bool]:
        return [abs(d) <= self.band_sigmas for d in self.deviations]

    def to_json(self) -> dict:
        return {"checkpoints": self.checkpoints, "initial": self.initial, "mean": self.mean,
                "stderr": self.stderr, "ci": [list(c) for c in self.ci],
                "deviation_sigmas": self.deviations, "within_band": self.within_band,
                "n_samples": self.n_samples, "failures": self.failures, "runtime_s": self.runtime_s}


def martingale_diagnostic(plan: EstimationPlan, numerator, checkpoints: Sequence[float] | None = None,
                          denominator=None) -> MartingaleSeries:
    """Sample means of numerator/Z at checkpoint capacities.

    Samples that collide before a checkpoint contribute the ratio at their
    collision point (frozen). ``numerator`` and ``denominator`` are partition
    functions or callables returning log values; the denominator defaults to
    the plan's Z. Failed samples are excluded and counted.
    """
    cps = sorted(plan.checkpoints if checkpoints is None else checkpoints)
    if not cps:
        raise HarnessDomainError("need at least one checkpoint")
    p = plan.params
    if cps[-1] > p.capacity_cap:
        plan = replace(plan, params=replace(p, capacity_cap=cps[-1]))
    num = _as_log(numerator)
    den = _as_log(denominator if denominator is not None else p.partition_function())
    t0 = time.perf_counter()
    batch = run_batch(plan, checkpoints=cps)
    ok = batch.reason != NUMERICAL_FAILURE
    x0 = np.array(p.points)
    initial = math.exp(num(x0) - den(x0))
    means, errs = [], []
    for c in range(len(cps)):
        vals = np.array([math.exp(num(batch.checkpoint_positions[s, c]) - den(batch.checkpoint_positions[s, c]))
                         for s in np.flatnonzero(ok)])
        means.append(float(vals.mean()))
        errs.append(float(vals.std(ddof=1) / math.sqrt(vals.size)) if vals.size > 1 else math.inf)
    failures = int(np.sum(~ok))
    series = MartingaleSeries(list(map(float, cps)), initial, means, errs, plan.n_samples, failures,
                              time.perf_counter() - t0)
    if failures / plan.n_samples > MAX_FAILURE_RATE:
        raise HarnessError(f"{failures}/{plan.n_samples} samples failed numerically", series)
    return series
