import math

import numpy as np
import pytest

from multisle.engine import (
    DrivingState, EngineDomainError, LoewnerChain, SleParameters, adaptive_dt, detect_collision,
    evolve_until, laurent_coefficient, map_point, merge_pair, step, trace_points,
)


def test_single_curve_zero_noise_is_vertical_slit():
    p = SleParameters(kappa=3.0, points=(0.4,), noise=False, capacity_cap=2.0)
    o = evolve_until(p, trace_stride=1)
    assert o.stop_reason == "capacity-cap"
    assert o.capacity == pytest.approx(2.0)
    assert o.positions[0] == pytest.approx(0.4, abs=1e-14)
    tr = o.traces[0]
    assert np.allclose(tr.real, 0.4, atol=1e-12)
    # tip height sqrt(2 c) for a straight slit of half-plane capacity c
    assert tr[-1].imag == pytest.approx(2.0, rel=1e-6)
    assert np.all(np.diff(tr.imag) >= 0)


def test_map_point_and_capacity_for_one_slit():
    ch = LoewnerChain()
    ch.append(0, 0.0, 2.0)
    assert map_point(ch, 3j) == pytest.approx(1j * math.sqrt(5))
    assert map_point(ch, 1j) is None
    assert map_point(LoewnerChain(), 1 + 2j) == pytest.approx(1 + 2j)
    assert laurent_coefficient(ch) == pytest.approx(2.0, rel=1e-6)
    with pytest.raises(EngineDomainError):
        map_point(ch, 1.0)


def test_laurent_coefficient_is_total_capacity():
    p = SleParameters(kappa=6.0, points=(0.0, 1.0, 2.5), capacity_cap=0.3, rng_seed=3)
    o = evolve_until(p, record_chain=True)
    assert laurent_coefficient(o.chain) == pytest.approx(o.chain.total_capacity, rel=1e-5)
    assert o.chain.total_capacity == pytest.approx(o.capacity, rel=1e-12)


def test_sle_kappa_rho_gap_growth():
    # speeds (1,0), chordal pair: the spectator is a force point with rho = 2 and zero noise
    # gives D^2 = D0^2 + 8t; the Euler error is first order in dt_base
    errs = []
    for dt in (1e-4, 1e-5):
        p = SleParameters(kappa=3.0, points=(0.0, 1.0), speeds=(1, 0), noise=False,
                          capacity_cap=2.0, dt_base=dt)
        o = evolve_until(p)
        errs.append(abs(np.diff(o.positions)[0] ** 2 / (1 + 8 * o.tau) - 1))
    assert errs[1] < 2e-4
    assert errs[0] / errs[1] > 5


@pytest.mark.parametrize("kappa,a", [(3.0, (0.5, 0.5)), (6.0, (0.8, 0.2)), (2.0, (1.0, 0.0))])
def test_z0_one_step_drift(kappa, a):
    p = SleParameters(kappa=kappa, points=(0.0, 1.0), speeds=a, partition="Z0")
    s = DrivingState.initial(p)
    dt = 1e-7
    s2, _ = step(s, None, p, [0.0, 0.0], dt=dt)
    d = 1.0
    v1 = (a[0] * (6 - kappa) - 2 * a[1]) / d
    v2 = -(a[1] * (6 - kappa) - 2 * a[0]) / d
    assert (s2.positions[0] - 0.0) / dt == pytest.approx(v1, rel=1e-5, abs=1e-5)
    assert (s2.positions[1] - 1.0) / dt == pytest.approx(v2, rel=1e-5, abs=1e-5)
    assert s2.t == pytest.approx(dt)


def test_step_uses_given_increments():
    p = SleParameters(kappa=4.0, points=(0.0,), partition="chordal")
    s = DrivingState.initial(p)
    s2, ch = step(s, LoewnerChain(), p, [1.5], dt=0.01)
    assert s2.positions[0] == pytest.approx(math.sqrt(4.0 * 0.01) * 1.5)
    assert len(ch) == 1
    with pytest.raises(EngineDomainError):
        step(s, None, p, [1.0, 2.0])


def test_adaptive_dt_rule():
    p = SleParameters(kappa=6.0, points=(0.0, 0.5, 2.0), dt_base=1e-4)
    assert p.gap == 0.5
    assert adaptive_dt(p, 0.5) == pytest.approx(1e-4)
    assert adaptive_dt(p, 0.05) == pytest.approx(1e-6)
    assert adaptive_dt(p, 5.0) == pytest.approx(1e-2)
    capped = SleParameters(kappa=6.0, points=(0.0, 0.5, 2.0), dt_base=1e-4, dt_max=1e-4)
    assert adaptive_dt(capped, 5.0) == pytest.approx(1e-4)
    assert adaptive_dt(p, math.inf) == 1e-4


def test_collision_detection_and_merge():
    p = SleParameters(kappa=6.0, points=(0.0, 1.0, 1.00001, 3.0), partition="fourpoint:1,1")
    s = DrivingState.initial(p)
    pair = detect_collision(s, 1e-4)
    assert pair == (2, 3)
    m = merge_pair(s, pair)
    assert m.partition.label == "Z0"
    assert detect_collision(m, 1e-4) is None
    assert m.collisions == [(2, 3)]


def test_deterministic_given_seed_and_ordering():
    p = SleParameters(kappa=6.0, points=(0.0, 0.3, 1.0), partition="fourpoint:1,1", rng_seed=11,
                      capacity_cap=1e4)
    a, b = evolve_until(p), evolve_until(p)
    assert a.tau == b.tau and a.collisions == b.collisions
    assert np.array_equal(a.positions, b.positions)
    assert a.stop_reason == "collision-complete"
    assert a.arch is not None
    c = evolve_until(SleParameters(kappa=6.0, points=(0.0, 0.3, 1.0), partition="fourpoint:1,1",
                                   rng_seed=12, capacity_cap=1e4))
    assert (c.tau, c.collisions) != (a.tau, a.collisions)


@pytest.mark.parametrize("seed", range(5))
def test_checkpoint_positions_stay_ordered(seed):
    p = SleParameters(kappa=6.0, points=(0.0, 0.3, 1.0, 2.0), partition="chordal", rng_seed=seed,
                      capacity_cap=1.0)
    o = evolve_until(p, checkpoints=[0.1, 0.5, 1.0])
    for row in o.diagnostics["checkpoint_positions"]:
        finite = [v for v in row if math.isfinite(v)]
        assert finite == sorted(finite)


def test_brownian_scaling_covariance():
    # x -> 2x, dt_base -> 4 dt_base maps one sample path onto the other (factor 2 is exact in binary)
    base = dict(kappa=6.0, partition="fourpoint:1,1", rng_seed=5, capacity_cap=1e6)
    a = evolve_until(SleParameters(points=(0.0, 0.3, 1.0), dt_base=1e-4, **base))
    b = evolve_until(SleParameters(points=(0.0, 0.6, 2.0), dt_base=4e-4, **base))
    assert b.tau == pytest.approx(4 * a.tau, rel=1e-9)
    assert np.allclose(b.positions, 2 * a.positions, rtol=1e-9, atol=1e-12)
    assert b.collisions == a.collisions
    assert a.diagnostics["steps"] == b.diagnostics["steps"]


def test_trace_points_stride_and_start():
    p = SleParameters(kappa=2.0, points=(0.0, 1.0), rng_seed=2, capacity_cap=0.2)
    o = evolve_until(p, record_chain=True)
    full = trace_points(o.chain, 0)
    sub = trace_points(o.chain, 0, stride=3, start=0.0)
    assert sub[0] == 0
    assert np.all(full.imag > 0)
    assert len(sub) <= len(full) // 3 + 3
    with pytest.raises(EngineDomainError):
        trace_points(o.chain, 0, stride=0)


@pytest.mark.parametrize("kw", [
    dict(kappa=8.0, points=(0, 1)), dict(kappa=3.0, points=(1, 0)), dict(kappa=3.0, points=(0, 1), speeds=(1, 1)),
    dict(kappa=3.0, points=(0, 1), speeds=(1.5, -0.5)), dict(kappa=3.0, points=(0, 1), dt_base=0),
    dict(kappa=3.0, points=(0, 1), collision_epsilon=-1), dict(kappa=3.0, points=()),
])
def test_parameter_validation(kw):
    with pytest.raises(EngineDomainError):
        SleParameters(**kw)
