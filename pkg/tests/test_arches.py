import itertools
from math import comb, factorial

import pytest

from multisle.arches import (
    ArchConfiguration, ArchDomainError, CollisionInconsistency, arch_to_dyck, classify_outcome, dimension,
    dyck_to_arch, enumerate_arches,
)


def brute_force(n, m):
    """All non-crossing partial pairings with m pairs and no enclosed infinity line."""
    out = set()
    idx = range(1, n + 1)
    for chosen in itertools.combinations(idx, 2 * m):
        for perm in itertools.permutations(chosen):
            pairs = tuple(sorted(tuple(sorted(perm[2 * k:2 * k + 2])) for k in range(m)))
            rest = tuple(i for i in idx if i not in chosen)
            try:
                out.add(ArchConfiguration(n, pairs, rest))
            except ArchDomainError:
                pass
    return out


def path_count(n, end):
    return sum(1 for steps in itertools.product((1, -1), repeat=n)
               if all(s >= 0 for s in itertools.accumulate(steps)) and sum(steps) == end)


def test_dimension_examples():
    assert dimension(4, 2) == 2
    assert dimension(6, 3) == 5
    assert all(dimension(n, 0) == 1 for n in range(1, 9))


@pytest.mark.parametrize("n", range(1, 9))
def test_dimension_formula_and_paths(n):
    for m in range(n // 2 + 1):
        d = dimension(n, m)
        assert d == (n + 1 - 2 * m) * factorial(n) // (factorial(m) * factorial(n - m + 1))
        assert d == comb(n, m) - (comb(n, m - 1) if m else 0)
        assert d == path_count(n, n - 2 * m)


@pytest.mark.parametrize("n", range(1, 7))
def test_enumeration_matches_brute_force(n):
    for m in range(n // 2 + 1):
        got = enumerate_arches(n, m)
        assert len(got) == len(set(got)) == dimension(n, m)
        assert set(got) == brute_force(n, m)
        assert got == sorted(got, key=lambda a: (a.pairs, a.infinity_lines))


def test_enumeration_examples():
    assert [a.pairs for a in enumerate_arches(2, 1)] == [((1, 2),)]
    assert [a.pairs for a in enumerate_arches(4, 2)] == [((1, 2), (3, 4)), ((1, 4), (2, 3))]
    three = enumerate_arches(3, 1)
    assert len(three) == 2 and all(a.m == 1 and len(a.infinity_lines) == 1 for a in three)


@pytest.mark.parametrize("n", range(1, 9))
def test_dyck_round_trip(n):
    for m in range(n // 2 + 1):
        for a in enumerate_arches(n, m):
            p = arch_to_dyck(a)
            assert all(s >= 0 for s in itertools.accumulate(p)) and sum(p) == n - 2 * m
            assert dyck_to_arch(p) == a


def test_dyck_examples_and_errors():
    assert arch_to_dyck(ArchConfiguration(4, ((1, 2), (3, 4)))) == (1, -1, 1, -1)
    assert arch_to_dyck(ArchConfiguration(4, ((1, 4), (2, 3)))) == (1, 1, -1, -1)
    with pytest.raises(ArchDomainError):
        dyck_to_arch((1, -1, -1, 1))
    with pytest.raises(ArchDomainError):
        dyck_to_arch((1, 0))


def test_invariants_rejected():
    with pytest.raises(ArchDomainError):
        ArchConfiguration(4, ((1, 3), (2, 4)))
    with pytest.raises(ArchDomainError):
        ArchConfiguration(3, ((1, 3),), (2,))
    with pytest.raises(ArchDomainError):
        ArchConfiguration(3, ((1, 2),), ())
    with pytest.raises(ArchDomainError):
        dimension(3, 2)
    with pytest.raises(ArchDomainError):
        enumerate_arches(0, 0)


def test_classify_outcome():
    assert classify_outcome(4, [(2, 3), (1, 4)]) == ArchConfiguration(4, ((1, 4), (2, 3)))
    assert classify_outcome(2, [(1, 2)]) == ArchConfiguration(2, ((1, 2),))
    partial = classify_outcome(4, [(1, 2)])
    assert partial.pairs == ((1, 2),) and partial.infinity_lines == (3, 4)
    with pytest.raises(CollisionInconsistency):
        classify_outcome(4, [(1, 3)])
    with pytest.raises(CollisionInconsistency):
        classify_outcome(4, [(1, 2), (1, 3)])


def test_json_round_trip():
    a = ArchConfiguration(4, ((1, 2), (3, 4)))
    assert a.to_json() == {"n": 4, "m": 2, "pairs": [[1, 2], [3, 4]], "infinity": []}
    assert ArchConfiguration.from_json(a.to_json()) == a
    b = ArchConfiguration(5, ((2, 3),), (1, 4, 5))
    assert ArchConfiguration.from_json(b.to_json()) == b
