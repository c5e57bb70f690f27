"""Arch configurations: non-crossing pairings of n boundary points.

Points are labelled 1..n from left to right along the real line. A
configuration with m pairs leaves n - 2m points joined to infinity; such
points may not sit under any pair.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from math import comb
from typing import Iterable, Sequence


class ArchDomainError(ValueError):
    pass


class CollisionInconsistency(ValueError):
    """A collision sequence cannot come from a planar evolution."""


@dataclass(frozen=True, order=True)
class ArchConfiguration:
    n: int
    pairs: tuple[tuple[int, int], ...]
    infinity_lines: tuple[int, ...] = field(default=())

    def __post_init__(self):
        pairs = tuple(sorted((min(p), max(p)) for p in self.pairs))
        object.__setattr__(self, "pairs", pairs)
        object.__setattr__(self, "infinity_lines", tuple(sorted(self.infinity_lines)))
        _check(self)

    @property
    def m(self) -> int:
        return len(self.pairs)

    def label(self) -> str:
        """Compact text form, e.g. ``(1,4)(2,3)|`` or ``(1,2)|3``."""
        body = "".join(f"({i},{j})" for i, j in self.pairs)
        return body + "|" + ",".join(map(str, self.infinity_lines))

    def to_json(self) -> dict:
        return {
            "n": self.n,
            "m": self.m,
            "pairs": [list(p) for p in self.pairs],
            "infinity": list(self.infinity_lines),
        }

    @classmethod
    def from_json(cls, obj: dict | str) -> "ArchConfiguration":
        if isinstance(obj, str):
            obj = json.loads(obj)
        arch = cls(int(obj["n"]), tuple(tuple(p) for p in obj["pairs"]), tuple(obj["infinity"]))
        if "m" in obj and int(obj["m"]) != arch.m:
            raise ArchDomainError(f"m={obj['m']} disagrees with {arch.m} pairs")
        return arch


def _check(a: ArchConfiguration) -> None:
    used = [i for p in a.pairs for i in p] + list(a.infinity_lines)
    if sorted(used) != list(range(1, a.n + 1)):
        raise ArchDomainError(f"pairs and infinity lines must partition 1..{a.n}: {a}")
    for i, j in a.pairs:
        if i == j:
            raise ArchDomainError(f"degenerate pair ({i},{j})")
        for k, l in a.pairs:
            if i < k < j < l:
                raise ArchDomainError(f"pairs ({i},{j}) and ({k},{l}) cross")
        for k in a.infinity_lines:
            if i < k < j:
                raise ArchDomainError(f"infinity line {k} enclosed by ({i},{j})")


def _check_nm(n: int, m: int) -> None:
    if n < 1 or m < 0 or 2 * m > n:
        raise ArchDomainError(f"need n >= 1 and 0 <= m <= n/2, got n={n}, m={m}")


def dimension(n: int, m: int) -> int:
    """Number of arch configurations with m pairs among n points."""
    _check_nm(n, m)
    return comb(n, m) - (comb(n, m - 1) if m > 0 else 0)


def enumerate_arches(n: int, m: int) -> list[ArchConfiguration]:
    """All configurations, sorted lexicographically on the pair list."""
    _check_nm(n, m)
    out = []
    for steps in _paths(n, n - 2 * m):
        out.append(dyck_to_arch(steps))
    out.sort(key=lambda a: (a.pairs, a.infinity_lines))
    return out


def _paths(n: int, end: int) -> Iterable[tuple[int, ...]]:
    def rec(prefix, height):
        left = n - len(prefix)
        if left == 0:
            if height == end:
                yield tuple(prefix)
            return
        if abs(height + 1 - end) <= left - 1:
            prefix.append(1)
            yield from rec(prefix, height + 1)
            prefix.pop()
        if height > 0 and abs(height - 1 - end) <= left - 1:
            prefix.append(-1)
            yield from rec(prefix, height - 1)
            prefix.pop()

    yield from rec([], 0)


def arch_to_dyck(a: ArchConfiguration) -> tuple[int, ...]:
    closing = {j for _, j in a.pairs}
    return tuple(-1 if k in closing else 1 for k in range(1, a.n + 1))


def dyck_to_arch(steps: Sequence[int]) -> ArchConfiguration:
    """Inverse of :func:`arch_to_dyck`; a -1 closes the nearest open +1."""
    stack: list[int] = []
    pairs = []
    for k, s in enumerate(steps, start=1):
        if s == 1:
            stack.append(k)
        elif s == -1:
            if not stack:
                raise ArchDomainError(f"path {tuple(steps)} goes negative at step {k}")
            pairs.append((stack.pop(), k))
        else:
            raise ArchDomainError(f"steps must be +1 or -1, got {s}")
    return ArchConfiguration(len(steps), tuple(pairs), tuple(stack))


def classify_outcome(n: int, collisions: Sequence[Sequence[int]]) -> ArchConfiguration:
    """Assemble the arch configuration produced by an ordered collision log.

    Each collision must join two points that are neighbours among the points
    still alive at that moment. Points that never collided become infinity
    lines, so a run stopped early yields a partial classification.
    """
    alive = list(range(1, n + 1))
    pairs = []
    for c in collisions:
        i, j = sorted(int(v) for v in c)
        if i not in alive or j not in alive:
            raise CollisionInconsistency(f"collision ({i},{j}) involves a dead point; alive={alive}")
        if alive.index(j) != alive.index(i) + 1:
            raise CollisionInconsistency(f"collision ({i},{j}) is not between neighbours; alive={alive}")
        pairs.append((i, j))
        alive.remove(i)
        alive.remove(j)
    return ArchConfiguration(n, tuple(pairs), tuple(alive))
