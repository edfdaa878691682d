"""Periodic hypercubic lattices and their window subsystems."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from itertools import product
from typing import Iterable, Sequence

import numpy as np

from .errors import InvalidArgument


@dataclass(frozen=True)
class Lattice:
    """D-dimensional periodic hypercubic lattice.

    Sites are numbered in row-major order of their coordinate tuples, so on a
    ring site ``j`` has coordinate ``(j,)`` and on a 4x4 grid site ``5`` is
    ``(1, 1)``.
    """

    dims: tuple[int, ...]
    periodic: bool = field(default=True, init=False)

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        if not dims or any(d < 1 for d in dims):
            raise InvalidArgument(f"lattice sides must be positive, got {self.dims!r}")
        object.__setattr__(self, "dims", dims)

    @classmethod
    def ring(cls, n: int) -> "Lattice":
        return cls((n,))

    @property
    def D(self) -> int:
        return len(self.dims)

    @property
    def n(self) -> int:
        return int(np.prod(self.dims))

    @cached_property
    def _strides(self) -> tuple[int, ...]:
        strides = []
        s = 1
        for d in reversed(self.dims):
            strides.append(s)
            s *= d
        return tuple(reversed(strides))

    def check_site(self, a: int) -> int:
        if not (0 <= int(a) < self.n):
            raise InvalidArgument(f"site {a} out of range [0, {self.n})")
        return int(a)

    def coords(self, a: int) -> tuple[int, ...]:
        a = self.check_site(a)
        return tuple((a // s) % d for s, d in zip(self._strides, self.dims))

    def index(self, coords: Sequence[int]) -> int:
        if len(coords) != self.D:
            raise InvalidArgument(f"expected {self.D} coordinates, got {len(coords)}")
        return sum((int(c) % d) * s for c, d, s in zip(coords, self.dims, self._strides))

    def shift(self, a: int, axis: int = 0, step: int = 1) -> int:
        c = list(self.coords(a))
        c[axis] += step
        return self.index(c)


def distance(lat: Lattice, a: int, b: int) -> int:
    """Manhattan distance with the periodic minimum taken per axis."""
    ca, cb = lat.coords(a), lat.coords(b)
    total = 0
    for x, y, d in zip(ca, cb, lat.dims):
        diff = abs(x - y)
        total += min(diff, d - diff)
    return total


def set_distance(lat: Lattice, A: Iterable[int], B: Iterable[int]) -> int:
    A, B = list(A), list(B)
    if not A or not B:
        raise InvalidArgument("set_distance needs two nonempty site sets")
    return min(distance(lat, a, b) for a in A for b in B)


@dataclass(frozen=True)
class Subsystem:
    sites: tuple[int, ...]
    anchor: int
    width: int

    def __len__(self) -> int:
        return len(self.sites)

    def __contains__(self, site) -> bool:
        return site in self.sites


def hypercube(lat: Lattice, anchor: int, zeta: int) -> Subsystem:
    """The window ``{b : a_j <= b_j < a_j + zeta (mod dims_j)}`` anchored at ``anchor``."""
    base = lat.coords(anchor)
    sites = tuple(
        lat.index([c + o for c, o in zip(base, offs)])
        for offs in product(range(zeta), repeat=lat.D)
    )
    return Subsystem(sites=sites, anchor=int(anchor), width=int(zeta))


def local_subsystems(lat: Lattice, zeta: int) -> list[Subsystem]:
    """One width-``zeta`` window per site, in row-major anchor order."""
    zeta = int(zeta)
    if zeta < 1 or zeta > min(lat.dims):
        raise InvalidArgument(
            f"window width {zeta} must lie in [1, {min(lat.dims)}] for dims {lat.dims}"
        )
    return [hypercube(lat, a, zeta) for a in range(lat.n)]


def window_site_matrix(lat: Lattice, zeta: int) -> np.ndarray:
    """``(n, zeta**D)`` int array; row ``a`` lists the sites of the window anchored at ``a``."""
    return np.array([w.sites for w in local_subsystems(lat, zeta)], dtype=np.int64)
