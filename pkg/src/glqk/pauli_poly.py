"""Pauli strings, polynomials of Pauli expectation values, and their
cluster approximation.

A polynomial here is ``g(rho) = sum_i c_i prod_j tr(P_ij rho)``.  Its
``delta``-cluster approximation splits every factor ``P_ij`` into the
connected components of the graph on ``supp(P_ij)`` whose edges join sites at
lattice distance ``<= delta``, and replaces ``tr(P_ij rho)`` by the product of
the component expectation values.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Protocol, Sequence

from .errors import InvalidArgument, LocalityViolation
from .lattice import Lattice, distance, local_subsystems

LETTERS = ("X", "Y", "Z")

# exhaustive partition search is used up to this many cluster strings per term
EXACT_COVER_LIMIT = 8


@dataclass(frozen=True)
class PauliString:
    """Sparse Pauli string: sorted ``(site, letter)`` pairs, identities omitted."""

    lattice: Lattice
    letters: tuple[tuple[int, str], ...] = ()

    def __post_init__(self):
        seen = {}
        for site, letter in self.letters:
            site = self.lattice.check_site(site)
            if letter not in LETTERS:
                raise InvalidArgument(f"unknown Pauli letter {letter!r}")
            if site in seen:
                raise InvalidArgument(f"site {site} appears twice in a Pauli string")
            seen[site] = letter
        object.__setattr__(self, "letters", tuple(sorted(seen.items())))

    @classmethod
    def from_pairs(cls, lattice: Lattice, pairs: Iterable[Sequence]) -> "PauliString":
        return cls(lattice, tuple((int(s), str(l)) for s, l in pairs))

    @classmethod
    def parse(cls, lattice: Lattice, text: str) -> "PauliString":
        """Parse ``"X0 Y1"`` style text (0-based sites); ``"I"`` or ``""`` is identity."""
        pairs = []
        for tok in text.split():
            if tok == "I":
                continue
            pairs.append((int(tok[1:]), tok[0]))
        return cls.from_pairs(lattice, pairs)

    @property
    def support(self) -> tuple[int, ...]:
        return tuple(s for s, _ in self.letters)

    @property
    def weight(self) -> int:
        return len(self.letters)

    def as_dict(self) -> dict[int, str]:
        return dict(self.letters)

    def restrict(self, sites: Iterable[int]) -> "PauliString":
        keep = set(sites)
        return PauliString(self.lattice, tuple(p for p in self.letters if p[0] in keep))

    def translate(self, axis: int = 0, step: int = 1) -> "PauliString":
        lat = self.lattice
        return PauliString(lat, tuple((lat.shift(s, axis, step), l) for s, l in self.letters))

    def key(self) -> tuple:
        return self.letters

    def __str__(self) -> str:
        return " ".join(f"{l}{s}" for s, l in self.letters) or "I"


@dataclass(frozen=True)
class Term:
    coefficient: float
    factors: tuple[PauliString, ...]

    def __post_init__(self):
        if not self.factors:
            raise InvalidArgument("a term needs at least one factor (use the identity string)")
        object.__setattr__(self, "coefficient", float(self.coefficient))
        object.__setattr__(self, "factors", tuple(self.factors))


@dataclass(frozen=True)
class ObservablePolynomial:
    lattice: Lattice
    terms: tuple[Term, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "terms", tuple(self.terms))
        for t in self.terms:
            for f in t.factors:
                if f.lattice != self.lattice:
                    raise InvalidArgument("all Pauli strings must live on the polynomial's lattice")

    @property
    def m(self) -> int:
        return max((f.weight for t in self.terms for f in t.factors), default=0)

    @property
    def p(self) -> int:
        return max((len(t.factors) for t in self.terms), default=0)

    @property
    def norm1(self) -> float:
        return math.fsum(abs(t.coefficient) for t in self.terms)

    @property
    def norm2(self) -> float:
        return math.sqrt(math.fsum(t.coefficient ** 2 for t in self.terms))

    def distinct_strings(self) -> list[PauliString]:
        out = {}
        for t in self.terms:
            for f in t.factors:
                out.setdefault(f.key(), f)
        return list(out.values())

    # JSON file format: {"terms": [{"c": c, "factors": [[[site, "X"], ...], ...]}], "dims": [...]}
    def to_json_obj(self, include_dims: bool = True) -> dict:
        obj = {
            "terms": [
                {"c": t.coefficient, "factors": [[[s, l] for s, l in f.letters] for f in t.factors]}
                for t in self.terms
            ]
        }
        if include_dims:
            obj["dims"] = list(self.lattice.dims)
        return obj

    def to_json(self, include_dims: bool = True) -> str:
        return json.dumps(self.to_json_obj(include_dims), separators=(",", ":"))

    @classmethod
    def from_json_obj(cls, obj: Mapping, lattice: Lattice | None = None) -> "ObservablePolynomial":
        if lattice is None:
            if "dims" not in obj:
                raise InvalidArgument("polynomial file has no 'dims' and no lattice was given")
            lattice = Lattice(tuple(obj["dims"]))
        terms = []
        for t in obj.get("terms", []):
            factors = tuple(PauliString.from_pairs(lattice, f) for f in t["factors"])
            terms.append(Term(float(t["c"]), factors))
        return cls(lattice, tuple(terms))

    @classmethod
    def from_json(cls, text: str, lattice: Lattice | None = None) -> "ObservablePolynomial":
        return cls.from_json_obj(json.loads(text), lattice)


def monomial(lattice: Lattice, *factors: str, c: float = 1.0) -> ObservablePolynomial:
    """Single-term polynomial, e.g. ``monomial(lat, "X0 X1", "Y0 Y1")``."""
    return ObservablePolynomial(
        lattice, (Term(c, tuple(PauliString.parse(lattice, f) for f in factors)),)
    )


def target_polynomial(name: str, lattice: Lattice) -> ObservablePolynomial:
    """The three regression targets: local linear, local nonlinear, nonlocal correlator."""
    n = lattice.n
    if name == "g1":
        return monomial(lattice, "X0 Y1")
    if name == "g2":
        return monomial(lattice, "X0 X1", "Y0 Y1")
    if name == "g3":
        return monomial(lattice, f"X0 Y{n // 2}")
    raise InvalidArgument(f"unknown target polynomial {name!r}")


# ---------------------------------------------------------------------------
# exact evaluation


class DensityAccessor(Protocol):
    def pauli_expectation(self, P: PauliString) -> float: ...


def evaluate_exact(g: ObservablePolynomial, state: DensityAccessor | Callable) -> float:
    """Evaluate ``g`` given exact Pauli expectation values of ``state``.

    ``state`` is either an object with ``pauli_expectation(P)`` or a callable
    ``P -> tr(P rho)``.
    """
    expect = state.pauli_expectation if hasattr(state, "pauli_expectation") else state
    cache: dict = {}

    def tr(P):
        if P.weight == 0:
            return 1.0
        k = P.key()
        if k not in cache:
            cache[k] = float(expect(P))
        return cache[k]

    return math.fsum(t.coefficient * math.prod(tr(f) for f in t.factors) for t in g.terms)


# ---------------------------------------------------------------------------
# cluster approximation


def split_clusters(P: PauliString, delta: int) -> list[PauliString]:
    """Connected components of ``supp(P)`` under ``dist <= delta``, site-sorted."""
    sites = list(P.support)
    if not sites:
        return []
    parent = list(range(len(sites)))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    lat = P.lattice
    for i in range(len(sites)):
        for j in range(i + 1, len(sites)):
            if distance(lat, sites[i], sites[j]) <= delta:
                ri, rj = find(i), find(j)
                if ri != rj:
                    parent[max(ri, rj)] = min(ri, rj)
    groups: dict[int, list[int]] = {}
    for i, s in enumerate(sites):
        groups.setdefault(find(i), []).append(s)
    clusters = [P.restrict(g) for g in groups.values()]
    return sorted(clusters, key=PauliString.key)


@dataclass(frozen=True)
class ClusterTerm:
    coefficient: float
    clusters: tuple[PauliString, ...]  # canonical (site-lexicographic) order

    @property
    def b(self) -> int:
        return len(self.clusters)


@dataclass(frozen=True)
class ClusterDecomposition:
    """Merged ``delta``-cluster approximation of a polynomial.

    ``terms`` holds the merged terms (coefficients of equal cluster multisets
    summed, exact zeros dropped); ``per_term`` keeps, for every original term,
    the list of cluster strings of each factor.
    """

    source: ObservablePolynomial
    delta: int
    terms: tuple[ClusterTerm, ...]
    per_term: tuple[tuple[tuple[PauliString, ...], ...], ...] = field(repr=False)

    @property
    def lattice(self) -> Lattice:
        return self.source.lattice

    @property
    def norm1(self) -> float:
        return math.fsum(abs(t.coefficient) for t in self.terms)

    @property
    def m(self) -> int:
        return self.source.m

    @property
    def p(self) -> int:
        return self.source.p

    def as_polynomial(self) -> ObservablePolynomial:
        """``g_CA`` as an ordinary polynomial whose factors are the cluster strings."""
        identity = PauliString(self.lattice)
        return ObservablePolynomial(
            self.lattice,
            tuple(Term(t.coefficient, t.clusters or (identity,)) for t in self.terms),
        )


def cluster_approximation(g: ObservablePolynomial, delta: int) -> ClusterDecomposition:
    delta = int(delta)
    if delta < 1:
        raise InvalidArgument(f"cluster distance must be >= 1, got {delta}")
    merged: dict[tuple, float] = {}
    strings: dict[tuple, tuple[PauliString, ...]] = {}
    per_term = []
    for t in g.terms:
        fac_clusters = tuple(tuple(split_clusters(f, delta)) for f in t.factors)
        per_term.append(fac_clusters)
        flat = tuple(sorted((c for fc in fac_clusters for c in fc), key=PauliString.key))
        key = tuple(c.key() for c in flat)
        if key in merged:
            merged[key] += t.coefficient
        else:
            merged[key] = t.coefficient
            strings[key] = flat
    terms = tuple(ClusterTerm(c, strings[k]) for k, c in merged.items() if c != 0.0)
    return ClusterDecomposition(g, delta, terms, tuple(per_term))


# ---------------------------------------------------------------------------
# local-cover number and local-factor count


@dataclass(frozen=True)
class CoverReport:
    alpha: int
    exact: bool
    per_term: tuple[int, ...]


def _window_masks(dec: ClusterDecomposition, zeta: int) -> list[list[int]]:
    """Per term, per cluster string: bitmask of the windows containing its support."""
    windows = [frozenset(w.sites) for w in local_subsystems(dec.lattice, zeta)]
    out = []
    for t in dec.terms:
        masks = []
        for c in t.clusters:
            supp = set(c.support)
            mask = 0
            for a, w in enumerate(windows):
                if supp <= w:
                    mask |= 1 << a
            if mask == 0:
                raise LocalityViolation(
                    f"cluster {c} is not contained in any width-{zeta} window"
                )
            masks.append(mask)
        out.append(masks)
    return out


def _exact_cover(masks: list[int]) -> int:
    """Minimum number of groups, each sharing a common window (subset DP)."""
    b = len(masks)
    if b == 0:
        return 0
    full = (1 << b) - 1
    common = [0] * (1 << b)
    common[0] = -1
    for s in range(1, 1 << b):
        low = (s & -s).bit_length() - 1
        common[s] = common[s & (s - 1)] & masks[low]
    best = [0] + [b + 1] * full
    for s in range(1, full + 1):
        low = s & -s
        rest = s ^ low
        # enumerate subsets of `rest`, always including the lowest element
        sub = rest
        while True:
            grp = sub | low
            if common[grp]:
                cand = best[s ^ grp] + 1
                if cand < best[s]:
                    best[s] = cand
            if sub == 0:
                break
            sub = (sub - 1) & rest
    return best[full]


def _greedy_cover(masks: list[int]) -> int:
    """Upper bound: for each starting string, repeatedly cover the first
    uncovered string with the window that also covers the most other
    uncovered strings; keep the best over starting strings."""
    b = len(masks)
    if b == 0:
        return 0
    best = b
    for start in range(b):
        order = list(range(start, b)) + list(range(start))
        remaining = set(range(b))
        count = 0
        for i in order:
            if i not in remaining:
                continue
            cand = masks[i]
            best_w, best_cov = None, -1
            while cand:
                w = cand & -cand
                cand ^= w
                cov = sum(1 for j in remaining if masks[j] & w)
                if cov > best_cov:
                    best_w, best_cov = w, cov
            remaining -= {j for j in remaining if masks[j] & best_w}
            count += 1
        best = min(best, count)
    return best


def cover_report(dec: ClusterDecomposition, zeta: int, method: str = "auto") -> CoverReport:
    if method not in ("auto", "exact", "greedy"):
        raise InvalidArgument(f"unknown cover method {method!r}")
    per, exact = [], True
    for masks in _window_masks(dec, zeta):
        use_exact = method == "exact" or (method == "auto" and len(masks) <= EXACT_COVER_LIMIT)
        per.append(_exact_cover(masks) if use_exact else _greedy_cover(masks))
        exact &= use_exact
    return CoverReport(max(per, default=0), exact, tuple(per))


def local_cover_number(dec: ClusterDecomposition, zeta: int, method: str = "auto") -> int:
    return cover_report(dec, zeta, method).alpha


def local_factor_count(dec: ClusterDecomposition) -> int:
    if not dec.terms:
        raise InvalidArgument("local factor count of an empty decomposition")
    return max(dec.p, min(t.b for t in dec.terms))


# ---------------------------------------------------------------------------
# shadow size sufficient for estimating g


def shadow_budget(g: ObservablePolynomial, epsilon: float, clustered: bool = False) -> int:
    """Shot count sufficient for mean-square error ``epsilon**2`` on ``g(sigma)``.

    ``clustered=True`` gives the bound for the cluster approximation, which
    is at most ``m``-body and degree ``m*p``.
    """
    norm = g.norm1
    if not (0.0 < epsilon < norm):
        raise InvalidArgument(f"epsilon must lie in (0, ||g||_1={norm}), got {epsilon}")
    m, p = g.m, g.p
    deg = m * p if clustered else p
    big = (3.0 ** (m * deg) + 1.0) ** 2
    T = (64.0 / (3.0 * epsilon ** 2)) * norm ** 2 * 12.0 ** m * deg ** 2 * math.log(
        norm ** 2 * 2.0 ** (m + 3) * deg * big / epsilon ** 2
    )
    return int(math.ceil(T))
