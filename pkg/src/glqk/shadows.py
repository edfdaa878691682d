"""Random single-qubit Pauli measurements ("classical shadows") and the
estimators built from them.

Record encoding, one byte per (shot, qubit): bits 0-1 hold the basis
(0=X, 1=Y, 2=Z), bit 2 holds the outcome (0 for +1, 1 for -1).  Records are
stored shot-major as a ``(T, n)`` uint8 array.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np

from .errors import InvalidArgument, ResourceLimit
from .lattice import Lattice
from .pauli_poly import ClusterDecomposition, ObservablePolynomial, PauliString
from .qsim import StateVector
from .seeding import as_rng

LETTER_CODE = {"X": 0, "Y": 1, "Z": 2}
RDM_ESTIMATE_CAP = 8
# amplitudes processed per sampling chunk (shots x 2^n)
_CHUNK_ELEMENTS = 1 << 22

_S2 = 1.0 / math.sqrt(2.0)


@dataclass(eq=False)
class ClassicalShadow:
    records: np.ndarray  # (T, n) uint8
    lattice: Lattice
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        rec = np.ascontiguousarray(self.records, dtype=np.uint8)
        if rec.ndim != 2 or rec.shape[1] != self.lattice.n:
            raise InvalidArgument(f"records must have shape (T, {self.lattice.n}), got {rec.shape}")
        if rec.shape[0] < 1:
            raise InvalidArgument("a shadow needs at least one shot")
        self.records = rec

    @classmethod
    def from_arrays(cls, lattice: Lattice, bases, outcomes, provenance=None) -> "ClassicalShadow":
        """Build from basis codes in {0,1,2} and outcomes in {+1,-1}."""
        bases = np.asarray(bases, dtype=np.uint8)
        flips = (np.asarray(outcomes) < 0).astype(np.uint8)
        return cls(bases | (flips << 2), lattice, provenance or {})

    @property
    def T(self) -> int:
        return self.records.shape[0]

    @property
    def n(self) -> int:
        return self.records.shape[1]

    @property
    def bases(self) -> np.ndarray:
        return self.records & 3

    @property
    def outcomes(self) -> np.ndarray:
        return 1 - 2 * ((self.records >> 2) & 1).astype(np.int8)

    def translate(self, axis: int = 0, step: int = 1) -> "ClassicalShadow":
        """Relabel sites by a lattice shift (qubit ``i`` moves to ``shift(i)``)."""
        lat = self.lattice
        dest = np.array([lat.shift(i, axis, step) for i in range(lat.n)])
        out = np.empty_like(self.records)
        out[:, dest] = self.records
        return ClassicalShadow(out, lat, dict(self.provenance))

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, ClassicalShadow)
            and self.lattice == other.lattice
            and np.array_equal(self.records, other.records)
        )


# ---------------------------------------------------------------------------
# sampling


def sample_shadow(state: StateVector, T: int, seed) -> ClassicalShadow:
    """Measure ``T`` copies of ``state``, each qubit in a uniformly random Pauli basis.

    Outcomes are drawn qubit by qubit from the exact conditional Born
    probabilities after rotating the qubit into its measurement basis
    (H for X, H S^dagger for Y).
    """
    T = int(T)
    if T < 1:
        raise InvalidArgument(f"shot count must be >= 1, got {T}")
    rng = as_rng(seed)
    n = state.n
    bases = rng.integers(0, 3, size=(T, n), dtype=np.uint8)
    uniforms = rng.random((T, n))
    flips = np.empty((T, n), dtype=np.uint8)
    chunk = max(1, _CHUNK_ELEMENTS >> n)
    amps = state.amplitudes
    for lo in range(0, T, chunk):
        hi = min(T, lo + chunk)
        flips[lo:hi] = _sample_chunk(amps, n, bases[lo:hi], uniforms[lo:hi])
    prov = dict(state.provenance)
    if isinstance(seed, (int, np.integer)):
        prov["shadow_seed"] = int(seed)
    return ClassicalShadow(bases | (flips << 2), state.lattice, prov)


def _sample_chunk(amps, n, bases, uniforms):
    B = bases.shape[0]
    psi = np.broadcast_to(amps, (B, amps.size))
    out = np.empty((B, n), dtype=np.uint8)
    for i in range(n):
        psi = psi.reshape(B, 2, -1)
        a0, a1 = psi[:, 0], psi[:, 1]
        w = bases[:, i][:, None]
        # rotated components: X -> H, Y -> H S^dagger, Z -> identity
        b1 = np.where(w == 1, -1j * a1, a1)
        r0 = np.where(w == 2, a0, (a0 + b1) * _S2)
        r1 = np.where(w == 2, a1, (a0 - b1) * _S2)
        p0 = np.einsum("ij,ij->i", r0, r0.conj()).real
        p1 = np.einsum("ij,ij->i", r1, r1.conj()).real
        bit = uniforms[:, i] >= p0 / (p0 + p1)
        out[:, i] = bit
        psi = np.where(bit[:, None], r1, r0)
    return out


# ---------------------------------------------------------------------------
# estimators


def _pauli_factor(shadow: ClassicalShadow, P: PauliString) -> np.ndarray:
    """Per-shot value ``prod_i tr(P_i sigma_i)`` (3*o on a basis match, else 0)."""
    val = np.ones(shadow.T)
    rec = shadow.records
    for site, letter in P.letters:
        r = rec[:, site]
        match = (r & 3) == LETTER_CODE[letter]
        val = val * np.where(match, 3.0 * (1 - 2 * ((r >> 2) & 1).astype(np.float64)), 0.0)
    return val


def estimate_pauli(shadow: ClassicalShadow, P: PauliString) -> float:
    """``tr(P sigma)`` with ``sigma`` the shot-averaged product estimator."""
    if P.lattice.n != shadow.n:
        raise InvalidArgument("Pauli string and shadow live on different lattices")
    if P.weight == 0:
        return 1.0
    return float(_pauli_factor(shadow, P).mean())


def estimate_polynomial(shadow: ClassicalShadow, g: ObservablePolynomial | ClusterDecomposition) -> float:
    """``g(sigma)``; every factor of a product term reuses the same shots."""
    if isinstance(g, ClusterDecomposition):
        g = g.as_polynomial()
    cache: dict = {}

    def tr(P):
        k = P.key()
        if k not in cache:
            cache[k] = estimate_pauli(shadow, P)
        return cache[k]

    return math.fsum(t.coefficient * math.prod(tr(f) for f in t.factors) for t in g.terms)


_SINGLE = {
    # (3 o W + I) / 2 for o = +1, -1
    (0, 1): np.array([[0.5, 1.5], [1.5, 0.5]], dtype=complex),
    (0, -1): np.array([[0.5, -1.5], [-1.5, 0.5]], dtype=complex),
    (1, 1): np.array([[0.5, -1.5j], [1.5j, 0.5]], dtype=complex),
    (1, -1): np.array([[0.5, 1.5j], [-1.5j, 0.5]], dtype=complex),
    (2, 1): np.array([[2.0, 0.0], [0.0, -1.0]], dtype=complex),
    (2, -1): np.array([[-1.0, 0.0], [0.0, 2.0]], dtype=complex),
}


def single_qubit_estimator(basis: int, outcome: int) -> np.ndarray:
    return _SINGLE[(int(basis), int(outcome))].copy()


def estimate_rdm(shadow: ClassicalShadow, sites) -> np.ndarray:
    """Shot average of ``sigma_{i1} x ... x sigma_{ik}``; Hermitian, unit trace, not always PSD."""
    sites = [shadow.lattice.check_site(s) for s in sites]
    k = len(sites)
    if k > RDM_ESTIMATE_CAP:
        raise ResourceLimit(f"shadow RDM estimate on {k} > {RDM_ESTIMATE_CAP} sites")
    if k == 0:
        return np.ones((1, 1), dtype=complex)
    sub = shadow.records[:, sites]
    patterns, counts = np.unique(sub, axis=0, return_counts=True)
    rho = np.zeros((1 << k, 1 << k), dtype=complex)
    for pat, c in zip(patterns, counts):
        m = np.ones((1, 1), dtype=complex)
        for r in pat:
            m = np.kron(m, _SINGLE[(int(r) & 3, 1 - 2 * ((int(r) >> 2) & 1))])
        rho += c * m
    return rho / shadow.T


# ---------------------------------------------------------------------------
# pools and their binary file format

_MAGIC = b"GLQS"
_VERSION = 1


@dataclass
class PoolEntry:
    shadow: ClassicalShadow
    label: float
    metadata: dict


@dataclass
class ShadowPool:
    lattice: Lattice
    T: int
    entries: list[PoolEntry] = field(default_factory=list)

    def append(self, shadow: ClassicalShadow, label: float, metadata: dict | None = None) -> None:
        if shadow.lattice != self.lattice or shadow.T != self.T:
            raise InvalidArgument("pool entries must share lattice and shot count")
        self.entries.append(PoolEntry(shadow, float(label), dict(metadata or {})))

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self) -> Iterator[PoolEntry]:
        return iter(self.entries)

    @property
    def shadows(self) -> list[ClassicalShadow]:
        return [e.shadow for e in self.entries]

    @property
    def labels(self) -> np.ndarray:
        return np.array([e.label for e in self.entries])

    def records(self) -> np.ndarray:
        """``(N, T, n)`` uint8 stack of all records."""
        return np.stack([e.shadow.records for e in self.entries]) if self.entries else np.zeros(
            (0, self.T, self.lattice.n), np.uint8
        )

    def subset(self, idx) -> "ShadowPool":
        return ShadowPool(self.lattice, self.T, [self.entries[int(i)] for i in idx])


def _meta_bytes(meta: dict) -> bytes:
    return json.dumps(meta, sort_keys=True, separators=(",", ":")).encode("utf-8")


def pool_to_bytes(pool: ShadowPool) -> bytes:
    lat = pool.lattice
    parts = [
        _MAGIC,
        struct.pack("<HB", _VERSION, lat.D),
        struct.pack(f"<{lat.D}I", *lat.dims),
        struct.pack("<II", pool.T, len(pool)),
    ]
    for e in pool.entries:
        blob = _meta_bytes(e.metadata)
        parts.append(struct.pack("<dI", e.label, len(blob)))
        parts.append(blob)
        parts.append(e.shadow.records.tobytes(order="C"))
    return b"".join(parts)


def pool_from_bytes(data: bytes) -> ShadowPool:
    if data[:4] != _MAGIC:
        raise InvalidArgument("not a shadow-pool file (bad magic)")
    off = 4
    version, D = struct.unpack_from("<HB", data, off)
    off += 3
    if version != _VERSION:
        raise InvalidArgument(f"unsupported shadow-pool version {version}")
    dims = struct.unpack_from(f"<{D}I", data, off)
    off += 4 * D
    T, count = struct.unpack_from("<II", data, off)
    off += 8
    lat = Lattice(tuple(dims))
    n = lat.n
    pool = ShadowPool(lat, T)
    for _ in range(count):
        label, mlen = struct.unpack_from("<dI", data, off)
        off += 12
        meta = json.loads(data[off : off + mlen].decode("utf-8"))
        off += mlen
        rec = np.frombuffer(data, dtype=np.uint8, count=n * T, offset=off).reshape(T, n).copy()
        off += n * T
        pool.entries.append(PoolEntry(ClassicalShadow(rec, lat), label, meta))
    if off != len(data):
        raise InvalidArgument("trailing bytes in shadow-pool file")
    return pool


def write_pool(path, pool: ShadowPool) -> None:
    Path(path).write_bytes(pool_to_bytes(pool))


def read_pool(path) -> ShadowPool:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise InvalidArgument(f"cannot read shadow pool {path}: {exc}") from exc
    return pool_from_bytes(data)
