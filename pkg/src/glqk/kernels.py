"""Kernels between classical shadows.

Two kinds are provided:

* ``glqk_poly``: the mean over all width-``zeta`` windows ``A`` of the
  truncated shadow kernel ``exp(tau/(T_a T_b) sum_{t,t'} prod_{i in A}
  [1 + (gamma/|A|) tr(sigma_i^t sigma_i^t')])``, raised to the power ``h``.
* ``shadow``: ``exp(tau/(T_a T_b) sum_{t,t'} exp((gamma/n) sum_i
  tr(sigma_i^t sigma_i^t')))`` over the whole system.

Single-qubit overlaps take three values: 5 (same basis and outcome), -4 (same
basis, opposite outcome) and 1/2 (different bases), i.e.
``tr(sigma sigma') = 1/2 + (9/2) o o' [W == W']``.

Gram matrices for ``glqk_poly`` use an exact factorisation: writing each
per-qubit factor as ``1 + c tr = <f(a), f(b)>`` with
``f = [sqrt(1 + c/2), sqrt(9c/2) o e_W]`` turns the window's shot-pair sum
into the dot product of shot-averaged tensor-product features, so one BLAS
call per window replaces ``T^2 |A|`` scalar products per pair.  The direct
per-pair evaluation is kept in :func:`truncated_shadow_kernel`.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import asdict, dataclass, field
from itertools import combinations, product
from pathlib import Path
from typing import Sequence

import numba
import numpy as np

from .errors import InvalidArgument, NumericFailure, ResourceLimit
from .lattice import Lattice, Subsystem, window_site_matrix
from .shadows import ClassicalShadow, estimate_rdm

KINDS = ("shadow", "glqk_poly")

# overlap value by class: 0 different bases, 1 same basis same outcome, 2 same basis opposite
OVERLAP_BY_CLASS = np.array([0.5, 5.0, -4.0])

# largest (rows x feature-dim) block built by the factorised GLQK path
_FEATURE_ELEMENTS = 1 << 25


@dataclass(frozen=True)
class KernelConfig:
    kind: str = "glqk_poly"
    tau: float = 1.0
    gamma: float = 1.0
    h: int = 1
    zeta: int = 2

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidArgument(f"kernel kind must be one of {KINDS}, got {self.kind!r}")
        if not (self.tau > 0 and self.gamma > 0):
            raise InvalidArgument("tau and gamma must be positive")
        if int(self.h) < 1 or int(self.zeta) < 1:
            raise InvalidArgument("h and zeta must be positive integers")
        object.__setattr__(self, "h", int(self.h))
        object.__setattr__(self, "zeta", int(self.zeta))

    def to_dict(self) -> dict:
        return asdict(self)


# ---------------------------------------------------------------------------
# single-qubit overlap


def _as_record(rec) -> tuple[int, int]:
    if isinstance(rec, (int, np.integer)):
        return int(rec) & 3, 1 - 2 * ((int(rec) >> 2) & 1)
    basis, outcome = rec
    if isinstance(basis, str):
        basis = "XYZ".index(basis)
    return int(basis), int(outcome)


def qubit_overlap(rec_a, rec_b) -> float:
    """``tr(sigma_a sigma_b)`` for two single-qubit records.

    Records are ``(basis, outcome)`` pairs (basis as ``"X"/"Y"/"Z"`` or 0/1/2,
    outcome +-1) or encoded record bytes.
    """
    wa, oa = _as_record(rec_a)
    wb, ob = _as_record(rec_b)
    if wa != wb:
        return 0.5
    return 5.0 if oa == ob else -4.0


def overlap_classes(ra: np.ndarray, rb: np.ndarray) -> np.ndarray:
    """``(T_a, T_b, k)`` table of overlap classes for record blocks ``(T_a, k)``, ``(T_b, k)``."""
    a = ra[:, None, :]
    b = rb[None, :, :]
    same = (a & 3) == (b & 3)
    flip = ((a ^ b) >> 2) & 1
    return np.where(same, 1 + flip, 0).astype(np.uint8)


class OpCounter:
    """Counts per-qubit factor evaluations made by the direct kernel paths."""

    def __init__(self):
        self.factors = 0


def _window_inner_sums(cls: np.ndarray, windows: Sequence[Sequence[int]], gamma: float,
                       counter: OpCounter | None = None) -> list[float]:
    """For each window, ``(1/T_a T_b) sum_{t,t'} prod_{i in A} (1 + c tr)``."""
    Ta, Tb = cls.shape[:2]
    out = []
    for sites in windows:
        c = gamma / len(sites)
        lut = 1.0 + c * OVERLAP_BY_CLASS
        prod_ = np.ones((Ta, Tb))
        for i in sites:
            prod_ *= lut[cls[:, :, i]]
        if counter is not None:
            counter.factors += Ta * Tb * len(sites)
        # correctly rounded, so swapping the two shadows gives the identical value
        out.append(math.fsum(prod_.ravel()) / (Ta * Tb))
    return out


def _check_pair(sa: ClassicalShadow, sb: ClassicalShadow) -> None:
    if sa.lattice != sb.lattice:
        raise InvalidArgument("shadows live on different lattices")


def truncated_shadow_kernel(sa: ClassicalShadow, sb: ClassicalShadow, A: Subsystem | Sequence[int],
                            tau: float = 1.0, gamma: float = 1.0,
                            counter: OpCounter | None = None) -> float:
    """Truncated shadow kernel on the subsystem ``A`` by direct shot-pair summation."""
    _check_pair(sa, sb)
    sites = list(A.sites if isinstance(A, Subsystem) else A)
    cls = overlap_classes(sa.records[:, sites], sb.records[:, sites])
    (M,) = _window_inner_sums(cls, [range(len(sites))], gamma, counter)
    return math.exp(tau * M)


def glqk_polynomial(sa: ClassicalShadow, sb: ClassicalShadow, config: KernelConfig,
                    counter: OpCounter | None = None) -> float:
    """``[(1/n) sum_A TSK_A(sa, sb)]^h`` over all width-``zeta`` windows (direct path)."""
    _check_pair(sa, sb)
    windows = window_site_matrix(sa.lattice, config.zeta)
    cls = overlap_classes(sa.records, sb.records)
    sums = _window_inner_sums(cls, windows, config.gamma, counter)
    mean = math.fsum(math.exp(config.tau * M) for M in sums) / len(sums)
    return mean ** config.h


def shadow_kernel(sa: ClassicalShadow, sb: ClassicalShadow, tau: float = 1.0, gamma: float = 1.0) -> float:
    """Global shadow kernel by direct shot-pair summation."""
    _check_pair(sa, sb)
    cls = overlap_classes(sa.records, sb.records)
    total = OVERLAP_BY_CLASS[cls].sum(axis=2)
    inner = math.fsum(np.exp(gamma / sa.n * total).ravel()) / (sa.T * sb.T)
    return math.exp(tau * inner)


# ---------------------------------------------------------------------------
# factorised GLQK Gram


def window_features(records: np.ndarray, sites: Sequence[int], gamma: float) -> np.ndarray:
    """Shot-averaged tensor-product features ``(N, 4^|A|)`` of one window.

    ``records`` is ``(N, T, n)``.  Per qubit ``f = [sqrt(1+c/2), sqrt(9c/2) o e_W]``
    with ``c = gamma/|A|``, so ``<F_a, F_b>`` equals the window's averaged
    shot-pair product.
    """
    N, T, _ = records.shape
    k = len(sites)
    c = gamma / k
    u, v = math.sqrt(1.0 + c / 2.0), math.sqrt(4.5 * c)
    sub = records[:, :, list(sites)]
    slot = (sub & 3).astype(np.int64) + 1            # 1..3
    sign = 1.0 - 2.0 * ((sub >> 2) & 1)              # +-1
    dim = 4 ** k
    powers = 4 ** np.arange(k - 1, -1, -1, dtype=np.int64)
    flat_base = (np.arange(N, dtype=np.int64) * dim)[:, None]
    acc = np.zeros(N * dim)
    for mask in range(1 << k):
        chosen = np.array([(mask >> (k - 1 - j)) & 1 for j in range(k)], dtype=bool)
        r = int(chosen.sum())
        idx = (slot[:, :, chosen] * powers[chosen]).sum(axis=2) if r else np.zeros((N, T), np.int64)
        val = (u ** (k - r)) * (v ** r) * (sign[:, :, chosen].prod(axis=2) if r else np.ones((N, T)))
        acc += np.bincount((flat_base + idx).ravel(), weights=val.ravel(), minlength=N * dim)
    return acc.reshape(N, dim) / T


def glqk_window_mean(records_a: np.ndarray, records_b: np.ndarray | None, lattice: Lattice,
                     zeta: int, tau: float = 1.0, gamma: float = 1.0) -> np.ndarray:
    """``(1/n) sum_A exp(tau <F_A(a), F_A(b)>)`` for all pairs (power ``h`` not applied)."""
    windows = window_site_matrix(lattice, zeta)
    k = windows.shape[1]
    rows = records_a.shape[0] + (0 if records_b is None else records_b.shape[0])
    if rows * 4 ** k > _FEATURE_ELEMENTS:
        return _glqk_window_mean_direct(records_a, records_b, windows, tau, gamma)
    acc = None
    for sites in windows:
        Fa = window_features(records_a, sites, gamma)
        Fb = Fa if records_b is None else window_features(records_b, sites, gamma)
        E = np.exp(tau * (Fa @ Fb.T))
        acc = E if acc is None else acc + E
    K = acc / len(windows)
    if records_b is None:
        K = np.triu(K) + np.triu(K, 1).T  # bitwise symmetric
    return K


def _glqk_window_mean_direct(records_a, records_b, windows, tau, gamma):
    self_case = records_b is None
    rb = records_a if self_case else records_b
    K = np.empty((records_a.shape[0], rb.shape[0]))
    for i in range(records_a.shape[0]):
        for j in range(i if self_case else 0, rb.shape[0]):
            cls = overlap_classes(records_a[i], rb[j])
            sums = _window_inner_sums(cls, windows, gamma)
            K[i, j] = math.fsum(math.exp(tau * M) for M in sums) / len(sums)
            if self_case:
                K[j, i] = K[i, j]
    return K


# ---------------------------------------------------------------------------
# shadow-kernel Gram via basis/outcome bitmasks


def shot_masks(records: np.ndarray) -> np.ndarray:
    """``(N, T, 4)`` uint64: X-, Y-, Z-basis masks and the outcome (-1) mask per shot."""
    N, T, n = records.shape
    if n > 64:
        raise ResourceLimit("bitmask shadow kernel supports n <= 64")
    weights = np.left_shift(np.uint64(1), np.arange(n, dtype=np.uint64))
    basis = records & 3
    out = np.empty((N, T, 4), dtype=np.uint64)
    for b in range(3):
        out[:, :, b] = ((basis == b).astype(np.uint64) * weights).sum(axis=2, dtype=np.uint64)
    out[:, :, 3] = ((((records >> 2) & 1)).astype(np.uint64) * weights).sum(axis=2, dtype=np.uint64)
    return out


@numba.njit(cache=True)
def _popcount(x):
    x = x - ((x >> np.uint64(1)) & np.uint64(0x5555555555555555))
    x = (x & np.uint64(0x3333333333333333)) + ((x >> np.uint64(2)) & np.uint64(0x3333333333333333))
    x = (x + (x >> np.uint64(4))) & np.uint64(0x0F0F0F0F0F0F0F0F)
    return (x * np.uint64(0x0101010101010101)) >> np.uint64(56)


@numba.njit(cache=True)
def _shadow_pair_sum(ma, mb, table, n):
    s = 0.0
    for t in range(ma.shape[0]):
        xa, ya, za, oa = ma[t, 0], ma[t, 1], ma[t, 2], ma[t, 3]
        for u in range(mb.shape[0]):
            same = (xa & mb[u, 0]) | (ya & mb[u, 1]) | (za & mb[u, 2])
            diff = same & (oa ^ mb[u, 3])
            k = np.int64(_popcount(same)) - 2 * np.int64(_popcount(diff))
            s += table[k + n]
    return s


@numba.njit(cache=True)
def _shadow_gram(ma, mb, table, n, tau, self_case):
    Na, Nb = ma.shape[0], mb.shape[0]
    K = np.empty((Na, Nb))
    for i in range(Na):
        j0 = i if self_case else 0
        for j in range(j0, Nb):
            s = _shadow_pair_sum(ma[i], mb[j], table, n)
            K[i, j] = np.exp(tau * s / (ma.shape[1] * mb.shape[1]))
            if self_case:
                K[j, i] = K[i, j]
    return K


def _shadow_table(n: int, gamma: float) -> np.ndarray:
    # sum_i tr = n/2 + 9k/2 with k = (#same-basis agreeing) - (#same-basis disagreeing)
    k = np.arange(-n, n + 1)
    return np.exp(gamma / n * (n / 2.0 + 4.5 * k))


def shadow_gram_values(records_a: np.ndarray, records_b: np.ndarray | None,
                       tau: float = 1.0, gamma: float = 1.0) -> np.ndarray:
    n = records_a.shape[2]
    ma = shot_masks(records_a)
    mb = ma if records_b is None else shot_masks(records_b)
    return _shadow_gram(ma, mb, _shadow_table(n, gamma), n, float(tau), records_b is None)


# ---------------------------------------------------------------------------
# Gram matrices


@dataclass
class GramMatrix:
    """Kernel matrix with its configuration.

    ``diag_rows``/``diag_cols`` hold the self-kernel values ``k(x, x)`` of
    the row and column inputs, which standardisation divides by.
    """

    values: np.ndarray
    config: KernelConfig
    standardized: bool = False
    diag_rows: np.ndarray | None = None
    diag_cols: np.ndarray | None = None
    provenance: dict = field(default_factory=dict)

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def subset(self, rows, cols=None) -> "GramMatrix":
        rows = np.asarray(rows)
        cols = rows if cols is None else np.asarray(cols)
        return GramMatrix(
            self.values[np.ix_(rows, cols)],
            self.config,
            self.standardized,
            None if self.diag_rows is None else self.diag_rows[rows],
            None if self.diag_cols is None else self.diag_cols[cols],
            dict(self.provenance),
        )


def _records(pool_or_shadows) -> tuple[np.ndarray, Lattice]:
    if hasattr(pool_or_shadows, "records") and callable(pool_or_shadows.records):
        return pool_or_shadows.records(), pool_or_shadows.lattice
    shadows = list(pool_or_shadows)
    if not shadows:
        raise InvalidArgument("empty shadow collection")
    lat, T = shadows[0].lattice, shadows[0].T
    for s in shadows:
        if s.lattice != lat or s.T != T:
            raise InvalidArgument("shadows in a Gram block must share lattice and shot count")
    return np.stack([s.records for s in shadows]), lat


def _self_values(records: np.ndarray, lattice: Lattice, config: KernelConfig) -> np.ndarray:
    """``k(x, x)`` for every shadow in ``records``."""
    out = np.empty(records.shape[0])
    for i in range(records.shape[0]):
        r = records[i : i + 1]
        if config.kind == "shadow":
            out[i] = shadow_gram_values(r, None, config.tau, config.gamma)[0, 0]
        else:
            out[i] = glqk_window_mean(r, None, lattice, config.zeta, config.tau, config.gamma)[0, 0] ** config.h
    return out


def gram(pool_a, pool_b=None, config: KernelConfig = KernelConfig()) -> GramMatrix:
    """Kernel matrix between two shadow collections (or one with itself).

    Accepts :class:`~glqk.shadows.ShadowPool` objects or sequences of
    shadows.  The self case returns a bitwise-symmetric matrix.
    """
    ra, lat = _records(pool_a)
    rb = None
    if pool_b is not None:
        rb, lat_b = _records(pool_b)
        if lat_b != lat:
            raise InvalidArgument("Gram blocks live on different lattices")
    if config.kind == "shadow":
        K = shadow_gram_values(ra, rb, config.tau, config.gamma)
    else:
        if config.zeta > min(lat.dims):
            raise InvalidArgument(f"window width {config.zeta} exceeds lattice side {min(lat.dims)}")
        K = glqk_window_mean(ra, rb, lat, config.zeta, config.tau, config.gamma) ** config.h
    if not np.all(np.isfinite(K)):
        bad = np.argwhere(~np.isfinite(K))[0]
        raise NumericFailure(f"non-finite kernel value at entry {tuple(bad)}")
    if rb is None:
        d = np.diag(K).copy()
        return GramMatrix(K, config, False, d, d)
    return GramMatrix(K, config, False, _self_values(ra, lat, config), _self_values(rb, lat, config))


def standardize(K: GramMatrix | np.ndarray, diag_rows=None, diag_cols=None) -> GramMatrix:
    """``K_ij / sqrt(d_i d'_j)``; the self-Gram diagonal becomes exactly 1."""
    if isinstance(K, GramMatrix):
        vals, cfg, prov = K.values, K.config, dict(K.provenance)
        diag_rows = K.diag_rows if diag_rows is None else diag_rows
        diag_cols = K.diag_cols if diag_cols is None else diag_cols
    else:
        vals, cfg, prov = np.asarray(K, dtype=float), None, {}
    square = vals.shape[0] == vals.shape[1]
    if diag_rows is None:
        if not square:
            raise InvalidArgument("rectangular standardisation needs both diagonals")
        diag_rows = np.diag(vals)
    if diag_cols is None:
        diag_cols = diag_rows if square else None
    dr, dc = np.asarray(diag_rows, float), np.asarray(diag_cols, float)
    if np.any(dr <= 0) or np.any(dc <= 0):
        raise NumericFailure("standardisation needs strictly positive self-kernel values")
    out = vals / np.sqrt(np.outer(dr, dc))
    if square and np.array_equal(dr, dc) and np.array_equal(np.diag(vals), dr):
        np.fill_diagonal(out, 1.0)
    return GramMatrix(out, cfg, True, dr, dc, prov)


# ---------------------------------------------------------------------------
# explicit (truncated) feature map, used as a test oracle

_PAULI_MATS = [
    np.eye(2, dtype=complex),
    np.array([[0, 1], [1, 0]], dtype=complex),
    np.array([[0, -1j], [1j, 0]], dtype=complex),
    np.array([[1, 0], [0, -1]], dtype=complex),
]

ORACLE_MAX_SITES = 4
ORACLE_MAX_DEGREE = 5
ORACLE_MAX_DIM = 1 << 24


def _hs_vector(rho: np.ndarray) -> np.ndarray:
    """Real coordinates of a Hermitian matrix in the normalised Pauli basis.

    ``<vec(A), vec(B)> = tr(A B)`` for Hermitian ``A, B``.
    """
    r = int(round(math.log2(rho.shape[0])))
    out = np.empty(4 ** r)
    for idx, ps in enumerate(product(range(4), repeat=r)):
        P = np.ones((1, 1), dtype=complex)
        for q in ps:
            P = np.kron(P, _PAULI_MATS[q])
        out[idx] = np.trace(P @ rho).real
    return out / math.sqrt(2 ** r)


def truncated_feature_oracle(shadow: ClassicalShadow, A: Subsystem | Sequence[int], tau: float,
                             gamma: float, degree_cap: int, size_cap: int | None = None) -> np.ndarray:
    """Explicit feature vector of the truncated shadow kernel, cut at outer degree ``degree_cap``.

    Built from estimated reduced density matrices of every subset of ``A``
    up to ``size_cap`` sites; the inner product of two such vectors equals
    the Taylor polynomial of degree ``degree_cap`` of ``exp(tau M)``.
    """
    sites = list(A.sites if isinstance(A, Subsystem) else A)
    k = len(sites)
    size_cap = k if size_cap is None else int(size_cap)
    if k > ORACLE_MAX_SITES or degree_cap > ORACLE_MAX_DEGREE:
        raise ResourceLimit(
            f"feature oracle supports |A| <= {ORACLE_MAX_SITES}, degree <= {ORACLE_MAX_DEGREE}"
        )
    c = gamma / k
    blocks = []
    for r in range(0, min(size_cap, k) + 1):
        scale = math.sqrt(c ** r)
        for subset in combinations(sites, r):
            blocks.append(scale * _hs_vector(estimate_rdm(shadow, list(subset))))
    psi = np.concatenate(blocks)
    if psi.size ** degree_cap > ORACLE_MAX_DIM:
        raise ResourceLimit(f"feature dimension {psi.size}^{degree_cap} too large")
    out = [np.ones(1)]
    power = np.ones(1)
    for d in range(1, degree_cap + 1):
        power = np.kron(power, psi)
        out.append(math.sqrt(tau ** d / math.factorial(d)) * power)
    return np.concatenate(out)


def exp_series_tail(x: float, cap: int) -> float:
    """``sum_{d > cap} |x|^d / d!``, the truncation error bound of the feature oracle."""
    ax = abs(x)
    head = math.fsum(ax ** d / math.factorial(d) for d in range(cap + 1))
    return max(math.exp(ax) - head, 0.0)


# ---------------------------------------------------------------------------
# Gram blob file format

_MAGIC = b"GLQK"
_VERSION = 1


def gram_to_bytes(K: GramMatrix) -> bytes:
    cfg = K.config
    rows, cols = K.values.shape
    head = _MAGIC + struct.pack(
        "<HBddIIII", _VERSION, KINDS.index(cfg.kind), cfg.tau, cfg.gamma, cfg.h, cfg.zeta, rows, cols
    )
    return head + np.ascontiguousarray(K.values, dtype="<f8").tobytes()


def gram_from_bytes(data: bytes) -> tuple[np.ndarray, KernelConfig]:
    if data[:4] != _MAGIC:
        raise InvalidArgument("not a Gram file (bad magic)")
    fmt = "<HBddIIII"
    version, kind, tau, gamma, h, zeta, rows, cols = struct.unpack_from(fmt, data, 4)
    if version != _VERSION:
        raise InvalidArgument(f"unsupported Gram file version {version}")
    off = 4 + struct.calcsize(fmt)
    vals = np.frombuffer(data, dtype="<f8", count=rows * cols, offset=off).reshape(rows, cols).copy()
    return vals, KernelConfig(KINDS[kind], tau, gamma, h, zeta)


def write_gram(path, K: GramMatrix, provenance: dict | None = None) -> None:
    path = Path(path)
    path.write_bytes(gram_to_bytes(K))
    side = {
        "config": K.config.to_dict(),
        "standardized": K.standardized,
        "shape": list(K.values.shape),
        "diag_rows": None if K.diag_rows is None else K.diag_rows.tolist(),
        "diag_cols": None if K.diag_cols is None else K.diag_cols.tolist(),
        "provenance": dict(K.provenance, **(provenance or {})),
    }
    path.with_suffix(path.suffix + ".json").write_text(json.dumps(side, sort_keys=True, indent=1))


def read_gram(path) -> GramMatrix:
    path = Path(path)
    vals, cfg = gram_from_bytes(path.read_bytes())
    side_path = path.with_suffix(path.suffix + ".json")
    side = json.loads(side_path.read_text()) if side_path.exists() else {}
    dr, dc = side.get("diag_rows"), side.get("diag_cols")
    return GramMatrix(
        vals, cfg, bool(side.get("standardized", False)),
        None if dr is None else np.array(dr), None if dc is None else np.array(dc),
        side.get("provenance", {}),
    )
