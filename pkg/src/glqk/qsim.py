"""Exact state-vector simulation for small spin chains.

Qubit ``i`` is tensor axis ``i`` of the reshaped amplitude array, i.e. the
``(n-1-i)``-th bit of the basis index (qubit 0 is the most significant bit).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import product

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import eigsh

from .errors import InvalidArgument, NumericFailure, ResourceLimit
from .lattice import Lattice
from .pauli_poly import LETTERS, PauliString
from .seeding import as_rng

N_CAP = 20
RDM_CAP = 12
KRYLOV_DIM = 30


@dataclass
class StateVector:
    amplitudes: np.ndarray
    lattice: Lattice
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        amps = np.ascontiguousarray(self.amplitudes, dtype=np.complex128).ravel()
        n = self.lattice.n
        if n > N_CAP:
            raise InvalidArgument(f"state vectors are capped at n={N_CAP}, got n={n}")
        if amps.size != 1 << n:
            raise InvalidArgument(f"expected {1 << n} amplitudes, got {amps.size}")
        self.amplitudes = amps

    @property
    def n(self) -> int:
        return self.lattice.n

    def tensor(self) -> np.ndarray:
        return self.amplitudes.reshape((2,) * self.n)

    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))

    def pauli_expectation(self, P: PauliString) -> float:
        return pauli_expectation(self, P)


def basis_state(lat: Lattice, bits=None) -> StateVector:
    """Computational basis state; ``bits`` lists qubit values (default all zero)."""
    idx = 0
    for b in bits or ():
        idx = (idx << 1) | int(b)
    if bits is not None and len(bits) != lat.n:
        raise InvalidArgument("bit list length must equal n")
    amps = np.zeros(1 << lat.n, dtype=complex)
    amps[idx] = 1.0
    return StateVector(amps, lat)


def ghz_state(lat: Lattice) -> StateVector:
    amps = np.zeros(1 << lat.n, dtype=complex)
    amps[0] = amps[-1] = 1 / math.sqrt(2)
    return StateVector(amps, lat)


# ---------------------------------------------------------------------------
# Pauli action


def apply_pauli(psi: np.ndarray, n: int, P: PauliString) -> np.ndarray:
    """Return ``P|psi>`` for a flat amplitude vector."""
    out = psi.reshape((2,) * n).copy()
    for site, letter in P.letters:
        out = np.moveaxis(out, site, 0)
        if letter == "X":
            out = out[::-1]
        elif letter == "Y":
            out = np.stack((-1j * out[1], 1j * out[0]))
        else:
            out = np.stack((out[0], -out[1]))
        out = np.moveaxis(out, 0, site)
    return np.ascontiguousarray(out).ravel()


def pauli_expectation(state: StateVector, P: PauliString) -> float:
    if P.lattice.n != state.n:
        raise InvalidArgument("Pauli string and state live on different lattices")
    if P.weight == 0:
        return float(np.vdot(state.amplitudes, state.amplitudes).real)
    phi = apply_pauli(state.amplitudes, state.n, P)
    return float(np.vdot(state.amplitudes, phi).real)


def pauli_sum_matrix(n: int, terms) -> sp.csr_matrix:
    """Sparse matrix of ``sum_k c_k P_k``; ``terms`` yields ``(c, [(site, letter), ...])``."""
    dim = 1 << n
    x = np.arange(dim, dtype=np.int64)
    rows, cols, vals = [], [], []
    for c, letters in terms:
        flip = phase_mask = 0
        ny = 0
        for site, letter in letters:
            bit = 1 << (n - 1 - site)
            if letter in ("X", "Y"):
                flip |= bit
            if letter in ("Y", "Z"):
                phase_mask |= bit
            ny += letter == "Y"
        parity = (np.bitwise_count(x & phase_mask) & 1).astype(np.int64)
        v = (c * (1j ** ny)) * (1 - 2 * parity)
        rows.append(x ^ flip)
        cols.append(x)
        vals.append(v)
    H = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(dim, dim)
    )
    return H.tocsr()


# ---------------------------------------------------------------------------
# Hamiltonians

KINDS = ("random_symmetric", "random_general", "xxz_bond_alternating")


@dataclass(frozen=True)
class HamiltonianSpec:
    """Hamiltonian family plus its parameters.

    ``couplings`` is ``(3, 3)`` for the translation-invariant random chain,
    ``(n, 3, 3)`` for the site-dependent one, and unused for the XXZ chain,
    which takes ``J`` (inter-pair bond strength) and ``delta`` (anisotropy).
    """

    kind: str
    n: int
    couplings: np.ndarray | None = None
    J: float = 0.0
    delta: float = 0.5
    seed: int | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidArgument(f"unknown Hamiltonian kind {self.kind!r}")
        if self.n < 2 or self.n > N_CAP:
            raise InvalidArgument(f"n must lie in [2, {N_CAP}], got {self.n}")

    @property
    def is_dynamics(self) -> bool:
        return self.kind != "xxz_bond_alternating"


def random_dynamics_spec(n: int, symmetric: bool, seed) -> HamiltonianSpec:
    """Nearest-neighbour ring with couplings ``J^{mu nu}`` drawn from U[-1, 1]."""
    rng = as_rng(seed)
    shape = (3, 3) if symmetric else (n, 3, 3)
    J = rng.uniform(-1.0, 1.0, size=shape)
    kind = "random_symmetric" if symmetric else "random_general"
    return HamiltonianSpec(kind, n, J, seed=seed if isinstance(seed, int) else None)


def xxz_spec(n: int, J: float, delta: float = 0.5) -> HamiltonianSpec:
    if n % 2:
        raise InvalidArgument(f"bond-alternating chain needs even n, got {n}")
    return HamiltonianSpec("xxz_bond_alternating", n, None, J=float(J), delta=float(delta))


def hamiltonian_terms(spec: HamiltonianSpec) -> list[tuple[float, list[tuple[int, str]]]]:
    n = spec.n
    terms = []
    if spec.is_dynamics:
        for j in range(n):
            k = (j + 1) % n
            Jj = spec.couplings if spec.kind == "random_symmetric" else spec.couplings[j]
            for a, mu in enumerate(LETTERS):
                for b, nu in enumerate(LETTERS):
                    terms.append((float(Jj[a, b]), [(j, mu), (k, nu)]))
        return terms

    def bond(i, k, scale):
        return [
            (scale, [(i, "X"), (k, "X")]),
            (scale, [(i, "Y"), (k, "Y")]),
            (scale * spec.delta, [(i, "Z"), (k, "Z")]),
        ]

    for j in range(0, n, 2):  # intra-pair bonds (0,1), (2,3), ...
        terms += bond(j, j + 1, 1.0)
    for j in range(1, n - 1, 2):  # inter-pair bonds (1,2), (3,4), ...
        terms += bond(j, j + 1, spec.J)
    return terms


def hamiltonian_matrix(spec: HamiltonianSpec) -> sp.csr_matrix:
    H = pauli_sum_matrix(spec.n, hamiltonian_terms(spec))
    if not spec.is_dynamics:
        H = H.real.tocsr()
    return H


# ---------------------------------------------------------------------------
# time evolution


def krylov_expm_multiply(H, v: np.ndarray, t: float, m: int = KRYLOV_DIM, tol: float = 1e-12):
    """``exp(-i t H) v`` for Hermitian ``H`` by restarted Lanczos.

    Each restart builds an ``m``-dimensional Krylov space of the current
    vector and advances by the largest step whose a-posteriori error estimate
    ``beta_m |[exp(-i dt T_m) e_1]_{m-1}|`` is below ``tol * dt / t``.
    """
    v = np.asarray(v, dtype=np.complex128)
    if t == 0:
        return v.copy()
    dim = v.size
    m = min(m, dim)
    done = 0.0
    w = v.copy()
    while done < t:
        beta0 = np.linalg.norm(w)
        V = np.zeros((m + 1, dim), dtype=np.complex128)
        alpha = np.zeros(m)
        beta = np.zeros(m)
        V[0] = w / beta0
        k_used = m
        beta_last = 0.0
        for j in range(m):
            u = H @ V[j]
            alpha[j] = np.vdot(V[j], u).real
            u -= alpha[j] * V[j]
            if j:
                u -= beta[j - 1] * V[j - 1]
            # full reorthogonalisation; m is small
            u -= V[: j + 1].T @ (V[: j + 1].conj() @ u)
            b = np.linalg.norm(u)
            if b < 1e-13 * max(1.0, abs(alpha[j])):
                k_used = j + 1
                beta_last = 0.0
                break
            if j < m - 1:
                beta[j] = b
            else:
                beta_last = b
            V[j + 1] = u / b
        a = alpha[:k_used]
        off = beta[: k_used - 1]
        Tm = np.diag(a) + np.diag(off, 1) + np.diag(off, -1)
        evals, evecs = np.linalg.eigh(Tm)
        first = evecs[0].conj()

        def small(dt):
            return evecs @ (np.exp(-1j * dt * evals) * first)

        dt = t - done
        for _ in range(60):
            y = small(dt)
            err = beta_last * abs(y[-1]) * beta0
            if err <= tol * dt / t or err < 1e-14 * beta0 * k_used:
                break
            dt *= 0.5
        else:
            raise NumericFailure(f"Krylov propagation failed to converge (residual {err:.3e})")
        w = beta0 * (y @ V[:k_used])
        done += dt
    return w


def evolve(spec: HamiltonianSpec, initial: StateVector, t: float) -> StateVector:
    """``exp(-i H t)|phi>`` for a random-dynamics Hamiltonian."""
    if not spec.is_dynamics:
        raise InvalidArgument("evolve expects a random-dynamics Hamiltonian")
    if spec.n != initial.n:
        raise InvalidArgument("Hamiltonian and state sizes differ")
    H = hamiltonian_matrix(spec)
    psi = krylov_expm_multiply(H, initial.amplitudes, float(t))
    drift = abs(np.linalg.norm(psi) - initial.norm())
    if drift > 1e-9:
        raise NumericFailure(f"norm drift {drift:.3e} after Krylov propagation")
    prov = dict(initial.provenance, t=float(t), hamiltonian=spec.kind)
    return StateVector(psi, initial.lattice, prov)


# ---------------------------------------------------------------------------
# random states and unitaries


def haar_qubit(rng: np.random.Generator) -> np.ndarray:
    z = rng.standard_normal(2) + 1j * rng.standard_normal(2)
    return z / np.linalg.norm(z)


def haar_unitary(rng: np.random.Generator, dim: int = 2) -> np.ndarray:
    z = (rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))) / math.sqrt(2)
    q, r = np.linalg.qr(z)
    d = np.diagonal(r)
    return q * (d / np.abs(d))


def product_state(lat: Lattice, qubits) -> StateVector:
    psi = np.ones(1, dtype=complex)
    for q in qubits:
        psi = np.kron(psi, q)
    return StateVector(psi, lat)


def random_product_state(lat: Lattice, symmetric: bool, seed) -> StateVector:
    rng = as_rng(seed)
    if symmetric:
        u = haar_qubit(rng)
        qubits = [u] * lat.n
    else:
        qubits = [haar_qubit(rng) for _ in range(lat.n)]
    st = product_state(lat, qubits)
    st.provenance = {"initial": "symmetric" if symmetric else "general"}
    return st


def apply_single_qubit(psi: np.ndarray, n: int, site: int, U: np.ndarray) -> np.ndarray:
    t = np.moveaxis(psi.reshape((2,) * n), site, 0)
    t = np.tensordot(U, t, axes=(1, 0))
    return np.ascontiguousarray(np.moveaxis(t, 0, site)).ravel()


def disturb_inversion_symmetric(state: StateVector, seed) -> StateVector:
    """Apply ``U_1 x ... x U_{n/2} x U_{n/2} x ... x U_1`` with Haar ``U_k``."""
    n = state.n
    if n % 2:
        raise InvalidArgument(f"inversion-symmetric disturbance needs even n, got {n}")
    rng = as_rng(seed)
    Us = [haar_unitary(rng) for _ in range(n // 2)]
    psi = state.amplitudes
    for k, U in enumerate(Us):
        psi = apply_single_qubit(psi, n, k, U)
        psi = apply_single_qubit(psi, n, n - 1 - k, U)
    return StateVector(psi, state.lattice, dict(state.provenance, disturbed=True))


# ---------------------------------------------------------------------------
# ground states


def ground_state(spec: HamiltonianSpec) -> tuple[StateVector, float]:
    """Lowest eigenpair, residual ``||H psi - E psi|| <= 1e-8`` enforced.

    The global phase is fixed so the largest-magnitude amplitude is real and
    positive.
    """
    n = spec.n
    H = hamiltonian_matrix(spec)
    dim = H.shape[0]
    v0 = np.random.default_rng(0).standard_normal(dim)
    if not np.iscomplexobj(H.data):
        v0 = v0.real
    E, vec = None, None
    try:
        vals, vecs = eigsh(H, k=1, which="SA", v0=v0, tol=1e-13, maxiter=20 * dim)
        E, vec = float(vals[0]), vecs[:, 0]
    except Exception:  # ARPACK nonconvergence
        pass
    if vec is None or np.linalg.norm(H @ vec - E * vec) > 1e-8:
        if dim > 4096:
            raise NumericFailure("Lanczos ground-state search did not converge")
        w, U = np.linalg.eigh(H.toarray())
        E, vec = float(w[0]), U[:, 0]
    vec = vec / np.linalg.norm(vec)
    res = float(np.linalg.norm(H @ vec - E * vec))
    if res > 1e-8:
        raise NumericFailure(f"ground-state residual {res:.3e} exceeds 1e-8")
    big = np.argmax(np.abs(vec))
    vec = vec * (abs(vec[big]) / vec[big])
    prov = {"hamiltonian": spec.kind, "J": spec.J, "delta": spec.delta, "energy": E}
    return StateVector(vec.astype(np.complex128), Lattice.ring(n), prov), E


# ---------------------------------------------------------------------------
# reduced states and diagnostics


def reduced_density_matrix(state: StateVector, sites) -> np.ndarray:
    """``rho_A`` with the first listed site as the most significant qubit."""
    sites = [state.lattice.check_site(s) for s in sites]
    k = len(sites)
    if k > RDM_CAP:
        raise ResourceLimit(f"reduced density matrix on {k} > {RDM_CAP} sites")
    if len(set(sites)) != k:
        raise InvalidArgument("duplicate sites in reduced_density_matrix")
    n = state.n
    rest = [i for i in range(n) if i not in sites]
    M = np.transpose(state.tensor(), sites + rest).reshape(1 << k, -1)
    rho = M @ M.conj().T
    return 0.5 * (rho + rho.conj().T)


def purity(rho: np.ndarray) -> float:
    return float(np.real(np.vdot(rho, rho)))


def order_parameter_z(state: StateVector, a: int = 2) -> float:
    """Inversion-based string order parameter on the ``2a`` central sites.

    ``z = sqrt(2) <R_I> / sqrt(tr rho_I1^2 + tr rho_I2^2)`` where ``R_I``
    reflects the block ``I = I1 + I2`` about the chain centre.
    """
    n = state.n
    if n % 2:
        raise InvalidArgument("order parameter needs even n")
    if not 1 <= a <= n // 2:
        raise InvalidArgument(f"block width a must lie in [1, {n // 2}], got {a}")
    if 2 * a > RDM_CAP:
        raise ResourceLimit(f"order-parameter block of {2 * a} sites exceeds {RDM_CAP}")
    c = n // 2
    left = list(range(c - a, c))
    right = list(range(c, c + a))
    perm = list(range(n))
    for k in range(a):
        i, j = c - 1 - k, c + k
        perm[i], perm[j] = j, i
    reflected = np.transpose(state.tensor(), perm).ravel()
    overlap = np.vdot(state.amplitudes, reflected).real
    denom = purity(reduced_density_matrix(state, left)) + purity(
        reduced_density_matrix(state, right)
    )
    return float(math.sqrt(2.0) * overlap / math.sqrt(denom))


def _symmetry_probes(lat: Lattice) -> list[PauliString]:
    probes = [PauliString(lat, ((0, l),)) for l in LETTERS]
    if lat.n > 1:
        probes += [PauliString(lat, ((0, a), (1, b))) for a, b in product(LETTERS, repeat=2)]
    return probes


def translation_symmetry_defect(state: StateVector) -> float:
    """Largest change of a one- or two-site probe expectation under any shift."""
    lat = state.lattice
    if lat.D != 1:
        raise InvalidArgument("translation_symmetry_defect is defined for 1D lattices")
    worst = 0.0
    for P in _symmetry_probes(lat):
        ref = pauli_expectation(state, P)
        Q = P
        for _ in range(1, lat.n):
            Q = Q.translate()
            worst = max(worst, abs(ref - pauli_expectation(state, Q)))
    return worst


@dataclass(frozen=True)
class CorrelationFit:
    xi: float
    quality: str  # "ok", "uncorrelated", "non-decaying", "single-point"
    r2: float
    distances: tuple[int, ...]
    correlators: tuple[float, ...]


def connected_correlators(state: StateVector, letters=("Z", "Z")) -> list[float]:
    lat = state.lattice
    a, b = letters
    e0 = pauli_expectation(state, PauliString(lat, ((0, a),)))
    out = []
    for d in range(1, lat.n // 2 + 1):
        ed = pauli_expectation(state, PauliString(lat, ((d, b),)))
        e0d = pauli_expectation(state, PauliString(lat, ((0, a), (d, b))))
        out.append(e0d - e0 * ed)
    return out


def correlation_length_probe(state: StateVector, letters=("Z", "Z"), floor: float = 1e-8) -> CorrelationFit:
    """Least-squares fit of ``log|C(d)| = c - d / xi`` for ``d = 1..n/2``."""
    if state.lattice.D != 1:
        raise InvalidArgument("correlation_length_probe is defined for 1D lattices")
    C = connected_correlators(state, letters)
    d_all = np.arange(1, len(C) + 1)
    mask = np.abs(C) > floor
    d, y = d_all[mask], np.log(np.abs(np.asarray(C)[mask]))
    corr = tuple(float(c) for c in C)
    dists = tuple(int(x) for x in d_all)
    if d.size == 0:
        return CorrelationFit(0.0, "uncorrelated", 0.0, dists, corr)
    if d.size == 1:
        return CorrelationFit(0.0, "single-point", 0.0, dists, corr)
    slope, icpt = np.polyfit(d, y, 1)
    resid = y - (slope * d + icpt)
    ss = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid ** 2)) / ss if ss > 0 else 1.0
    if slope > -1e-9:
        return CorrelationFit(math.inf, "non-decaying", r2, dists, corr)
    return CorrelationFit(float(-1.0 / slope), "ok", r2, dists, corr)
