import math

import numpy as np
import pytest
import scipy.linalg as sla
from hypothesis import given, strategies as st

from glqk.errors import InvalidArgument, ResourceLimit
from glqk.lattice import Lattice
from glqk.pauli_poly import LETTERS, PauliString
from glqk.qsim import (
    HamiltonianSpec,
    StateVector,
    basis_state,
    correlation_length_probe,
    disturb_inversion_symmetric,
    evolve,
    ghz_state,
    ground_state,
    hamiltonian_matrix,
    hamiltonian_terms,
    krylov_expm_multiply,
    order_parameter_z,
    pauli_expectation,
    random_dynamics_spec,
    random_product_state,
    reduced_density_matrix,
    translation_symmetry_defect,
    xxz_spec,
)

from conftest import dense_expectation, dense_pauli


def dense_hamiltonian(spec):
    H = 0
    for c, letters in hamiltonian_terms(spec):
        H = H + c * dense_pauli(spec.n, dict(letters))
    return H


def bell(lat=Lattice.ring(2)):
    return StateVector(np.array([1, 0, 0, 1]) / math.sqrt(2), lat)


# ---- Pauli expectations ----


@pytest.mark.parametrize("text, expected", [("Z0", 1.0), ("X0", 0.0), ("Z0 Z2", 1.0)])
def test_expectation_on_zero_state(text, expected):
    lat = Lattice.ring(3)
    assert pauli_expectation(basis_state(lat), PauliString.parse(lat, text)) == expected


def test_bell_xx():
    lat = Lattice.ring(2)
    assert pauli_expectation(bell(), PauliString.parse(lat, "X0 X1")) == pytest.approx(1.0)


@given(st.integers(0, 2 ** 32 - 1), st.lists(st.sampled_from("IXYZ"), min_size=4, max_size=4))
def test_expectation_matches_dense_oracle(seed, word):
    lat = Lattice.ring(4)
    rng = np.random.default_rng(seed)
    psi = rng.standard_normal(16) + 1j * rng.standard_normal(16)
    psi /= np.linalg.norm(psi)
    letters = {i: l for i, l in enumerate(word) if l != "I"}
    P = PauliString.from_pairs(lat, letters.items())
    assert pauli_expectation(StateVector(psi, lat), P) == pytest.approx(
        dense_expectation(psi, 4, letters), abs=1e-12
    )


# ---- Hamiltonians ----


@pytest.mark.parametrize("symmetric", [True, False])
def test_sparse_hamiltonian_matches_dense(symmetric):
    spec = random_dynamics_spec(5, symmetric, 3)
    H = hamiltonian_matrix(spec).toarray()
    np.testing.assert_allclose(H, dense_hamiltonian(spec), atol=1e-13)
    np.testing.assert_allclose(H, H.conj().T, atol=0)


def test_random_couplings_in_range():
    spec = random_dynamics_spec(6, False, 0)
    assert spec.couplings.shape == (6, 3, 3)
    assert np.all(np.abs(spec.couplings) <= 1)
    assert random_dynamics_spec(6, True, 0).couplings.shape == (3, 3)


def test_xxz_bond_counts():
    terms = hamiltonian_terms(xxz_spec(8, 0.7))
    bonds = {tuple(s for s, _ in letters) for _, letters in terms}
    assert bonds == {(0, 1), (2, 3), (4, 5), (6, 7), (1, 2), (3, 4), (5, 6)}


def test_xxz_rejects_odd_chain():
    with pytest.raises(InvalidArgument):
        xxz_spec(7, 0.5)


# ---- evolution ----


@pytest.mark.parametrize("n", [2, 4, 6])
@pytest.mark.parametrize("symmetric", [True, False])
def test_evolve_matches_dense_expm(n, symmetric):
    spec = random_dynamics_spec(n, symmetric, 11 + n)
    init = random_product_state(Lattice.ring(n), symmetric, 7)
    out = evolve(spec, init, 0.5)
    ref = sla.expm(-0.5j * dense_hamiltonian(spec)) @ init.amplitudes
    assert 1 - abs(np.vdot(ref, out.amplitudes)) ** 2 <= 1e-8
    assert abs(out.norm() - 1) <= 1e-9


def test_evolve_zero_time_is_identity():
    spec = random_dynamics_spec(4, False, 1)
    init = random_product_state(Lattice.ring(4), False, 2)
    np.testing.assert_array_equal(evolve(spec, init, 0.0).amplitudes, init.amplitudes)


def test_eigenstate_only_gains_phase():
    lat = Lattice.ring(2)
    J = np.zeros((3, 3))
    J[2, 2] = 1.0  # Z0 Z1 + Z1 Z0 on a two-site ring
    spec = HamiltonianSpec("random_symmetric", 2, J)
    out = evolve(spec, basis_state(lat), 1.3)
    for a in LETTERS:
        for b in LETTERS:
            P = PauliString.from_pairs(lat, [(0, a), (1, b)])
            assert pauli_expectation(out, P) == pytest.approx(pauli_expectation(basis_state(lat), P), abs=1e-12)


def test_evolve_norm_n8():
    spec = random_dynamics_spec(8, True, 4)
    out = evolve(spec, random_product_state(Lattice.ring(8), True, 4), 0.5)
    assert abs(out.norm() - 1) <= 1e-9


def test_krylov_long_time_restarts():
    spec = random_dynamics_spec(5, False, 9)
    H = hamiltonian_matrix(spec)
    v = random_product_state(Lattice.ring(5), False, 1).amplitudes
    out = krylov_expm_multiply(H, v, 6.0, m=8)
    ref = sla.expm(-6.0j * H.toarray()) @ v
    assert np.linalg.norm(out - ref) < 1e-9


def test_evolve_rejects_xxz():
    with pytest.raises(InvalidArgument):
        evolve(xxz_spec(4, 0.5), basis_state(Lattice.ring(4)), 0.1)


# ---- random states ----


def test_symmetric_product_state_sites_equal():
    st_ = random_product_state(Lattice.ring(6), True, 5)
    rdms = [reduced_density_matrix(st_, [i]) for i in range(6)]
    for r in rdms[1:]:
        assert abs(np.trace(r @ rdms[0]).real - 1) <= 1e-10


def test_different_seeds_differ():
    lat = Lattice.ring(3)
    a, b = random_product_state(lat, False, 1), random_product_state(lat, False, 2)
    assert abs(np.vdot(a.amplitudes, b.amplitudes)) < 1


def test_single_qubit_state_normalised():
    s = random_product_state(Lattice.ring(1), True, 0)
    assert s.norm() == pytest.approx(1.0, abs=1e-14)


# ---- ground states ----


def test_decoupled_pairs_energy():
    for n in (4, 6, 8):
        _, E = ground_state(xxz_spec(n, 0.0, 0.5))
        # two-site oracle: lowest eigenvalue of XX + YY + 0.5 ZZ
        two = dense_pauli(2, {0: "X", 1: "X"}) + dense_pauli(2, {0: "Y", 1: "Y"}) + 0.5 * dense_pauli(2, {0: "Z", 1: "Z"})
        e2 = np.linalg.eigvalsh(two)[0]
        assert e2 == pytest.approx(-2.5)
        assert E == pytest.approx(n // 2 * e2, abs=1e-9)


def test_ground_state_matches_dense_and_residual():
    spec = xxz_spec(8, 1.3)
    st_, E = ground_state(spec)
    H = dense_hamiltonian(spec)
    assert E == pytest.approx(np.linalg.eigvalsh(H)[0], abs=1e-8)
    assert np.linalg.norm(H @ st_.amplitudes - E * st_.amplitudes) <= 1e-8
    big = np.argmax(np.abs(st_.amplitudes))
    assert st_.amplitudes[big].real > 0 and st_.amplitudes[big].imag == 0


def test_ground_energy_decreases_with_J():
    Js = np.linspace(0.1, 1.9, 7)
    Es = [ground_state(xxz_spec(8, J))[1] for J in Js]
    assert all(b < a for a, b in zip(Es, Es[1:]))


# ---- inversion-symmetric disturbance and order parameter ----


def test_disturbance_commutes_with_inversion():
    lat = Lattice.ring(4)
    rng = np.random.default_rng(3)
    psi = rng.standard_normal(16) + 1j * rng.standard_normal(16)
    st_ = StateVector(psi / np.linalg.norm(psi), lat)

    def invert(s):
        return StateVector(np.transpose(s.tensor(), [3, 2, 1, 0]).ravel(), lat)

    a = invert(disturb_inversion_symmetric(st_, 9))
    b = disturb_inversion_symmetric(invert(st_), 9)
    np.testing.assert_allclose(a.amplitudes, b.amplitudes, atol=1e-13)
    assert a.norm() == pytest.approx(1.0, abs=1e-13)


def test_disturbance_odd_n():
    with pytest.raises(InvalidArgument):
        disturb_inversion_symmetric(basis_state(Lattice.ring(3)), 0)


def test_order_parameter_invariant_under_disturbance():
    gs, _ = ground_state(xxz_spec(8, 0.6))
    z0 = order_parameter_z(gs, 2)
    for seed in range(20):
        assert order_parameter_z(disturb_inversion_symmetric(gs, seed), 2) == pytest.approx(z0, abs=1e-6)


def test_order_parameter_separates_phases():
    trivial = [order_parameter_z(disturb_inversion_symmetric(ground_state(xxz_spec(8, 0.1))[0], s), 2)
               for s in range(10)]
    spt = [order_parameter_z(disturb_inversion_symmetric(ground_state(xxz_spec(8, 1.9))[0], s), 2)
           for s in range(10)]
    assert all(z > 0 for z in trivial)
    assert all(z < 0 for z in spt)


def test_order_parameter_decoupled_limits():
    # exact singlet-product states: +1 for intra-pair singlets, -1 when the centre bond is a singlet
    assert order_parameter_z(ground_state(xxz_spec(8, 0.0))[0], 2) == pytest.approx(1.0, abs=1e-9)


def test_order_parameter_block_limit():
    with pytest.raises(ResourceLimit):
        order_parameter_z(basis_state(Lattice.ring(14)), 7)


# ---- reduced density matrices ----


def test_rdm_examples():
    lat = Lattice.ring(3)
    np.testing.assert_allclose(reduced_density_matrix(basis_state(lat), [1]), np.diag([1, 0]))
    r = reduced_density_matrix(bell(), [0])
    np.testing.assert_allclose(r, np.eye(2) / 2, atol=1e-15)
    assert np.trace(r @ r).real == pytest.approx(0.5)


def test_rdm_marginal_consistency_and_psd():
    st_ = evolve(random_dynamics_spec(6, False, 1), random_product_state(Lattice.ring(6), False, 1), 0.5)
    r2 = reduced_density_matrix(st_, [2, 4])
    r1 = reduced_density_matrix(st_, [2])
    marg = r2.reshape(2, 2, 2, 2).trace(axis1=1, axis2=3)
    np.testing.assert_allclose(marg, r1, atol=1e-10)
    assert np.trace(r2).real == pytest.approx(1.0, abs=1e-12)
    assert np.linalg.eigvalsh(r2).min() >= -1e-10


def test_rdm_size_limit():
    with pytest.raises(ResourceLimit):
        reduced_density_matrix(basis_state(Lattice.ring(13)), list(range(13)))


# ---- symmetry and correlation probes ----


def test_symmetry_defect_product_state():
    assert translation_symmetry_defect(random_product_state(Lattice.ring(6), True, 2)) <= 1e-10


def test_symmetric_dynamics_preserve_symmetry():
    lat = Lattice.ring(8)
    st_ = evolve(random_dynamics_spec(8, True, 5), random_product_state(lat, True, 5), 0.5)
    assert translation_symmetry_defect(st_) <= 1e-8


def test_general_dynamics_break_symmetry():
    lat = Lattice.ring(8)
    defects = [
        translation_symmetry_defect(evolve(random_dynamics_spec(8, False, s), random_product_state(lat, False, s), 0.5))
        for s in range(10)
    ]
    assert min(defects) > 0.01


def test_correlation_probe_product_and_ghz():
    lat = Lattice.ring(8)
    assert correlation_length_probe(random_product_state(lat, False, 1)).quality == "uncorrelated"
    fit = correlation_length_probe(ghz_state(lat))
    assert fit.quality == "non-decaying"


def test_correlation_probe_dynamics_finite():
    lat = Lattice.ring(12)
    st_ = evolve(random_dynamics_spec(12, True, 3), random_product_state(lat, True, 3), 0.5)
    fit = correlation_length_probe(st_)
    assert fit.quality == "ok" and 0 < fit.xi < math.inf
