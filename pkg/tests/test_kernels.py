import itertools
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from glqk.errors import InvalidArgument, NumericFailure
from glqk.kernels import (
    KernelConfig,
    OpCounter,
    exp_series_tail,
    glqk_polynomial,
    glqk_window_mean,
    gram,
    qubit_overlap,
    read_gram,
    shadow_kernel,
    standardize,
    truncated_feature_oracle,
    truncated_shadow_kernel,
    write_gram,
)
from glqk.lattice import Lattice, local_subsystems
from glqk.shadows import ClassicalShadow

E5 = math.exp(5)


def random_shadow(lat, T, rng):
    return ClassicalShadow.from_arrays(lat, rng.integers(0, 3, (T, lat.n)), rng.choice([-1, 1], (T, lat.n)))


def inner_sum(sa, sb, sites, gamma):
    """Plain-loop reference for (1/T_a T_b) sum_{t,t'} prod_i (1 + gamma/|A| tr)."""
    tot = 0.0
    for ra in sa.records:
        for rb in sb.records:
            prod_ = 1.0
            for i in sites:
                prod_ *= 1 + gamma / len(sites) * qubit_overlap(int(ra[i]), int(rb[i]))
            tot += prod_
    return tot / (sa.T * sb.T)


# ---- single-qubit overlap ----


def test_overlap_table_all_pairs():
    recs = [(b, o) for b in "XYZ" for o in (1, -1)]
    for ra, rb in itertools.product(recs, recs):
        # oracle: trace of the product of the two single-qubit estimators
        W = {"X": np.array([[0, 1], [1, 0]]), "Y": np.array([[0, -1j], [1j, 0]]), "Z": np.diag([1, -1])}
        sa = (3 * ra[1] * W[ra[0]] + np.eye(2)) / 2
        sb = (3 * rb[1] * W[rb[0]] + np.eye(2)) / 2
        expected = np.trace(sa @ sb).real
        assert qubit_overlap(ra, rb) == expected
        assert expected in (5.0, -4.0, 0.5)


@pytest.mark.parametrize("a, b, v", [(("Z", 1), ("Z", 1), 5.0), (("Z", 1), ("Z", -1), -4.0), (("Z", 1), ("X", -1), 0.5)])
def test_overlap_examples(a, b, v):
    assert qubit_overlap(a, b) == v


# ---- closed-form kernel values ----


def test_tsk_single_record():
    lat = Lattice.ring(1)
    sh = ClassicalShadow.from_arrays(lat, [[2]], [[1]])
    assert truncated_shadow_kernel(sh, sh, [0]) == pytest.approx(math.exp(6), rel=1e-15)


def test_shadow_kernel_single_record():
    lat = Lattice.ring(1)
    sh = ClassicalShadow.from_arrays(lat, [[2]], [[1]])
    assert shadow_kernel(sh, sh) == pytest.approx(math.exp(E5), rel=1e-14)


@pytest.mark.parametrize("gamma", [1e-12, 1e-15])
def test_small_gamma_limit(gamma):
    rng = np.random.default_rng(0)
    lat = Lattice.ring(4)
    a, b = random_shadow(lat, 5, rng), random_shadow(lat, 7, rng)
    assert truncated_shadow_kernel(a, b, [0, 1], 0.7, gamma) == pytest.approx(math.exp(0.7), rel=1e-9)
    assert shadow_kernel(a, b, 0.7, gamma) == pytest.approx(math.exp(0.7), rel=1e-9)
    cfg = KernelConfig("glqk_poly", 0.7, gamma, 3, 2)
    assert glqk_polynomial(a, b, cfg) == pytest.approx(math.exp(2.1), rel=1e-9)


def test_tsk_matches_loop_reference():
    rng = np.random.default_rng(1)
    lat = Lattice.ring(5)
    a, b = random_shadow(lat, 4, rng), random_shadow(lat, 6, rng)
    for sites in ([0], [1, 2], [4, 0, 1]):
        assert truncated_shadow_kernel(a, b, sites, 0.8, 1.3) == pytest.approx(
            math.exp(0.8 * inner_sum(a, b, sites, 1.3)), rel=1e-13
        )


def test_bounds_on_random_pairs():
    rng = np.random.default_rng(2)
    lat = Lattice.ring(4)
    for _ in range(1000):
        T = int(rng.integers(1, 4))
        a, b = random_shadow(lat, T, rng), random_shadow(lat, T, rng)
        h = int(rng.integers(1, 3))
        assert shadow_kernel(a, b) <= math.exp(E5)
        assert truncated_shadow_kernel(a, b, [1, 2]) <= math.exp(E5)
        assert glqk_polynomial(a, b, KernelConfig("glqk_poly", 1, 1, h, 2)) <= math.exp(h * E5)


def test_bound_with_nested_windows():
    rng = np.random.default_rng(3)
    lat = Lattice.ring(6)
    for _ in range(100):
        a, b = random_shadow(lat, 2, rng), random_shadow(lat, 2, rng)
        for zeta in (1, 3, 6):
            assert glqk_polynomial(a, b, KernelConfig(zeta=zeta)) <= math.exp(E5)


# ---- GLQK structure ----


def test_power_h():
    rng = np.random.default_rng(4)
    lat = Lattice.ring(5)
    a, b = random_shadow(lat, 3, rng), random_shadow(lat, 3, rng)
    k1 = glqk_polynomial(a, b, KernelConfig(h=1, zeta=3))
    assert glqk_polynomial(a, b, KernelConfig(h=2, zeta=3)) == pytest.approx(k1 ** 2, rel=1e-14)


def test_full_ring_window_mean():
    rng = np.random.default_rng(5)
    lat = Lattice.ring(4)
    a, b = random_shadow(lat, 3, rng), random_shadow(lat, 3, rng)
    single = truncated_shadow_kernel(a, b, range(4))
    assert glqk_polynomial(a, b, KernelConfig(zeta=4)) == pytest.approx(single, rel=1e-13)


def test_glqk_mean_of_window_kernels():
    rng = np.random.default_rng(6)
    lat = Lattice((3, 4))
    a, b = random_shadow(lat, 3, rng), random_shadow(lat, 2, rng)
    subs = local_subsystems(lat, 2)
    ref = math.fsum(truncated_shadow_kernel(a, b, A, 1.1, 0.9) for A in subs) / len(subs)
    assert glqk_polynomial(a, b, KernelConfig("glqk_poly", 1.1, 0.9, 1, 2)) == pytest.approx(ref, rel=1e-13)


def test_glqk_symmetric_exactly():
    rng = np.random.default_rng(7)
    lat = Lattice.ring(6)
    for _ in range(20):
        a, b = random_shadow(lat, 4, rng), random_shadow(lat, 4, rng)
        cfg = KernelConfig(zeta=3, h=2)
        assert glqk_polynomial(a, b, cfg) == glqk_polynomial(b, a, cfg)
        assert shadow_kernel(a, b) == shadow_kernel(b, a)


@pytest.mark.parametrize("dims, axis", [((6,), 0), ((3, 4), 1), ((3, 4), 0)])
def test_translation_covariance(dims, axis):
    rng = np.random.default_rng(8)
    lat = Lattice(dims)
    a, b = random_shadow(lat, 3, rng), random_shadow(lat, 3, rng)
    cfg = KernelConfig(zeta=2)
    assert glqk_polynomial(a.translate(axis, 1), b.translate(axis, 1), cfg) == glqk_polynomial(a, b, cfg)


def test_window_too_wide():
    lat = Lattice.ring(4)
    rng = np.random.default_rng(0)
    a = random_shadow(lat, 2, rng)
    with pytest.raises(InvalidArgument):
        glqk_polynomial(a, a, KernelConfig(zeta=5))
    with pytest.raises(InvalidArgument):
        gram([a], None, KernelConfig(zeta=5))


def test_config_validation():
    with pytest.raises(InvalidArgument):
        KernelConfig(kind="rbf")
    with pytest.raises(InvalidArgument):
        KernelConfig(tau=0)
    with pytest.raises(InvalidArgument):
        KernelConfig(h=0)


# ---- cost scaling ----


@pytest.mark.parametrize("T, k", [(2, 1), (4, 1), (4, 3), (8, 2)])
def test_operation_count(T, k):
    rng = np.random.default_rng(9)
    lat = Lattice.ring(6)
    a, b = random_shadow(lat, T, rng), random_shadow(lat, T, rng)
    c = OpCounter()
    truncated_shadow_kernel(a, b, list(range(k)), counter=c)
    assert c.factors == T * T * k
    c = OpCounter()
    glqk_polynomial(a, b, KernelConfig(zeta=k), counter=c)
    assert c.factors == T * T * k * lat.n


# ---- Gram assembly ----


@pytest.mark.parametrize("dims, zeta", [((5,), 2), ((6,), 6), ((3, 3), 2)])
def test_fast_glqk_gram_matches_direct(dims, zeta):
    rng = np.random.default_rng(10)
    lat = Lattice(dims)
    shadows = [random_shadow(lat, 4, rng) for _ in range(5)]
    cfg = KernelConfig("glqk_poly", 0.9, 1.2, 2, zeta)
    K = gram(shadows, None, cfg).values
    ref = np.array([[glqk_polynomial(a, b, cfg) for b in shadows] for a in shadows])
    np.testing.assert_allclose(K, ref, rtol=1e-12)


def test_fast_window_mean_direct_fallback():
    # 4^zeta beyond the feature budget forces per-pair evaluation
    rng = np.random.default_rng(11)
    lat = Lattice.ring(13)
    recs = np.stack([random_shadow(lat, 3, rng).records for _ in range(3)])
    M = glqk_window_mean(recs, None, lat, 13, 1.0, 1.0)
    shadows = [ClassicalShadow(r, lat) for r in recs]
    ref = np.array([[glqk_polynomial(a, b, KernelConfig(zeta=13)) for b in shadows] for a in shadows])
    np.testing.assert_allclose(M, ref, rtol=1e-12)


def test_shadow_gram_matches_direct():
    rng = np.random.default_rng(12)
    lat = Lattice.ring(7)
    A = [random_shadow(lat, 5, rng) for _ in range(3)]
    B = [random_shadow(lat, 5, rng) for _ in range(4)]
    cfg = KernelConfig("shadow", 1.0, 0.8)
    K = gram(A, B, cfg)
    assert K.shape == (3, 4)
    ref = np.array([[shadow_kernel(a, b, 1.0, 0.8) for b in B] for a in A])
    np.testing.assert_allclose(K.values, ref, rtol=1e-12)
    np.testing.assert_allclose(K.diag_cols, [shadow_kernel(b, b, 1.0, 0.8) for b in B], rtol=1e-12)


@pytest.mark.parametrize("kind", ["shadow", "glqk_poly"])
def test_self_gram_symmetric_and_duplicates(kind):
    rng = np.random.default_rng(13)
    lat = Lattice.ring(5)
    s = random_shadow(lat, 6, rng)
    K = gram([s, s, random_shadow(lat, 6, rng)], None, KernelConfig(kind, zeta=2)).values
    assert np.array_equal(K, K.T)
    assert K[0, 1] == K[0, 0]


@pytest.mark.parametrize("kind", ["shadow", "glqk_poly"])
def test_gram_psd(kind):
    rng = np.random.default_rng(14)
    lat = Lattice.ring(6)
    for _ in range(20):
        K = gram([random_shadow(lat, 10, rng) for _ in range(30)], None, KernelConfig(kind, zeta=3)).values
        assert np.linalg.eigvalsh(K).min() >= -1e-8 * np.linalg.norm(K, 2)


def test_gram_rejects_mixed_lattices():
    rng = np.random.default_rng(0)
    with pytest.raises(InvalidArgument):
        gram([random_shadow(Lattice.ring(4), 2, rng)], [random_shadow(Lattice.ring(5), 2, rng)], KernelConfig("shadow"))


# ---- standardisation ----


def test_standardize_example():
    out = standardize(np.array([[4.0, 2.0], [2.0, 9.0]])).values
    np.testing.assert_allclose(out, [[1, 1 / 3], [1 / 3, 1]], rtol=1e-15)


@given(st.integers(0, 2 ** 31), st.floats(1e-3, 1e3))
def test_standardize_scale_invariant(seed, c):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((4, 3))
    K = X @ X.T + np.eye(4)
    a, b = standardize(K).values, standardize(c * K).values
    np.testing.assert_allclose(a, b, rtol=1e-12)
    assert np.all(np.diag(a) == 1.0)


def test_standardize_rectangular_uses_train_diagonals():
    rng = np.random.default_rng(15)
    lat = Lattice.ring(4)
    A = [random_shadow(lat, 4, rng) for _ in range(3)]
    B = [random_shadow(lat, 4, rng) for _ in range(2)]
    cfg = KernelConfig(zeta=2)
    full = standardize(gram(A + B, None, cfg)).values
    rect = standardize(gram(A, B, cfg)).values
    np.testing.assert_allclose(rect, full[:3, 3:], rtol=1e-12)


def test_standardize_rejects_nonpositive():
    with pytest.raises(NumericFailure):
        standardize(np.array([[0.0, 1.0], [1.0, 1.0]]))


# ---- explicit feature-map oracle ----


@pytest.mark.parametrize("cap", [0, 1, 2, 3, 4, 5])
def test_feature_oracle_within_tail(cap):
    rng = np.random.default_rng(16)
    lat = Lattice.ring(4)
    A = [1, 2]
    for _ in range(3):
        a, b = random_shadow(lat, 3, rng), random_shadow(lat, 3, rng)
        M = inner_sum(a, b, A, 1.0)
        approx = truncated_feature_oracle(a, A, 1.0, 1.0, cap) @ truncated_feature_oracle(b, A, 1.0, 1.0, cap)
        exact = truncated_shadow_kernel(a, b, A)
        # both sides are double-precision sums of O(e^M) terms; allow rounding on top of the tail
        assert abs(approx - exact) <= exp_series_tail(M, cap) + 1e-12 * exact


def test_feature_oracle_degree_zero_is_one():
    rng = np.random.default_rng(17)
    lat = Lattice.ring(3)
    v = truncated_feature_oracle(random_shadow(lat, 2, rng), [0], 1.0, 1.0, 0)
    np.testing.assert_array_equal(v, [1.0])


def test_feature_oracle_size_zero_subsets():
    # with only the empty subset every degree factor is the constant 1, giving sum_d tau^d/d!
    rng = np.random.default_rng(18)
    lat = Lattice.ring(3)
    v = truncated_feature_oracle(random_shadow(lat, 2, rng), [0, 1], 0.5, 1.0, 4, size_cap=0)
    assert v @ v == pytest.approx(sum(0.5 ** d / math.factorial(d) for d in range(5)), rel=1e-15)


def test_exp_tail_values():
    assert exp_series_tail(1.0, 0) == pytest.approx(math.e - 1)
    assert exp_series_tail(0.0, 3) == 0.0


# ---- Gram blob ----


def test_gram_blob_round_trip(tmp_path):
    rng = np.random.default_rng(19)
    lat = Lattice.ring(4)
    K = gram([random_shadow(lat, 3, rng) for _ in range(3)], [random_shadow(lat, 3, rng) for _ in range(2)],
             KernelConfig("glqk_poly", 0.5, 2.0, 3, 2))
    path = tmp_path / "k.gram"
    write_gram(path, K, {"seed": 3})
    back = read_gram(path)
    assert path.read_bytes()[:4] == b"GLQK"
    assert np.array_equal(back.values, K.values) and back.config == K.config
    np.testing.assert_array_equal(back.diag_rows, K.diag_rows)
    assert back.provenance["seed"] == 3
