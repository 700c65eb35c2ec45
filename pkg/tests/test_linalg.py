"""Deterministic RNG, matrix helpers, and the Jacobi SVD against
independent oracles."""

import math

import numpy as np
import pytest

from fedlora.errors import ConfigError, NumericalError
from fedlora.linalg import (
    Rng,
    derive_seed,
    frobenius_norm,
    hadamard,
    matmul,
    sample_gaussian,
    svd_truncated,
)
from conftest import triple_matmul

MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15


def _reference_splitmix(seed: int, n: int) -> list[int]:
    # independent re-implementation of the documented generator
    def mix(z):
        z &= MASK64
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
        return z ^ (z >> 31)

    out = []
    state = seed & MASK64
    for _ in range(n):
        state = (state + GOLDEN) & MASK64
        out.append(mix(state))
    return out


def test_rng_matches_reference_recurrence():
    rng = Rng(12345)
    want = _reference_splitmix(12345, 20)
    got = [rng.next_u64() for _ in range(20)]
    assert got == want


def test_rng_same_seed_same_stream():
    a = Rng(99)
    b = Rng(99)
    assert [a.next_u64() for _ in range(50)] == \
           [b.next_u64() for _ in range(50)]


def test_rng_uniform_range_and_moments():
    rng = Rng(3)
    draws = np.array([rng.uniform() for _ in range(20000)])
    assert np.all(draws >= 0.0) and np.all(draws < 1.0)
    assert abs(draws.mean() - 0.5) < 0.01
    assert abs(draws.var() - 1.0 / 12.0) < 0.005


def test_rng_gaussian_moments():
    rng = Rng(4)
    draws = np.array([rng.gaussian() for _ in range(20000)])
    assert abs(draws.mean()) < 0.03
    assert abs(draws.std() - 1.0) < 0.03


def test_rng_permutation_is_a_permutation():
    rng = Rng(5)
    for n in (1, 2, 7, 40):
        p = rng.permutation(n)
        assert sorted(p.tolist()) == list(range(n))


def test_rng_dirichlet_sums_to_one_even_when_tiny_alpha():
    rng = Rng(6)
    for alpha in (0.01, 0.05, 1.0, 100.0):
        p = rng.dirichlet(alpha, 10)
        assert p.shape == (10,)
        assert np.all(p >= 0.0)
        assert abs(p.sum() - 1.0) < 1e-12


def test_derive_seed_order_and_length_sensitivity():
    s = 77
    assert derive_seed(s, 1, 2) != derive_seed(s, 2, 1)
    assert derive_seed(s, 1) != derive_seed(s, 1, 0)
    assert derive_seed(s, 1, 2) == derive_seed(s, 1, 2)


def test_matmul_matches_triple_loop(nprng):
    for shape in ((1, 1, 1), (2, 3, 4), (5, 5, 5), (7, 2, 9)):
        n, k, m = shape
        a = nprng.normal(size=(n, k))
        b = nprng.normal(size=(k, m))
        got = matmul(a, b)
        want = triple_matmul(a, b)
        assert np.max(np.abs(got - want)) < 1e-13


def test_matmul_shape_mismatch():
    with pytest.raises(ConfigError):
        matmul(np.zeros((2, 3)), np.zeros((4, 2)))


def test_frobenius_norm_three_four_five():
    # hand example: entries 3 and 4 give norm exactly 5
    assert frobenius_norm(np.array([[3.0, 4.0]])) == 5.0


def test_hadamard_hand_example():
    a = np.array([[1.0, 2.0], [3.0, 4.0]])
    b = np.array([[2.0, 0.5], [1.0, -1.0]])
    want = np.array([[2.0, 1.0], [3.0, -4.0]])
    assert np.array_equal(hadamard(a, b), want)


def test_sample_gaussian_deterministic_and_scaled():
    m1 = sample_gaussian(Rng(11), 6, 4, 0.5)
    m2 = sample_gaussian(Rng(11), 6, 4, 0.5)
    assert np.array_equal(m1, m2)
    big = sample_gaussian(Rng(12), 100, 100, 2.0)
    assert abs(big.std() - 2.0) < 0.05


def test_nonfinite_products_rejected():
    bad = np.array([[1.0, np.inf]])
    with pytest.raises(NumericalError):
        matmul(bad, np.ones((2, 1)))
    with pytest.raises(NumericalError):
        hadamard(bad, bad)


def _gram_singular_values(m: np.ndarray) -> np.ndarray:
    # oracle: singular values from eigenvalues of the Gram matrix
    evals = np.linalg.eigvalsh(m.T @ m)
    evals = np.clip(evals, 0.0, None)
    return np.sqrt(evals)[::-1]


def test_svd_singular_values_match_gram_oracle(nprng):
    for shape in ((20, 16), (16, 20), (9, 9)):
        m = nprng.normal(size=shape)
        k = min(shape)
        res = svd_truncated(m, k)
        want = _gram_singular_values(m)[:k]
        assert np.max(np.abs(res.s - want)) / want[0] < 1e-10


def test_svd_full_rank_reconstruction(nprng):
    m = nprng.normal(size=(20, 16))
    res = svd_truncated(m, 16)
    rec = (res.u * res.s) @ res.vt
    assert frobenius_norm(rec - m) < 1e-8


def test_svd_truncation_error_equals_tail_energy(nprng):
    m = nprng.normal(size=(20, 16))
    sv = _gram_singular_values(m)
    for k in (1, 4, 8, 15):
        res = svd_truncated(m, k)
        rec = (res.u * res.s) @ res.vt
        err = frobenius_norm(rec - m)
        want = math.sqrt(float(np.sum(sv[k:] ** 2)))
        assert abs(err - want) / want < 1e-6


def test_svd_factors_orthonormal(nprng):
    m = nprng.normal(size=(14, 10))
    res = svd_truncated(m, 7)
    assert np.max(np.abs(res.u.T @ res.u - np.eye(7))) < 1e-10
    assert np.max(np.abs(res.vt @ res.vt.T - np.eye(7))) < 1e-10


def test_svd_descending_order(nprng):
    m = nprng.normal(size=(12, 12))
    res = svd_truncated(m, 12)
    assert np.all(np.diff(res.s) <= 1e-12)


def test_svd_rank_deficient_matrix(nprng):
    # rank 3 by construction: outer products of three vector pairs
    u = nprng.normal(size=(15, 3))
    v = nprng.normal(size=(3, 11))
    m = u @ v
    res = svd_truncated(m, 6)
    assert np.all(res.s[3:] < 1e-10 * res.s[0])
    rec = (res.u[:, :3] * res.s[:3]) @ res.vt[:3]
    assert frobenius_norm(rec - m) < 1e-8 * frobenius_norm(m)


def test_svd_rejects_bad_rank(nprng):
    m = nprng.normal(size=(4, 3))
    with pytest.raises(ConfigError):
        svd_truncated(m, 0)
    with pytest.raises(ConfigError):
        svd_truncated(m, 4)


def test_svd_zero_matrix():
    res = svd_truncated(np.zeros((5, 4)), 2)
    assert np.array_equal(res.s, np.zeros(2))
    # factors must still be orthonormal so downstream splits stay valid
    assert np.max(np.abs(res.u.T @ res.u - np.eye(2))) < 1e-12
