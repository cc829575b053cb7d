import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fdnmodal.linalg import (adjugate, companion, det, eigenvalues_dense, lu_factor,
                             rcond_estimate, singular_values)
from oracles import cofactor_adjugate, cofactor_det, explicit_rcond, matched_distance


def crandn(rng, *shape):
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


def test_identity_lu():
    f = lu_factor(np.eye(2))
    assert f.det == 1
    b = np.array([3.0, -2j])
    np.testing.assert_allclose(f.solve(b), b)


def test_permutation_det():
    assert det(np.array([[0, 1], [1, 0]])) == pytest.approx(-1)


def test_lu_reassembles(rng):
    m = crandn(rng, 6, 6)
    f = lu_factor(m)
    lower, upper = f.factors()
    np.testing.assert_allclose(lower @ upper, m[f.perm], rtol=1e-12, atol=1e-12)


def test_det_matches_cofactor(rng):
    m = crandn(rng, 8, 8)
    assert abs(det(m) - cofactor_det(m)) <= 1e-10 * abs(cofactor_det(m))


def test_batched_solve_and_adjoint(rng):
    m = crandn(rng, 5, 4, 4)
    b = crandn(rng, 5, 4)
    f = lu_factor(m)
    np.testing.assert_allclose(np.einsum("kij,kj->ki", m, f.solve(b)), b, atol=1e-10)
    mh = np.conj(np.swapaxes(m, -1, -2))
    np.testing.assert_allclose(np.einsum("kij,kj->ki", mh, f.solve_h(b)), b, atol=1e-10)


def test_singular_flag():
    f = lu_factor(np.array([[1.0, 2.0], [2.0, 4.0]]))
    assert f.singular
    assert rcond_estimate(f) == 0.0


def test_adjugate_small_cases():
    np.testing.assert_array_equal(adjugate(np.array([[5.0]])), [[1.0]])
    a, b, c, d = 1.5, -2.0, 0.5j, 3.0
    np.testing.assert_allclose(adjugate(np.array([[a, b], [c, d]])),
                               [[d, -b], [-c, a]], atol=1e-14)


def test_adjugate_well_conditioned(rng):
    m = crandn(rng, 5, 5)
    np.testing.assert_allclose(adjugate(m), det(m) * np.linalg.inv(m), rtol=1e-10, atol=1e-12)


def test_adjugate_rank_one_matches_cofactor(rng):
    u, v = crandn(rng, 3), crandn(rng, 3)
    m = np.outer(u, v)
    np.testing.assert_allclose(adjugate(m), cofactor_adjugate(m), atol=1e-10)


def test_adjugate_rank_deficient_by_one(rng):
    m = crandn(rng, 4, 4)
    u, s, vh = np.linalg.svd(m)
    s[-1] = 0
    m = (u * s) @ vh
    np.testing.assert_allclose(adjugate(m), cofactor_adjugate(m), atol=1e-9)


@settings(max_examples=30, deadline=None)
@given(n=st.integers(1, 8), seed=st.integers(0, 2**32 - 1), rank_drop=st.integers(0, 2))
def test_adjugate_identity(n, seed, rank_drop):
    rng = np.random.default_rng(seed)
    m = crandn(rng, n, n)
    if rank_drop and n > rank_drop:
        u, s, vh = np.linalg.svd(m)
        s[-rank_drop:] = 0
        m = (u * s) @ vh
    scale = np.linalg.norm(m)
    lhs = m @ adjugate(m)
    np.testing.assert_allclose(lhs, det(m) * np.eye(n), atol=1e-9 * scale)


def test_rcond_cases(rng):
    assert rcond_estimate(lu_factor(np.eye(4))) == pytest.approx(1.0)
    r = rcond_estimate(lu_factor(np.diag([1.0, 1e-12])))
    assert 1e-13 <= r <= 1e-11
    for _ in range(10):
        m = crandn(rng, 8, 8)
        ratio = rcond_estimate(lu_factor(m)) / explicit_rcond(m)
        assert 0.1 <= ratio <= 10


def test_singular_values():
    q, _ = np.linalg.qr(np.random.default_rng(1).standard_normal((6, 6)))
    np.testing.assert_allclose(singular_values(q), 1, atol=1e-10)
    np.testing.assert_allclose(singular_values(np.diag([0.5, 3.0])), [3, 0.5])


def test_singular_values_against_eigensolver(rng):
    m = crandn(rng, 8, 8)
    ev = np.sort(eigenvalues_dense(m.conj().T @ m).real)[::-1]
    np.testing.assert_allclose(singular_values(m) ** 2, ev, rtol=1e-10)


def test_eigenvalues_small():
    assert matched_distance(eigenvalues_dense(np.diag([2, 3j])), [2, 3j]) < 1e-14
    shift = np.roll(np.eye(4), 1, axis=1)
    assert matched_distance(eigenvalues_dense(shift), np.exp(2j * np.pi * np.arange(4) / 4)) < 1e-12


def test_companion_cube_roots():
    ev = eigenvalues_dense(companion([-1, 0, 0, 1]))
    assert matched_distance(ev, np.exp(2j * np.pi * np.arange(3) / 3)) < 1e-10


def test_companion_known_roots(rng):
    roots = crandn(rng, 10)
    coef = np.polynomial.polynomial.polyfromroots(roots)
    assert matched_distance(eigenvalues_dense(companion(coef)), roots) < 1e-8


def test_eigen_cap():
    with pytest.raises(ValueError):
        eigenvalues_dense(np.eye(513))
