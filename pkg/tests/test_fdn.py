import numpy as np
import pytest

from fdnmodal.analysis import oracle_poles, random_orthogonal
from fdnmodal.attenuation import OnePoleFilter
from fdnmodal.fdn import (FDNSystem, OutsideAnnulusError, PoleEvaluationError, circulant_shift,
                          eval_loop, gcp_coefficients, impulse_response, transfer_function)
from fdnmodal.linalg import companion, det, eigenvalues_dense
from oracles import dft_at, matched_distance


def test_validation():
    with pytest.raises(ValueError):
        FDNSystem([0, 2], np.eye(2))
    with pytest.raises(ValueError):
        FDNSystem([1, 2], np.eye(3))
    with pytest.raises(ValueError):
        FDNSystem([1], [[np.nan]])
    with pytest.raises(TypeError):
        FDNSystem([1], [[0.5]], filters=[object()])
    with pytest.raises(ValueError):
        OnePoleFilter(0.9, 1.0)


def test_arrays_read_only():
    s = FDNSystem([2, 3], np.eye(2))
    with pytest.raises(ValueError):
        s.feedback[0, 0] = 2
    assert s.order == 5 and s.size == 2 and s.is_real


def test_single_loop_impulse_response():
    g = 0.7
    h = impulse_response(FDNSystem([2], [[g]]), 8)
    np.testing.assert_allclose(h, [0, 0, 1, 0, g, 0, g**2, 0])


def test_direct_gain_at_zero():
    h = impulse_response(FDNSystem([3], [[0.5]], direct_gain=0.25), 4)
    assert h[0] == 0.25


def test_shift_matrix_impulse_train():
    m = [3, 4, 2, 5]
    e1 = np.eye(4)[0]
    sysm = FDNSystem(m, circulant_shift(4), e1, e1)
    h = impulse_response(sysm, 3 * sum(m) + 1)
    period = sum(m)
    expected = np.zeros_like(h)
    expected[m[0]::period] = 1
    np.testing.assert_allclose(h, expected, atol=1e-15)


def test_first_arrival_single_line():
    a = random_orthogonal(4, 2)
    np.fill_diagonal(a, 0)
    e = np.eye(4)[2]
    sysm = FDNSystem([7, 9, 11, 13], a, e, e)
    h = impulse_response(sysm, 40)
    assert np.all(h[1:11] == 0) and h[11] == 1


def test_impulse_response_matches_naive_loop(rng):
    a = rng.standard_normal((3, 3)) * 0.5
    m = np.array([2, 5, 3])
    b, c = rng.standard_normal(3), rng.standard_normal(3)
    flt = (OnePoleFilter(0.9, 0.3), OnePoleFilter(0.8, -0.2), OnePoleFilter(0.95, 0.0))
    sysm = FDNSystem(m, a, b, c, 0.1, flt)
    n = 60
    lines = [np.zeros(n + 20) for _ in range(3)]
    state = np.zeros(3)
    y = np.zeros(n)
    for t in range(n):
        s = np.array([lines[i][t - m[i]] if t >= m[i] else 0.0 for i in range(3)])
        x = 1.0 if t == 0 else 0.0
        y[t] = c @ s + 0.1 * x
        w = a @ s + b * x
        for i, f in enumerate(flt):
            state[i] = f.gain * (1 - f.pole) * w[i] + f.pole * state[i]
            lines[i][t] = state[i]
    np.testing.assert_allclose(impulse_response(sysm, n), y, atol=1e-14)


def test_eval_loop_scalar():
    e = eval_loop(FDNSystem([1], [[0.5]]), 2.0)
    np.testing.assert_allclose(e.value, [[1.5]])
    np.testing.assert_allclose(e.derivative, [[1.0]])


def test_eval_loop_shift_pole():
    e = eval_loop(FDNSystem([1, 1], circulant_shift(2)), 1.0)
    np.testing.assert_allclose(e.value, [[1, -1], [-1, 1]])
    assert abs(det(e.value)) < 1e-15


def test_eval_loop_filter_line():
    sysm = FDNSystem([3], [[0.0]], filters=[OnePoleFilter(0.9, 0.2)])
    assert eval_loop(sysm, 1.0).value[0, 0] == pytest.approx(1 / 0.9, rel=1e-14)


def test_annulus_guard():
    sysm = FDNSystem([1000], [[0.5]])
    with pytest.raises(OutsideAnnulusError):
        eval_loop(sysm, 2.0)
    with pytest.raises(ValueError):
        eval_loop(sysm, 0.0)


def test_derivative_finite_difference(rng):
    flt = tuple(OnePoleFilter(0.9, p) for p in (0.1, -0.3, 0.5))
    sysm = FDNSystem([4, 7, 9], random_orthogonal(3, 1), filters=flt)
    h = 1e-6
    for z in np.exp(2j * np.pi * rng.random(5)):
        fd = (eval_loop(sysm, z + h).value - eval_loop(sysm, z - h).value) / (2 * h)
        assert np.linalg.norm(eval_loop(sysm, z).derivative - fd) <= 1e-5


def test_transfer_function_single_pole():
    sysm = FDNSystem([1], [[0.3]])
    z = 0.8 + 0.4j
    assert transfer_function(sysm, z) == pytest.approx(1 / (z - 0.3))
    with pytest.raises(PoleEvaluationError):
        transfer_function(sysm, 0.3)


def test_transfer_function_large_z():
    sysm = FDNSystem([1, 2], random_orthogonal(2, 3), direct_gain=0.7)
    assert abs(transfer_function(sysm, 1e6) - 0.7) < 1e-5


def test_transfer_function_against_dft():
    sysm = FDNSystem([3, 5, 7, 11], 0.9 * random_orthogonal(4, 4), direct_gain=0.2)
    h = impulse_response(sysm, 4096)
    omega = 2 * np.pi * np.arange(0, 4096, 97) / 4096
    ref = dft_at(h, omega)
    ours = transfer_function(sysm, np.exp(1j * omega))
    assert np.max(np.abs(ours - ref) / np.abs(ref)) < 1e-6


def test_gcp_shift_matrix():
    coef = gcp_coefficients(FDNSystem([2, 3, 1], circulant_shift(3)))
    expected = np.zeros(7)
    expected[[0, 6]] = [-1, 1]
    np.testing.assert_allclose(coef, expected, atol=1e-14)


def test_gcp_scalar():
    np.testing.assert_allclose(gcp_coefficients(FDNSystem([3], [[0.4]])), [-0.4, 0, 0, 1])


def test_gcp_matches_loop_determinant(rng):
    for n in (2, 3, 4):
        sysm = FDNSystem(rng.integers(1, 6, n), rng.standard_normal((n, n)))
        coef = gcp_coefficients(sysm)
        for z in rng.uniform(0.9, 1.1, 4) * np.exp(2j * np.pi * rng.random(4)):
            d = det(eval_loop(sysm, z).value)
            assert abs(d - np.polynomial.polynomial.polyval(z, coef)) <= 1e-8 * max(abs(d), 1)


def test_gcp_roots_equal_linearization():
    sysm = FDNSystem([1, 2, 3], random_orthogonal(3, 5) * 0.8)
    roots = eigenvalues_dense(companion(gcp_coefficients(sysm)))
    assert matched_distance(roots, oracle_poles(sysm)) < 1e-8


def test_gcp_caps():
    with pytest.raises(ValueError):
        gcp_coefficients(FDNSystem([1] * 9, np.eye(9)))
    with pytest.raises(ValueError):
        gcp_coefficients(FDNSystem([1], [[0.5]], filters=[OnePoleFilter(0.9)]))


def test_complex_system_impulse_response_dtype():
    sysm = FDNSystem([2], [[0.5j]])
    h = impulse_response(sysm, 6)
    assert np.iscomplexobj(h)
    np.testing.assert_allclose(h, [0, 0, 1, 0, 0.5j, 0])
