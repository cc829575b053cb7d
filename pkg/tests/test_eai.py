import numpy as np
import pytest

from fdnmodal.analysis import (match_poles, oracle_poles, random_delays_with_total,
                               random_orthogonal, random_orthogonal_fdn)
from fdnmodal.attenuation import AttenuationSpec, design_filters, magnitude_bounds
from fdnmodal.eai import (AtRootError, EAIConfig, GateRecorder, PoleStatus, angular_ring,
                          default_near_count, deflation_exact, deflation_far_estimate, eai_step,
                          initial_estimates, inverse_newton_batch, newton_term,
                          separate_duplicates, solve)
from fdnmodal.fdn import FDNSystem, circulant_shift, gcp_coefficients
from frozen import FAR_DEFLATION


def roots_of_unity(n):
    return np.exp(2j * np.pi * np.arange(n) / n)


def test_config_validation():
    with pytest.raises(ValueError):
        EAIConfig(tol_rcond=0)
    with pytest.raises(ValueError):
        EAIConfig(near_count=3)
    with pytest.raises(ValueError):
        EAIConfig(max_full_iterations=0)
    with pytest.raises(ValueError):
        EAIConfig(scheme="newton")
    with pytest.raises(ValueError):
        EAIConfig(near_count=10).near_count_for(10)
    assert EAIConfig(scheme="gauss-seidel", deflation="exact").as_dict()["scheme"] == "gauss-seidel"


def test_default_near_count():
    assert default_near_count(100) == 2
    assert default_near_count(10000) == 100
    assert default_near_count(3) == 2
    assert default_near_count(30000) == 300
    assert all(default_near_count(n) % 2 == 0 for n in range(3, 500))


def test_initial_estimates():
    np.testing.assert_allclose(initial_estimates(5), roots_of_unity(5))
    b = magnitude_bounds(FDNSystem([2, 2], 0.5 * np.eye(2)))
    np.testing.assert_allclose(np.abs(initial_estimates(4, b)), np.sqrt(0.5))


@pytest.mark.parametrize("key", sorted(FAR_DEFLATION))
def test_far_deflation_frozen(key):
    order, j, near = key
    z0 = roots_of_unity(order)[j]
    assert abs(deflation_far_estimate(z0, order, near) - FAR_DEFLATION[key]) < 1e-12


def test_far_deflation_validation():
    with pytest.raises(ValueError):
        deflation_far_estimate(1.0, 10, 3)
    with pytest.raises(ValueError):
        deflation_far_estimate(1.0, 10, 10)


def test_exact_deflation_against_python_sum(rng):
    z = rng.standard_normal(30) + 1j * rng.standard_normal(30)
    for j in (0, 7, 29):
        ref = sum(1 / (z[j] - z[l]) for l in range(30) if l != j)
        assert abs(deflation_exact(z, j) - ref) < 1e-12 * abs(ref)


def test_angular_ring_ties_by_index():
    z = np.array([1j, 1.0, 2.0, -1.0])
    ring, rank = angular_ring(z)
    np.testing.assert_array_equal(ring, [1, 2, 0, 3])
    np.testing.assert_array_equal(ring[rank], np.arange(4))


def test_separate_duplicates():
    z = np.array([1.0 + 0j, 1.0 + 0j, 2.0])
    counter = separate_duplicates(z)
    assert counter == 1 and z[0] != z[1]
    assert abs(z[0] - z[1]) == pytest.approx(1e-10)


def test_newton_term_scalar_polynomial():
    sysm = FDNSystem([1, 2], random_orthogonal(2, 4) * 0.9)
    coef = gcp_coefficients(sysm)
    z = 0.7 + 0.2j
    p = np.polynomial.polynomial.polyval(z, coef)
    dp = np.polynomial.polynomial.polyval(z, np.polynomial.polynomial.polyder(coef))
    assert newton_term(sysm, z) == pytest.approx(p / dp, rel=1e-10)
    with pytest.raises(AtRootError):
        newton_term(FDNSystem([1], [[0.5]]), 0.5)


def test_inverse_newton_batch_chunks(rng):
    sysm = FDNSystem([3, 4], random_orthogonal(2, 9))
    z = np.exp(2j * np.pi * rng.random(37)) * 0.99
    a = inverse_newton_batch(sysm, z, chunk_size=5)
    b = inverse_newton_batch(sysm, z)
    np.testing.assert_allclose(a[0], b[0])
    np.testing.assert_allclose(a[1], b[1])


def test_shift_matrix_needs_no_iteration():
    sysm = FDNSystem([3, 4, 5, 4], circulant_shift(4))
    poles, stats = solve(sysm)
    assert stats.full_iterations == 0
    assert poles.all_converged
    assert np.max(np.abs(poles.poles - roots_of_unity(16))) < 1e-12


def test_fourth_roots():
    poles, _ = solve(FDNSystem([4], [[0.5]]))
    ref = 0.5 ** 0.25 * roots_of_unity(4)
    assert poles.all_converged
    assert match_poles(poles.poles, ref).max_distance < 1e-12


@pytest.mark.parametrize("scheme", ["jacobi", "gauss-seidel"])
@pytest.mark.parametrize("deflation", ["exact", "approx"])
def test_matches_oracle(scheme, deflation):
    rng = np.random.default_rng(7)
    sysm = random_orthogonal_fdn(random_delays_with_total(4, 300, rng), rng)
    poles, stats = solve(sysm, EAIConfig(scheme=scheme, deflation=deflation))
    assert poles.all_converged
    assert match_poles(poles.poles, oracle_poles(sysm)).max_distance < 1e-8
    assert stats.avg_iterations_per_pole > 0


def test_exact_and_approx_agree():
    rng = np.random.default_rng(11)
    sysm = random_orthogonal_fdn(random_delays_with_total(8, 3000, rng), rng)
    a, sa = solve(sysm, EAIConfig(deflation="exact"))
    b, sb = solve(sysm, EAIConfig(deflation="approx"))
    assert a.all_converged and b.all_converged
    assert match_poles(a.poles, b.poles).max_distance < 1e-10
    assert sa.exact_deflation_fraction == 1.0
    assert sb.exact_deflation_fraction < 1.0


def test_non_normal_and_complex_feedback():
    rng = np.random.default_rng(5)
    a = 0.5 * (rng.standard_normal((3, 3)) + 1j * rng.standard_normal((3, 3)))
    sysm = FDNSystem([5, 9, 13], a)
    poles, _ = solve(sysm)
    assert poles.all_converged
    assert match_poles(poles.poles, oracle_poles(sysm)).max_distance < 1e-8


def test_filtered_system_poles_within_bounds():
    rng = np.random.default_rng(2)
    m = random_delays_with_total(4, 800, rng)
    sysm = FDNSystem(m, random_orthogonal(4, rng), filters=design_filters(AttenuationSpec(1.0, 0.2), m))
    poles, _ = solve(sysm)
    assert poles.all_converged
    assert magnitude_bounds(sysm).contains(poles.poles, 1e-10).all()


def test_max_iter_flagged():
    rng = np.random.default_rng(3)
    sysm = random_orthogonal_fdn(random_delays_with_total(4, 400, rng), rng)
    poles, stats = solve(sysm, EAIConfig(max_full_iterations=1))
    assert np.any(poles.status == PoleStatus.MAX_ITER)
    assert stats.max_iter_poles == np.count_nonzero(poles.status == PoleStatus.MAX_ITER)
    assert not poles.all_converged
    assert "max_iter" in poles.status_names()


def test_deterministic():
    rng = np.random.default_rng(4)
    sysm = random_orthogonal_fdn(random_delays_with_total(8, 1500, rng), rng)
    a, _ = solve(sysm)
    b, _ = solve(sysm)
    np.testing.assert_array_equal(a.poles, b.poles)


def test_gate_recorder_bounds_step_error():
    rng = np.random.default_rng(8)
    sysm = random_orthogonal_fdn(random_delays_with_total(8, 2000, rng), rng)
    rec = GateRecorder()
    cfg = EAIConfig()
    poles, _ = solve(sysm, cfg, recorder=rec)
    approx, exact, passed, err = rec.arrays()
    assert passed.sum() > 1000
    assert np.all(np.abs(approx[passed] - exact[passed]) <= cfg.tol_ad)
    assert rec.max_deflation_error < cfg.deflation_err_bound


def test_eai_step_moves_towards_root():
    sysm = FDNSystem([4], [[0.5]])
    start = initial_estimates(4) * 0.9
    new, used_exact = eai_step(sysm, start, 0, EAIConfig(deflation="exact"), initial=start)
    assert used_exact
    assert abs(new - 0.5 ** 0.25) < abs(start[0] - 0.5 ** 0.25)


def test_initial_estimate_length_checked():
    with pytest.raises(ValueError):
        solve(FDNSystem([3], [[0.5]]), initial=np.ones(2))


def test_exact_after_validation():
    with pytest.raises(ValueError):
        EAIConfig(exact_after=0)
    EAIConfig(exact_after=None)


def test_stragglers_deflate_exactly():
    rng = np.random.default_rng(9)
    sysm = random_orthogonal_fdn(random_delays_with_total(8, 3000, rng), rng)
    base, _ = solve(sysm, EAIConfig(exact_after=None))
    eager, st = solve(sysm, EAIConfig(exact_after=1))
    # only the first sweep uses the far estimate
    assert st.approx_deflations == sysm.order
    assert match_poles(base.poles, eager.poles).max_distance < 1e-10
