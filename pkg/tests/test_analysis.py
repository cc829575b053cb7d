import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fdnmodal.analysis import (ClusterHistogram, bounds_report, cluster_numbers,
                               equidistributed_angles, histogram_db, match_poles, oracle_poles,
                               poisson_reference, random_delays, random_delays_with_total,
                               random_orthogonal, random_orthogonal_fdn, residue_histogram,
                               state_matrix, trial_rng, uniform_cluster_ensemble)
from fdnmodal.eai import solve
from fdnmodal.fdn import FDNSystem, circulant_shift
from fdnmodal.modal import residues
from oracles import matched_distance


def test_random_orthogonal():
    assert abs(random_orthogonal(1, 0)[0, 0]) == 1
    for n in (2, 5, 16):
        q = random_orthogonal(n, n)
        np.testing.assert_allclose(q.T @ q, np.eye(n), atol=1e-12)
        np.testing.assert_allclose(np.linalg.svd(q, compute_uv=False), 1, atol=1e-12)
    np.testing.assert_array_equal(random_orthogonal(6, 42), random_orthogonal(6, 42))
    assert not np.array_equal(random_orthogonal(6, 42), random_orthogonal(6, 43))


def test_random_orthogonal_haar_trace():
    # the trace of a Haar orthogonal matrix has mean 0 and variance 1
    tr = np.array([np.trace(random_orthogonal(6, s)) for s in range(3000)])
    assert abs(tr.mean()) < 0.1 and abs(tr.var() - 1) < 0.1


def test_random_delays():
    rng = np.random.default_rng(0)
    m = random_delays(1000, 50, 1000, rng)
    assert m.min() >= 50 and m.max() <= 1000
    t = random_delays_with_total(8, 500, rng)
    assert t.sum() == 500 and t.min() >= 1
    with pytest.raises(ValueError):
        random_delays_with_total(8, 5, rng)


def test_trial_rng_independent():
    a = trial_rng(1, 0).random(3)
    np.testing.assert_array_equal(a, trial_rng(1, 0).random(3))
    assert not np.array_equal(a, trial_rng(1, 1).random(3))


def test_cluster_equidistributed():
    for n in (7, 1000, 4096):
        h = cluster_numbers(equidistributed_angles(n))
        np.testing.assert_array_equal(h.probabilities, [0, 1, 0, 0, 0])
        assert h.observations == 4 * n


@settings(max_examples=25, deadline=None)
@given(n=st.integers(2, 300), shift=st.floats(-10, 10), factor=st.integers(1, 6))
def test_cluster_rotated_grid(n, shift, factor):
    angles = equidistributed_angles(n) + shift * 2 * np.pi / n
    h = cluster_numbers(angles, n, factor * n)
    assert h.probabilities[1] == 1.0
    assert h.probabilities.sum() == pytest.approx(1, abs=1e-9)


def test_cluster_wraparound():
    eps = 1e-4
    h = cluster_numbers(np.array([-eps, eps, np.pi]), 3, 3)
    # probe at 0 sees both angles straddling the branch cut
    assert h.counts[2] == 1


def test_cluster_uniform_is_poisson():
    h = uniform_cluster_ensemble(20, 5000, seed=3)
    assert np.max(np.abs(h.probabilities - poisson_reference())) < 0.02


def test_cluster_histogram_add():
    a = ClusterHistogram(np.array([1, 2, 0, 0, 0]), 1)
    total = ClusterHistogram.empty() + a + a
    assert total.trials == 2 and total.observations == 6


def test_state_matrix_shift():
    sysm = FDNSystem([3, 5], circulant_shift(2))
    assert matched_distance(oracle_poles(sysm), np.exp(2j * np.pi * np.arange(8) / 8)) < 1e-12
    assert state_matrix(sysm).shape == (8, 8)


def test_state_matrix_cube_roots():
    ev = oracle_poles(FDNSystem([3], [[0.8]]))
    assert matched_distance(ev, 0.8 ** (1 / 3) * np.exp(2j * np.pi * np.arange(3) / 3)) < 1e-12


def test_oracles_agree(rng):
    for n in (2, 3, 4):
        for _ in range(3):
            sysm = FDNSystem(rng.integers(1, 17, n), rng.standard_normal((n, n)) * 0.7)
            assert match_poles(oracle_poles(sysm), oracle_poles(sysm, "gcp")).max_distance < 1e-8


def test_oracle_caps():
    with pytest.raises(ValueError):
        oracle_poles(FDNSystem([600], [[0.5]]))
    with pytest.raises(ValueError):
        oracle_poles(FDNSystem([3], [[0.5]]), "nope")


def test_match_poles_large_with_clashes(rng):
    a = np.exp(2j * np.pi * rng.random(5000))
    perm = rng.permutation(5000)
    b = a[perm] + 1e-9 * (rng.standard_normal(5000) + 1j * rng.standard_normal(5000))
    m = match_poles(a, b)
    assert m.max_distance < 1e-8
    assert np.unique(m.partner).size == 5000


def test_match_poles_size_mismatch():
    with pytest.raises(ValueError):
        match_poles([1, 2], [1])


def test_residue_histograms():
    rng = np.random.default_rng(1)
    sysm = random_orthogonal_fdn(random_delays_with_total(8, 1200, rng), rng)
    poles, _ = solve(sysm)
    dec = residues(sysm, poles, drive_matrices=True)
    for kind, count in (("total", 1200), ("undriven-inverse", 1200), ("drives", 64 * 1200)):
        h = residue_histogram(dec, kind, 1.0)
        assert h.counts.sum() == count
        assert np.allclose(np.diff(h.edges), 1.0)
        assert h.edges[0] == np.floor(h.edges[0])
    with pytest.raises(ValueError):
        residue_histogram(residues(sysm, poles), "drives")


def test_histogram_single_value():
    h = histogram_db(np.array([-12.3]), "total", 2.0)
    assert h.counts.tolist() == [1]
    assert h.edges.tolist() == [-14.0, -12.0]


def test_shift_residues_single_bin():
    e1 = np.eye(3)[0]
    sysm = FDNSystem([4, 5, 7], circulant_shift(3), e1, e1)
    poles, _ = solve(sysm)
    assert np.count_nonzero(residue_histogram(residues(sysm, poles)).counts) == 1


def test_bounds_report():
    sysm = FDNSystem([2, 3], 0.5 * random_orthogonal(2, 1))
    rep = bounds_report(sysm, oracle_poles(sysm))
    assert rep.all_inside()
    bad = bounds_report(sysm, np.array([2.0 + 0j]))
    assert not bad.all_inside()
