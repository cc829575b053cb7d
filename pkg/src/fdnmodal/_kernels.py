"""Compiled O(N^2) inner loops of the pole iteration."""
import numba
import numpy as np
from numba import njit, prange

# an outdated system TBB only produces a warning; prefer the other layers
numba.config.THREADING_LAYER_PRIORITY = ["omp", "workqueue", "tbb"]


@njit(parallel=True, cache=True)
def exact_deflation(re, im, targets):
    """``sum_{l != j} 1 / (z_j - z_l)`` for every ``j`` in ``targets``."""
    n = re.size
    out = np.empty(targets.size, dtype=np.complex128)
    for t in prange(targets.size):
        j = targets[t]
        xr = re[j]
        xi = im[j]
        ar = 0.0
        ai = 0.0
        for l in range(j):
            dr = xr - re[l]
            di = xi - im[l]
            s = 1.0 / (dr * dr + di * di)
            ar += dr * s
            ai -= di * s
        for l in range(j + 1, n):
            dr = xr - re[l]
            di = xi - im[l]
            s = 1.0 / (dr * dr + di * di)
            ar += dr * s
            ai -= di * s
        out[t] = complex(ar, ai)
    return out


@njit(parallel=True, cache=True)
def near_deflation(re, im, ring, rank, targets, half):
    """Deflation restricted to the ``half`` ring neighbours on each side of every target.

    ``ring`` lists pole indices sorted by angle and ``rank`` is its inverse.
    """
    n = ring.size
    out = np.empty(targets.size, dtype=np.complex128)
    for t in prange(targets.size):
        j = targets[t]
        s0 = rank[j]
        xr = re[j]
        xi = im[j]
        ar = 0.0
        ai = 0.0
        for k in range(1, half + 1):
            for l in (ring[(s0 + k) % n], ring[(s0 - k + n) % n]):
                dr = xr - re[l]
                di = xi - im[l]
                s = 1.0 / (dr * dr + di * di)
                ar += dr * s
                ai -= di * s
        out[t] = complex(ar, ai)
    return out


@njit(cache=True)
def exact_deflation_one(re, im, j):
    xr = re[j]
    xi = im[j]
    ar = 0.0
    ai = 0.0
    for l in range(re.size):
        if l == j:
            continue
        dr = xr - re[l]
        di = xi - im[l]
        s = 1.0 / (dr * dr + di * di)
        ar += dr * s
        ai -= di * s
    return complex(ar, ai)


@njit(cache=True)
def near_deflation_one(re, im, ring, rank, j, half):
    n = ring.size
    s0 = rank[j]
    acc = 0j
    for k in range(1, half + 1):
        for l in (ring[(s0 + k) % n], ring[(s0 - k + n) % n]):
            acc += 1.0 / complex(re[j] - re[l], im[j] - im[l])
    return acc
