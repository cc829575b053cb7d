"""Ehrlich-Aberth iteration on the FDN loop matrix.

All poles are iterated simultaneously.  Each step combines the Newton
correction of ``det P(z)`` (obtained from ``trace(P^-1 P')`` without ever
forming the determinant) with the pairwise deflation term that keeps the
estimates apart.  For large orders the deflation can be approximated by the
exact contribution of the nearest neighbours in angle plus a closed-form
estimate for all remaining poles; a sufficient condition on the inverse
Newton term decides per step whether the approximation is safe.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from enum import Enum, IntEnum

import numpy as np

from . import _kernels
from .attenuation import MagnitudeBounds, magnitude_bounds
from .fdn import FDNSystem, loop_matrix
from .linalg import lu_factor, rcond_estimate

DUPLICATE_DISTANCE = 1e-300
DUPLICATE_NUDGE = 1e-10
NONFINITE_NUDGE = 1e-8
_GOLDEN_ANGLE = math.pi * (3 - math.sqrt(5))


class AtRootError(ArithmeticError):
    """``P(z)`` is exactly singular, i.e. ``z`` is a pole."""


class Scheme(str, Enum):
    JACOBI = "jacobi"
    GAUSS_SEIDEL = "gauss-seidel"


class Deflation(str, Enum):
    EXACT = "exact"
    APPROXIMATE = "approx"


class PoleStatus(IntEnum):
    RUNNING = 0
    CLIPPED = 1
    CONVERGED_RCOND = 2
    CONVERGED_STEP = 3
    MAX_ITER = 4


def default_near_count(order: int) -> int:
    """About one percent of the poles, even, at least 2 and below the order."""
    n = max(2, 2 * round(order / 200))
    return min(n, ((order - 1) // 2) * 2)


@dataclass
class EAIConfig:
    tol_rcond: float = 1e-12
    tol_step: float = 1e-14
    tol_ad: float = 1e-3
    near_count: int | None = None
    deflation_err_bound: float = 1e3
    max_full_iterations: int = 100
    scheme: Scheme = Scheme.JACOBI
    deflation: Deflation = Deflation.APPROXIMATE
    seed: int = 0
    chunk_size: int = 8192
    # poles still moving after this many steps always deflate exactly (None: never)
    exact_after: int | None = 30

    def __post_init__(self):
        self.scheme = Scheme(self.scheme)
        self.deflation = Deflation(self.deflation)
        for name in ("tol_rcond", "tol_step", "tol_ad", "deflation_err_bound"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.max_full_iterations < 1:
            raise ValueError("max_full_iterations must be >= 1")
        if self.exact_after is not None and self.exact_after < 1:
            raise ValueError("exact_after must be >= 1")
        if self.near_count is not None and (self.near_count < 0 or self.near_count % 2):
            raise ValueError("near_count must be a non-negative even number")

    def near_count_for(self, order: int) -> int:
        if self.near_count is None:
            return default_near_count(order)
        if self.near_count >= max(order, 1):
            raise ValueError(f"near_count {self.near_count} must be below the order {order}")
        return self.near_count

    def as_dict(self) -> dict:
        d = dict(self.__dict__)
        d["scheme"] = self.scheme.value
        d["deflation"] = self.deflation.value
        return d


@dataclass
class PoleSet:
    poles: np.ndarray
    status: np.ndarray
    iterations: np.ndarray

    def __len__(self):
        return self.poles.size

    @property
    def converged(self) -> np.ndarray:
        return (self.status == PoleStatus.CONVERGED_RCOND) | (self.status == PoleStatus.CONVERGED_STEP)

    @property
    def all_converged(self) -> bool:
        return bool(self.converged.all())

    def status_names(self) -> list[str]:
        return [PoleStatus(s).name.lower() for s in self.status]


@dataclass
class EAIStats:
    full_iterations: int = 0
    avg_iterations_per_pole: float = 0.0
    exact_deflation_fraction: float = 0.0
    wall_time: float = 0.0
    exact_deflations: int = 0
    approx_deflations: int = 0
    max_iter_poles: int = 0

    def summary(self) -> str:
        return (f"converged in {self.full_iterations} full iterations "
                f"({self.avg_iterations_per_pole:.2f} steps per pole, "
                f"exact deflation fraction {self.exact_deflation_fraction:.4f}, "
                f"{self.wall_time:.2f} s)")


@dataclass
class GateRecorder:
    """Collects both step variants for every gated approximate-deflation step."""

    approx_steps: list = field(default_factory=list)
    exact_steps: list = field(default_factory=list)
    passed: list = field(default_factory=list)
    deflation_errors: list = field(default_factory=list)

    def add(self, approx_step, exact_step, passed, deflation_error):
        self.approx_steps.append(np.asarray(approx_step))
        self.exact_steps.append(np.asarray(exact_step))
        self.passed.append(np.asarray(passed, dtype=bool))
        self.deflation_errors.append(np.asarray(deflation_error))

    def arrays(self):
        cat = lambda xs, dt: np.concatenate(xs) if xs else np.zeros(0, dt)
        return (cat(self.approx_steps, complex), cat(self.exact_steps, complex),
                cat(self.passed, bool), cat(self.deflation_errors, float))

    @property
    def max_deflation_error(self) -> float:
        err = self.arrays()[3]
        err = err[np.isfinite(err)]
        return float(err.max()) if err.size else 0.0


def initial_estimates(order: int, bounds: MagnitudeBounds | None = None) -> np.ndarray:
    """Roots of unity, scaled to the middle of the magnitude bounds at each angle."""
    if order < 1:
        raise ValueError("order must be >= 1")
    theta = 2 * np.pi * np.arange(order) / order
    z = np.exp(1j * theta)
    if bounds is None:
        return z
    if bounds.is_constant:
        lo, hi = bounds.constant()
        return z * (0.5 * (lo + hi))
    lo, hi = bounds.on_unit_circle(theta)
    return z * (0.5 * (lo + hi))


def inverse_newton_batch(sys: FDNSystem, z, chunk_size: int = 8192):
    """``trace(P(z)^-1 P'(z))`` and ``rcond(P(z))`` for an array of points."""
    z = np.asarray(z, dtype=np.complex128)
    tr = np.empty(z.size, dtype=np.complex128)
    rc = np.empty(z.size)
    for lo in range(0, z.size, chunk_size):
        sl = slice(lo, lo + chunk_size)
        p, dr = loop_matrix(sys, z[sl])
        fact = lu_factor(p)
        inv = fact.inverse()
        with np.errstate(invalid="ignore", over="ignore"):
            tr[sl] = np.einsum("kii,ki->k", inv, dr)
        rc[sl] = rcond_estimate(fact)
    return tr, rc


def newton_term(sys: FDNSystem, z: complex) -> complex:
    """Newton correction ``p(z) / p'(z) = 1 / trace(P(z)^-1 P'(z))``."""
    p, dr = loop_matrix(sys, complex(z))
    fact = lu_factor(p)
    if fact.singular:
        raise AtRootError(f"P(z) is singular at z = {z}")
    return complex(1.0 / np.sum(np.diagonal(fact.inverse()) * dr))


def separate_duplicates(poles: np.ndarray, counter: int = 0, movable=None) -> int:
    """Nudge exactly coinciding estimates apart in place; returns the updated counter."""
    order = np.lexsort((poles.imag, poles.real))
    s = poles[order]
    dup = np.flatnonzero(np.abs(np.diff(s)) < DUPLICATE_DISTANCE)
    for k in dup:
        a, b = order[k], order[k + 1]
        j = b if movable is None or movable[b] or not movable[a] else a
        poles[j] += DUPLICATE_NUDGE * np.exp(1j * _GOLDEN_ANGLE * counter)
        counter += 1
    return counter


def deflation_exact(poles, j: int) -> complex:
    """``sum_{l != j} 1 / (poles[j] - poles[l])``."""
    lam = np.array(poles, dtype=np.complex128)
    separate_duplicates(lam)
    return complex(_kernels.exact_deflation_one(lam.real.copy(), lam.imag.copy(), int(j)))


def deflation_far_estimate(initial_pole, order: int, near_count: int):
    """Deflation of all but the ``near_count`` nearest of ``order`` equidistributed points."""
    if near_count % 2 or near_count >= max(order, 1):
        raise ValueError("near_count must be even and below the order")
    return (order - near_count - 1) / (2 * np.asarray(initial_pole, dtype=np.complex128))


def angular_ring(poles):
    """Pole indices sorted by angle (ties by index) and the inverse permutation."""
    ring = np.argsort(np.angle(poles), kind="stable")
    rank = np.empty_like(ring)
    rank[ring] = np.arange(ring.size)
    return ring, rank


def eai_step(sys: FDNSystem, poles, j: int, config: EAIConfig | None = None, *,
             initial=None, bounds: MagnitudeBounds | None = None,
             first_sweep: bool = False):
    """One Ehrlich-Aberth update of pole ``j``; returns ``(new_pole, used_exact)``.

    With approximate deflation the near set is the ``near_count / 2`` ring
    neighbours on either side; the remaining poles are replaced by the
    closed-form estimate around ``initial[j]``.  The approximation is accepted
    only if ``|W^-1 - D~| - eps_D >= 2 / tol_ad``, which bounds the step error
    by ``tol_ad``; otherwise the exact deflation is used.
    """
    config = config or EAIConfig()
    lam = np.array(poles, dtype=np.complex128)
    order = lam.size
    bounds = bounds or magnitude_bounds(sys)
    if initial is None:
        initial = initial_estimates(order, bounds)
    tr = 1.0 / newton_term(sys, lam[j])
    re, im = lam.real.copy(), lam.imag.copy()
    used_exact = True
    if config.deflation is Deflation.EXACT or order == 1:
        d = _kernels.exact_deflation_one(re, im, j)
    else:
        near = 0 if first_sweep else config.near_count_for(order)
        d = complex(deflation_far_estimate(initial[j], order, near))
        if near:
            ring, rank = angular_ring(lam)
            d += _kernels.near_deflation_one(re, im, ring, rank, j, near // 2)
        if abs(tr - d) - config.deflation_err_bound >= 2 / config.tol_ad:
            used_exact = False
        else:
            d = _kernels.exact_deflation_one(re, im, j)
    new, _ = bounds.clip(np.array([lam[j] - 1.0 / (tr - d)]))
    return complex(new[0]), used_exact


class _Solver:
    def __init__(self, sys, config, bounds, initial, recorder):
        self.sys = sys
        self.cfg = config
        self.order = sys.order
        self.bounds = bounds
        self.lam0 = np.asarray(initial, dtype=np.complex128)
        self.lam = self.lam0.copy()
        self.status = np.zeros(self.order, dtype=np.int8)
        self.iters = np.zeros(self.order, dtype=np.int32)
        self.recorder = recorder
        self.near = 0 if self.order < 3 else config.near_count_for(self.order)
        radii = np.abs(self.lam0)
        self.uniform_start = bool(np.allclose(radii, radii[0], rtol=1e-14, atol=0))
        grid = 2 * np.pi * np.arange(self.order) / self.order
        self.on_grid = bool(np.allclose(np.exp(1j * grid), self.lam0 / np.where(radii > 0, radii, 1),
                                        rtol=0, atol=1e-12))
        self.rng = np.random.default_rng(config.seed)
        self.dup_counter = 0
        self.stats = EAIStats()

    # deflation for a batch of targets, all evaluated at the same (frozen) estimates
    def deflation(self, targets, tr, first_sweep):
        lam = self.lam
        re, im = lam.real.copy(), lam.imag.copy()
        cfg = self.cfg
        if cfg.deflation is Deflation.EXACT or self.order < 3:
            return _kernels.exact_deflation(re, im, targets), np.ones(targets.size, bool)
        near = 0 if first_sweep else self.near
        d_apx = deflation_far_estimate(self.far_centre(targets, near), self.order, near)
        if near:
            ring, rank = angular_ring(lam)
            d_apx = d_apx + _kernels.near_deflation(re, im, ring, rank, targets, near // 2)
        if first_sweep and self.uniform_start:
            # closed form is exact for points on one circle
            return d_apx, np.zeros(targets.size, bool)
        passed = np.abs(tr - d_apx) - cfg.deflation_err_bound >= 2 / cfg.tol_ad
        passed &= np.isfinite(d_apx) & ~self.straggling(targets)
        d = d_apx.copy()
        need = ~passed
        if self.recorder is not None:
            d_ex = _kernels.exact_deflation(re, im, targets)
            d[need] = d_ex[need]
            with np.errstate(divide="ignore", invalid="ignore"):
                self.recorder.add(1 / (tr - d_apx), 1 / (tr - d_ex), passed, np.abs(d_apx - d_ex))
        elif need.any():
            d[need] = _kernels.exact_deflation(re, im, targets[need])
        return d, need

    def straggling(self, targets):
        # The far estimate assumes equidistributed far poles, so a pole whose
        # root lies beyond its near window feels no pull towards it.
        if self.cfg.exact_after is None:
            return np.zeros(targets.size, bool)
        return self.iters[targets] >= self.cfg.exact_after

    def drifted(self, targets, near):
        limit = (max(near // 2, 1) + 0.5) * 2 * np.pi / self.order
        return np.abs(self.lam[targets] - self.lam0[targets]) > limit * np.abs(self.lam0[targets])

    def far_centre(self, targets, near):
        # The far-field term is centred on the initial estimate.  A pole that has
        # wandered out of its own near window gets the grid slot it now sits in;
        # with a custom start there is no grid and the gate must fall back to exact.
        centre = self.lam0[targets].copy()
        moved = self.drifted(targets, near)
        if moved.any():
            if self.on_grid:
                slot = np.rint(np.angle(self.lam[targets[moved]]) * self.order / (2 * np.pi))
                centre[moved] = self.lam0[slot.astype(np.int64) % self.order]
            else:
                centre[moved] = np.nan
        return centre

    def count(self, used_exact):
        n_exact = int(np.count_nonzero(used_exact))
        self.stats.exact_deflations += n_exact
        self.stats.approx_deflations += used_exact.size - n_exact

    def move(self, idx, new):
        new, clipped = self.bounds.clip(new)
        self.lam[idx] = new
        self.iters[idx] += 1
        self.status[idx] = np.where(clipped, PoleStatus.CLIPPED, PoleStatus.RUNNING)

    def nudge(self, idx):
        phase = np.exp(2j * np.pi * self.rng.random(idx.size))
        self.lam[idx] += NONFINITE_NUDGE * phase
        self.status[idx] = PoleStatus.RUNNING

    def sweep(self, sweep, last):
        cfg = self.cfg
        active = np.flatnonzero(self.status <= PoleStatus.CLIPPED)
        if active.size == 0:
            return False
        tr, rc = inverse_newton_batch(self.sys, self.lam[active], cfg.chunk_size)
        hit = rc < cfg.tol_rcond
        self.status[active[hit]] = PoleStatus.CONVERGED_RCOND
        act, tr = active[~hit], tr[~hit]
        if act.size == 0:
            return False
        self.dup_counter = separate_duplicates(
            self.lam, self.dup_counter, self.status <= PoleStatus.CLIPPED)
        if cfg.scheme is Scheme.JACOBI:
            moved = self._jacobi(act, tr, sweep == 0, last)
        else:
            moved = self._gauss_seidel(act, tr, sweep == 0, last)
        if moved:
            self.stats.full_iterations += 1
        return True

    def _jacobi(self, act, tr, first_sweep, last):
        d, used_exact = self.deflation(act, tr, first_sweep)
        self.count(used_exact)
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            step = 1.0 / (tr - d)
        return self._apply(act, step, last)

    def _apply(self, act, step, last):
        finite = np.isfinite(step)
        small = finite & (np.abs(step) <= self.cfg.tol_step * np.abs(self.lam[act]))
        self.status[act[small]] = PoleStatus.CONVERGED_STEP
        go = finite & ~small
        if last:
            return False
        idx = act[go]
        if idx.size:
            self.move(idx, self.lam[idx] - step[go])
        bad = act[~finite]
        if bad.size:
            self.nudge(bad)
        return bool(idx.size or bad.size)

    def _gauss_seidel(self, act, tr, first_sweep, last):
        cfg = self.cfg
        lam = self.lam
        re, im = lam.real.copy(), lam.imag.copy()
        exact_mode = cfg.deflation is Deflation.EXACT or self.order < 3
        near = 0 if first_sweep else self.near
        ring, rank = angular_ring(lam)
        order_in_sweep = act[np.argsort(rank[act], kind="stable")]
        pos = {j: k for k, j in enumerate(act)}
        moved = False
        for j in order_in_sweep:
            t = tr[pos[j]]
            used_exact = True
            if exact_mode:
                d = _kernels.exact_deflation_one(re, im, j)
            else:
                d = complex(deflation_far_estimate(self.far_centre(np.array([j]), near)[0],
                                                   self.order, near))
                if near:
                    d += _kernels.near_deflation_one(re, im, ring, rank, j, near // 2)
                if first_sweep and self.uniform_start:
                    used_exact = False
                elif (abs(t - d) - cfg.deflation_err_bound >= 2 / cfg.tol_ad
                      and not self.straggling(np.array([j]))[0]):
                    used_exact = False
                else:
                    d = _kernels.exact_deflation_one(re, im, j)
            self.count(np.array([used_exact]))
            with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
                step = np.array([1.0 / (t - d)])
            idx = np.array([j])
            if self._apply(idx, step, last):
                moved = True
                re[j], im[j] = lam[j].real, lam[j].imag
        return moved

    def run(self):
        t0 = time.perf_counter()
        cfg = self.cfg
        for sweep in range(cfg.max_full_iterations + 1):
            if not self.sweep(sweep, last=sweep == cfg.max_full_iterations):
                break
        pending = self.status <= PoleStatus.CLIPPED
        self.status[pending] = PoleStatus.MAX_ITER
        st = self.stats
        st.max_iter_poles = int(pending.sum())
        st.avg_iterations_per_pole = float(self.iters.mean())
        total = st.exact_deflations + st.approx_deflations
        st.exact_deflation_fraction = st.exact_deflations / total if total else 0.0
        st.wall_time = time.perf_counter() - t0
        return PoleSet(self.lam.copy(), self.status.copy(), self.iters.copy()), st


def solve(sys: FDNSystem, config: EAIConfig | None = None, *,
          bounds: MagnitudeBounds | None = None, initial=None,
          recorder: GateRecorder | None = None):
    """Find all ``sys.order`` poles; returns ``(PoleSet, EAIStats)``.

    Poles stop updating once ``rcond(P(lambda)) < tol_rcond`` or the step is
    below ``tol_step * |lambda|`` but keep contributing to the deflation of
    the others.  Poles still moving after ``max_full_iterations`` are flagged
    ``MAX_ITER``; the result is returned regardless.
    """
    config = config or EAIConfig()
    bounds = bounds or magnitude_bounds(sys)
    if initial is None:
        initial = initial_estimates(sys.order, bounds)
    if len(initial) != sys.order:
        raise ValueError("initial estimates must have one entry per pole")
    return _Solver(sys, config, bounds, initial, recorder).run()


def set_threads(n: int) -> None:
    """Cap the worker threads used by the compiled deflation kernels."""
    import numba

    numba.set_num_threads(max(1, min(n, numba.config.NUMBA_NUM_THREADS)))
