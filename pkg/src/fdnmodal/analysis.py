"""Random FDN ensembles, mode-frequency statistics and small-scale oracles."""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.spatial import cKDTree

from .attenuation import magnitude_bounds
from .fdn import FDNSystem, gcp_coefficients
from .linalg import companion, eigenvalues_dense
from .modal import ModalDecomposition

ORACLE_MAX_ORDER = 512
CLUSTER_KAPPAS = 5  # 0, 1, 2, 3, >=4
_POSITION_GRID = 1e-9
_HUNGARIAN_MAX = 2048


def trial_rng(seed: int, trial: int) -> np.random.Generator:
    """Independent generator per trial, derived from the master seed and trial index."""
    return np.random.default_rng([int(seed), int(trial)])


def random_orthogonal(n: int, seed=None) -> np.ndarray:
    """Haar-distributed real orthogonal matrix (QR of a Gaussian matrix, sign-corrected)."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    q, r = np.linalg.qr(rng.standard_normal((n, n)))
    return q * np.sign(np.diag(r))


def random_delays(n: int, low: int, high: int, rng: np.random.Generator) -> np.ndarray:
    """``n`` i.i.d. uniform integer delays on ``[low, high]``."""
    if not 1 <= low <= high:
        raise ValueError("need 1 <= low <= high")
    return rng.integers(low, high + 1, size=n)


def random_delays_with_total(n: int, total: int, rng: np.random.Generator) -> np.ndarray:
    """``n`` positive delays summing to ``total`` (a uniformly random composition)."""
    if total < n:
        raise ValueError("total must be at least the number of lines")
    cuts = np.sort(rng.choice(np.arange(1, total), n - 1, replace=False))
    return np.diff(np.concatenate([[0], cuts, [total]]))


def random_orthogonal_fdn(delays, rng: np.random.Generator, **kwargs) -> FDNSystem:
    delays = np.asarray(delays)
    return FDNSystem(delays, random_orthogonal(delays.size, rng), **kwargs)


# ---------------------------------------------------------------- cluster numbers

@dataclass
class ClusterHistogram:
    """Distribution of the number of pole angles inside a window of width ``2 pi / order``.

    ``counts[k]`` is the number of probe windows holding ``k`` angles, the last
    entry collecting ``k >= 4``.
    """

    counts: np.ndarray
    trials: int = 1

    @property
    def observations(self) -> int:
        return int(self.counts.sum())

    @property
    def probabilities(self) -> np.ndarray:
        return self.counts / max(self.observations, 1)

    def __add__(self, other: "ClusterHistogram") -> "ClusterHistogram":
        return ClusterHistogram(self.counts + other.counts, self.trials + other.trials)

    @classmethod
    def empty(cls) -> "ClusterHistogram":
        return cls(np.zeros(CLUSTER_KAPPAS, dtype=np.int64), 0)


def cluster_numbers(angles, order: int | None = None, probes: int | None = None) -> ClusterHistogram:
    """Cluster-number histogram of ``angles`` probed at ``omega = 2 pi l / probes``.

    The window around each probe is the half-open arc
    ``[omega - pi/order, omega + pi/order)``, so equidistributed angles give
    exactly one angle per window.  Positions are measured in units of
    ``2 pi / order`` and snapped to a ``1e-9`` grid before comparison.
    """
    angles = np.asarray(angles, dtype=float).reshape(-1)
    order = angles.size if order is None else int(order)
    probes = 4 * order if probes is None else int(probes)
    if order < 1 or probes < order:
        raise ValueError("need order >= 1 and probes >= order")
    # integer positions on a 1e-9 grid keep window edges exact
    span = round(order / _POSITION_GRID)
    unit = round(1 / _POSITION_GRID)
    pos = np.mod(np.rint(angles * (order / (2 * np.pi)) / _POSITION_GRID).astype(np.int64), span)
    pos.sort()
    lo = np.rint((np.arange(probes) * (order / probes) - 0.5) / _POSITION_GRID).astype(np.int64)
    hi = lo + unit

    def below(x):
        wraps = np.floor_divide(x, span)
        return wraps * pos.size + np.searchsorted(pos, x - wraps * span, side="left")

    ncl = (below(hi) - below(lo)).astype(np.int64)
    counts = np.bincount(np.minimum(ncl, CLUSTER_KAPPAS - 1), minlength=CLUSTER_KAPPAS)
    return ClusterHistogram(counts.astype(np.int64), 1)


def equidistributed_angles(order: int) -> np.ndarray:
    return 2 * np.pi * np.arange(order) / order


def uniform_random_angles(order: int, rng: np.random.Generator) -> np.ndarray:
    return rng.uniform(0, 2 * np.pi, order)


def poisson_reference(mean: float = 1.0) -> np.ndarray:
    """Poisson probabilities for ``k = 0..3`` and the ``k >= 4`` tail."""
    from scipy.stats import poisson

    p = poisson.pmf(np.arange(CLUSTER_KAPPAS - 1), mean)
    return np.append(p, 1 - p.sum())


# ---------------------------------------------------------------- residue histograms

class ResidueKind(str, Enum):
    TOTAL = "total"
    UNDRIVEN_INVERSE = "undriven-inverse"
    DRIVES = "drives"


@dataclass
class ResidueHistogram:
    kind: ResidueKind
    edges: np.ndarray
    counts: np.ndarray
    values_db: np.ndarray = field(repr=False)

    @property
    def probabilities(self) -> np.ndarray:
        return self.counts / max(int(self.counts.sum()), 1)


_DB_FLOOR = -400.0


def residue_magnitudes_db(dec: ModalDecomposition, kind) -> np.ndarray:
    kind = ResidueKind(kind)
    if kind is ResidueKind.TOTAL:
        mag = np.abs(dec.residues)
    elif kind is ResidueKind.UNDRIVEN_INVERSE:
        mag = 1.0 / np.abs(dec.undriven_residues)
    else:
        if dec.drive_matrices is None:
            raise ValueError("drive histogram needs a decomposition with drive matrices")
        mag = np.abs(dec.drive_matrices).reshape(-1)
    with np.errstate(divide="ignore"):
        return np.maximum(20 * np.log10(mag), _DB_FLOOR)


def residue_histogram(dec: ModalDecomposition, kind="total", bin_db: float = 1.0) -> ResidueHistogram:
    """Histogram of residue magnitudes in dB with bins of ``bin_db`` aligned to multiples of it."""
    return histogram_db(residue_magnitudes_db(dec, kind), kind, bin_db)


def histogram_db(values, kind="total", bin_db: float = 1.0) -> ResidueHistogram:
    """Histogram of dB values (pooled over several decompositions if needed)."""
    if bin_db <= 0:
        raise ValueError("bin width must be positive")
    values = np.asarray(values, dtype=float)
    lo = np.floor(values.min() / bin_db) * bin_db
    nbins = int(np.floor((values.max() - lo) / bin_db)) + 1
    edges = lo + bin_db * np.arange(nbins + 1)
    counts, _ = np.histogram(values, edges)
    return ResidueHistogram(ResidueKind(kind), edges, counts, values)


# ---------------------------------------------------------------- oracles

def state_matrix(sys: FDNSystem) -> np.ndarray:
    """``order x order`` one-sample state-space matrix: every delay line as a shift chain."""
    if sys.filters is not None:
        raise ValueError("state-space oracle supports systems without filters only")
    if sys.order > ORACLE_MAX_ORDER:
        raise ValueError(f"oracle capped at order {ORACLE_MAX_ORDER}, got {sys.order}")
    m = sys.delays
    starts = np.concatenate([[0], np.cumsum(m)[:-1]])
    ends = starts + m - 1
    s = np.zeros((sys.order, sys.order), dtype=np.complex128)
    for i in range(sys.size):
        for k in range(1, m[i]):
            s[starts[i] + k, starts[i] + k - 1] = 1.0
        s[starts[i], ends] = sys.feedback[i]
    return s


def oracle_poles(sys: FDNSystem, method: str = "linearization") -> np.ndarray:
    """Reference poles from a dense eigensolver (order <= 512).

    ``linearization`` uses the state matrix, ``gcp`` the companion matrix of the
    principal-minor polynomial.
    """
    if method == "linearization":
        return eigenvalues_dense(state_matrix(sys))
    if method == "gcp":
        return eigenvalues_dense(companion(gcp_coefficients(sys)))
    raise ValueError(f"unknown oracle method {method!r}")


@dataclass
class PoleMatch:
    """``a[i]`` is matched to ``b[partner[i]]`` at distance ``distance[i]``."""

    partner: np.ndarray
    distance: np.ndarray

    @property
    def max_distance(self) -> float:
        return float(self.distance.max()) if self.distance.size else 0.0


def match_poles(a, b) -> PoleMatch:
    """Minimum-weight bipartite matching on ``|a_i - b_j|``.

    Exact assignment up to 2048 points; above that, nearest neighbours from a
    KD-tree, with conflicts resolved by the assignment solver restricted to the
    few points involved.
    """
    a = np.asarray(a, dtype=np.complex128).reshape(-1)
    b = np.asarray(b, dtype=np.complex128).reshape(-1)
    if a.size != b.size:
        raise ValueError(f"cannot match {a.size} against {b.size} points")
    if a.size <= _HUNGARIAN_MAX:
        cost = np.abs(a[:, None] - b[None, :])
        rows, cols = linear_sum_assignment(cost)
        partner = np.empty(a.size, dtype=int)
        partner[rows] = cols
        return PoleMatch(partner, np.abs(a - b[partner]))
    tree = cKDTree(np.column_stack([b.real, b.imag]))
    _, nearest = tree.query(np.column_stack([a.real, a.imag]))
    partner = nearest.astype(int)
    taken = np.bincount(partner, minlength=b.size)
    clash = taken[partner] > 1
    if clash.any():
        ia = np.flatnonzero(clash)
        free = np.setdiff1d(np.arange(b.size), partner[~clash])
        _, cand = tree.query(np.column_stack([a[ia].real, a[ia].imag]), k=min(8, b.size))
        pool = np.intersect1d(np.unique(cand), free)
        if pool.size < ia.size:
            pool = free
        cost = np.abs(a[ia][:, None] - b[pool][None, :])
        rows, cols = linear_sum_assignment(cost)
        partner[ia[rows]] = pool[cols]
    return PoleMatch(partner, np.abs(a - b[partner]))


# ---------------------------------------------------------------- bounds

@dataclass
class BoundsReport:
    poles: np.ndarray
    lower: np.ndarray
    upper: np.ndarray

    @property
    def margin(self) -> np.ndarray:
        """Signed distance inside the annulus; negative means outside."""
        mag = np.abs(self.poles)
        return np.minimum(mag - self.lower, self.upper - mag)

    def all_inside(self, tol: float = 1e-10) -> bool:
        return bool(np.all(self.margin >= -tol))


def bounds_report(sys: FDNSystem, poles) -> BoundsReport:
    """Magnitude bounds evaluated at each pole."""
    poles = np.asarray(poles, dtype=np.complex128)
    lo, hi = magnitude_bounds(sys).at(poles)
    return BoundsReport(poles, lo, hi)


# ---------------------------------------------------------------- ensembles

def lossless_cluster_ensemble(trials: int, seed: int = 0, *, lines: int = 8,
                              delay_range=(50, 1000), probe_factor: int = 4,
                              config=None, progress=None) -> ClusterHistogram:
    """Pooled cluster histogram of the poles of random lossless FDNs.

    Each trial draws delays i.i.d. on ``delay_range`` and a random orthogonal
    matrix from :func:`trial_rng`, so the result depends only on ``seed``.
    """
    from .eai import solve

    total = ClusterHistogram.empty()
    for t in range(trials):
        rng = trial_rng(seed, t)
        sys = random_orthogonal_fdn(random_delays(lines, *delay_range, rng), rng)
        poles, _ = solve(sys, config)
        if not poles.all_converged:
            raise RuntimeError(f"trial {t}: {np.count_nonzero(~poles.converged)} poles did not converge")
        total = total + cluster_numbers(np.angle(poles.poles), sys.order, probe_factor * sys.order)
        if progress is not None:
            progress(t, sys)
    return total


def uniform_cluster_ensemble(trials: int, order: int, seed: int = 0, probe_factor: int = 4) -> ClusterHistogram:
    total = ClusterHistogram.empty()
    for t in range(trials):
        angles = uniform_random_angles(order, trial_rng(seed, t))
        total = total + cluster_numbers(angles, order, probe_factor * order)
    return total
