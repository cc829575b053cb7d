"""Feedback delay network model: recursion, transfer function and loop matrix."""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import lfilter

from .attenuation import OnePoleFilter
from .linalg import lu_factor

# |z|^m must stay inside the double exponent range
ANNULUS_LOG_BUDGET = 690.0
GCP_MAX_LINES = 8
GCP_MAX_ORDER = 512


class OutsideAnnulusError(ValueError):
    """The evaluation point would overflow or underflow ``z ** m``."""


class PoleEvaluationError(ZeroDivisionError):
    """The transfer function was evaluated at a pole."""


def _readonly(a):
    a.setflags(write=False)
    return a


def _as_vector(x, n, name):
    v = np.asarray(x, dtype=np.complex128).reshape(-1)
    if v.size != n:
        raise ValueError(f"{name} has {v.size} entries, expected {n}")
    if not np.all(np.isfinite(v)):
        raise ValueError(f"{name} contains non-finite values")
    return _readonly(v.copy())


@dataclass(frozen=True, eq=False)
class FDNSystem:
    """Single-input single-output FDN with optional one-pole filters per delay line.

    ``delays`` are integer sample counts, ``feedback`` the ``N x N`` matrix
    ``A``; ``input_gains`` ``b`` and ``output_gains`` ``c`` default to all
    ones.  Arrays are stored as read-only complex copies.
    """

    delays: np.ndarray
    feedback: np.ndarray
    input_gains: np.ndarray | None = None
    output_gains: np.ndarray | None = None
    direct_gain: complex = 0.0
    filters: tuple[OnePoleFilter, ...] | None = None
    name: str = field(default="", compare=False)

    def __post_init__(self):
        m = np.asarray(self.delays)
        if m.ndim != 1 or m.size == 0:
            raise ValueError("delays must be a non-empty 1-d sequence")
        if not np.all(np.equal(np.mod(m, 1), 0)) or np.any(m < 1):
            raise ValueError(f"delays must be positive integers, got {m.tolist()}")
        m = _readonly(m.astype(np.int64))
        n = m.size
        a = np.asarray(self.feedback, dtype=np.complex128)
        if a.shape != (n, n):
            raise ValueError(f"feedback matrix shape {a.shape} does not match {n} delay lines")
        if not np.all(np.isfinite(a)):
            raise ValueError("feedback matrix contains non-finite values")
        ones = np.ones(n)
        b = _as_vector(ones if self.input_gains is None else self.input_gains, n, "input_gains")
        c = _as_vector(ones if self.output_gains is None else self.output_gains, n, "output_gains")
        d = complex(self.direct_gain)
        filters = self.filters
        if filters is not None:
            filters = tuple(filters)
            if len(filters) != n:
                raise ValueError(f"{len(filters)} filters for {n} delay lines")
            if not all(isinstance(f, OnePoleFilter) for f in filters):
                raise TypeError("only OnePoleFilter attenuation filters are supported "
                                "(general IIR loops would make the loop matrix rational)")
        object.__setattr__(self, "delays", m)
        object.__setattr__(self, "feedback", _readonly(a.copy()))
        object.__setattr__(self, "input_gains", b)
        object.__setattr__(self, "output_gains", c)
        object.__setattr__(self, "direct_gain", d)
        object.__setattr__(self, "filters", filters)

    @property
    def size(self) -> int:
        return int(self.delays.size)

    @property
    def order(self) -> int:
        """Number of poles, the sum of all delays."""
        return int(self.delays.sum())

    @property
    def is_real(self) -> bool:
        return (not np.any(self.feedback.imag) and not np.any(self.input_gains.imag)
                and not np.any(self.output_gains.imag) and self.direct_gain.imag == 0)

    def with_filters(self, filters) -> "FDNSystem":
        return FDNSystem(self.delays, self.feedback, self.input_gains, self.output_gains,
                         self.direct_gain, filters, self.name)

    def with_gains(self, input_gains=None, output_gains=None, direct_gain=None) -> "FDNSystem":
        return FDNSystem(
            self.delays, self.feedback,
            self.input_gains if input_gains is None else input_gains,
            self.output_gains if output_gains is None else output_gains,
            self.direct_gain if direct_gain is None else direct_gain,
            self.filters, self.name)


@dataclass(frozen=True)
class MatrixPolyEval:
    """Loop matrix ``P(z)`` and its derivative at ``z``."""

    value: np.ndarray
    derivative: np.ndarray
    z: complex


def loop_diagonal(sys: FDNSystem, z):
    """Diagonal of ``P(z) + A`` and its derivative for an array of points.

    Returns arrays ``r, dr`` of shape ``z.shape + (N,)``.  Line ``i``
    contributes ``z^m`` (plain delay) or ``(z^m - p z^(m-1)) / (g (1-p))``
    (delay followed by a one-pole filter).  No range checking.
    """
    z = np.asarray(z, dtype=np.complex128)[..., None]
    m = sys.delays
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        zm1 = np.power(z, m - 1)
        r = zm1 * z
        dr = m * zm1
        if sys.filters is not None:
            g = np.array([f.gain for f in sys.filters])
            p = np.array([f.pole for f in sys.filters])
            scale = 1.0 / (g * (1 - p))
            zm2 = np.power(z, np.maximum(m - 2, 0))
            r = (r - p * zm1) * scale
            dr = (dr - p * (m - 1) * zm2) * scale
    return r, dr


def loop_matrix(sys: FDNSystem, z):
    """Stack of ``P(z)`` for an array of points (no range checking)."""
    r, dr = loop_diagonal(sys, z)
    n = sys.size
    p = np.broadcast_to(-sys.feedback, r.shape[:-1] + (n, n)).copy()
    idx = np.arange(n)
    p[..., idx, idx] += r
    return p, dr


def check_annulus(sys: FDNSystem, z) -> None:
    z = np.asarray(z, dtype=np.complex128)
    if np.any(z == 0):
        raise ValueError("loop matrix evaluation requires z != 0")
    budget = sys.delays.max() * np.abs(np.log(np.abs(z)))
    if np.any(budget >= ANNULUS_LOG_BUDGET):
        raise OutsideAnnulusError(
            f"|z|^m leaves the double range (max m |log|z|| = {np.max(budget):.1f})")


def eval_loop(sys: FDNSystem, z: complex) -> MatrixPolyEval:
    """Evaluate ``P(z) = diag(z^m / alpha(z)) - A`` and its analytic derivative."""
    check_annulus(sys, z)
    value, dr = loop_matrix(sys, complex(z))
    return MatrixPolyEval(value, np.diag(dr), complex(z))


def transfer_function(sys: FDNSystem, z):
    """``H(z) = c^T P(z)^-1 b + d``; raises :class:`PoleEvaluationError` at a pole."""
    z = np.asarray(z, dtype=np.complex128)
    check_annulus(sys, z)
    p, _ = loop_matrix(sys, z)
    fact = lu_factor(p)
    if np.any(fact.singular):
        raise PoleEvaluationError("transfer function evaluated at a pole")
    x = fact.solve(np.broadcast_to(sys.input_gains, z.shape + (sys.size,)))
    h = x @ sys.output_gains + sys.direct_gain
    return h[()] if h.ndim == 0 else h


def impulse_response(sys: FDNSystem, length: int):
    """Impulse response ``y(0..length-1)`` of the time-domain recursion.

    The recursion runs in blocks of ``min(m)`` samples: within such a block
    every delay-line output was written at least one block earlier, so the
    feedback matrix can be applied to the whole block at once.
    """
    if length < 1:
        raise ValueError("length must be >= 1")
    real = sys.is_real
    dtype = np.float64 if real else np.complex128
    conv = (lambda a: a.real) if real else (lambda a: a)
    n, m = sys.size, sys.delays
    a, b, c = conv(sys.feedback), conv(sys.input_gains), conv(sys.output_gains)
    d = sys.direct_gain.real if real else sys.direct_gain
    v = np.zeros((n, length), dtype=dtype)
    y = np.zeros(length, dtype=dtype)
    block = int(m.min())
    lines = np.arange(n)[:, None]
    if sys.filters is not None:
        fb = [np.array([f.gain * (1 - f.pole)]) for f in sys.filters]
        fa = [np.array([1.0, -f.pole]) for f in sys.filters]
        state = [np.zeros(1, dtype=dtype) for _ in range(n)]
    for start in range(0, length, block):
        stop = min(start + block, length)
        t = np.arange(start, stop)
        src = t[None, :] - m[:, None]
        valid = src >= 0
        s = np.where(valid, v[lines, np.where(valid, src, 0)], 0)
        x = (t == 0).astype(dtype)
        y[start:stop] = c @ s + d * x
        w = a @ s + np.outer(b, x)
        if sys.filters is not None:
            for i in range(n):
                w[i], state[i] = lfilter(fb[i], fa[i], w[i], zi=state[i])
        v[:, start:stop] = w
    return y


def gcp_coefficients(sys: FDNSystem):
    """Ascending coefficients of ``det(diag(z^m) - A)`` from the principal minors of ``A``.

    ``coef[k]`` multiplies ``z^k``.  Oracle-scale only (``N <= 8``, order <= 512).
    """
    if sys.filters is not None:
        raise ValueError("principal-minor polynomial requires a system without filters")
    if sys.size > GCP_MAX_LINES or sys.order > GCP_MAX_ORDER:
        raise ValueError(f"principal-minor polynomial capped at N <= {GCP_MAX_LINES}, "
                         f"order <= {GCP_MAX_ORDER}")
    n, m, a = sys.size, sys.delays, sys.feedback
    coef = np.zeros(sys.order + 1, dtype=np.complex128)
    for k in range(n + 1):
        for subset in itertools.combinations(range(n), k):
            idx = list(subset)
            minor = np.linalg.det(a[np.ix_(idx, idx)]) if idx else 1.0
            power = sys.order - int(m[idx].sum())
            coef[power] += (-1) ** k * minor
    return coef


def circulant_shift(n: int):
    """Cyclic shift matrix: ones on the superdiagonal and in the bottom-left corner."""
    return np.roll(np.eye(n), 1, axis=1)
