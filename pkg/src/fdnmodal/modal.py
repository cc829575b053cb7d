"""Residues at converged poles, modal resynthesis and the resynthesis error."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .eai import PoleSet
from .fdn import FDNSystem, check_annulus, impulse_response, loop_matrix
from .linalg import adjugate

SIMPLE_POLE_RTOL = 1e-12
DUPLICATE_RTOL = 1e-9
VERIFY_THRESHOLD = 1e-10


class NonSimplePoleError(ArithmeticError):
    """A pole is multiple (or duplicated in the pole set); its residue is undefined."""

    def __init__(self, message, indices=()):
        super().__init__(message)
        self.indices = np.asarray(indices, dtype=int)


@dataclass(frozen=True)
class Mode:
    """One resonator ``rho * lambda^(n-1)``; ``undriven = 1/p'(lambda)``, ``drive = c^T adj(P) b``."""

    pole: complex
    residue: complex
    undriven_residue: complex
    drive: complex

    @property
    def frequency(self) -> float:
        """Normalized angular frequency in radians per sample."""
        return float(np.angle(self.pole))


@dataclass
class ModalDecomposition:
    """Partial fraction form ``H(z) = d + sum_i rho_i / (z - lambda_i)``.

    Arrays are indexed by mode.  ``drive_matrices`` (optional) holds the full
    ``N x N`` adjugate per pole, so residues for any gains ``b, c`` follow as
    ``c^T adj b / p'``.
    """

    poles: np.ndarray
    residues: np.ndarray
    undriven_residues: np.ndarray
    drives: np.ndarray
    direct_gain: complex = 0.0
    drive_matrices: np.ndarray | None = None
    iterations: np.ndarray | None = None
    status: np.ndarray | None = None
    is_real: bool = False

    def __len__(self):
        return self.poles.size

    def __getitem__(self, i) -> Mode:
        return Mode(complex(self.poles[i]), complex(self.residues[i]),
                    complex(self.undriven_residues[i]), complex(self.drives[i]))

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    def residues_for(self, input_gains, output_gains) -> np.ndarray:
        """Residues for other gains, from the stored drive matrices."""
        if self.drive_matrices is None:
            raise ValueError("decomposition was computed without drive matrices")
        b = np.asarray(input_gains, dtype=np.complex128)
        c = np.asarray(output_gains, dtype=np.complex128)
        q = np.einsum("i,kij,j->k", c, self.drive_matrices, b)
        return q * self.undriven_residues


def _pole_array(poles):
    if isinstance(poles, PoleSet):
        return poles.poles, poles
    return np.asarray(poles, dtype=np.complex128).reshape(-1), None


def gcp_derivative_at_pole(sys: FDNSystem, pole) -> complex:
    """``p'(lambda) = trace(adj(P(lambda)) P'(lambda))``; raises on a multiple pole."""
    p_der, _, _ = _adjugate_terms(sys, np.array([complex(pole)]))
    _check_simple(p_der, np.array([complex(pole)]))
    return complex(p_der.value[0])


@dataclass
class _Derivative:
    value: np.ndarray
    scale: np.ndarray


def _adjugate_terms(sys, poles, chunk: int = 4096, keep_matrices: bool = False):
    check_annulus(sys, poles)
    n = sys.size
    p_der = np.empty(poles.size, dtype=np.complex128)
    scale = np.empty(poles.size)
    q = np.empty(poles.size, dtype=np.complex128)
    mats = np.empty((poles.size, n, n), dtype=np.complex128) if keep_matrices else None
    for lo in range(0, poles.size, chunk):
        sl = slice(lo, lo + chunk)
        p, dr = loop_matrix(sys, poles[sl])
        adj = adjugate(p)
        diag = np.diagonal(adj, axis1=-2, axis2=-1)
        p_der[sl] = np.sum(diag * dr, axis=-1)
        scale[sl] = np.linalg.norm(adj, axis=(-2, -1)) * np.linalg.norm(dr, axis=-1)
        q[sl] = np.einsum("i,kij,j->k", sys.output_gains, adj, sys.input_gains)
        if keep_matrices:
            mats[sl] = adj
    return _Derivative(p_der, scale), q, mats


def _check_simple(p_der: _Derivative, poles):
    bad = ~(np.abs(p_der.value) > SIMPLE_POLE_RTOL * p_der.scale)
    if bad.any():
        idx = np.flatnonzero(bad)
        shown = ", ".join(f"{poles[i]:.12g}" for i in idx[:5])
        raise NonSimplePoleError(
            f"non-simple pole: p'(lambda) vanishes at {idx.size} pole(s): {shown}", idx)


def _check_unique(poles):
    if poles.size < 2:
        return
    pts = np.column_stack([poles.real, poles.imag])
    tol = DUPLICATE_RTOL * max(1.0, float(np.abs(poles).max()))
    pairs = cKDTree(pts).query_pairs(tol, output_type="ndarray")
    if pairs.size:
        raise NonSimplePoleError(
            f"non-simple pole: {len(pairs)} pair(s) of estimates closer than {tol:.1e}",
            np.unique(pairs))


def residues(sys: FDNSystem, poles, *, drive_matrices: bool = False,
             require_converged: bool = True) -> ModalDecomposition:
    """Residues of all poles via the adjugate of the loop matrix.

    ``rho_bar = 1/p'(lambda)`` is the undriven residue, ``q = c^T adj(P) b``
    the drive and ``rho = q * rho_bar``.  ``poles`` is a :class:`PoleSet` or a
    plain array.  With ``drive_matrices`` the full adjugates are kept
    (``16 N^2`` bytes per pole).
    """
    lam, pset = _pole_array(poles)
    if lam.size != sys.order:
        raise ValueError(f"{lam.size} poles given, system order is {sys.order}")
    if pset is not None and require_converged and not pset.all_converged:
        bad = np.flatnonzero(~pset.converged)
        raise ValueError(f"{bad.size} pole(s) did not converge (first index {bad[0]})")
    _check_unique(lam)
    p_der, q, mats = _adjugate_terms(sys, lam, keep_matrices=drive_matrices)
    _check_simple(p_der, lam)
    undriven = 1.0 / p_der.value
    return ModalDecomposition(
        poles=lam.copy(), residues=q * undriven, undriven_residues=undriven, drives=q,
        direct_gain=sys.direct_gain, drive_matrices=mats,
        iterations=None if pset is None else pset.iterations.copy(),
        status=None if pset is None else pset.status.copy(),
        is_real=sys.is_real)


def synthesize(dec: ModalDecomposition, length: int, start: int = 0, *,
               block: int = 1024, mode_chunk: int = 2048) -> np.ndarray:
    """Samples ``start .. start+length-1`` of ``d*delta(n) + sum_i rho_i lambda_i^(n-1) [n >= 1]``.

    Powers are formed per block as ``lambda^n0 * lambda^k`` with both factors
    from :func:`numpy.power`, so the error does not accumulate along the
    signal.  Returns a complex array.
    """
    if length < 1:
        raise ValueError("length must be >= 1")
    if start < 0:
        raise ValueError("start must be >= 0")
    out = np.zeros(length, dtype=np.complex128)
    if start == 0:
        out[0] = dec.direct_gain
    first = max(start, 1)
    stop = start + length
    if first >= stop:
        return out
    k = np.arange(min(block, stop - first))
    for lo in range(0, len(dec), mode_chunk):
        lam = dec.poles[lo:lo + mode_chunk]
        rho = dec.residues[lo:lo + mode_chunk]
        steps = np.power(lam[:, None], k[None, :])
        for n0 in range(first, stop, block):
            b = min(block, stop - n0)
            coef = rho * np.power(lam, n0 - 1)
            out[n0 - start:n0 - start + b] += coef @ steps[:, :b]
    return out


def verification_error(sys: FDNSystem, dec: ModalDecomposition, length: int | None = None) -> float:
    """``max_n |h_recursion(n) - h_modal(n)|`` over ``length`` samples (default ``2 * order``)."""
    if length is None:
        length = 2 * sys.order
    if len(dec) != sys.order:
        raise ValueError(f"decomposition has {len(dec)} modes, system order is {sys.order}")
    ref = impulse_response(sys, length)
    return float(np.max(np.abs(ref - synthesize(dec, length))))


def is_verified(err: float, threshold: float = VERIFY_THRESHOLD) -> bool:
    return bool(err < threshold)


def window_error(sys: FDNSystem, dec: ModalDecomposition, start: int, length: int) -> float:
    """Resynthesis error restricted to ``[start, start+length)``; the recursion still runs from 0."""
    ref = impulse_response(sys, start + length)[start:]
    return float(np.max(np.abs(ref - synthesize(dec, length, start))))
