"""Dense complex matrix kernels.

Every routine accepts a single ``(n, n)`` matrix or a stack ``(..., n, n)``
and works on the whole stack at once.  The pole finder evaluates the loop
matrix at thousands of points per sweep, so the LU factorization, solves and
condition estimate are vectorized over the leading axes instead of looping
in Python.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

SINGULAR_PIVOT = 1e-300
DENSE_EIG_MAX = 512


class NumericalError(ArithmeticError):
    """Raised when an iterative kernel fails to converge."""


def _as_stack(m):
    m = np.asarray(m, dtype=np.complex128)
    if m.ndim < 2 or m.shape[-1] != m.shape[-2]:
        raise ValueError(f"expected square matrix (or stack), got shape {m.shape}")
    return m


@dataclass(frozen=True)
class LUFactorization:
    """Row-pivoted LU factors of a (stack of) square matrix.

    ``lu`` holds the unit lower factor below the diagonal and the upper factor
    on and above it; row ``i`` of ``L @ U`` is row ``perm[i]`` of the input.
    ``singular`` marks matrices with a pivot below ``1e-300 * |M|``; their
    solves contain inf/nan and it is up to the caller to look at the flag.
    """

    lu: np.ndarray
    perm: np.ndarray
    sign: np.ndarray
    singular: np.ndarray
    norm1: np.ndarray

    @property
    def n(self) -> int:
        return self.lu.shape[-1]

    @property
    def det(self):
        d = self.sign * np.prod(np.diagonal(self.lu, axis1=-2, axis2=-1), axis=-1)
        return d[()] if np.ndim(d) == 0 else d

    def factors(self):
        """Return ``(L, U)`` as separate arrays."""
        n = self.n
        lower = np.tril(self.lu, -1) + np.eye(n)
        upper = np.triu(self.lu)
        return lower, upper

    def _flat(self):
        n = self.n
        return self.lu.reshape(-1, n, n), self.perm.reshape(-1, n)

    def solve(self, b):
        """Solve ``M x = b`` for a vector ``(..., n)`` or block ``(..., n, k)``."""
        return self._solve(b, adjoint=False)

    def solve_h(self, b):
        """Solve ``M^H x = b``."""
        return self._solve(b, adjoint=True)

    def inverse(self):
        n = self.n
        eye = np.broadcast_to(np.eye(n, dtype=np.complex128), self.lu.shape)
        return self.solve(eye)

    def _solve(self, b, adjoint):
        n = self.n
        batch = self.lu.shape[:-2]
        b = np.asarray(b, dtype=np.complex128)
        vector = b.shape == batch + (n,)
        if vector:
            b = b[..., None]
        if b.shape[:-1] != batch + (n,):
            raise ValueError(f"right-hand side shape {b.shape} does not match {self.lu.shape}")
        lu, perm = self._flat()
        rhs = b.reshape(-1, n, b.shape[-1]).copy()
        k = lu.shape[0]
        rows = np.arange(k)[:, None]
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            if not adjoint:
                # L y = P b, then U x = y
                y = rhs[rows, perm]
                for i in range(1, n):
                    y[:, i] -= np.einsum("kj,kjr->kr", lu[:, i, :i], y[:, :i])
                x = y
                for i in range(n - 1, -1, -1):
                    if i < n - 1:
                        x[:, i] -= np.einsum("kj,kjr->kr", lu[:, i, i + 1:], x[:, i + 1:])
                    x[:, i] /= lu[:, i, i][:, None]
                out = x
            else:
                # M^H = U^H L^H P: U^H w = b, L^H v = w, x[perm] = v
                lh = np.conj(lu)
                w = rhs
                for i in range(n):
                    if i > 0:
                        w[:, i] -= np.einsum("kj,kjr->kr", lh[:, :i, i], w[:, :i])
                    w[:, i] /= lh[:, i, i][:, None]
                for i in range(n - 2, -1, -1):
                    w[:, i] -= np.einsum("kj,kjr->kr", lh[:, i + 1:, i], w[:, i + 1:])
                out = np.empty_like(w)
                out[rows, perm] = w
        out = out.reshape(b.shape)
        return out[..., 0] if vector else out


def lu_factor(m) -> LUFactorization:
    """LU factorization with partial pivoting of a matrix or stack of matrices."""
    m = _as_stack(m)
    shape = m.shape
    n = shape[-1]
    a = m.reshape(-1, n, n).copy()
    k = a.shape[0]
    rows = np.arange(k)
    perm = np.tile(np.arange(n), (k, 1))
    sign = np.ones(k)
    norm1 = np.abs(a).sum(axis=1).max(axis=1) if n else np.zeros(k)
    singular = np.zeros(k, dtype=bool)
    for j in range(n):
        piv = j + np.argmax(np.abs(a[:, j:, j]), axis=1)
        swap = piv != j
        if swap.any():
            idx, p = rows[swap], piv[swap]
            a[idx, j], a[idx, p] = a[idx, p].copy(), a[idx, j].copy()
            perm[idx, j], perm[idx, p] = perm[idx, p], perm[idx, j].copy()
            sign[swap] = -sign[swap]
        pivot = a[:, j, j]
        tiny = np.abs(pivot) <= SINGULAR_PIVOT * norm1
        singular |= tiny
        if j < n - 1:
            with np.errstate(divide="ignore", invalid="ignore"):
                mult = a[:, j + 1:, j] / np.where(tiny, 1.0, pivot)[:, None]
            mult[tiny] = 0.0
            a[:, j + 1:, j] = mult
            a[:, j + 1:, j + 1:] -= mult[:, :, None] * a[:, None, j, j + 1:]
    batch = shape[:-2]
    return LUFactorization(
        lu=a.reshape(shape),
        perm=perm.reshape(batch + (n,)),
        sign=sign.reshape(batch),
        singular=singular.reshape(batch),
        norm1=norm1.reshape(batch),
    )


def det(m):
    return lu_factor(m).det


def rcond_estimate(fact: LUFactorization, iterations: int = 5):
    """Estimate ``1 / (|M|_1 |M^-1|_1)`` from an LU factorization.

    Hager's power iteration on ``M^-1`` in the 1-norm (with Higham's
    alternating test vector as an extra lower bound).  The estimate of
    ``|M^-1|_1`` never exceeds the true value, so the returned reciprocal
    condition number is an upper estimate; in practice it is within a small
    factor of the exact one.  Exactly singular matrices give 0.
    """
    n = fact.n
    batch = fact.lu.shape[:-2]
    k = int(np.prod(batch, dtype=int))
    flat = LUFactorization(*(np.reshape(f, (k,) + f.shape[len(batch):]) for f in (
        fact.lu, fact.perm, fact.sign, fact.singular, fact.norm1)))
    rows = np.arange(k)
    x = np.full((k, n), 1.0 / n, dtype=np.complex128)
    est = np.zeros(k)
    with np.errstate(invalid="ignore", over="ignore", divide="ignore"):
        for _ in range(iterations):
            y = flat.solve(x)
            est = np.fmax(est, np.abs(y).sum(axis=1))
            ay = np.abs(y)
            xi = np.where(ay > 0, y / np.where(ay > 0, ay, 1.0), 1.0)
            z = flat.solve_h(xi)
            jmax = np.argmax(np.nan_to_num(np.abs(z), nan=np.inf), axis=1)
            x = np.zeros((k, n), dtype=np.complex128)
            x[rows, jmax] = 1.0
        if n > 1:
            alt = np.array([(-1) ** i * (1 + i / (n - 1)) for i in range(n)], dtype=np.complex128)
            y = flat.solve(np.broadcast_to(alt, (k, n)))
            est = np.fmax(est, 2 * np.abs(y).sum(axis=1) / (3 * n))
        rc = 1.0 / (flat.norm1 * est)
    rc = np.where(flat.singular | ~np.isfinite(rc), 0.0, rc)
    rc = rc.reshape(batch)
    return rc[()] if rc.ndim == 0 else rc


def _products_excluding_each(s):
    """``out[..., i] = prod_{j != i} s[..., j]`` without division."""
    n = s.shape[-1]
    ones = np.ones(s.shape[:-1] + (1,), dtype=s.dtype)
    prefix = np.concatenate([ones, np.cumprod(s[..., :-1], axis=-1)], axis=-1)
    suffix = np.concatenate([np.cumprod(s[..., :0:-1], axis=-1)[..., ::-1], ones], axis=-1)
    return prefix * suffix if n else s


def adjugate(m):
    """Adjugate (classical adjoint) computed from the SVD.

    With ``M = U S V^H`` the adjugate is ``det(U) det(V^H) V adj(S) U^H`` where
    ``adj(S)`` is diagonal with entries ``prod_{j != i} s_j``.  No singular
    value is ever inverted, so the result stays accurate when ``M`` has rank
    ``n - 1``, which is exactly the situation at a converged pole.
    """
    m = _as_stack(m)
    n = m.shape[-1]
    if n == 1:
        return np.ones_like(m)
    u, s, vh = np.linalg.svd(m)
    cof = _products_excluding_each(s)
    phase = np.linalg.det(u) * np.linalg.det(vh)
    v = np.conj(np.swapaxes(vh, -1, -2))
    uh = np.conj(np.swapaxes(u, -1, -2))
    return phase[..., None, None] * ((v * cof[..., None, :]) @ uh)


def singular_values(m):
    """Singular values in descending order (LAPACK gesdd)."""
    try:
        return np.linalg.svd(_as_stack(m), compute_uv=False)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"SVD did not converge: {exc}") from exc


def eigenvalues_dense(m):
    """Eigenvalues of a dense matrix of dimension <= 512 (oracle use).

    Backed by LAPACK ``geev`` (Hessenberg reduction followed by shifted QR).
    """
    m = _as_stack(m)
    if m.ndim != 2:
        raise ValueError("eigenvalues_dense takes a single matrix")
    if m.shape[0] > DENSE_EIG_MAX:
        raise ValueError(f"dimension {m.shape[0]} exceeds oracle cap {DENSE_EIG_MAX}")
    try:
        return np.linalg.eigvals(m)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"QR iteration did not converge: {exc}") from exc


def companion(coeffs_ascending):
    """Companion matrix of a polynomial given by ascending coefficients."""
    c = np.trim_zeros(np.asarray(coeffs_ascending, dtype=np.complex128), "b")
    deg = c.size - 1
    if deg < 1:
        raise ValueError("polynomial must have degree >= 1")
    comp = np.zeros((deg, deg), dtype=np.complex128)
    comp[1:, :-1] = np.eye(deg - 1)
    comp[:, -1] = -c[:-1] / c[-1]
    return comp
