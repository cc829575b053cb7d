"""Attenuation filters, reverberation-time mapping and pole magnitude bounds."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class OnePoleFilter:
    """``alpha(z) = g (1 - p) / (1 - p z^-1)``: DC gain ``g``, Nyquist gain ``g (1-p)/(1+p)``."""

    gain: float
    pole: float = 0.0

    def __post_init__(self):
        if not (math.isfinite(self.gain) and self.gain > 0):
            raise ValueError(f"filter gain must be positive and finite, got {self.gain}")
        if not abs(self.pole) < 1:
            raise ValueError(f"filter pole must lie inside the unit circle, got {self.pole}")

    def response(self, z):
        z = np.asarray(z, dtype=np.complex128)
        return self.gain * (1 - self.pole) / (1 - self.pole / z)


@dataclass(frozen=True)
class AttenuationSpec:
    """Target reverberation time at DC and Nyquist.

    With ``average_delay`` unset the filters are delay-proportional (each line
    gets ``gamma ** m_i``); otherwise every line uses the same response,
    designed for the average delay.
    """

    t60_dc: float
    t60_ny: float
    fs: float = 48000.0
    average_delay: float | None = None

    def __post_init__(self):
        if self.t60_dc <= 0 or self.t60_ny <= 0 or self.fs <= 0:
            raise ValueError("reverberation times and sample rate must be positive")
        if self.average_delay is not None and self.average_delay <= 0:
            raise ValueError("average delay must be positive")


def gamma_from_t60(t60, fs):
    """Per-sample gain reaching -60 dB after ``t60`` seconds."""
    return 10.0 ** (-3.0 / (np.asarray(t60, dtype=float) * fs))


def t60_from_gamma(gamma, fs):
    return -3.0 / (fs * np.log10(np.asarray(gamma, dtype=float)))


def mode_t60(pole, fs):
    """Reverberation time of a mode; ``inf`` for non-decaying poles."""
    mag = np.abs(np.asarray(pole))
    with np.errstate(divide="ignore"):
        t = np.where(mag < 1, -3.0 / (fs * np.log10(np.where(mag < 1, mag, 0.5))), np.inf)
    return t[()] if t.ndim == 0 else t


def design_one_pole(spec: AttenuationSpec, delay: float) -> OnePoleFilter:
    """One-pole lowpass matching ``gamma(0)^m`` at DC and ``gamma(pi)^m`` at Nyquist."""
    m = spec.average_delay if spec.average_delay is not None else delay
    g_dc = gamma_from_t60(spec.t60_dc, spec.fs)
    g_ny = gamma_from_t60(spec.t60_ny, spec.fs)
    gain = float(g_dc ** m)
    ratio = float((g_ny / g_dc) ** m)
    return OnePoleFilter(gain, (1 - ratio) / (1 + ratio))


def design_filters(spec: AttenuationSpec, delays) -> tuple[OnePoleFilter, ...]:
    return tuple(design_one_pole(spec, m) for m in delays)


def homogeneous_filters(gamma: float, delays) -> tuple[OnePoleFilter, ...]:
    """Frequency-flat attenuation ``alpha_i = gamma ** m_i``."""
    return tuple(OnePoleFilter(float(gamma) ** int(m), 0.0) for m in delays)


class MagnitudeBounds:
    """Annulus containing the poles, possibly depending on the pole location.

    For a loop ``diag(z^m / alpha(z)) - A`` every pole ``lambda`` satisfies

        min_i (s_min |alpha_i(lambda)|) ** (1/m_i) <= |lambda|
                                      <= max_i (s_max |alpha_i(lambda)|) ** (1/m_i)

    with ``s_min``, ``s_max`` the extreme singular values of ``A``.  Without
    filters this is the constant Rouche annulus; for a unitary ``A`` it is the
    per-angle filter bound.  :meth:`at` evaluates the filters at the point
    itself, :meth:`on_unit_circle` at ``e^{i theta}`` (the curves one plots
    against frequency).
    """

    def __init__(self, delays, sigma_min: float, sigma_max: float,
                 filter_gains=None, filter_poles=None):
        self.delays = np.asarray(delays, dtype=float)
        self.sigma_min = float(sigma_min)
        self.sigma_max = float(sigma_max)
        self.filter_gains = None if filter_gains is None else np.asarray(filter_gains, float)
        self.filter_poles = None if filter_poles is None else np.asarray(filter_poles, float)

    @property
    def is_constant(self) -> bool:
        return self.filter_gains is None or not np.any(self.filter_poles)

    def _line_gains(self, z):
        z = np.asarray(z, dtype=np.complex128)
        if self.filter_gains is None:
            return np.ones(z.shape + self.delays.shape)
        g, p = self.filter_gains, self.filter_poles
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.abs(g * (1 - p) / (1 - p / z[..., None]))

    def at(self, z):
        """``(lower, upper)`` evaluated at complex points ``z``."""
        a = self._line_gains(z)
        inv_m = 1.0 / self.delays
        lo = np.min((self.sigma_min * a) ** inv_m, axis=-1)
        hi = np.max((self.sigma_max * a) ** inv_m, axis=-1)
        return lo, np.maximum(hi, lo)

    def on_unit_circle(self, theta):
        return self.at(np.exp(1j * np.asarray(theta, dtype=float)))

    def constant(self):
        """Angle-independent ``(lower, upper)``; only defined when :attr:`is_constant`."""
        lo, hi = self.at(np.ones(1))
        return float(lo[0]), float(hi[0])

    def clip(self, z):
        """Radially move points outside the bounds onto the violated bound.

        Returns the clipped points and a mask of the points that moved.
        """
        z = np.asarray(z, dtype=np.complex128)
        lo, hi = self.at(z)
        mag = np.abs(z)
        target = np.clip(mag, lo, hi)
        moved = target != mag
        if not moved.any():
            return z, moved
        with np.errstate(invalid="ignore", divide="ignore"):
            unit = np.where(mag > 0, z / np.where(mag > 0, mag, 1.0), 1.0)
        return np.where(moved, target * unit, z), moved

    def contains(self, z, tol: float = 0.0):
        lo, hi = self.at(z)
        mag = np.abs(np.asarray(z))
        return (mag >= lo - tol) & (mag <= hi + tol)


def magnitude_bounds(sys) -> MagnitudeBounds:
    """Pole magnitude bounds of an FDN from the singular values of its feedback matrix."""
    from .linalg import singular_values

    sv = singular_values(sys.feedback)
    # unitary up to rounding: keep lossless bounds exactly at 1
    sv = np.where(np.abs(sv - 1) < 1e-12, 1.0, sv)
    if sys.filters is None:
        return MagnitudeBounds(sys.delays, sv[-1], sv[0])
    return MagnitudeBounds(sys.delays, sv[-1], sv[0],
                           [f.gain for f in sys.filters], [f.pole for f in sys.filters])
