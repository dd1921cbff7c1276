"""Fourier helpers for periodic samples on the uniform unit-interval grid.

Every loop quantity in this package lives on the grid theta_i = i/N with the
value at theta = 1 identified with theta = 0.  These helpers centralize the
FFT conventions (signed wavenumbers, Nyquist handling for real data) so the
rest of the package never touches raw mode indexing.
"""

from __future__ import annotations

import numpy as np
import scipy.signal


def modes(n: int) -> np.ndarray:
    """Signed integer wavenumbers in FFT order, Nyquist stored as -n/2."""
    return np.fft.fftfreq(n, d=1.0 / n)


def derivative(values: np.ndarray, order: int = 1) -> np.ndarray:
    """Spectral derivative along axis 0 for period-1 samples.

    Odd-order derivatives of real even-length data zero the Nyquist mode;
    keeping it would inject a spurious imaginary sawtooth.
    """
    values = np.asarray(values)
    n = values.shape[0]
    k = modes(n)
    factor = (2j * np.pi * k) ** order
    if order % 2 == 1 and n % 2 == 0:
        factor[n // 2] = 0.0
    shape = (n,) + (1,) * (values.ndim - 1)
    out = np.fft.ifft(np.fft.fft(values, axis=0) * factor.reshape(shape), axis=0)
    return out.real if np.isrealobj(values) else out


def trig_interp(values: np.ndarray, t: np.ndarray) -> np.ndarray:
    """Evaluate the trigonometric interpolant of axis-0 samples at points t.

    Returns shape t.shape + values.shape[1:].  The even-N Nyquist mode is
    evaluated as a cosine so real inputs give real outputs.
    """
    values = np.asarray(values)
    t_arr = np.asarray(t, dtype=float)
    scalar = t_arr.ndim == 0
    t_arr = np.atleast_1d(t_arr)
    n = values.shape[0]
    coef = np.fft.fft(values, axis=0) / n
    k = modes(n)
    basis = np.exp(2j * np.pi * np.outer(t_arr, k))
    if n % 2 == 0:
        basis[:, n // 2] = np.cos(np.pi * n * t_arr)
    out = np.tensordot(basis, coef, axes=(1, 0))
    out = out.real if np.isrealobj(values) else out
    return out[0] if scalar else out


def fractional_shift(values: np.ndarray, s: float) -> np.ndarray:
    """Samples of f(theta + s) on the same grid, via the shift theorem."""
    values = np.asarray(values)
    n = values.shape[0]
    k = modes(n)
    phase = np.exp(2j * np.pi * k * s)
    if n % 2 == 0:
        phase[n // 2] = np.cos(np.pi * n * s)
    shape = (n,) + (1,) * (values.ndim - 1)
    out = np.fft.ifft(np.fft.fft(values, axis=0) * phase.reshape(shape), axis=0)
    return out.real if np.isrealobj(values) else out


def resample(values: np.ndarray, m: int) -> np.ndarray:
    """Band-limited resampling of axis-0 periodic samples to m points."""
    values = np.asarray(values)
    if values.shape[0] == m:
        return values.copy()
    return scipy.signal.resample(values, m, axis=0)


def circulant(first_column: np.ndarray) -> np.ndarray:
    """Dense circulant matrix C[j, k] = c[(j - k) mod m]."""
    c = np.asarray(first_column)
    m = c.shape[0]
    j = np.arange(m)
    return c[(j[:, None] - j[None, :]) % m]


def periodic_mean(values: np.ndarray) -> np.ndarray:
    """Trapezoid-rule mean over one period (exact mean on a periodic grid)."""
    return np.mean(np.asarray(values), axis=0)
