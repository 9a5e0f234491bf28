"""Burg autoregressive estimation and power spectra."""

from __future__ import annotations

import numpy as np
from scipy import signal as sps

from .errors import ValidationError
from .records import SpectralEstimate

BURG_SQI_ORDER = 11
NOISE_AR_ORDER = 12


def ar_fit_burg(x: np.ndarray, order: int) -> tuple[np.ndarray, float]:
    """Fit an AR model with Burg's method.

    Returns (a, sigma2) where ``a`` is the length order+1 polynomial
    [1, a1, ..., ap] of the prediction-error filter A(z); the all-pole model
    is sigma2 / |A(z)|^2. Burg keeps every reflection coefficient inside the
    unit interval, so the fitted poles are stable by construction.
    """
    x = np.asarray(x, dtype=float).ravel()
    if order <= 0:
        raise ValidationError("AR order must be positive")
    if x.size <= 2 * order:
        raise ValidationError(f"need more than {2 * order} samples for order {order}")

    f = x.copy()  # forward prediction errors
    b = x.copy()  # backward prediction errors
    a = np.ones(1)
    sigma2 = float(np.mean(x**2))
    for m in range(order):
        fm = f[m + 1:]
        bm = b[m:-1]
        denom = float(fm @ fm + bm @ bm)
        if denom == 0.0:
            raise ValidationError("degenerate (zero-energy) residual during Burg recursion")
        k = -2.0 * float(fm @ bm) / denom
        a = np.concatenate([a, [0.0]]) + k * np.concatenate([[0.0], a[::-1]])
        f_new = fm + k * bm
        b_new = bm + k * fm
        f[m + 1:] = f_new
        b[m + 1:] = b_new
        sigma2 *= 1.0 - k * k
    return a, sigma2


def ar_poles(a: np.ndarray) -> np.ndarray:
    """Poles of the all-pole model defined by polynomial ``a``."""
    return np.roots(np.asarray(a, dtype=float))


def ar_from_poles(poles: np.ndarray) -> np.ndarray:
    """Polynomial [1, a1, ..., ap] whose roots are ``poles`` (made real)."""
    return np.real(np.poly(np.asarray(poles)))


def ar_spectrum(a: np.ndarray, sigma2: float, fs: float,
                nfreq: int = 1024) -> SpectralEstimate:
    """One-sided PSD of the AR model on a uniform grid over [0, fs/2]."""
    freqs = np.linspace(0.0, fs / 2.0, nfreq)
    w, h = sps.freqz(1.0, a, worN=freqs, fs=fs)
    power = sigma2 * np.abs(h) ** 2 / fs
    return SpectralEstimate(frequencies=freqs, power=power, method="burg")


def power_spectrum(x: np.ndarray, fs: float, method: str = "burg",
                   order: int = BURG_SQI_ORDER, nfreq: int = 1024) -> SpectralEstimate:
    """Power spectrum over [0, fs/2] via Burg AR modelling or the periodogram."""
    x = np.asarray(x, dtype=float).ravel()
    if x.size < 32:
        raise ValidationError("need at least 32 samples for a spectrum")
    if not np.any(x != 0.0):
        raise ValidationError("all-zero input has no defined normalized spectrum")
    if method == "burg":
        a, sigma2 = ar_fit_burg(x - x.mean(), order)
        return ar_spectrum(a, sigma2, fs, nfreq)
    if method == "periodogram":
        freqs, psd = sps.periodogram(x, fs=fs)
        return SpectralEstimate(frequencies=freqs, power=psd, method="periodogram")
    raise ValidationError(f"unknown spectrum method {method!r}")
