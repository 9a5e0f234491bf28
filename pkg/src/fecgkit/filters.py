"""Zero-phase filtering, mains-notch decision logic and tanh normalization.

All filters run forward-backward so that in-band peaks are not displaced.
Initial conditions are chosen with Gustafsson's method, which makes the
forward-backward and backward-forward passes agree exactly; simple edge
padding breaks that symmetry near the boundaries.
"""

from __future__ import annotations

import numpy as np
from scipy import signal as sps

from .errors import ValidationError
from .records import SignalRecord

LOWPASS_ORDER = 5
HIGHPASS_ORDER = 3
MAINS_CANDIDATES = (50.0, 60.0)


def _zero_phase(b: np.ndarray, a: np.ndarray, x: np.ndarray) -> np.ndarray:
    return sps.filtfilt(b, a, x, method="gust")


def _butter_zero_phase(x: np.ndarray, fs: float, cutoff: float, order: int,
                       btype: str) -> np.ndarray:
    if not 0 < cutoff < fs / 2:
        raise ValidationError(f"{btype} cutoff {cutoff} Hz outside (0, fs/2)")
    x = np.asarray(x, dtype=float)
    if order <= 6:
        b, a = sps.butter(order, cutoff / (fs / 2), btype=btype)
        return _zero_phase(b, a, x)
    # high orders are ill-conditioned in (b, a) form; fall back to sections
    sos = sps.butter(order, cutoff / (fs / 2), btype=btype, output="sos")
    return sps.sosfiltfilt(sos, x)


def highpass_zero_phase(x: np.ndarray, fs: float, cutoff: float,
                        order: int = HIGHPASS_ORDER) -> np.ndarray:
    return _butter_zero_phase(x, fs, cutoff, order, "high")


def lowpass_zero_phase(x: np.ndarray, fs: float, cutoff: float,
                       order: int = LOWPASS_ORDER) -> np.ndarray:
    return _butter_zero_phase(x, fs, cutoff, order, "low")


def bandpass_zero_phase(record: SignalRecord, fb: float, fh: float,
                        lp_order: int = LOWPASS_ORDER,
                        hp_order: int = HIGHPASS_ORDER) -> SignalRecord:
    """Cascade a high-pass at ``fb`` and a low-pass at ``fh``, both zero phase.

    Requires 0 < fb < fh < fs/2.
    """
    if not 0 < fb < fh:
        raise ValidationError(f"cutoffs must satisfy 0 < fb < fh, got ({fb}, {fh})")
    if fh >= record.fs / 2:
        raise ValidationError(f"fh={fh} Hz is at or above Nyquist ({record.fs / 2} Hz)")
    out = np.empty_like(record.samples)
    for i, ch in enumerate(record.samples):
        out[i] = lowpass_zero_phase(
            highpass_zero_phase(ch, record.fs, fb, hp_order), record.fs, fh, lp_order
        )
    return record.with_samples(out)


def detect_mains(x: np.ndarray, fs: float,
                 candidates=MAINS_CANDIDATES,
                 search_hw: float = 4.0,
                 accept_hw: float = 1.0) -> float | None:
    """Return the mains frequency to notch out, or None.

    For each candidate the power spectrum peak inside candidate +/- search_hw
    is located; the notch is warranted only when that peak falls within
    candidate +/- accept_hw.
    """
    x = np.asarray(x, dtype=float)
    freqs, psd = sps.periodogram(x, fs=fs)
    for f0 in candidates:
        band = (freqs >= f0 - search_hw) & (freqs <= f0 + search_hw)
        if not band.any() or psd[band].max() <= 0:
            continue
        peak = freqs[band][np.argmax(psd[band])]
        if abs(peak - f0) <= accept_hw:
            return float(f0)
    return None


def notch_zero_phase(x: np.ndarray, fs: float, f0: float,
                     bandwidth: float = 1.0) -> np.ndarray:
    """Second-order IIR notch at f0 (-3 dB width ``bandwidth``), zero phase."""
    b, a = sps.iirnotch(f0, f0 / bandwidth, fs=fs)
    return _zero_phase(b, a, np.asarray(x, dtype=float))


def notch_if_needed(x: np.ndarray, fs: float) -> tuple[np.ndarray, bool, float | None]:
    """Notch out 50/60 Hz interference when the spectral peak pins it down.

    Returns (signal, applied, mains). Requires fs > 130 so that both
    candidate bands sit below Nyquist.
    """
    if fs <= 130:
        raise ValidationError(f"fs={fs} too low to assess both 50 and 60 Hz bands")
    x = np.asarray(x, dtype=float)
    mains = detect_mains(x, fs)
    if mains is None:
        return x, False, None
    return notch_zero_phase(x, fs, mains), True, mains


def normalize(x: np.ndarray, fs: int,
              window: tuple[float, float] = (1.0, 5.0)) -> np.ndarray:
    """Range-scale, centre and tanh-compress a channel.

    Scale and mean come from the ``window`` (seconds) so transient artifacts
    outside it cannot inflate the range; tanh keeps the output in (-1, 1)
    while leaving a centred signal in [-0.5, 0.5] nearly untouched.
    """
    x = np.asarray(x, dtype=float)
    lo, hi = int(round(window[0] * fs)), int(round(window[1] * fs))
    if x.size < hi:
        raise ValidationError(f"need at least {hi} samples ({window[1]} s) to normalize")
    seg = x[lo:hi]
    span = float(seg.max() - seg.min())
    if span == 0.0:
        raise ValidationError("flat signal in the normalization window (zero range)")
    return np.tanh((x - seg.mean()) / span)


def normalize_record(record: SignalRecord,
                     window: tuple[float, float] = (1.0, 5.0)) -> SignalRecord:
    out = np.vstack([normalize(ch, record.fs, window) for ch in record.samples])
    return record.with_samples(out)
