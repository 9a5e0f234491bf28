"""QRS detection, fiducial adjustment, channel selection and RR smoothing."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .records import BeatAnnotations

MATERNAL_REFRACTORY_MS = 250.0
FETAL_REFRACTORY_MS = 150.0
ADJUST_HALF_WINDOW_MS = 30.0
SMI_THRESHOLD_BPM = 29.0
BCM_EXCLUDE = 0.4
BCM_WINDOW_MS = 50.0


def _mexhat_kernel(fs: float, sigma_s: float = 0.012) -> np.ndarray:
    """Mexican-hat matched filter emphasizing QRS-width deflections."""
    half = int(round(4 * sigma_s * fs))
    t = np.arange(-half, half + 1) / fs
    k = (1.0 - (t / sigma_s) ** 2) * np.exp(-(t**2) / (2 * sigma_s**2))
    return k / np.abs(k).sum()


def _local_maxima(x: np.ndarray) -> np.ndarray:
    return np.flatnonzero((x[1:-1] > x[:-2]) & (x[1:-1] >= x[2:])) + 1


def detect_qrs(channel: np.ndarray, fs: float,
               refractory_ms: float = MATERNAL_REFRACTORY_MS,
               threshold_factor: float = 0.6,
               search_back: bool = True) -> BeatAnnotations:
    """Energy-based QRS detector with refractory period and search-back.

    The channel is matched-filtered with a Mexican hat, squared and
    integrated over 100 ms; energy peaks are kept against an adaptive
    threshold (``threshold_factor`` x running median of the last 8 peak
    heights). Gaps longer than 1.66x the median RR are re-searched at half
    threshold. Detected peaks are then forced to a common polarity, picking
    the local extremum of the majority sign. A flat channel yields no beats.
    """
    x = np.asarray(channel, dtype=float)
    if x.size < 2 * fs:
        raise ValidationError("need at least 2 s of signal for QRS detection")
    if np.ptp(x) == 0.0:
        return BeatAnnotations(indices=np.array([], dtype=np.int64), fs=int(fs))

    refractory = int(round(refractory_ms * fs / 1000.0))
    emphasized = np.convolve(x - np.median(x), _mexhat_kernel(fs), mode="same")
    energy = emphasized**2
    win = max(1, int(round(0.100 * fs)))
    # sqrt brings the detection statistic back to the amplitude scale, so the
    # running-median threshold tolerates beat-to-beat amplitude modulation
    integrated = np.sqrt(np.convolve(energy, np.ones(win) / win, mode="same"))

    peaks = _local_maxima(integrated)
    if peaks.size == 0:
        return BeatAnnotations(indices=np.array([], dtype=np.int64), fs=int(fs))

    # bootstrap the running-median buffer from the strongest early peaks
    first = peaks[peaks < peaks[0] + int(5 * fs)]
    boot = np.sort(integrated[first])[-8:]
    recent = list(boot)
    accepted: list[int] = []
    for p in peaks:
        height = integrated[p]
        threshold = threshold_factor * float(np.median(recent))
        if height < threshold:
            continue
        if accepted and p - accepted[-1] < refractory:
            if height > integrated[accepted[-1]]:
                accepted[-1] = int(p)  # keep the larger peak in the refractory span
            continue
        accepted.append(int(p))
        recent.append(height)
        if len(recent) > 8:
            recent.pop(0)

    if search_back and len(accepted) >= 4:
        med_rr = float(np.median(np.diff(accepted)))
        threshold = threshold_factor * float(np.median(recent))
        # scan every overlong gap, including the stretches before the first
        # and after the last accepted beat
        bounds = [0, *accepted, x.size - 1]
        filled: list[int] = list(accepted)
        for i in range(len(bounds) - 1):
            anchor, gap_end = bounds[i], bounds[i + 1]
            while gap_end - anchor > 1.66 * med_rr:
                lo = anchor + (refractory if anchor in filled else 0)
                hi = gap_end - (refractory if gap_end in filled else 0)
                if hi <= lo:
                    break
                cand = peaks[(peaks >= lo) & (peaks <= hi)]
                cand = cand[integrated[cand] >= 0.5 * threshold]
                if cand.size == 0:
                    break
                best = int(cand[np.argmax(integrated[cand])])
                filled.append(best)
                anchor = best
        accepted = sorted(set(filled))

    if not accepted:
        return BeatAnnotations(indices=np.array([], dtype=np.int64), fs=int(fs))

    # polarity consistency: majority sign, relocate to that sign's extremum
    half = int(round(ADJUST_HALF_WINDOW_MS * fs / 1000.0))
    votes = 0
    for p in accepted:
        seg = x[max(0, p - half):p + half + 1]
        votes += 1 if seg.max() >= -seg.min() else -1
    sign = 1.0 if votes >= 0 else -1.0
    relocated = []
    for p in accepted:
        lo = max(0, p - half)
        seg = sign * x[lo:p + half + 1]
        relocated.append(lo + int(np.argmax(seg)))
    relocated = sorted(set(relocated))
    # relocation can squeeze neighbours inside the refractory span
    cleaned = [relocated[0]]
    for p in relocated[1:]:
        if p - cleaned[-1] >= refractory:
            cleaned.append(p)
        elif abs(x[p]) > abs(x[cleaned[-1]]):
            cleaned[-1] = p
    return BeatAnnotations(indices=np.array(cleaned, dtype=np.int64), fs=int(fs))


def adjust_peaks(channel: np.ndarray, anns: BeatAnnotations, fs: float,
                 half_window_ms: float = ADJUST_HALF_WINDOW_MS) -> BeatAnnotations:
    """Move each fiducial to the strongest |amplitude| within +/-30 ms."""
    x = np.asarray(channel, dtype=float)
    if anns.indices.size and anns.indices.max() >= x.size:
        raise ValidationError("annotations outside the channel")
    half = int(round(half_window_ms * fs / 1000.0))
    out = []
    for p in anns.indices:
        lo = max(0, int(p) - half)
        seg = np.abs(x[lo:int(p) + half + 1])
        out.append(lo + int(np.argmax(seg)))
    out = np.array(sorted(set(out)), dtype=np.int64)
    return BeatAnnotations(indices=out, fs=anns.fs)


def smoothing_indicator(anns: BeatAnnotations,
                        threshold_bpm: float = SMI_THRESHOLD_BPM,
                        inclusive: bool = True) -> int:
    """Count of large instantaneous heart-rate jumps (the SMI).

    The instantaneous rate of each RR interval is 60/RR; an event is a
    change of at least ``threshold_bpm`` between consecutive intervals
    (strictly greater when ``inclusive`` is False).
    """
    if len(anns) < 3:
        raise ValidationError("SMI needs at least 3 beats")
    hr = 60.0 / anns.rr
    jumps = np.abs(np.diff(hr))
    return int(np.sum(jumps >= threshold_bpm if inclusive else jumps > threshold_bpm))


@dataclass(frozen=True)
class ChannelSelectionReport:
    smi: tuple[float, ...]
    bcm: tuple[float, ...]
    chosen: int | None

    def __post_init__(self):
        if self.chosen is not None and self.bcm[self.chosen] >= BCM_EXCLUDE:
            raise ValidationError("chosen candidate violates the BCM guard")


def beat_match_fraction(candidate: BeatAnnotations, reference: BeatAnnotations,
                        window_ms: float = BCM_WINDOW_MS) -> float:
    """Fraction of candidate beats matching a reference beat within 50 ms."""
    if len(candidate) == 0:
        return 0.0
    window = window_ms * candidate.fs / 1000.0
    ref = reference.indices
    if ref.size == 0:
        return 0.0
    pos = np.searchsorted(ref, candidate.indices)
    left = ref[np.clip(pos - 1, 0, ref.size - 1)]
    right = ref[np.clip(pos, 0, ref.size - 1)]
    dist = np.minimum(np.abs(candidate.indices - left),
                      np.abs(candidate.indices - right))
    return float(np.mean(dist <= window))


def select_channel(candidates: list[BeatAnnotations], mqrs: BeatAnnotations,
                   window_ms: float = BCM_WINDOW_MS) -> ChannelSelectionReport:
    """Pick the most regular fetal series that is not a maternal echo.

    Candidates matching the maternal reference on >= 40% of their beats are
    excluded; the survivor with the lowest SMI wins (first on ties). All
    excluded leaves chosen = None.
    """
    if not candidates:
        raise ValidationError("at least one candidate required")
    smi, bcm = [], []
    for cand in candidates:
        bcm.append(beat_match_fraction(cand, mqrs, window_ms))
        try:
            smi.append(float(smoothing_indicator(cand)))
        except ValidationError:
            smi.append(np.inf)
    effective = [np.inf if b >= BCM_EXCLUDE else s for s, b in zip(smi, bcm)]
    chosen = int(np.argmin(effective)) if np.isfinite(min(effective)) else None
    return ChannelSelectionReport(smi=tuple(smi), bcm=tuple(bcm), chosen=chosen)


def smooth_rr(anns: BeatAnnotations,
              min_frr: float = 0.35, max_frr: float = 0.5,
              ) -> tuple[BeatAnnotations, np.ndarray]:
    """Remove extra beats and fill missed ones using the running median RR.

    Left-to-right sweep: at each beat the median of the past 5 RR intervals
    predicts the next one. When that median is outside the plausible fetal
    range (min_frr..max_frr seconds) nothing is touched. An extra beat
    (forward RR < 0.7 median with an ordinary backward RR) is deleted; a
    missed beat (forward RR > 1.75 median, backward RR > 0.7 median) is
    filled in one median after the current beat, then re-evaluated.

    Returns the smoothed annotations and a mask marking inserted beats.
    """
    if len(anns) < 6:
        raise ValidationError("RR smoothing needs at least 6 beats")
    fs = anns.fs
    beats = [int(i) for i in anns.indices]
    inserted = [False] * len(beats)
    k = 5
    while k < len(beats) - 1:
        med = float(np.median(np.diff(beats[k - 5:k + 1])))
        if min_frr * fs < med < max_frr * fs:
            d_plus = beats[k + 1] - beats[k]
            d_minus = beats[k] - beats[k - 1]
            if d_plus < 0.7 * med and d_minus < 1.2 * med:
                del beats[k + 1]
                del inserted[k + 1]
                continue
            if d_plus > 1.75 * med and d_minus > 0.7 * med:
                beats.insert(k + 1, int(round(beats[k] + med)))
                inserted.insert(k + 1, True)
                continue
        k += 1
    return (BeatAnnotations(indices=np.array(beats, dtype=np.int64), fs=fs),
            np.array(inserted, dtype=bool))
