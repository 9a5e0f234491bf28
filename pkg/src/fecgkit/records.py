"""Signal and annotation containers plus their on-disk formats.

A signal file is CSV: line 1 is ``# fs=<int>``, line 2 the comma-separated
channel labels, then one row per sample with one column per channel.
An annotation file is plain text with one ascending 0-based sample index
per line.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ValidationError


@dataclass(frozen=True)
class SignalRecord:
    """Multichannel sampled signal, ``samples`` shaped (channels, N), in mV."""

    samples: np.ndarray
    fs: int
    labels: tuple[str, ...] = ()

    def __post_init__(self):
        samples = np.atleast_2d(np.asarray(self.samples, dtype=float))
        object.__setattr__(self, "samples", samples)
        if samples.ndim != 2 or samples.shape[1] < 1:
            raise ValidationError("samples must be a channels x N matrix with N >= 1")
        if not (isinstance(self.fs, (int, np.integer)) and self.fs > 0):
            raise ValidationError(f"fs must be a positive integer, got {self.fs!r}")
        labels = tuple(self.labels) if self.labels else tuple(
            f"ch{i + 1}" for i in range(samples.shape[0])
        )
        if len(labels) != samples.shape[0]:
            raise ValidationError("one label per channel required")
        if len(set(labels)) != len(labels):
            raise ValidationError("channel labels must be unique")
        object.__setattr__(self, "labels", labels)

    @property
    def n_channels(self) -> int:
        return self.samples.shape[0]

    @property
    def n_samples(self) -> int:
        return self.samples.shape[1]

    @property
    def duration(self) -> float:
        return self.n_samples / self.fs

    def channel(self, index: int) -> np.ndarray:
        return self.samples[index]

    def with_samples(self, samples: np.ndarray) -> "SignalRecord":
        return SignalRecord(samples=samples, fs=self.fs, labels=self.labels)


@dataclass(frozen=True)
class BeatAnnotations:
    """Strictly increasing 0-based sample indices of R-peaks for one source."""

    indices: np.ndarray
    fs: int

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=np.int64).ravel()
        object.__setattr__(self, "indices", idx)
        if self.fs <= 0:
            raise ValidationError("fs must be positive")
        if idx.size and idx.min() < 0:
            raise ValidationError("annotation indices must be nonnegative")
        if idx.size > 1 and np.any(np.diff(idx) <= 0):
            raise ValidationError("annotation indices must be strictly increasing")

    def __len__(self) -> int:
        return int(self.indices.size)

    @property
    def times(self) -> np.ndarray:
        """Annotation instants in seconds."""
        return self.indices / self.fs

    @property
    def rr(self) -> np.ndarray:
        """RR intervals in seconds (length len-1)."""
        return np.diff(self.indices) / self.fs

    def check_bounds(self, n_samples: int) -> "BeatAnnotations":
        if self.indices.size and self.indices.max() >= n_samples:
            raise ValidationError(
                f"annotation {self.indices.max()} outside signal of {n_samples} samples"
            )
        return self


@dataclass(frozen=True)
class SpectralEstimate:
    """One-sided power spectral density over [0, fs/2]."""

    frequencies: np.ndarray
    power: np.ndarray
    method: str = "periodogram"

    def __post_init__(self):
        f = np.asarray(self.frequencies, dtype=float)
        p = np.asarray(self.power, dtype=float)
        object.__setattr__(self, "frequencies", f)
        object.__setattr__(self, "power", p)
        if f.shape != p.shape:
            raise ValidationError("frequency and power grids must have the same length")
        if np.any(p < 0):
            raise ValidationError("power density must be nonnegative")

    def band_power(self, f_lo: float, f_hi: float) -> float:
        """Trapezoidal integral of the density over [f_lo, f_hi]."""
        mask = (self.frequencies >= f_lo) & (self.frequencies <= f_hi)
        if mask.sum() < 2:
            return 0.0
        return float(np.trapezoid(self.power[mask], self.frequencies[mask]))


def _format_value(v: float) -> str:
    """Up to 9 significant digits, no trailing exponent noise."""
    return format(v, ".9g")


def write_signal(path: str | Path, record: SignalRecord) -> None:
    path = Path(path)
    lines = [f"# fs={record.fs}", ",".join(record.labels)]
    for row in record.samples.T:
        lines.append(",".join(_format_value(v) for v in row))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")


def read_signal(path: str | Path) -> SignalRecord:
    path = Path(path)
    with path.open("r", encoding="utf-8") as fh:
        header = fh.readline().strip()
        if not header.startswith("# fs="):
            raise ValidationError(f"{path}: missing '# fs=<int>' header line")
        try:
            fs = int(header.split("=", 1)[1])
        except ValueError as exc:
            raise ValidationError(f"{path}: bad sampling rate in header") from exc
        labels = tuple(s.strip() for s in fh.readline().strip().split(","))
        data = np.loadtxt(fh, delimiter=",", ndmin=2)
    return SignalRecord(samples=data.T, fs=fs, labels=labels)


def write_annotations(path: str | Path, anns: BeatAnnotations) -> None:
    Path(path).write_text(
        "\n".join(str(int(i)) for i in anns.indices) + "\n",
        encoding="utf-8",
        newline="\n",
    )


def read_annotations(path: str | Path, fs: int) -> BeatAnnotations:
    text = Path(path).read_text(encoding="utf-8").split()
    indices = np.array([int(tok) for tok in text], dtype=np.int64)
    return BeatAnnotations(indices=indices, fs=fs)
