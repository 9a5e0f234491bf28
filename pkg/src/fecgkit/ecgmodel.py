"""Gaussian dynamical ECG model.

An ECG cycle is described in a phase coordinate theta in [-pi, pi), zero at
the R-peak, as a sum of Gaussian kernels alpha_i * exp(-(theta-xi_i)^2 / (2 b_i^2)).
The module covers phase assignment from R-peaks, phase-wrapped template
averaging, kernel fitting and waveform synthesis.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.optimize import least_squares

from .errors import NumericalError, ValidationError
from .records import BeatAnnotations

TEMPLATE_BINS = 250
DEFAULT_KERNELS = 7
#: lower width bound; narrower kernels produce spikes in model-based filters
MIN_KERNEL_WIDTH = 2.0 * np.pi / TEMPLATE_BINS
FIT_JITTER = 0.05 * np.pi
FIT_MAX_RESTARTS = 100
FIT_TARGET_NRMS = 0.05


def wrap_phase(theta: np.ndarray | float) -> np.ndarray | float:
    """Wrap angles to [-pi, pi)."""
    return np.mod(np.asarray(theta) + np.pi, 2.0 * np.pi) - np.pi


@dataclass(frozen=True)
class GaussianKernel:
    """One kernel: peak amplitude (mV), width and centre (rad)."""

    alpha: float
    b: float
    xi: float

    def __post_init__(self):
        if self.b <= 0:
            raise ValidationError(f"kernel width must be positive, got {self.b}")
        object.__setattr__(self, "xi", float(wrap_phase(self.xi)))


@dataclass(frozen=True)
class CycleModel:
    """Ordered kernel set for one lead or VCG axis, plus angular velocity.

    The default seven kernels split an ECG cycle as two for the P wave,
    one each for Q, R and S, and two for the T wave.
    """

    kernels: tuple[GaussianKernel, ...]
    omega: float | None = None

    def __post_init__(self):
        kernels = tuple(self.kernels)
        if not kernels:
            raise ValidationError("a cycle model needs at least one kernel")
        object.__setattr__(self, "kernels", kernels)

    @property
    def alphas(self) -> np.ndarray:
        return np.array([k.alpha for k in self.kernels])

    @property
    def widths(self) -> np.ndarray:
        return np.array([k.b for k in self.kernels])

    @property
    def centers(self) -> np.ndarray:
        return np.array([k.xi for k in self.kernels])

    def scaled(self, gain: float) -> "CycleModel":
        return CycleModel(
            kernels=tuple(replace(k, alpha=k.alpha * gain) for k in self.kernels),
            omega=self.omega,
        )

    def to_json(self) -> str:
        return json.dumps({
            "kernels": [{"alpha": k.alpha, "b": k.b, "xi": k.xi} for k in self.kernels],
            "omega": self.omega,
        })

    @staticmethod
    def from_json(text: str) -> "CycleModel":
        obj = json.loads(text)
        kernels = tuple(
            GaussianKernel(alpha=k["alpha"], b=k["b"], xi=k["xi"]) for k in obj["kernels"]
        )
        return CycleModel(kernels=kernels, omega=obj.get("omega"))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json() + "\n", encoding="utf-8")

    @staticmethod
    def load(path: str | Path) -> "CycleModel":
        return CycleModel.from_json(Path(path).read_text(encoding="utf-8"))


@dataclass(frozen=True)
class PhaseSeries:
    """Saw-tooth per-sample phase, zero exactly at each anchor sample."""

    phase: np.ndarray
    anchors: BeatAnnotations


@dataclass(frozen=True)
class TemplateCycle:
    """Phase-binned mean cycle with per-bin spread."""

    bins: np.ndarray
    stddev: np.ndarray
    cycles_used: int
    fs: int

    def __post_init__(self):
        if self.cycles_used < 1:
            raise ValidationError("a template needs at least one accepted cycle")

    @property
    def n_bins(self) -> int:
        return int(self.bins.size)

    @property
    def grid(self) -> np.ndarray:
        """Bin-centre phases over [-pi, pi)."""
        n = self.n_bins
        return -np.pi + (np.arange(n) + 0.5) * (2.0 * np.pi / n)


def assign_phase(anns: BeatAnnotations, n_samples: int) -> PhaseSeries:
    """Linear phase between successive R-peaks, wrapped to [-pi, pi).

    Phase is exactly zero at each anchor and advances by 2*pi per RR
    interval; samples before the first and after the last anchor are
    extrapolated with the adjacent RR.
    """
    idx = anns.indices
    if idx.size < 2:
        raise ValidationError("phase assignment needs at least 2 annotations")
    n = np.arange(n_samples, dtype=float)
    # Unwrapped phase: 2*pi * (k + fraction of interval k); interp is linear
    # through the anchor grid, with linear extrapolation from the edge RRs.
    anchor_phase = 2.0 * np.pi * np.arange(idx.size)
    u = np.interp(n, idx.astype(float), anchor_phase)
    first_rr = float(idx[1] - idx[0])
    last_rr = float(idx[-1] - idx[-2])
    before = n < idx[0]
    after = n > idx[-1]
    u[before] = 2.0 * np.pi * (n[before] - idx[0]) / first_rr
    u[after] = anchor_phase[-1] + 2.0 * np.pi * (n[after] - idx[-1]) / last_rr
    phase = wrap_phase(u)
    phase[idx[(idx >= 0) & (idx < n_samples)]] = 0.0
    return PhaseSeries(phase=phase, anchors=anns)


def _pearson(x: np.ndarray, y: np.ndarray) -> float:
    xc = x - x.mean()
    yc = y - y.mean()
    denom = float(np.sqrt((xc @ xc) * (yc @ yc)))
    if denom == 0.0:
        return 0.0
    return float(xc @ yc) / denom


def extract_cycles(channel: np.ndarray, anns: BeatAnnotations,
                   bins: int = TEMPLATE_BINS) -> np.ndarray:
    """Warp each interior cycle onto the phase grid (one row per cycle).

    A cycle spans phase [-pi, pi) around an anchor: from the midpoint with
    the previous R-peak to the midpoint with the next one, each half warped
    linearly.
    """
    idx = anns.indices
    if idx.size < 3:
        raise ValidationError("cycle extraction needs at least 3 annotations")
    grid = -np.pi + (np.arange(bins) + 0.5) * (2.0 * np.pi / bins)
    rows = []
    x = np.asarray(channel, dtype=float)
    for k in range(1, idx.size - 1):
        left = (idx[k - 1] + idx[k]) / 2.0
        right = (idx[k] + idx[k + 1]) / 2.0
        # phase of sample n: -pi..0 on [left, idx[k]], 0..pi on [idx[k], right]
        lo, hi = int(np.ceil(left)), int(np.floor(right))
        if hi >= x.size or lo < 0 or hi <= lo:
            continue
        n = np.arange(lo, hi + 1, dtype=float)
        ph = np.where(
            n <= idx[k],
            -np.pi + np.pi * (n - left) / (idx[k] - left),
            np.pi * (n - idx[k]) / (right - idx[k]),
        )
        rows.append(np.interp(grid, ph, x[lo:hi + 1]))
    if not rows:
        raise ValidationError("no complete cycles inside the signal")
    return np.vstack(rows)


def build_template(channel: np.ndarray, anns: BeatAnnotations,
                   bins: int = TEMPLATE_BINS,
                   reject_below: float = 0.8) -> TemplateCycle:
    """Average phase-warped cycles, rejecting outliers by correlation.

    Each incoming cycle is compared with the running template and dropped
    when the Pearson correlation is <= ``reject_below``; accepted cycles
    update the running mean.
    """
    cycles = extract_cycles(channel, anns, bins)
    accepted = [cycles[0]]
    template = cycles[0].copy()
    for cyc in cycles[1:]:
        if _pearson(template, cyc) > reject_below:
            accepted.append(cyc)
            template = np.mean(accepted, axis=0)
    if not accepted:
        raise ValidationError("all cycles rejected while building the template")
    stack = np.vstack(accepted)
    return TemplateCycle(
        bins=stack.mean(axis=0),
        stddev=stack.std(axis=0),
        cycles_used=stack.shape[0],
        fs=anns.fs,
    )


def gaussian_sum(theta: np.ndarray, alphas: np.ndarray, widths: np.ndarray,
                 centers: np.ndarray) -> np.ndarray:
    """Closed-form cycle amplitude z(theta) = sum_i alpha_i exp(-dth_i^2/(2 b_i^2))."""
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    dth = wrap_phase(theta[:, None] - np.asarray(centers)[None, :])
    return (np.asarray(alphas)[None, :]
            * np.exp(-dth**2 / (2.0 * np.asarray(widths)[None, :] ** 2))).sum(axis=1)


def synthesize_cycle(model: CycleModel, phase: np.ndarray) -> np.ndarray:
    """Evaluate the model waveform on an arbitrary phase grid."""
    return gaussian_sum(phase, model.alphas, model.widths, model.centers)


def integrate_cycle_euler(model: CycleModel, omega: float, fs: float,
                          n_steps: int, z0: float | None = None,
                          theta0: float = -np.pi) -> np.ndarray:
    """Forward-Euler integration of the amplitude ODE; O(delta) vs closed form.

    z' = -sum_i (alpha_i * omega / b_i^2) * dth_i * exp(-dth_i^2 / (2 b_i^2))
    """
    delta = 1.0 / fs
    alphas, widths, centers = model.alphas, model.widths, model.centers
    theta = theta0
    z = float(gaussian_sum(np.array([theta0]), alphas, widths, centers)[0]) \
        if z0 is None else float(z0)
    out = np.empty(n_steps)
    for k in range(n_steps):
        out[k] = z
        dth = wrap_phase(theta - centers)
        z -= float(np.sum(delta * alphas * omega / widths**2
                          * dth * np.exp(-dth**2 / (2.0 * widths**2))))
        theta = float(wrap_phase(theta + omega * delta))
    return out


def _detect_fiducials(template: np.ndarray, grid: np.ndarray, n_kernels: int) -> np.ndarray:
    """Initial kernel centres from the template's turning points.

    For the standard seven kernels: the R peak is the largest |amplitude|,
    Q/S the adjacent opposite-sign extrema, the P and T extrema each get a
    straddling pair. Other kernel counts fall back to the most prominent
    extrema, padded with evenly spaced centres.
    """
    n = template.size
    r_idx = int(np.argmax(np.abs(template)))
    if n_kernels == 7:
        qs_hw = max(2, int(0.06 * n))  # QRS neighborhood, ~6% of the cycle
        lo = max(0, r_idx - qs_hw)
        hi = min(n, r_idx + qs_hw + 1)
        sign = np.sign(template[r_idx]) or 1.0
        q_idx = lo + int(np.argmin(sign * template[lo:r_idx])) if r_idx > lo else lo
        s_idx = r_idx + 1 + int(np.argmin(sign * template[r_idx + 1:hi])) \
            if r_idx + 1 < hi else min(n - 1, r_idx + 1)
        # P: extremum in the first 60% before Q; T: extremum after S
        p_stop = max(1, q_idx - qs_hw)
        p_idx = int(np.argmax(np.abs(template[:p_stop]))) if p_stop > 1 else 0
        t_start = min(n - 2, s_idx + qs_hw)
        t_idx = t_start + int(np.argmax(np.abs(template[t_start:])))
        dp = 0.1 * np.pi
        centers = np.array([
            grid[p_idx] - dp / 2, grid[p_idx] + dp / 2,
            grid[q_idx], grid[r_idx], grid[s_idx],
            grid[t_idx] - dp, grid[t_idx] + dp,
        ])
        return np.sort(wrap_phase(centers))
    # generic fallback: prominent local extrema of |template|
    mag = np.abs(template)
    ext = [i for i in range(1, n - 1) if mag[i] >= mag[i - 1] and mag[i] >= mag[i + 1]]
    ext.sort(key=lambda i: -mag[i])
    centers = [grid[i] for i in ext[:n_kernels]]
    while len(centers) < n_kernels:
        centers.append(grid[(len(centers) * n) // n_kernels])
    return np.sort(wrap_phase(np.array(centers[:n_kernels])))


def fit_gaussians(template: TemplateCycle, n_kernels: int = DEFAULT_KERNELS,
                  rng: np.random.Generator | None = None,
                  max_restarts: int = FIT_MAX_RESTARTS,
                  target_nrms: float = FIT_TARGET_NRMS,
                  min_width: float = MIN_KERNEL_WIDTH) -> tuple[CycleModel, float]:
    """Fit kernels to a template by restarted nonlinear least squares.

    Centres are initialized near detected turning points and re-jittered by
    up to +/-0.05*pi on every restart; the best kernel set over all restarts
    is returned together with its normalized RMS (RMS error over the
    template peak-to-peak range). Restarting stops once the error drops
    under ``target_nrms``.
    """
    rng = rng or np.random.default_rng(0)
    y = np.asarray(template.bins, dtype=float)
    grid = template.grid
    span = float(y.max() - y.min())
    if span == 0.0:
        raise ValidationError("flat template has no identifiable extrema")

    base_centers = _detect_fiducials(y, grid, n_kernels)
    base_widths = np.full(n_kernels, 0.15)
    if n_kernels == 7:
        base_widths = np.array([0.2, 0.2, 0.08, 0.08, 0.08, 0.25, 0.25])

    def residuals(p: np.ndarray) -> np.ndarray:
        al, wd, ce = np.split(p, 3)
        return gaussian_sum(grid, al, wd, ce) - y

    def jacobian(p: np.ndarray) -> np.ndarray:
        al, wd, ce = np.split(p, 3)
        dth = wrap_phase(grid[:, None] - ce[None, :])
        gauss = np.exp(-dth**2 / (2.0 * wd[None, :] ** 2))
        d_alpha = gauss
        d_width = al[None, :] * dth**2 / wd[None, :] ** 3 * gauss
        d_center = al[None, :] * dth / wd[None, :] ** 2 * gauss
        return np.hstack([d_alpha, d_width, d_center])

    lb = np.concatenate([np.full(n_kernels, -np.inf),
                         np.full(n_kernels, min_width),
                         np.full(n_kernels, -2.0 * np.pi)])
    ub = np.concatenate([np.full(n_kernels, np.inf),
                         np.full(n_kernels, np.pi),
                         np.full(n_kernels, 2.0 * np.pi)])

    best_p, best_nrms = None, np.inf
    for trial in range(max_restarts):
        jitter = 0.0 if trial == 0 else rng.uniform(-FIT_JITTER, FIT_JITTER, n_kernels)
        centers0 = base_centers + jitter
        amps0 = np.interp(centers0, grid, y)
        widths0 = np.maximum(base_widths * rng.uniform(0.7, 1.3, n_kernels)
                             if trial else base_widths, min_width)
        p0 = np.concatenate([amps0, widths0, centers0])
        try:
            sol = least_squares(residuals, p0, jac=jacobian, bounds=(lb, ub),
                                method="trf", max_nfev=60)
        except Exception:
            continue
        nrms = float(np.sqrt(np.mean(sol.fun**2))) / span
        if nrms < best_nrms:
            best_nrms, best_p = nrms, sol.x
        if best_nrms < target_nrms:
            break
    if best_p is None or best_nrms >= 1.0:
        raise NumericalError("Gaussian fitting failed to converge on this template")

    al, wd, ce = np.split(best_p, 3)
    order = np.argsort(wrap_phase(ce))
    kernels = tuple(
        GaussianKernel(alpha=float(al[i]), b=float(wd[i]), xi=float(wrap_phase(ce[i])))
        for i in order
    )
    return CycleModel(kernels=kernels), best_nrms


def beat_sample_counts(rr: np.ndarray, fs: float) -> np.ndarray:
    """Samples spent in each beat: round(RR * fs)."""
    counts = np.round(np.asarray(rr, dtype=float) * fs).astype(int)
    if np.any(counts <= 0):
        raise ValidationError("every RR interval must span at least one sample")
    return counts


def generate_vcg(models: tuple[CycleModel, CycleModel, CycleModel],
                 rr_series: np.ndarray, fs: float,
                 labels: np.ndarray | None = None,
                 ectopic_models: tuple[CycleModel, CycleModel, CycleModel] | None = None,
                 ) -> tuple[np.ndarray, np.ndarray]:
    """Three-axis dipole trajectory for a beat sequence.

    Phase runs 0..2*pi over each beat (piecewise-constant angular velocity
    2*pi/RR), continuous across beats, so R-peaks land at the cumulative
    sums of round(RR*fs). ``labels`` may mark beats as ectopic (True), which
    are rendered with ``ectopic_models``.

    Returns (trajectory 3xN, R-peak sample indices).
    """
    rr = np.asarray(rr_series, dtype=float)
    if np.any(rr <= 0):
        raise ValidationError("RR intervals must be positive")
    if len(models) != 3:
        raise ValidationError("three axis models required")
    counts = beat_sample_counts(rr, fs)
    n_total = int(counts.sum())
    out = np.zeros((3, n_total))
    peaks = np.concatenate([[0], np.cumsum(counts)[:-1]])
    if labels is None:
        labels = np.zeros(rr.size, dtype=bool)
    start = 0
    for beat, n_b in enumerate(counts):
        phase = wrap_phase(2.0 * np.pi * np.arange(n_b) / n_b)
        beat_models = ectopic_models if (labels[beat] and ectopic_models) else models
        for ax in range(3):
            out[ax, start:start + n_b] = synthesize_cycle(beat_models[ax], phase)
        start += n_b
    return out, peaks
