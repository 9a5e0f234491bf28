"""Maternal-ECG cancellation in the observation domain.

Template subtraction removes an averaged maternal cycle around every
maternal R-peak; the adaptive filters (LMS, RLS, echo state network)
instead regress a reference channel onto the target and subtract the
prediction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NumericalError, ValidationError
from .records import BeatAnnotations

TS_VARIANTS = ("TS", "TSc", "TSm", "TSlp", "TSpca")
#: cycle window around the R-peak (s): P wave, QRS, T wave
P_WINDOW_S = 0.20
QRS_WINDOW_S = 0.10
T_WINDOW_S = 0.40
DEFAULT_CYCLES = 20
TSLP_CYCLES = 9
DEFAULT_PCS = 2
TEMPLATE_REJECT = 0.8


def _window_layout(fs: float) -> tuple[int, int, int, int]:
    """Samples before/after R and the P/QRS boundary offsets."""
    n_p = int(round(P_WINDOW_S * fs))
    n_qrs = int(round(QRS_WINDOW_S * fs))
    n_t = int(round(T_WINDOW_S * fs))
    before = n_p + n_qrs // 2
    after = n_qrs - n_qrs // 2 + n_t
    return before, after, n_p, n_qrs


def _pearson(x: np.ndarray, y: np.ndarray) -> float:
    xc, yc = x - x.mean(), y - y.mean()
    d = float(np.sqrt((xc @ xc) * (yc @ yc)))
    return float(xc @ yc) / d if d else 0.0


def template_subtract(channel: np.ndarray, mqrs: BeatAnnotations,
                      variant: str = "TS", nb_cycles: int | None = None,
                      nb_pcs: int = DEFAULT_PCS) -> np.ndarray:
    """Subtract the per-beat maternal estimate; returns the residual.

    The maternal cycle is the window [R - 0.25 s, R + 0.45 s]: 0.20 s of P
    wave, 0.10 s of QRS centred on R, 0.40 s of T wave. A rolling buffer of
    the last ``nb_cycles`` accepted cycles (correlation with the running
    template > 0.8) provides the estimate:

    - TS    plain buffer average;
    - TSc   average scaled by one least-squares constant per beat;
    - TSm   average with the P, QRS and T segments scaled independently;
    - TSlp  least-squares combination of the buffered cycles, fitted on the
            P and T segments only so fetal QRS energy inside the maternal
            QRS window cannot drive the fit;
    - TSpca projection of the current cycle onto the first ``nb_pcs``
            principal components of the buffered cycle stack.
    """
    if variant not in TS_VARIANTS:
        raise ValidationError(f"unknown template-subtraction variant {variant!r}")
    if nb_cycles is None:
        nb_cycles = TSLP_CYCLES if variant == "TSlp" else DEFAULT_CYCLES
    x = np.asarray(channel, dtype=float)
    fs = mqrs.fs
    before, after, n_p, n_qrs = _window_layout(fs)
    length = before + after
    if len(mqrs) < 2:
        raise ValidationError("template subtraction needs at least 2 maternal beats")

    estimate = np.zeros_like(x)
    buffer: list[np.ndarray] = []
    template: np.ndarray | None = None
    peaks = mqrs.indices
    for b, r in enumerate(peaks):
        lo, hi = int(r) - before, int(r) + after
        win_lo, win_hi = max(0, lo), min(x.size, hi)
        # beats closer than the window would double-subtract where windows
        # overlap; restrict each subtraction to the beat's half-RR cell
        sub_lo, sub_hi = win_lo, win_hi
        if b > 0:
            sub_lo = max(sub_lo, int((peaks[b - 1] + r) // 2) + 1)
        if b + 1 < peaks.size:
            sub_hi = min(sub_hi, int((r + peaks[b + 1]) // 2) + 1)
        if win_hi <= win_lo:
            continue
        cycle = np.zeros(length)
        cycle[win_lo - lo:win_hi - lo] = x[win_lo:win_hi]
        full = win_lo == lo and win_hi == hi
        valid = np.zeros(length, dtype=bool)
        valid[win_lo - lo:win_hi - lo] = True

        if buffer:
            stack = np.vstack(buffer)
            mean_t = stack.mean(axis=0)
            if variant == "TS":
                est = mean_t
            elif variant == "TSc":
                tv, cv = mean_t[valid], cycle[valid]
                denom = float(tv @ tv)
                est = (float(tv @ cv) / denom) * mean_t if denom else mean_t
            elif variant == "TSm":
                est = mean_t.copy()
                for sl in (slice(0, n_p), slice(n_p, n_p + n_qrs),
                           slice(n_p + n_qrs, length)):
                    seg, v = mean_t[sl], valid[sl]
                    denom = float(seg[v] @ seg[v])
                    if denom:
                        est[sl] = (float(seg[v] @ cycle[sl][v]) / denom) * seg
            elif variant == "TSlp":
                pt = np.r_[np.arange(0, n_p), np.arange(n_p + n_qrs, length)]
                pt = pt[valid[pt]]
                coeff, *_ = np.linalg.lstsq(stack[:, pt].T, cycle[pt], rcond=None)
                est = coeff @ stack
            else:  # TSpca
                m = np.vstack([stack, cycle])[:, valid]
                u, s, _ = np.linalg.svd(m, full_matrices=False)
                r_pc = min(nb_pcs, u.shape[1])
                w = u[:, :r_pc]
                est = np.zeros(length)
                est[valid] = (w @ (w.T @ m))[-1]
            if sub_hi > sub_lo:
                estimate[sub_lo:sub_hi] += est[sub_lo - lo:sub_hi - lo]

        if full:
            if template is None or _pearson(template, cycle) > TEMPLATE_REJECT:
                buffer.append(cycle)
                if len(buffer) > nb_cycles:
                    buffer.pop(0)
                template = np.mean(buffer, axis=0)
    return x - estimate


def per_wave_scales(template: np.ndarray, cycle: np.ndarray, fs: float) -> np.ndarray:
    """Least-squares P/QRS/T scaling of a template against one cycle.

    Solves min |T a - m|^2 with T the block-diagonal matrix of the three
    template segments; because the blocks are disjoint the normal equations
    decouple into one scale per wave.
    """
    _, _, n_p, n_qrs = _window_layout(fs)
    scales = np.zeros(3)
    for i, sl in enumerate((slice(0, n_p), slice(n_p, n_p + n_qrs),
                            slice(n_p + n_qrs, template.size))):
        seg = template[sl]
        denom = float(seg @ seg)
        scales[i] = float(seg @ cycle[sl]) / denom if denom else 0.0
    return scales


@dataclass
class AdaptiveResult:
    residual: np.ndarray
    weights: np.ndarray


def lms_cancel(reference: np.ndarray, target: np.ndarray,
               n_taps: int = 20, mu: float = 0.1) -> AdaptiveResult:
    """Least-mean-squares noise canceller.

    Prediction uses the last ``n_taps`` reference samples; weights move
    along the instantaneous gradient, w <- w + mu * e * u. The returned
    residual is the per-sample prediction error.
    """
    u_sig = np.asarray(reference, dtype=float)
    y = np.asarray(target, dtype=float)
    if u_sig.shape != y.shape:
        raise ValidationError("reference and target must have equal length")
    if not (np.isfinite(u_sig).all() and np.isfinite(y).all()):
        raise ValidationError("nonfinite input")
    if n_taps >= y.size:
        raise ValidationError("filter longer than the signal")
    w = np.zeros(n_taps)
    e = y.copy()
    for n in range(n_taps, y.size):
        u = u_sig[n - n_taps + 1:n + 1][::-1]
        err = y[n] - float(w @ u)
        e[n] = err
        w = w + mu * err * u
    return AdaptiveResult(residual=e, weights=w)


def rls_cancel(reference: np.ndarray, target: np.ndarray,
               n_taps: int = 20, lam: float = 0.999,
               delta: float = 1e-4) -> AdaptiveResult:
    """Exponentially weighted recursive least squares canceller.

    The inverse correlation matrix starts at I/delta; a numerical blow-up
    of the recursion raises instead of silently continuing.
    """
    u_sig = np.asarray(reference, dtype=float)
    y = np.asarray(target, dtype=float)
    if u_sig.shape != y.shape:
        raise ValidationError("reference and target must have equal length")
    if not (np.isfinite(u_sig).all() and np.isfinite(y).all()):
        raise ValidationError("nonfinite input")
    if n_taps >= y.size:
        raise ValidationError("filter longer than the signal")
    w = np.zeros(n_taps)
    p = np.eye(n_taps) / delta
    e = y.copy()
    for n in range(n_taps, y.size):
        u = u_sig[n - n_taps + 1:n + 1][::-1]
        pu = p @ u
        denom = lam + float(u @ pu)
        k = pu / denom
        err = y[n] - float(w @ u)
        e[n] = err
        w = w + k * err
        p = (p - np.outer(k, pu)) / lam
        if not np.isfinite(p).all():
            raise NumericalError(f"RLS inverse-correlation matrix blew up at sample {n}")
    return AdaptiveResult(residual=e, weights=w)


@dataclass
class EsnResult:
    residual: np.ndarray
    weights: np.ndarray
    seed_used: int


def _make_reservoir(m: int, sparsity: float, spectral_radius: float,
                    rng: np.random.Generator) -> np.ndarray | None:
    w = np.zeros((m, m))
    mask = rng.uniform(size=(m, m)) < sparsity
    w[mask] = rng.uniform(-1.0, 1.0, int(mask.sum()))
    radius = float(np.max(np.abs(np.linalg.eigvals(w))))
    if radius == 0.0:
        return None
    return w * (spectral_radius / radius)


def esn_cancel(reference: np.ndarray, target: np.ndarray,
               n_units: int = 90, spectral_radius: float = 0.4,
               leak_rate: float = 0.4, sparsity: float = 0.2,
               input_scaling: float = 1.0, lam: float = 0.999,
               washout_s: float = 2.0, fs: float = 250.0,
               seed: int = 0, mode: str = "rls",
               ridge: float = 1e-6) -> EsnResult:
    """Echo state network canceller driven by the reference channel.

    Leaky reservoir update x(n+1) = (1-a) x(n) + tanh(W x(n) + Wi u(n+1));
    the readout maps the extended state [x, u] to the target, trained
    online by RLS (mode='rls') or in one shot by ridge regression on the
    post-washout segment (mode='ridge'). A seed producing a degenerate
    (zero spectral radius) reservoir is retried with the next seed, which
    is reported in the result.
    """
    u_sig = np.asarray(reference, dtype=float)
    y = np.asarray(target, dtype=float)
    if u_sig.shape != y.shape:
        raise ValidationError("reference and target must have equal length")
    washout = int(round(washout_s * fs))
    if y.size <= washout:
        raise ValidationError("target shorter than the washout period")

    seed_used = seed
    reservoir = None
    for attempt in range(8):
        rng = np.random.default_rng(seed + attempt)
        reservoir = _make_reservoir(n_units, sparsity, spectral_radius, rng)
        if reservoir is not None:
            seed_used = seed + attempt
            w_in = input_scaling * rng.uniform(-1.0, 1.0, n_units)
            break
    if reservoir is None:
        raise NumericalError("could not draw a non-degenerate reservoir")

    n = y.size
    dim = n_units + 1  # extended state [x, u]
    states = np.empty((n, dim))
    x = np.zeros(n_units)
    for i in range(n):
        x = (1.0 - leak_rate) * x + np.tanh(reservoir @ x + w_in * u_sig[i])
        states[i, :n_units] = x
        states[i, n_units] = u_sig[i]

    e = y.copy()
    if mode == "ridge":
        z = states[washout:]
        gram = z.T @ z + ridge * np.eye(dim)
        w_out = np.linalg.solve(gram, z.T @ y[washout:])
        e = y - states @ w_out
    elif mode == "rls":
        w_out = np.zeros(dim)
        p = np.eye(dim) / 1e-2
        for i in range(n):
            z = states[i]
            pz = p @ z
            k = pz / (lam + float(z @ pz))
            err = y[i] - float(w_out @ z)
            e[i] = err
            w_out = w_out + k * err
            p = (p - np.outer(k, pz)) / lam
            if not np.isfinite(p).all():
                raise NumericalError(f"ESN readout RLS blew up at sample {i}")
    else:
        raise ValidationError(f"unknown readout mode {mode!r}")
    return EsnResult(residual=e, weights=w_out, seed_used=seed_used)
