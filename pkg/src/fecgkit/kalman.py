"""Bayesian filtering on the Gaussian ECG model.

``kf_step`` is the generic Joseph-form Kalman recursion. The single-source
extended filter (EKFS) tracks phase and amplitude of one ECG against its
kernel prior and is used for maternal cancellation. The dual filter (EKFD)
estimates maternal and fetal amplitudes simultaneously; the fetal kernel
parameters are state variables following random walks, so the fetal
morphology may evolve, while the maternal kernels stay process noise.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .ecgmodel import (CycleModel, GaussianKernel, MIN_KERNEL_WIDTH, PhaseSeries,
                       assign_phase, build_template, fit_gaussians, gaussian_sum,
                       wrap_phase)
from .errors import FilterDivergenceError, NumericalError, ValidationError
from .filters import bandpass_zero_phase, highpass_zero_phase, lowpass_zero_phase
from .records import BeatAnnotations, SignalRecord

POST_BAND_HZ = (0.7, 100.0)
SNR_EDGE_S = 5.0


# ---------------------------------------------------------------------------
# generic Kalman step

@dataclass
class StateEstimate:
    """State mean and covariance; P must stay symmetric and PSD."""

    x: np.ndarray
    P: np.ndarray

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float).ravel()
        self.P = np.asarray(self.P, dtype=float)
        if self.P.shape != (self.x.size, self.x.size):
            raise ValidationError("covariance shape does not match the state")
        if np.max(np.abs(self.P - self.P.T)) > 1e-8 * (1.0 + np.abs(self.P).max()):
            raise ValidationError("covariance must be symmetric")


def kf_step(G: np.ndarray, H: np.ndarray, Q: np.ndarray, R: np.ndarray,
            estimate: StateEstimate, y: np.ndarray) -> StateEstimate:
    """One linear predict/correct cycle with the Joseph covariance update.

    The Joseph form P+ = (I-KH) P- (I-KH)^T + K R K^T keeps the posterior
    covariance symmetric positive semidefinite regardless of rounding.
    """
    G, H = np.atleast_2d(G), np.atleast_2d(H)
    Q, R = np.atleast_2d(Q), np.atleast_2d(R)
    y = np.atleast_1d(np.asarray(y, dtype=float))
    x_prior = G @ estimate.x
    p_prior = G @ estimate.P @ G.T + Q
    s = H @ p_prior @ H.T + R
    try:
        k = np.linalg.solve(s.T, (p_prior @ H.T).T).T
    except np.linalg.LinAlgError as exc:
        raise NumericalError("singular innovation covariance") from exc
    x_post = x_prior + k @ (y - H @ x_prior)
    ikh = np.eye(x_post.size) - k @ H
    p_post = ikh @ p_prior @ ikh.T + k @ R @ k.T
    return StateEstimate(x=x_post, P=0.5 * (p_post + p_post.T))


def _joseph_correct(x_prior: np.ndarray, p_prior: np.ndarray, innovation: np.ndarray,
                    H: np.ndarray, R: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    s = H @ p_prior @ H.T + R
    try:
        k = np.linalg.solve(s.T, (p_prior @ H.T).T).T
    except np.linalg.LinAlgError as exc:
        raise NumericalError("singular innovation covariance") from exc
    x_post = x_prior + k @ innovation
    ikh = np.eye(x_prior.size) - k @ H
    p_post = ikh @ p_prior @ ikh.T + k @ R @ k.T
    return x_post, 0.5 * (p_post + p_post.T), s


# ---------------------------------------------------------------------------
# single-source ECG EKF (maternal canceller)

def _omega_per_sample(anns: BeatAnnotations, n: int) -> np.ndarray:
    """Piecewise-constant angular velocity 2*pi/RR at every sample."""
    idx = anns.indices
    if idx.size < 2:
        raise ValidationError("need at least 2 beats to derive angular velocity")
    rr = np.diff(idx) / anns.fs
    omega = np.empty(n)
    bounds = np.clip(idx, 0, n)
    omega[:bounds[0]] = 2.0 * np.pi / rr[0]
    for i in range(rr.size):
        omega[bounds[i]:bounds[i + 1]] = 2.0 * np.pi / rr[i]
    omega[bounds[-1]:] = 2.0 * np.pi / rr[-1]
    return omega


def _robust_template(channel: np.ndarray, anns: BeatAnnotations):
    """Phase template that survives channels where the outlier gate starves.

    On leads where another source rivals the target in amplitude the 0.8
    correlation gate can reject nearly every cycle; averaging everything is
    then the better estimate, since the interfering beats are incoherent in
    the target's phase.
    """
    template = build_template(channel, anns)
    total = max(1, len(anns) - 2)
    if template.cycles_used < max(2, int(0.3 * total)):
        template = build_template(channel, anns, reject_below=-1.1)
    return template


def ekfs_state_map(x: np.ndarray, w: np.ndarray, n_kernels: int,
                   delta: float) -> np.ndarray:
    """Nonlinear state transition of the two-state ECG filter.

    x = [theta, z]; w = [alpha_1..N, b_1..N, xi_1..N, omega, eta].
    """
    theta, z = x
    al = w[:n_kernels]
    bw = w[n_kernels:2 * n_kernels]
    xi = w[2 * n_kernels:3 * n_kernels]
    omega, eta = w[3 * n_kernels], w[3 * n_kernels + 1]
    dth = wrap_phase(theta - xi)
    gauss = np.exp(-(dth**2) / (2.0 * bw**2))
    z_next = z - float(np.sum(delta * al * omega / bw**2 * dth * gauss)) + eta
    return np.array([wrap_phase(theta + omega * delta), z_next])


def ekfs_jacobians(x: np.ndarray, w: np.ndarray, n_kernels: int,
                   delta: float) -> tuple[np.ndarray, np.ndarray]:
    """State Jacobians G = dg/dx (2x2) and L = dg/dw (2x(3N+2))."""
    theta = x[0]
    al = w[:n_kernels]
    bw = w[n_kernels:2 * n_kernels]
    xi = w[2 * n_kernels:3 * n_kernels]
    omega = w[3 * n_kernels]
    dth = wrap_phase(theta - xi)
    gauss = np.exp(-(dth**2) / (2.0 * bw**2))
    shape = 1.0 - dth**2 / bw**2

    g = np.eye(2)
    g[1, 0] = -float(np.sum(delta * al * omega / bw**2 * shape * gauss))

    n = n_kernels
    l = np.zeros((2, 3 * n + 2))
    l[0, 3 * n] = delta                                   # d theta' / d omega
    l[1, :n] = -delta * omega * dth / bw**2 * gauss       # d z' / d alpha
    l[1, n:2 * n] = (2.0 * delta * al * omega * dth / bw**3
                     * (1.0 - dth**2 / (2.0 * bw**2)) * gauss)  # d z' / d b
    l[1, 2 * n:3 * n] = delta * al * omega / bw**2 * shape * gauss  # d z' / d xi
    l[1, 3 * n] = -float(np.sum(delta * al * dth / bw**2 * gauss))  # d z' / d omega
    l[1, 3 * n + 1] = 1.0                                           # d z' / d eta
    return g, l


@dataclass
class EkfsResult:
    filtered: np.ndarray
    residual: np.ndarray
    phase: PhaseSeries


def ekf_ecg_filter(channel: np.ndarray, mqrs: BeatAnnotations, model: CycleModel,
                   g_r: float = 100.0, g_q: float = 5.0,
                   sigma_amp: float | None = None,
                   divergence_sigma: float = 10.0) -> EkfsResult:
    """Model-based ECG filter; the residual is the input minus the estimate.

    Noise scales follow the phase-wrapped average waveform convention:
    kernel amplitudes get 10% relative noise, widths and centres 0.05*pi,
    the phase observation omega*delta/sqrt(12), the amplitude perturbation
    1% of the tallest peak; R and Q are then multiplied by the gains g_r
    and g_q. Sustained innovations beyond ``divergence_sigma`` standard
    deviations abort with a report.
    """
    x_sig = np.asarray(channel, dtype=float)
    n = x_sig.size
    fs = mqrs.fs
    delta = 1.0 / fs
    nk = len(model.kernels)
    phase = assign_phase(mqrs, n)
    omega = _omega_per_sample(mqrs, n)

    if sigma_amp is None:
        template = _robust_template(x_sig, mqrs)
        sigma_amp = max(float(np.mean(template.stddev)),
                        0.02 * float(np.ptp(template.bins)), 1e-9)

    al, bw, xi = model.alphas, model.widths, model.centers
    q0 = np.concatenate([(0.1 * np.abs(al))**2,
                         np.full(nk, (0.05 * np.pi)**2),
                         np.full(nk, (0.05 * np.pi)**2),
                         [np.var(2.0 * np.pi / (np.diff(mqrs.indices) / fs))],
                         [(0.01 * np.max(np.abs(x_sig)))**2]])
    omega_hat = float(np.mean(omega))
    R = g_r * np.diag([(omega_hat * delta)**2 / 12.0, sigma_amp**2])

    w_mean = np.concatenate([al, bw, xi, [omega[0]], [0.0]])
    x_est = np.array([phase.phase[0], x_sig[0]])
    p_est = np.diag([(0.05 * np.pi)**2, sigma_amp**2])
    h_mat = np.eye(2)

    filtered = np.empty(n)
    filtered[0] = x_est[1]
    bad_run, bad_limit = 0, int(0.5 * fs)
    for k in range(1, n):
        w_mean[3 * nk] = omega[k - 1]
        g_mat, l_mat = ekfs_jacobians(x_est, w_mean, nk, delta)
        x_prior = ekfs_state_map(x_est, w_mean, nk, delta)
        p_prior = g_mat @ p_est @ g_mat.T + (l_mat * q0 * g_q) @ l_mat.T
        innovation = np.array([wrap_phase(phase.phase[k] - x_prior[0]),
                               x_sig[k] - x_prior[1]])
        x_est, p_est, s = _joseph_correct(x_prior, p_prior, innovation, h_mat, R)
        x_est[0] = wrap_phase(x_est[0])
        if innovation[1]**2 > divergence_sigma**2 * s[1, 1]:
            bad_run += 1
            if bad_run >= bad_limit:
                raise FilterDivergenceError(
                    f"EKFS innovation beyond {divergence_sigma} sigma for "
                    f"{bad_limit} consecutive samples", sample=k)
        else:
            bad_run = 0
        filtered[k] = x_est[1]
    return EkfsResult(filtered=filtered, residual=x_sig - filtered, phase=phase)


# ---------------------------------------------------------------------------
# dual EKF

@dataclass(frozen=True)
class EkfdConfig:
    """Dual-filter tuning: covariance gains and fetal random-walk scales."""

    g_r: float = 100.0
    g_q: float = 5.0
    n_kernels: int = 7
    eps_alpha_frac: float = 0.1          # per-step fetal alpha walk, x|alpha|
    eps_b: float = 0.05 * np.pi          # per-step fetal width walk (rad)
    eps_xi: float = 0.05 * np.pi         # per-step fetal centre walk (rad)
    eps_scale: float = 1e-4              # overall random-walk multiplier
    post_band_hz: tuple[float, float] = POST_BAND_HZ

    def __post_init__(self):
        if self.g_r <= 0 or self.g_q <= 0:
            raise ValidationError("covariance gains must be positive")


def ekfd_state_map(x: np.ndarray, w: np.ndarray, n_kernels: int,
                   delta: float) -> np.ndarray:
    """Dual-filter state transition.

    x = [theta_f, theta_m, f, m, alpha_f(N), b_f(N), xi_f(N)];
    w = [omega_f, omega_m, eta_f, eta_m, eps_alpha(N), eps_b(N), eps_xi(N),
         alpha_m(N), b_m(N), xi_m(N)].
    """
    nk = n_kernels
    theta_f, theta_m, f_amp, m_amp = x[:4]
    al_f, b_f, xi_f = x[4:4 + nk], x[4 + nk:4 + 2 * nk], x[4 + 2 * nk:4 + 3 * nk]
    omega_f, omega_m, eta_f, eta_m = w[:4]
    eps = w[4:4 + 3 * nk]
    al_m, b_m, xi_m = (w[4 + 3 * nk:4 + 4 * nk], w[4 + 4 * nk:4 + 5 * nk],
                       w[4 + 5 * nk:4 + 6 * nk])

    dth_f = wrap_phase(theta_f - xi_f)
    gauss_f = np.exp(-(dth_f**2) / (2.0 * b_f**2))
    dth_m = wrap_phase(theta_m - xi_m)
    gauss_m = np.exp(-(dth_m**2) / (2.0 * b_m**2))

    out = np.empty_like(x)
    out[0] = wrap_phase(theta_f + omega_f * delta)
    out[1] = wrap_phase(theta_m + omega_m * delta)
    out[2] = f_amp - float(np.sum(delta * al_f * omega_f / b_f**2 * dth_f * gauss_f)) + eta_f
    out[3] = m_amp - float(np.sum(delta * al_m * omega_m / b_m**2 * dth_m * gauss_m)) + eta_m
    out[4:4 + 3 * nk] = x[4:4 + 3 * nk] + eps
    return out


def ekfd_obs_map(x: np.ndarray, v: np.ndarray, n_kernels: int) -> np.ndarray:
    """Observations [phi_f, phi_m, s, s]; the 4th is the virtual MECG view.

    The plain amplitude equation s = f + m cannot split a joint drift of
    the two amplitudes; re-reading it as s - (fetal kernel sum) = m pins
    the maternal amplitude to the mixture minus the fetal prior and keeps
    the decomposition from wandering.
    """
    nk = n_kernels
    theta_f, f_amp, m_amp = x[0], x[2], x[3]
    al_f, b_f, xi_f = x[4:4 + nk], x[4 + nk:4 + 2 * nk], x[4 + 2 * nk:4 + 3 * nk]
    dth_f = wrap_phase(theta_f - xi_f)
    fetal_sum = float(np.sum(al_f * np.exp(-(dth_f**2) / (2.0 * b_f**2))))
    return np.array([x[0], x[1], f_amp + m_amp, m_amp + fetal_sum]) + v


def ekfd_jacobians(x: np.ndarray, w: np.ndarray, n_kernels: int,
                   delta: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """G = dg/dx, L = dg/dw and H = dh/dx for the dual filter."""
    nk = n_kernels
    dim = 4 + 3 * nk
    theta_f, theta_m = x[0], x[1]
    al_f, b_f, xi_f = x[4:4 + nk], x[4 + nk:4 + 2 * nk], x[4 + 2 * nk:4 + 3 * nk]
    omega_f, omega_m = w[0], w[1]
    al_m, b_m, xi_m = (w[4 + 3 * nk:4 + 4 * nk], w[4 + 4 * nk:4 + 5 * nk],
                       w[4 + 5 * nk:4 + 6 * nk])

    dth_f = wrap_phase(theta_f - xi_f)
    gauss_f = np.exp(-(dth_f**2) / (2.0 * b_f**2))
    shape_f = 1.0 - dth_f**2 / b_f**2
    dth_m = wrap_phase(theta_m - xi_m)
    gauss_m = np.exp(-(dth_m**2) / (2.0 * b_m**2))
    shape_m = 1.0 - dth_m**2 / b_m**2

    g = np.eye(dim)
    g[2, 0] = -float(np.sum(delta * al_f * omega_f / b_f**2 * shape_f * gauss_f))
    g[2, 4:4 + nk] = -delta * omega_f * dth_f / b_f**2 * gauss_f
    g[2, 4 + nk:4 + 2 * nk] = (2.0 * delta * al_f * omega_f * dth_f / b_f**3
                               * (1.0 - dth_f**2 / (2.0 * b_f**2)) * gauss_f)
    g[2, 4 + 2 * nk:4 + 3 * nk] = delta * al_f * omega_f / b_f**2 * shape_f * gauss_f
    g[3, 1] = -float(np.sum(delta * al_m * omega_m / b_m**2 * shape_m * gauss_m))

    l = np.zeros((dim, 4 + 6 * nk))
    l[0, 0] = delta
    l[1, 1] = delta
    l[2, 0] = -float(np.sum(delta * al_f * dth_f / b_f**2 * gauss_f))
    l[2, 2] = 1.0
    l[3, 1] = -float(np.sum(delta * al_m * dth_m / b_m**2 * gauss_m))
    l[3, 3] = 1.0
    l[3, 4 + 3 * nk:4 + 4 * nk] = -delta * omega_m * dth_m / b_m**2 * gauss_m
    l[3, 4 + 4 * nk:4 + 5 * nk] = (2.0 * delta * al_m * omega_m * dth_m / b_m**3
                                   * (1.0 - dth_m**2 / (2.0 * b_m**2)) * gauss_m)
    l[3, 4 + 5 * nk:4 + 6 * nk] = delta * al_m * omega_m / b_m**2 * shape_m * gauss_m
    l[4:4 + 3 * nk, 4:4 + 3 * nk] = np.eye(3 * nk)

    h = np.zeros((4, dim))
    h[0, 0] = 1.0
    h[1, 1] = 1.0
    h[2, 2] = 1.0
    h[2, 3] = 1.0
    h[3, 3] = 1.0
    h[3, 0] = -float(np.sum(al_f * dth_f / b_f**2 * gauss_f))
    h[3, 4:4 + nk] = gauss_f
    h[3, 4 + nk:4 + 2 * nk] = al_f * dth_f**2 / b_f**3 * gauss_f
    h[3, 4 + 2 * nk:4 + 3 * nk] = al_f * dth_f / b_f**2 * gauss_f
    return g, l, h


@dataclass
class EkfdResult:
    mecg: np.ndarray
    fecg: np.ndarray
    innovation: np.ndarray            # observed - (mecg + fecg), pre post-filter
    kernel_track: np.ndarray          # (n, N, 3): alpha, b, xi per sample
    mecg_post: np.ndarray
    fecg_post: np.ndarray
    width_clamps: int


def ekfd_filter(channel: np.ndarray, mqrs: BeatAnnotations, fqrs: BeatAnnotations,
                m_model: CycleModel, f_model: CycleModel,
                cfg: EkfdConfig = EkfdConfig(),
                sigma_amp: float | None = None,
                divergence_sigma: float = 10.0) -> EkfdResult:
    """Joint maternal+fetal estimation on one abdominal channel.

    Both phase series act as observations next to the mixture amplitude and
    its virtual maternal re-reading. Fetal kernel widths are clamped from
    below (narrower kernels make the propagation equations spike) and every
    clamp is counted in the result.
    """
    x_sig = np.asarray(channel, dtype=float)
    n = x_sig.size
    fs = mqrs.fs
    delta = 1.0 / fs
    nk = cfg.n_kernels
    if len(m_model.kernels) != nk or len(f_model.kernels) != nk:
        raise ValidationError(f"both priors must carry {nk} kernels")

    phase_f = assign_phase(fqrs, n)
    phase_m = assign_phase(mqrs, n)
    omega_f = _omega_per_sample(fqrs, n)
    omega_m = _omega_per_sample(mqrs, n)

    if sigma_amp is None:
        template = _robust_template(x_sig, mqrs)
        sigma_amp = max(float(np.mean(template.stddev)),
                        0.02 * float(np.ptp(template.bins)), 1e-9)

    al_m, b_m, xi_m = m_model.alphas, m_model.widths, m_model.centers
    al_f, b_f, xi_f = f_model.alphas, f_model.widths, f_model.centers
    dim = 4 + 3 * nk

    eps = cfg.eps_scale * np.concatenate([
        (cfg.eps_alpha_frac * np.maximum(np.abs(al_f), 1e-4))**2,
        np.full(nk, cfg.eps_b**2),
        np.full(nk, cfg.eps_xi**2),
    ])
    q0 = np.concatenate([
        [np.var(2.0 * np.pi / (np.diff(fqrs.indices) / fs))],
        [np.var(2.0 * np.pi / (np.diff(mqrs.indices) / fs))],
        [(0.01 * max(np.max(np.abs(gaussian_sum(np.linspace(-np.pi, np.pi, 100),
                                                al_f, b_f, xi_f))), 1e-6))**2],
        [(0.01 * np.max(np.abs(x_sig)))**2],
        eps / max(cfg.g_q, 1e-12),  # walk variances are not re-scaled by the gain
        (0.1 * np.abs(al_m))**2,
        np.full(nk, (0.05 * np.pi)**2),
        np.full(nk, (0.05 * np.pi)**2),
    ])
    r0 = np.array([(float(np.mean(omega_f)) * delta)**2 / 12.0,
                   (float(np.mean(omega_m)) * delta)**2 / 12.0,
                   sigma_amp**2,
                   sigma_amp**2])
    R = cfg.g_r * np.diag(r0)

    w_mean = np.concatenate([[omega_f[0], omega_m[0], 0.0, 0.0],
                             np.zeros(3 * nk), al_m, b_m, xi_m])
    x_est = np.concatenate([[phase_f.phase[0], phase_m.phase[0],
                             float(gaussian_sum(np.array([phase_f.phase[0]]),
                                                al_f, b_f, xi_f)[0]),
                             x_sig[0]],
                            al_f, b_f, xi_f])
    p_est = np.diag(np.concatenate([
        [(0.05 * np.pi)**2, (0.05 * np.pi)**2, sigma_amp**2, sigma_amp**2],
        (0.1 * np.maximum(np.abs(al_f), 1e-4))**2,
        np.full(nk, (0.05 * np.pi)**2),
        np.full(nk, (0.05 * np.pi)**2),
    ]))

    mecg = np.empty(n)
    fecg = np.empty(n)
    track = np.empty((n, nk, 3))
    mecg[0], fecg[0] = x_est[3], x_est[2]
    track[0] = np.stack([al_f, b_f, xi_f], axis=1)
    clamps = 0
    bad_run, bad_limit = 0, int(0.5 * fs)
    q_gained = cfg.g_q * q0

    for k in range(1, n):
        w_mean[0], w_mean[1] = omega_f[k - 1], omega_m[k - 1]
        g_mat, l_mat, _ = ekfd_jacobians(x_est, w_mean, nk, delta)
        x_prior = ekfd_state_map(x_est, w_mean, nk, delta)
        p_prior = g_mat @ p_est @ g_mat.T + (l_mat * q_gained) @ l_mat.T
        _, _, h_mat = ekfd_jacobians(x_prior, w_mean, nk, delta)
        y_pred = ekfd_obs_map(x_prior, np.zeros(4), nk)
        innovation = np.array([
            wrap_phase(phase_f.phase[k] - y_pred[0]),
            wrap_phase(phase_m.phase[k] - y_pred[1]),
            x_sig[k] - y_pred[2],
            x_sig[k] - y_pred[3],
        ])
        x_est, p_est, s = _joseph_correct(x_prior, p_prior, innovation, h_mat, R)
        x_est[0] = wrap_phase(x_est[0])
        x_est[1] = wrap_phase(x_est[1])
        low = x_est[4 + nk:4 + 2 * nk] < MIN_KERNEL_WIDTH
        if low.any():
            x_est[4 + nk:4 + 2 * nk][low] = MIN_KERNEL_WIDTH
            clamps += int(low.sum())
        if innovation[2]**2 > divergence_sigma**2 * s[2, 2]:
            bad_run += 1
            if bad_run >= bad_limit:
                raise FilterDivergenceError(
                    f"EKFD innovation beyond {divergence_sigma} sigma for "
                    f"{bad_limit} consecutive samples", sample=k)
        else:
            bad_run = 0
        mecg[k], fecg[k] = x_est[3], x_est[2]
        track[k, :, 0] = x_est[4:4 + nk]
        track[k, :, 1] = x_est[4 + nk:4 + 2 * nk]
        track[k, :, 2] = x_est[4 + 2 * nk:4 + 3 * nk]

    fs_f = float(fs)
    lo, hi = cfg.post_band_hz
    mecg_post = lowpass_zero_phase(highpass_zero_phase(mecg, fs_f, lo), fs_f,
                                   min(hi, 0.49 * fs_f))
    fecg_post = lowpass_zero_phase(highpass_zero_phase(fecg, fs_f, lo), fs_f,
                                   min(hi, 0.49 * fs_f))
    return EkfdResult(mecg=mecg, fecg=fecg, innovation=x_sig - mecg - fecg,
                      kernel_track=track, mecg_post=mecg_post, fecg_post=fecg_post,
                      width_clamps=clamps)


# ---------------------------------------------------------------------------
# evaluation helpers

def snr_db(reference: np.ndarray, extracted: np.ndarray, fs: float,
           edge_s: float = SNR_EDGE_S) -> float:
    """20 log10 of the reference-to-error amplitude ratio.

    The first and last ``edge_s`` seconds are excluded to discount filter
    border transients; a zero-error extraction returns +inf.
    """
    r = np.asarray(reference, dtype=float)
    f = np.asarray(extracted, dtype=float)
    if r.shape != f.shape:
        raise ValidationError("reference and extracted must have equal length")
    if r.size <= 2 * edge_s * fs:
        raise ValidationError(f"need more than {2 * edge_s} s of signal")
    sl = slice(int(edge_s * fs), r.size - int(edge_s * fs))
    r, f = r[sl], f[sl]
    ref_energy = float(np.sum(r**2))
    if ref_energy == 0.0:
        raise ValidationError("zero reference energy")
    err_energy = float(np.sum((f - r) ** 2))
    if err_energy == 0.0:
        return np.inf
    return float(20.0 * np.log10(np.sqrt(ref_energy / err_energy)))


def qt_from_kernels(model: CycleModel, rr: float, c_on: float = 2.5,
                    c_off: float = 2.0) -> float:
    """QT interval (ms) from the fitted kernels of one cycle.

    With kernels ordered P1,P2,Q,R,S,T1,T2, the Q onset is taken c_on
    widths before the Q centre and the T offset c_off widths after the T2
    centre; the phase span converts to time through the RR interval.
    """
    if len(model.kernels) != 7:
        raise ValidationError("QT extraction expects the 7-kernel layout")
    centers = model.centers
    unwrapped = np.unwrap(centers)
    if np.any(np.diff(unwrapped) < 0):
        raise ValidationError("kernel centres must be ordered P1..T2")
    q, t2 = model.kernels[2], model.kernels[6]
    onset = unwrapped[2] - c_on * q.b
    offset = unwrapped[6] + c_off * t2.b
    return float((offset - onset) / (2.0 * np.pi) * rr * 1000.0)


@dataclass
class EkfdPipelineResult:
    fecg_ekfd: np.ndarray          # post-filtered dual-filter fetal estimate
    fecg_ekfs: np.ndarray          # post-filtered single-filter residual
    mecg_ekfd: np.ndarray
    m_model: CycleModel
    f_model: CycleModel
    detail: EkfdResult


def ekfd_pipeline(channel: np.ndarray, fs: int, mqrs: BeatAnnotations,
                  fqrs: BeatAnnotations, cfg: EkfdConfig = EkfdConfig(),
                  rng: np.random.Generator | None = None) -> EkfdPipelineResult:
    """Full morphology-extraction chain on one channel.

    Prefilter to the configured band, cancel the maternal ECG with the
    single filter, build the fetal template from that residual, then run
    the dual filter and post-filter both outputs to the same band.
    """
    rng = rng or np.random.default_rng(0)
    x = np.asarray(channel, dtype=float)
    lo, hi = cfg.post_band_hz
    rec = SignalRecord(samples=x[None, :], fs=fs)
    pre = bandpass_zero_phase(rec, lo, min(hi, 0.49 * fs)).samples[0]

    m_template = _robust_template(pre, mqrs)
    m_model, _ = fit_gaussians(m_template, cfg.n_kernels, rng=rng)
    ekfs = ekf_ecg_filter(pre, mqrs, m_model, g_r=cfg.g_r, g_q=cfg.g_q)

    f_template = _robust_template(ekfs.residual, fqrs)
    f_model, _ = fit_gaussians(f_template, cfg.n_kernels, rng=rng)

    dual = ekfd_filter(pre, mqrs, fqrs, m_model, f_model, cfg)
    ekfs_post = lowpass_zero_phase(
        highpass_zero_phase(ekfs.residual, float(fs), lo), float(fs),
        min(hi, 0.49 * fs))
    return EkfdPipelineResult(fecg_ekfd=dual.fecg_post, fecg_ekfs=ekfs_post,
                              mecg_ekfd=dual.mecg_post, m_model=m_model,
                              f_model=f_model, detail=dual)
