"""Maternal-fetal abdominal ECG mixture generator.

Card iac sources are point dipoles inside a cylindrical volume conductor.
Each dipole trajectory (from the Gaussian cycle model) is rotated by a
respiration-coupled rotation matrix and projected onto surface electrodes
through the conductor model; fetal and noise contributions are calibrated
against the maternal projection by target SNRs. Everything is a pure
function of (config, scene, seed).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict
from functools import lru_cache

import numpy as np
from scipy import signal as sps
from scipy.interpolate import CubicSpline

from .ecgmodel import CycleModel, generate_vcg
from .errors import ValidationError
from .filters import highpass_zero_phase
from .records import BeatAnnotations, SignalRecord
from .spectral import NOISE_AR_ORDER, ar_fit_burg, ar_from_poles, ar_poles
from .vcgdata import ectopic_set, vcg_set

EPSILON_0 = 1.0  # permittivity of the conductor: isotropic and unitary
NOISE_TYPES = ("MA", "EM", "BW")
PSI_MAX_DEFAULT = (0.20, 0.16, 0.14)  # max respiration rotation (rad) per axis
MATERNAL_BREATH_SHIFT = 0.05  # heart z-translation, fraction of cylinder height
FETAL_BREATH_SHIFT = 0.015
_NOISE_SEED_BASE = 77230


# ---------------------------------------------------------------------------
# geometry

def cyl_to_cart(theta: float, rho: float, z: float) -> np.ndarray:
    return np.array([rho * np.cos(theta), rho * np.sin(theta), z])


@dataclass(frozen=True)
class HeartSpec:
    """Dipole source: cylindrical position and static orientation (rad)."""

    position: tuple[float, float, float]  # (theta, rho, z)
    orientation: tuple[float, float, float] = (0.0, 0.0, 0.0)

    @property
    def xyz(self) -> np.ndarray:
        return cyl_to_cart(*self.position)


@dataclass(frozen=True)
class DipoleScene:
    """Cylinder volume conductor with electrodes and heart dipoles.

    The default geometry clusters electrodes 1-5 low on the cylinder around
    the fetal heart (abdominal leads), electrode 6 sits high near the
    maternal heart (chest reference) and 7-8 to the sides.
    """

    electrodes: tuple[tuple[float, float, float], ...]
    reference: tuple[float, float, float] = (np.pi, 0.5, -0.3)
    maternal: HeartSpec = HeartSpec(position=(2 * np.pi / 3, 0.4, 0.4))
    fetal: tuple[HeartSpec, ...] = (
        HeartSpec(position=(-np.pi / 10, 0.4, -0.3),
                  orientation=(0.5, -0.4, 0.3)),
    )
    radius: float = 0.5
    height: float = 1.0
    #: electrode indices forming the abdominal mixture; SNR calibration uses
    #: these channels so a strong chest lead cannot skew the power budget
    abdominal: tuple[int, ...] | None = None
    chest: int | None = None

    def abdominal_indices(self) -> tuple[int, ...]:
        if self.abdominal is not None:
            return self.abdominal
        return tuple(i for i in range(len(self.electrodes)) if i != self.chest)

    def __post_init__(self):
        if not self.electrodes:
            raise ValidationError("at least one electrode required")
        for th, rho, z in self.electrodes:
            if abs(rho - self.radius) > 1e-9:
                raise ValidationError("electrodes must sit on the cylinder surface")
        for heart in (self.maternal, *self.fetal):
            if heart.position[1] >= self.radius:
                raise ValidationError("hearts must lie strictly inside the cylinder")

    @property
    def electrode_xyz(self) -> np.ndarray:
        return np.vstack([cyl_to_cart(*e) for e in self.electrodes])

    @property
    def reference_xyz(self) -> np.ndarray:
        return cyl_to_cart(*self.reference)

    @property
    def n_electrodes(self) -> int:
        return len(self.electrodes)


def default_scene() -> DipoleScene:
    """Eight surface electrodes: five abdominal, one chest, two lateral."""
    electrodes = (
        (0.0, 0.5, -0.30),
        (-np.pi / 10, 0.5, -0.30),
        (-np.pi / 4, 0.5, -0.30),
        (-np.pi / 10, 0.5, -0.45),
        (-np.pi / 10, 0.5, -0.15),
        (2 * np.pi / 3, 0.5, 0.40),
        (np.pi / 2, 0.5, -0.20),
        (3 * np.pi / 2, 0.5, 0.20),
    )
    return DipoleScene(electrodes=electrodes, abdominal=(0, 1, 2, 3, 4), chest=5)


def dipole_gain(dipole_xyz: np.ndarray, point_xyz: np.ndarray) -> np.ndarray:
    """Raw lead-field row: r / (4 pi eps0 |r|^3) for r = point - dipole."""
    r = np.asarray(point_xyz, dtype=float) - np.asarray(dipole_xyz, dtype=float)
    dist = np.linalg.norm(r)
    if dist == 0.0:
        raise ValidationError("dipole coincides with the observation point")
    return r / (4.0 * np.pi * EPSILON_0 * dist**3)


def projection_row(scene: DipoleScene, source_xyz: np.ndarray,
                   electrode_index: int) -> np.ndarray:
    """Differential gains of one electrode against the reference electrode."""
    return (dipole_gain(source_xyz, scene.electrode_xyz[electrode_index])
            - dipole_gain(source_xyz, scene.reference_xyz))


def projection_matrix(electrode_xyz: np.ndarray, reference_xyz: np.ndarray,
                      dipole_xyz: np.ndarray) -> np.ndarray:
    """Differential lead field for a (possibly moving) dipole.

    dipole_xyz of shape (3,) gives a static (M, 3) matrix; shape (N, 3)
    gives (N, M, 3).
    """
    dipole_xyz = np.asarray(dipole_xyz, dtype=float)
    static = dipole_xyz.ndim == 1
    pos = dipole_xyz[None, :] if static else dipole_xyz
    r = electrode_xyz[None, :, :] - pos[:, None, :]          # (N, M, 3)
    dist = np.linalg.norm(r, axis=2, keepdims=True)
    if np.any(dist == 0.0):
        raise ValidationError("dipole trajectory crosses an electrode")
    h = r / (4.0 * np.pi * EPSILON_0 * dist**3)
    r0 = reference_xyz[None, :] - pos                        # (N, 3)
    d0 = np.linalg.norm(r0, axis=1, keepdims=True)
    if np.any(d0 == 0.0):
        raise ValidationError("dipole trajectory crosses the reference electrode")
    h0 = r0 / (4.0 * np.pi * EPSILON_0 * d0**3)
    h = h - h0[:, None, :]
    return h[0] if static else h


def rotation_matrix(psi_x: float, psi_y: float, psi_z: float) -> np.ndarray:
    """R = Rx * Ry * Rz, orthogonal with determinant +1."""
    return rotation_matrices(np.array([[psi_x, psi_y, psi_z]]))[0]


def rotation_matrices(psi: np.ndarray) -> np.ndarray:
    """Vectorized rotation matrices for angles of shape (N, 3)."""
    psi = np.atleast_2d(np.asarray(psi, dtype=float))
    cx, sx = np.cos(psi[:, 0]), np.sin(psi[:, 0])
    cy, sy = np.cos(psi[:, 1]), np.sin(psi[:, 1])
    cz, sz = np.cos(psi[:, 2]), np.sin(psi[:, 2])
    n = psi.shape[0]
    rx = np.zeros((n, 3, 3))
    rx[:, 0, 0] = 1.0
    rx[:, 1, 1], rx[:, 1, 2] = cx, sx
    rx[:, 2, 1], rx[:, 2, 2] = -sx, cx
    ry = np.zeros((n, 3, 3))
    ry[:, 1, 1] = 1.0
    ry[:, 0, 0], ry[:, 0, 2] = cy, sy
    ry[:, 2, 0], ry[:, 2, 2] = -sy, cy
    rz = np.zeros((n, 3, 3))
    rz[:, 2, 2] = 1.0
    rz[:, 0, 0], rz[:, 0, 1] = cz, sz
    rz[:, 1, 0], rz[:, 1, 1] = -sz, cz
    return np.einsum("nij,njk,nkl->nil", rx, ry, rz)


# ---------------------------------------------------------------------------
# physiological waveforms

def respiration_waveform(f0: float, n: int, fs: float, a: float = 1.0,
                         delta_a: float = 0.3, f_a: float = 0.1,
                         delta_fd: float = 0.05, f_m: float = 0.1) -> np.ndarray:
    """Three-harmonic AM/FM sawtooth approximation of the breathing pattern."""
    if f0 <= 0:
        raise ValidationError("breathing rate must be positive")
    t = np.arange(n) / fs
    w0 = 2.0 * np.pi * f0
    fm_phase = (delta_fd / f_m) * np.sin(2.0 * np.pi * f_m * t) if f_m > 0 else 0.0
    amp = a + delta_a * np.sin(2.0 * np.pi * f_a * t)
    beta = np.zeros(n)
    for j in (1, 2, 3):
        beta += (2.0 / (j * np.pi)) * amp * np.sin(j * w0 * t + fm_phase)
    return beta


def mexican_hat(t: np.ndarray | float, sigma: float) -> np.ndarray | float:
    """Ricker wavelet 2/(sqrt(3 sigma) pi^(1/4)) (1 - t^2/s^2) exp(-t^2/(2 s^2))."""
    t = np.asarray(t, dtype=float)
    norm = 2.0 / (np.sqrt(3.0 * sigma) * np.pi**0.25)
    return norm * (1.0 - t**2 / sigma**2) * np.exp(-(t**2) / (2.0 * sigma**2))


def hr_series(mean_bpm: float, kind: str, n_beats: int,
              rng: np.random.Generator | None = None,
              magnitude_bpm: float = 20.0, center_s: float | None = None,
              width_s: float | None = None, hr_std_bpm: float = 1.5,
              lf_hz: float = 0.10, hf_hz: float = 0.25,
              lf_hf_ratio: float = 0.5) -> np.ndarray:
    """Per-beat heart rate for one source.

    'none' is a constant rate. 'nsr' adds a zero-mean fluctuation whose
    tachogram spectrum is a two-Gaussian mixture (Mayer wave near 0.1 Hz,
    respiratory modulation near 0.25 Hz). 'tanh', 'mexhat' and 'gauss'
    modulate the mean with the named time profile of peak ``magnitude_bpm``
    centred at ``center_s``; profile times use the nominal beat spacing
    60/mean_bpm.
    """
    if mean_bpm <= 0:
        raise ValidationError("mean heart rate must be positive")
    if n_beats < 1:
        raise ValidationError("need at least one beat")
    if kind == "none":
        return np.full(n_beats, float(mean_bpm))

    t = np.arange(n_beats) * 60.0 / mean_bpm
    total = t[-1] if n_beats > 1 else 1.0
    center = total / 2.0 if center_s is None else center_s
    width = max(total / 10.0, 1.0) if width_s is None else width_s

    if kind == "tanh":
        return mean_bpm + magnitude_bpm * 0.5 * (1.0 + np.tanh((t - center) / width))
    if kind == "gauss":
        return mean_bpm + magnitude_bpm * np.exp(-((t - center) ** 2) / (2.0 * width**2))
    if kind == "mexhat":
        prof = mexican_hat(t - center, width)
        return mean_bpm + magnitude_bpm * prof / mexican_hat(0.0, width)
    if kind == "nsr":
        if rng is None:
            raise ValidationError("'nsr' modulation needs an RNG")
        fs_t = mean_bpm / 60.0  # tachogram sampling rate, beats per second
        freqs = np.fft.rfftfreq(n_beats, d=1.0 / fs_t)
        c1 = c2 = 0.02
        spec = (lf_hf_ratio * np.exp(-((freqs - lf_hz) ** 2) / (2 * c1**2))
                + np.exp(-((freqs - hf_hz) ** 2) / (2 * c2**2)))
        phases = rng.uniform(0.0, 2.0 * np.pi, freqs.size)
        coeff = np.sqrt(spec) * np.exp(1j * phases)
        coeff[0] = 0.0
        x = np.fft.irfft(coeff, n=n_beats)
        sd = x.std()
        if sd > 0:
            x *= hr_std_bpm / sd
        return mean_bpm + x
    raise ValidationError(f"unknown heart-rate modulation kind {kind!r}")


def ectopic_sequence(n_beats: int, rng: np.random.Generator,
                     rn: float | None = None, re: float | None = None) -> np.ndarray:
    """Two-state Markov beat typing; True marks an ectopic beat.

    Transition probabilities default to rn = 0.7 + 0.1 U(0,1) (stay normal)
    and re = 0.2 + 0.1 U(0,1) (stay ectopic); the chain starts on a normal
    beat.
    """
    if n_beats < 1:
        raise ValidationError("need at least one beat")
    if rn is None:
        rn = 0.7 + 0.1 * rng.uniform()
    if re is None:
        re = 0.2 + 0.1 * rng.uniform()
    draws = rng.uniform(size=n_beats)
    labels = np.zeros(n_beats, dtype=bool)
    state = False
    for i in range(n_beats):
        stay = re if state else rn
        if i > 0:
            state = state if draws[i] < stay else not state
        labels[i] = state
    return labels


# ---------------------------------------------------------------------------
# noise generator

@dataclass(frozen=True)
class NoiseModel:
    """Base all-pole noise model whose poles drift on a random walk."""

    a: np.ndarray                 # [1, a1, .., ap]
    sigma2: float
    walk_step: float = 0.002      # per-update pole step (complex std)
    update_every: int = 25        # samples between pole updates
    max_radius: float = 0.998

    def __post_init__(self):
        poles = ar_poles(self.a)
        if np.any(np.abs(poles) >= 1.0):
            raise ValidationError("base noise model is unstable")


def _synthetic_noise_seed(ntype: str, fs: float, seconds: float = 20.0) -> np.ndarray:
    """Deterministic 20 s colored-noise segment characterizing one noise type.

    MA emphasizes a broad 5-45 Hz band, EM low-frequency bursts, BW content
    below ~0.7 Hz; a small white floor keeps the AR fit well conditioned.
    """
    idx = NOISE_TYPES.index(ntype)
    rng = np.random.default_rng([_NOISE_SEED_BASE, idx, int(fs)])
    n = int(seconds * fs)
    white = rng.standard_normal(n)
    if ntype == "MA":
        b, a = sps.butter(4, [5.0 / (fs / 2), min(45.0, 0.45 * fs) / (fs / 2)], "band")
        x = sps.lfilter(b, a, white)
    elif ntype == "EM":
        b, a = sps.butter(4, min(4.0, 0.4 * fs) / (fs / 2), "low")
        slow = sps.lfilter(b, a, white)
        b2, a2 = sps.butter(2, 0.15 / (fs / 2), "low")
        envelope = 1.0 + 4.0 * np.abs(sps.lfilter(b2, a2, rng.standard_normal(n))) * np.sqrt(fs)
        x = slow * envelope
    elif ntype == "BW":
        b, a = sps.butter(4, 0.7 / (fs / 2), "low")
        x = sps.lfilter(b, a, white) * np.sqrt(fs)
    else:
        raise ValidationError(f"unknown noise type {ntype!r}")
    x = x + 0.01 * x.std() * rng.standard_normal(n)
    return x / x.std()


@lru_cache(maxsize=16)
def noise_base_model(ntype: str, fs: int, order: int = NOISE_AR_ORDER) -> NoiseModel:
    seed = _synthetic_noise_seed(ntype, fs)
    a, sigma2 = ar_fit_burg(seed - seed.mean(), order)
    return NoiseModel(a=a, sigma2=sigma2)


def _walk_poles(poles: np.ndarray, rng: np.random.Generator, step: float,
                max_radius: float) -> np.ndarray:
    """One random-walk step preserving conjugate symmetry and stability."""
    out = poles.copy()
    done = np.zeros(poles.size, dtype=bool)
    for i, p in enumerate(poles):
        if done[i]:
            continue
        if abs(p.imag) < 1e-12:
            q = p + step * rng.standard_normal()
            q = complex(q.real, 0.0)
            pair = None
        else:
            q = p + step * (rng.standard_normal() + 1j * rng.standard_normal())
            # mirror onto the conjugate partner
            conj_idx = [j for j in range(poles.size)
                        if not done[j] and j != i
                        and abs(poles[j] - np.conj(p)) < 1e-9]
            pair = conj_idx[0] if conj_idx else None
        if abs(q) >= max_radius:
            q *= max_radius / abs(q)
        out[i] = q
        done[i] = True
        if pair is not None:
            out[pair] = np.conj(q)
            done[pair] = True
    return out


def generate_noise(model: NoiseModel, n: int,
                   rng: np.random.Generator) -> np.ndarray:
    """Three correlated noise channels (3, n).

    Two channels are driven by independent excitations through the slowly
    pole-drifting all-pole filter; the third is the first principal
    component of the first two.
    """
    if n < 1:
        raise ValidationError("need at least one sample")
    chans = np.empty((2, n))
    for c in range(2):
        poles = ar_poles(model.a)
        x = rng.standard_normal(n) * np.sqrt(model.sigma2)
        y = np.empty(n)
        zi = np.zeros(len(model.a) - 1)
        start = 0
        a = model.a
        while start < n:
            stop = min(n, start + model.update_every)
            y[start:stop], zi = sps.lfilter([1.0], a, x[start:stop], zi=zi)
            if model.walk_step > 0.0:
                poles = _walk_poles(poles, rng, model.walk_step, model.max_radius)
                a = ar_from_poles(poles)
            start = stop
        chans[c] = y
    centered = chans - chans.mean(axis=1, keepdims=True)
    cov = centered @ centered.T / max(1, n - 1)
    evals, evecs = np.linalg.eigh(cov)
    w = evecs[:, np.argmax(evals)]
    if w[0] < 0:
        w = -w
    pc1 = w @ centered
    return np.vstack([chans, pc1])


# ---------------------------------------------------------------------------
# calibration

def calibrate_gain(x: np.ndarray, v: np.ndarray, snr_db: float,
                   fs: float | None = None, highpass: bool = False) -> float:
    """Gain p with 10*log10(Px / (p^2 Pv)) == snr_db for the mix x + p*v.

    With ``highpass`` the power of v is measured after a 10th-order 1 Hz
    zero-phase high-pass, so baseline content does not eat into the budget
    of broadband noise.
    """
    x = np.asarray(x, dtype=float)
    v = np.asarray(v, dtype=float)
    px = float(np.mean(x**2))
    vm = highpass_zero_phase(v.ravel(), fs, 1.0, order=10) if highpass else v
    pv = float(np.mean(np.asarray(vm) ** 2))
    if pv == 0.0:
        raise ValidationError("cannot calibrate against a zero-power signal")
    return float(np.sqrt(px / pv) * 10.0 ** (-snr_db / 20.0))


def measured_snr_db(x: np.ndarray, added: np.ndarray,
                    fs: float | None = None, highpass: bool = False) -> float:
    """SNR implied by a mix component pair, using the calibration convention."""
    x = np.asarray(x, dtype=float)
    a = np.asarray(added, dtype=float)
    am = highpass_zero_phase(a.ravel(), fs, 1.0, order=10) if highpass else a
    return float(10.0 * np.log10(np.mean(x**2) / np.mean(np.asarray(am) ** 2)))


# ---------------------------------------------------------------------------
# scenario configuration

@dataclass(frozen=True)
class FetusConfig:
    fhr: float = 140.0
    facc: float = 0.0
    facctype: str = "none"
    fres: float = 0.9
    fvcg: int = 1
    fectb: bool = False
    ftraj: str = "none"
    snr_fm: float = -9.0
    stream_id: int = 1


@dataclass(frozen=True)
class ScenarioConfig:
    fs: int = 250
    duration: float = 60.0
    mhr: float = 85.0
    macc: float = 0.0
    macctype: str = "none"
    mres: float = 0.25
    mvcg: int = 1
    mectb: bool = False
    snr_mn: float = 12.0
    ntype: tuple[str, ...] = ("MA",)
    seed: int = 0
    fetuses: tuple[FetusConfig, ...] = (FetusConfig(),)
    contraction: dict | None = None
    psi_max: tuple[float, float, float] = PSI_MAX_DEFAULT

    def __post_init__(self):
        if self.fs <= 0 or self.duration <= 0:
            raise ValidationError("fs and duration must be positive")
        for nt in self.ntype:
            if nt not in NOISE_TYPES:
                raise ValidationError(f"unknown noise type {nt!r}")
        if not 1 <= self.mvcg <= 9:
            raise ValidationError("mvcg selector must be in 1..9")
        for f in self.fetuses:
            if not 1 <= f.fvcg <= 9:
                raise ValidationError("fvcg selector must be in 1..9")
        if not np.isfinite(self.snr_mn):
            raise ValidationError("snr_mn must be finite")
        for f in self.fetuses:
            if not np.isfinite(f.snr_fm):
                raise ValidationError("snr_fm must be finite")

    def to_json(self) -> str:
        obj = asdict(self)
        first = obj.pop("fetuses")[0] if self.fetuses else {}
        obj.update(first)
        if len(self.fetuses) > 1:
            obj["extra_fetuses"] = [asdict(f) for f in self.fetuses[1:]]
        obj["ntype"] = list(self.ntype)
        obj["psi_max"] = list(self.psi_max)
        return json.dumps(obj, indent=2)

    @staticmethod
    def from_json(text: str) -> "ScenarioConfig":
        obj = json.loads(text)
        fetal_keys = {"fhr", "facc", "facctype", "fres", "fvcg", "fectb",
                      "ftraj", "snr_fm", "stream_id"}
        first = {k: obj.pop(k) for k in list(obj) if k in fetal_keys}
        extras = [FetusConfig(**f) for f in obj.pop("extra_fetuses", [])]
        fetuses = (FetusConfig(**first), *extras)
        if "ntype" in obj:
            obj["ntype"] = tuple(obj["ntype"])
        if "psi_max" in obj:
            obj["psi_max"] = tuple(obj["psi_max"])
        return ScenarioConfig(fetuses=fetuses, **obj)


@dataclass
class SourceTruth:
    """Ground truth for one cardiac source."""

    projection: SignalRecord          # gain-scaled contribution to the mixture
    annotations: BeatAnnotations
    beat_labels: np.ndarray           # True where ectopic
    hr_bpm: np.ndarray
    gain: float


@dataclass
class SimulationOutput:
    mixture: SignalRecord
    maternal: SourceTruth
    fetal: list[SourceTruth]
    noise: SignalRecord
    noise_gain: float
    config: ScenarioConfig


def _rng(seed: int, label: int) -> np.random.Generator:
    """Independent per-purpose stream; adding sources never shifts others."""
    return np.random.default_rng([seed, label])


_LBL_MATERNAL_HR = 1
_LBL_MATERNAL_ECT = 2
_LBL_NOISE = 3
_LBL_FETAL_BASE = 10  # fetus k uses base + 4*stream_id + {0,1,2}


def _rr_for_duration(hr_fn, duration: float) -> tuple[np.ndarray, np.ndarray]:
    """Generate per-beat HR (via hr_fn(n_beats)) until the RRs cover duration."""
    n_beats = max(4, int(np.ceil(duration * 4.0)))
    while True:
        hr = hr_fn(n_beats)
        rr = 60.0 / hr
        if rr.sum() >= duration:
            cum = np.cumsum(rr)
            keep = int(np.searchsorted(cum, duration)) + 1
            return rr[:keep], hr[:keep]
        n_beats *= 2


def _source_waveform(models, ect_models, rr: np.ndarray, labels: np.ndarray,
                     fs: int, n: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Dipole trajectory trimmed to n samples, starting mid-cycle.

    The first half RR is kept as lead-in (its R-peak falls before sample 0),
    so records begin in diastole rather than on a clipped QRS.
    """
    d, peaks = generate_vcg(models, rr, fs, labels=labels, ectopic_models=ect_models)
    shift = int(peaks[1] // 2) if peaks.size > 1 else 0
    d = d[:, shift:]
    peaks = peaks[1:] - shift
    labels = labels[1:]
    d = d[:, :n] if d.shape[1] >= n else np.pad(d, ((0, 0), (0, n - d.shape[1])))
    keep = peaks < n
    return d, peaks[keep], labels[:peaks.size][keep]


def _fetal_path(traj: str, heart: HeartSpec, scene: DipoleScene, n: int,
                rng: np.random.Generator) -> np.ndarray:
    """Fetal heart path (n, 3) in cylindrical coordinates."""
    th0, rho0, z0 = heart.position
    u = np.linspace(0.0, 1.0, n)
    if traj == "none":
        return np.tile([th0, rho0, z0], (n, 1))
    if traj == "linear":
        dth, dz = 0.15, 0.10 * scene.height
        return np.stack([th0 + dth * u, np.full(n, rho0), z0 + dz * u], axis=1)
    if traj == "helix":
        turns, dz = 0.5, 0.10 * scene.height
        return np.stack([th0 + 2.0 * np.pi * turns * u, np.full(n, rho0),
                         z0 + dz * u], axis=1)
    if traj == "spline":
        k = 5
        tk = np.linspace(0.0, 1.0, k)
        way_th = th0 + rng.uniform(-0.2, 0.2, k)
        way_rho = np.clip(rho0 + rng.uniform(-0.05, 0.05, k), 0.05,
                          0.95 * scene.radius)
        way_z = z0 + rng.uniform(-0.05, 0.05, k) * scene.height
        return np.stack([CubicSpline(tk, way_th)(u), CubicSpline(tk, way_rho)(u),
                         CubicSpline(tk, way_z)(u)], axis=1)
    raise ValidationError(f"unknown trajectory kind {traj!r}")


def _project_source(dipole: np.ndarray, pos_cyl: np.ndarray, psi0: np.ndarray,
                    beta: np.ndarray | None, psi_max: np.ndarray,
                    shift_frac: float, scene: DipoleScene) -> np.ndarray:
    """Rotate, translate and project one dipole trajectory to (M, N).

    ``pos_cyl`` is the heart path in cylindrical coordinates: either a
    static (3,) position or an (N, 3) trajectory. ``beta`` couples both the
    rotation angles and a z-translation of ``shift_frac`` x cylinder height
    to the breathing waveform.
    """
    n = dipole.shape[1]
    pos_cyl = np.asarray(pos_cyl, dtype=float)
    path = np.tile(pos_cyl, (n, 1)) if pos_cyl.ndim == 1 else pos_cyl.copy()
    if beta is None:
        rotated = rotation_matrix(*psi0) @ dipole   # (3, N)
    else:
        psi = psi_max[None, :] * beta[:, None] + psi0[None, :]
        rot = rotation_matrices(psi)                # (N, 3, 3)
        rotated = np.einsum("nij,jn->in", rot, dipole)
        path[:, 2] = path[:, 2] + shift_frac * scene.height * beta
    xyz = np.stack([path[:, 1] * np.cos(path[:, 0]),
                    path[:, 1] * np.sin(path[:, 0]),
                    path[:, 2]], axis=1)
    if np.ptp(xyz, axis=0).max() < 1e-15:
        h = projection_matrix(scene.electrode_xyz, scene.reference_xyz, xyz[0])
        return h @ rotated                          # (M, N)
    h = projection_matrix(scene.electrode_xyz, scene.reference_xyz, xyz)
    return np.einsum("nmj,jn->mn", h, rotated)


def simulate(config: ScenarioConfig, scene: DipoleScene | None = None) -> SimulationOutput:
    """Generate one abdominal mixture with full ground truth."""
    scene = scene or default_scene()
    if len(config.fetuses) > len(scene.fetal):
        raise ValidationError("scene does not place enough fetal hearts")
    fs = config.fs
    n = int(round(config.duration * fs))
    abd = list(scene.abdominal_indices())
    names = []
    for i in range(scene.n_electrodes):
        if i == scene.chest:
            names.append("chest")
        elif i in abd:
            names.append(f"abd{abd.index(i) + 1}")
        else:
            names.append(f"aux{i + 1}")
    labels = tuple(names)

    contraction = config.contraction or {}
    # --- maternal source ------------------------------------------------
    rng_m = _rng(config.seed, _LBL_MATERNAL_HR)
    rr_m, hr_m = _rr_for_duration(
        lambda nb: hr_series(config.mhr, config.macctype, nb, rng=rng_m,
                             magnitude_bpm=config.macc), config.duration + 2.0)
    ect_m = (ectopic_sequence(rr_m.size, _rng(config.seed, _LBL_MATERNAL_ECT))
             if config.mectb else np.zeros(rr_m.size, dtype=bool))
    d_m, peaks_m, ect_m = _source_waveform(
        vcg_set(config.mvcg), ectopic_set(config.mvcg), rr_m, ect_m, fs, n)
    beta_m = (respiration_waveform(config.mres, n, fs) if config.mres > 0 else None)
    s_m = _project_source(d_m, np.asarray(scene.maternal.position, dtype=float),
                          np.asarray(scene.maternal.orientation, dtype=float),
                          beta_m, np.asarray(config.psi_max), MATERNAL_BREATH_SHIFT,
                          scene)
    maternal = SourceTruth(
        projection=SignalRecord(samples=s_m, fs=fs, labels=labels),
        annotations=BeatAnnotations(indices=peaks_m, fs=fs),
        beat_labels=ect_m,
        hr_bpm=hr_m,
        gain=1.0,
    )
    p_mat_power = float(np.mean(s_m[abd] ** 2))

    # --- fetal sources ----------------------------------------------------
    fetal_truths: list[SourceTruth] = []
    for k, fet in enumerate(config.fetuses):
        base = _LBL_FETAL_BASE + 4 * fet.stream_id
        rng_f = _rng(config.seed, base)
        eff_acctype, eff_mag, eff_center, eff_width = fet.facctype, fet.facc, None, None
        if contraction:
            # umbilical-cord style FHR dip tied to the contraction envelope
            eff_acctype = "mexhat"
            eff_mag = -abs(contraction.get("deceleration_bpm", 20.0))
            eff_width = contraction.get("sigma_s", 5.0)
            eff_center = contraction.get("time_s", config.duration / 2.0)
            if contraction.get("kind", "early") == "late":
                eff_center += 2.0 * eff_width
        rr_f, hr_f = _rr_for_duration(
            lambda nb: hr_series(fet.fhr, eff_acctype, nb, rng=rng_f,
                                 magnitude_bpm=eff_mag, center_s=eff_center,
                                 width_s=eff_width), config.duration + 2.0)
        ect_f = (ectopic_sequence(rr_f.size, _rng(config.seed, base + 1))
                 if fet.fectb else np.zeros(rr_f.size, dtype=bool))
        d_f, peaks_f, ect_f = _source_waveform(
            vcg_set(fet.fvcg), ectopic_set(fet.fvcg), rr_f, ect_f, fs, n)
        heart = scene.fetal[k]
        path = _fetal_path(fet.ftraj, heart, scene, n, _rng(config.seed, base + 2))
        beta_f = respiration_waveform(fet.fres, n, fs) if fet.fres > 0 else None
        s_f = _project_source(d_f, path,
                              np.asarray(heart.orientation, dtype=float),
                              beta_f, np.asarray(config.psi_max), FETAL_BREATH_SHIFT,
                              scene)
        p_f = float(np.sqrt(p_mat_power / np.mean(s_f[abd] ** 2))
                    * 10.0 ** (fet.snr_fm / 20.0))
        fetal_truths.append(SourceTruth(
            projection=SignalRecord(samples=p_f * s_f, fs=fs, labels=labels),
            annotations=BeatAnnotations(indices=peaks_f, fs=fs),
            beat_labels=ect_f,
            hr_bpm=hr_f,
            gain=p_f,
        ))

    # --- noise ------------------------------------------------------------
    rng_n = _rng(config.seed, _LBL_NOISE)
    v = np.zeros((scene.n_electrodes, n))
    noise_pos = 0.5 * (scene.maternal.xyz + scene.fetal[0].xyz)
    h_noise = projection_matrix(scene.electrode_xyz, scene.reference_xyz, noise_pos)
    h_norm = h_noise / max(1e-12, np.abs(h_noise).max())
    any_broadband = False
    for nt in config.ntype:
        model = noise_base_model(nt, fs)
        chans = generate_noise(model, n, rng_n)
        v += h_norm @ chans
        any_broadband |= nt in ("MA", "EM")
    if contraction:
        model = noise_base_model("MA", fs)
        chans = generate_noise(model, n, rng_n)
        t = np.arange(n) / fs
        c0 = contraction.get("time_s", config.duration / 2.0)
        sig = contraction.get("sigma_s", 5.0)
        envelope = contraction.get("noise_scale", 3.0) * np.exp(
            -((t - c0) ** 2) / (2.0 * sig**2))
        v += (h_norm @ chans) * envelope[None, :]
        any_broadband = True
    if np.any(v != 0.0):
        p_n = calibrate_gain(s_m[abd], v[abd], config.snr_mn, fs=fs,
                             highpass=any_broadband)
    else:
        p_n = 0.0
    noise_scaled = p_n * v

    mixture = maternal.projection.samples.copy()
    for fet in fetal_truths:
        mixture = mixture + fet.projection.samples
    mixture = mixture + noise_scaled

    return SimulationOutput(
        mixture=SignalRecord(samples=mixture, fs=fs, labels=labels),
        maternal=maternal,
        fetal=fetal_truths,
        noise=SignalRecord(samples=noise_scaled, fs=fs, labels=labels),
        noise_gain=p_n,
        config=config,
    )
