"""Bundled vectorcardiogram kernel-parameter sets.

Nine synthetic three-axis kernel sets, derived deterministically from the
canonical seven-kernel cycle below (two P kernels, Q/R/S, two T kernels)
with seeded per-axis perturbations of amplitude, width and centre. Set 1 is
the unperturbed canonical shape. An alternate wide-complex set renders
premature ventricular beats: no P wave, broad high-amplitude QRS, discordant
T. All values are package data, not fitted to any recording.
"""

from __future__ import annotations

import numpy as np

from .ecgmodel import CycleModel, GaussianKernel

N_VCG_SETS = 9

# columns: alpha (mV), b (rad), xi (rad)
_CANONICAL = np.array([
    [0.08, 0.11, -1.18],   # P1
    [0.06, 0.11, -0.98],   # P2
    [-0.12, 0.055, -0.22], # Q
    [1.00, 0.065, 0.00],   # R
    [-0.17, 0.060, 0.21],  # S
    [0.22, 0.28, 1.35],    # T1
    [0.12, 0.23, 1.62],    # T2
])

# static per-axis gains giving a dipole loop mostly in one plane
_AXIS_GAIN = np.array([1.0, 0.6, -0.35])

_ECTOPIC = np.array([
    [-0.25, 0.15, -0.35],
    [1.40, 0.22, 0.05],
    [-0.35, 0.18, 0.50],
    [-0.35, 0.35, 1.70],
    [-0.15, 0.30, 2.10],
])

_PERTURB_SEED = 20140918


def _model_from_rows(rows: np.ndarray) -> CycleModel:
    kernels = tuple(
        GaussianKernel(alpha=float(a), b=float(b), xi=float(x)) for a, b, x in rows
    )
    return CycleModel(kernels=kernels)


def _perturbed(base: np.ndarray, rng: np.random.Generator,
               axis_gain: float) -> np.ndarray:
    rows = base.copy()
    rows[:, 0] *= axis_gain * rng.uniform(0.75, 1.25, rows.shape[0])
    rows[:, 1] *= rng.uniform(0.9, 1.15, rows.shape[0])
    rows[:, 2] += rng.uniform(-0.05, 0.05, rows.shape[0]) * np.pi
    return rows


def _build_sets() -> list[tuple[CycleModel, CycleModel, CycleModel]]:
    sets = []
    for i in range(N_VCG_SETS):
        rng = np.random.default_rng([_PERTURB_SEED, i])
        axes = []
        for ax in range(3):
            if i == 0:
                rows = _CANONICAL.copy()
                rows[:, 0] *= _AXIS_GAIN[ax]
            else:
                rows = _perturbed(_CANONICAL, rng, _AXIS_GAIN[ax])
            axes.append(_model_from_rows(rows))
        sets.append(tuple(axes))
    return sets


_VCG_SETS = _build_sets()


def vcg_set(selector: int) -> tuple[CycleModel, CycleModel, CycleModel]:
    """Three-axis kernel set for selector 1..9."""
    if not 1 <= selector <= N_VCG_SETS:
        raise ValueError(f"VCG selector must be in 1..{N_VCG_SETS}, got {selector}")
    return _VCG_SETS[selector - 1]


def ectopic_set(selector: int) -> tuple[CycleModel, CycleModel, CycleModel]:
    """Wide-complex beat morphology matched to the given selector's gains."""
    if not 1 <= selector <= N_VCG_SETS:
        raise ValueError(f"VCG selector must be in 1..{N_VCG_SETS}, got {selector}")
    rng = np.random.default_rng([_PERTURB_SEED, 100 + selector])
    axes = []
    for ax in range(3):
        rows = _ECTOPIC.copy()
        rows[:, 0] *= _AXIS_GAIN[ax] * rng.uniform(0.9, 1.1)
        axes.append(_model_from_rows(rows))
    return tuple(axes)
