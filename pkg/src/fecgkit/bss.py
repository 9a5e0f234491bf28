"""Blind source separation: PCA and kurtosis-contrast ICA."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .records import SignalRecord


@dataclass
class PcaResult:
    sources: np.ndarray      # (p, N), ordered by descending eigenvalue
    basis: np.ndarray        # (p, p), columns are the principal directions
    eigenvalues: np.ndarray  # (p,), descending
    mean: np.ndarray         # (p,) channel means removed before the transform

    def back_project(self, keep: slice | np.ndarray | None = None) -> np.ndarray:
        """Reconstruct the centred channels from all (or some) components."""
        if keep is None:
            return self.basis @ self.sources
        w = self.basis[:, keep]
        return w @ self.sources[keep]


def pca_transform(record: SignalRecord) -> PcaResult:
    """Principal components of the centred channels.

    Sources are the projections onto the orthonormal eigenvector basis of
    the channel covariance, ordered by descending eigenvalue. Rank
    deficiency simply yields trailing zero eigenvalues. Eigenvector signs
    are fixed so the largest-magnitude entry of each column is positive.
    """
    if record.n_channels < 2:
        raise ValidationError("PCA needs at least 2 channels")
    x = record.samples - record.samples.mean(axis=1, keepdims=True)
    cov = x @ x.T / max(1, x.shape[1] - 1)
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1]
    evals, evecs = np.maximum(evals[order], 0.0), evecs[:, order]
    flip = np.sign(evecs[np.argmax(np.abs(evecs), axis=0), np.arange(evecs.shape[1])])
    flip[flip == 0] = 1.0
    evecs = evecs * flip[None, :]
    return PcaResult(sources=evecs.T @ x, basis=evecs, eigenvalues=evals,
                     mean=record.samples.mean(axis=1))


@dataclass
class IcaResult:
    sources: np.ndarray       # (k, N), unit variance
    unmixing: np.ndarray      # (k, p): sources = unmixing @ centred channels
    whitening: np.ndarray     # (k, p)
    converged: bool
    iterations: int
    mean: np.ndarray

    @property
    def mixing(self) -> np.ndarray:
        """Pseudo-inverse map from sources back to centred channels."""
        return np.linalg.pinv(self.unmixing)


def _sym_decorrelate(w: np.ndarray) -> np.ndarray:
    """W <- (W W^T)^(-1/2) W, keeping all rows orthonormal."""
    evals, evecs = np.linalg.eigh(w @ w.T)
    evals = np.maximum(evals, 1e-12)
    return (evecs @ np.diag(evals**-0.5) @ evecs.T) @ w


def ica_transform(record: SignalRecord, seed: int = 0, max_iter: int = 500,
                  tol: float = 1e-10, rank_rtol: float = 1e-9) -> IcaResult:
    """Independent components by fixed-point kurtosis maximization.

    Channels are centred and whitened through the eigenvalue decomposition
    of their covariance (components under ``rank_rtol`` of the leading
    eigenvalue are dropped); the remaining rotation is found by iterating
    w <- E{z (w.z)^3} - 3w over all rows with symmetric re-orthogonalization,
    the fixed point of the kurtosis contrast. Non-convergence is reported
    in the result rather than raised.
    """
    if record.n_channels < 2:
        raise ValidationError("ICA needs at least 2 channels")
    x = record.samples - record.samples.mean(axis=1, keepdims=True)
    n = x.shape[1]
    cov = x @ x.T / max(1, n - 1)
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1]
    evals, evecs = evals[order], evecs[:, order]
    keep = evals > rank_rtol * max(evals[0], 1e-300)
    if not keep.any():
        raise ValidationError("zero-variance input")
    whitening = np.diag(evals[keep] ** -0.5) @ evecs[:, keep].T
    z = whitening @ x  # (k, N), identity covariance

    k = z.shape[0]
    rng = np.random.default_rng(seed)
    w = _sym_decorrelate(rng.standard_normal((k, k)))
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        proj = w @ z                       # (k, N)
        w_new = (proj**3 @ z.T) / n - 3.0 * w
        w_new = _sym_decorrelate(w_new)
        delta = float(np.max(np.abs(np.abs(np.sum(w_new * w, axis=1)) - 1.0)))
        w = w_new
        if delta < tol:
            converged = True
            break
    sources = w @ z
    sd = sources.std(axis=1, ddof=0)
    sd[sd == 0] = 1.0
    sources = sources / sd[:, None]
    unmixing = np.diag(1.0 / sd) @ w @ whitening
    return IcaResult(sources=sources, unmixing=unmixing, whitening=whitening,
                     converged=converged, iterations=it,
                     mean=record.samples.mean(axis=1))
