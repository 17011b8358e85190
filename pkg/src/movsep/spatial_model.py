"""Spatial side of the separation model: mixture SCMs, spatial weights and source SCMs."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .geometry import DirectionGrid, DoaKernelSet
from .localization import wrapped_gaussian_pdf
from .spectral import Spectrogram
from .trajectories import TrajectorySet

__all__ = [
    "MixtureScm",
    "SpatialWeights",
    "mixture_scm",
    "restore_spatial_weights",
    "add_background_source",
    "spatial_weights",
    "source_scms",
    "write_weights_csv",
]

VAR_MIN = 0.025
VAR_MAX = 0.3
VAR_SUM = 0.325
BACKGROUND_THRESHOLD = 0.01


@dataclass
class MixtureScm:
    """Rank-1 mixture SCMs ``X_fn = xh xh^H`` stored through ``xh`` (F, N, M).

    ``xh`` keeps the phase of the STFT and takes the square root of its
    magnitude, so ``diag(X_fn) = |x_fn|``.
    """

    xh: np.ndarray

    @property
    def shape(self):
        return self.xh.shape

    def matrix(self, f: int, n: int) -> np.ndarray:
        v = self.xh[f, n]
        return np.outer(v, v.conj())

    def dense(self) -> np.ndarray:
        """All matrices (F, N, M, M); only for small problems."""
        return self.xh[..., :, None] * self.xh[..., None, :].conj()

    def kernel_traces(self, kernels: DoaKernelSet) -> np.ndarray:
        """``tr(X_fn W_fd) = |a_fd^H xh_fn|^2``, shape (F, N, D)."""
        g = np.einsum("fdm,fnm->fnd", kernels.steering.conj(), self.xh)
        return g.real ** 2 + g.imag ** 2


def mixture_scm(spec: Spectrogram) -> MixtureScm:
    x = spec.bins
    mag = np.abs(x)
    xh = np.zeros_like(x)
    nz = mag > 0
    xh[nz] = x[nz] / np.sqrt(mag[nz])
    return MixtureScm(xh)


@dataclass
class SpatialWeights:
    """Direction weights ``z`` of shape (N, D, P).

    The last source is the background when ``has_background`` is set.
    """

    z: np.ndarray
    has_background: bool = False

    @property
    def n_frames(self) -> int:
        return self.z.shape[0]

    @property
    def n_directions(self) -> int:
        return self.z.shape[1]

    @property
    def n_sources(self) -> int:
        return self.z.shape[2]

    def active(self) -> np.ndarray:
        """(N, P) flags of frames where a source has any weight."""
        return self.z.sum(axis=1) > 0


def restore_spatial_weights(traj: TrajectorySet, grid: DirectionGrid, var_min: float = VAR_MIN,
                            var_max: float = VAR_MAX, c: float = VAR_SUM) -> SpatialWeights:
    """Wrapped Gaussian direction windows around each tracked DOA.

    The tracker variance is clamped to [var_min, var_max] and inverted as
    ``c - var``, so an uncertain track gets the narrowest window. Weights are
    normalised to unit sum per active (frame, source) and zero elsewhere.
    """
    if not var_min < var_max:
        raise ValueError("var_min must be below var_max")
    if c <= var_max:
        raise ValueError(f"c = {c} must exceed var_max = {var_max}")
    P, N = traj.n_sources, traj.n_frames
    z = np.zeros((N, grid.n_directions, P))
    for p in range(P):
        act = traj.active[p]
        if not np.any(act):
            continue
        var = traj.variance[p, act]
        if not np.all(np.isfinite(var)) or not np.all(np.isfinite(traj.azimuth[p, act])):
            raise ValueError(f"source {traj.ids[p]}: non-finite azimuth or variance in active frames")
        spread = c - np.clip(var, var_min, var_max)
        dens = wrapped_gaussian_pdf(grid.azimuths[None, :], traj.azimuth[p, act][:, None], spread[:, None])
        z[act, :, p] = dens / dens.sum(axis=1, keepdims=True)
    return SpatialWeights(z)


def add_background_source(weights: SpatialWeights, threshold: float = BACKGROUND_THRESHOLD) -> SpatialWeights:
    """Append a source covering the directions no tracked source claims.

    Per frame, directions where the tracked weights sum below ``threshold``
    get weight one and the result is normalised to unit sum.
    """
    if weights.has_background:
        raise ValueError("weights already include a background source")
    z = weights.z
    bg = (z.sum(axis=2) < threshold).astype(float)
    total = bg.sum(axis=1, keepdims=True)
    # every direction claimed: the background has no support in this frame
    bg = np.divide(bg, total, out=np.zeros_like(bg), where=total > 0)
    return SpatialWeights(np.concatenate([z, bg[:, :, None]], axis=2), has_background=True)


def spatial_weights(traj: TrajectorySet, grid: DirectionGrid, var_min: float = VAR_MIN,
                    var_max: float = VAR_MAX, c: float = VAR_SUM,
                    threshold: float = BACKGROUND_THRESHOLD) -> SpatialWeights:
    return add_background_source(restore_spatial_weights(traj, grid, var_min, var_max, c), threshold)


def source_scms(weights: SpatialWeights, kernels: DoaKernelSet, frames=slice(None)) -> np.ndarray:
    """Dense ``H[f, n, p] = sum_d W_fd z[n, d, p]``, shape (F, N', P, M, M).

    Memory grows with F*N*P*M^2, so restrict ``frames`` for large inputs.
    """
    z = weights.z[frames]
    a = kernels.steering
    return np.einsum("fdm,fde,ndp->fnpme", a, a.conj(), z, optimize=True)


def write_weights_csv(path, weights: SpatialWeights, grid: DirectionGrid, min_weight: float = 0.0):
    """Rows ``frame,source,azimuth_deg,weight``; the background is the last source id."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["frame", "source", "azimuth_deg", "weight"])
        az = np.degrees(grid.azimuths) % 360
        for n in range(weights.n_frames):
            for p in range(weights.n_sources):
                for d in np.nonzero(weights.z[n, :, p] > min_weight)[0]:
                    w.writerow([n, p + 1, f"{az[d]:.4f}", f"{weights.z[n, d, p]:.8g}"])
