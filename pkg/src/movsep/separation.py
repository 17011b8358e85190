"""Wiener masking, delay-and-sum beamforming and resynthesis."""

from __future__ import annotations

import numpy as np

from .geometry import ArrayGeometry, azimuth_vector, bin_frequencies
from .spectral import AudioBuffer, Spectrogram, istft, stft
from .trajectories import TrajectorySet

__all__ = [
    "wiener_masks",
    "apply_masks",
    "dsb",
    "dsb_weights",
    "reconstruct",
    "ideal_ratio_mask",
]

EPS = 1e-12


def wiener_masks(s: np.ndarray, eps: float = EPS, background: int = -1) -> np.ndarray:
    """Ratio masks ``s_p / sum_p s_p`` over the last axis.

    Where the denominator is below ``eps`` the whole mask goes to the
    ``background`` source.
    """
    s = np.asarray(s, dtype=float)
    if np.any(s < 0):
        raise ValueError("source spectrograms must be nonnegative")
    total = s.sum(axis=-1, keepdims=True)
    ok = total >= eps
    m = np.divide(s, total, out=np.zeros_like(s), where=ok)
    low = ~ok[..., 0]
    if np.any(low):
        m[low] = 0.0
        m[low, background] = 1.0
    return m


def apply_masks(spec: Spectrogram, masks: np.ndarray) -> list:
    """Per-source multichannel spectrograms ``m_p * x`` keeping the mixture phase."""
    if masks.shape[:2] != spec.bins.shape[:2]:
        raise ValueError("mask and spectrogram dimensions differ")
    return [spec.with_bins(spec.bins * masks[:, :, p, None]) for p in range(masks.shape[2])]


def dsb_weights(geom: ArrayGeometry, azimuth: np.ndarray, active: np.ndarray, n_bins: int,
                n_dft: int, sample_rate: float, reference: int | None = None) -> np.ndarray:
    """Delay-and-sum weights (F, N, M) steering each frame to ``azimuth``.

    The phase reference is the array centroid, or microphone ``reference``
    when given so the output lines up with that channel. Inactive frames get
    zero weights.
    """
    origin = geom.center if reference is None else geom.mic_positions[reference]
    N = len(azimuth)
    az = np.where(active, azimuth, 0.0)
    k = azimuth_vector(az)  # (N, 3)
    delays = -((geom.mic_positions[None, :, :] - origin) @ k[:, :, None])[..., 0] / geom.speed_of_sound
    omega = bin_frequencies(n_bins, n_dft, sample_rate)
    a = np.exp(-1j * omega[:, None, None] * delays[None, :, :])
    w = a / geom.n_mics
    w[:, ~np.asarray(active, bool)] = 0.0
    assert w.shape == (n_bins, N, geom.n_mics)
    return w


def dsb(y: Spectrogram, traj: TrajectorySet | None, source: int | None, geom: ArrayGeometry,
        reference: int | None = None) -> Spectrogram:
    """Beamform a multichannel spectrogram to one channel, ``w^H y``.

    ``source`` selects the trajectory row to steer to; ``None`` means the
    background, which uses uniform weights ``1/M`` in every frame.
    """
    M = y.n_channels
    if geom.n_mics != M:
        raise ValueError("geometry and spectrogram channel counts differ")
    if source is None:
        out = y.bins.mean(axis=2)
    else:
        if traj.n_frames != y.n_frames:
            raise ValueError("trajectory and spectrogram frame counts differ")
        act = traj.active[source]
        if np.any(~np.isfinite(traj.azimuth[source, act])):
            raise ValueError("active frames must have a defined azimuth")
        w = dsb_weights(geom, traj.azimuth[source], act, y.n_bins, y.window_length, y.sample_rate, reference)
        out = np.einsum("fnm,fnm->fn", w.conj(), y.bins)
    return y.with_bins(out[:, :, None])


def reconstruct(specs) -> list:
    return [istft(s) for s in specs]


def ideal_ratio_mask(references, mixture: Spectrogram, channel: int = 0) -> np.ndarray:
    """Oracle masks ``|S_p| / sum_p |S_p|`` from reference signals.

    Args:
        references: list of AudioBuffer (or arrays), one per source; channel
            ``channel`` of each is used.
        mixture: spectrogram whose STFT settings are reused.
    """
    mags = []
    for ref in references:
        if not isinstance(ref, AudioBuffer):
            ref = AudioBuffer(np.atleast_2d(ref), mixture.sample_rate)
        if ref.n_samples != mixture.length:
            raise ValueError(f"reference has {ref.n_samples} samples, mixture {mixture.length}")
        r = stft(AudioBuffer(ref.samples[[min(channel, ref.n_channels - 1)]], ref.sample_rate),
                 mixture.window_length, mixture.hop)
        mags.append(np.abs(r.bins[:, :, 0]))
    mags = np.stack(mags, axis=-1)
    total = mags.sum(axis=-1, keepdims=True)
    uniform = np.full_like(mags, 1.0 / mags.shape[-1])
    return np.where(total > 0, mags / np.where(total > 0, total, 1.0), uniform)
