"""STFT analysis and overlap-add synthesis shared by every processing stage."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "AudioBuffer",
    "Spectrogram",
    "sqrt_hann",
    "stft",
    "istft",
    "frame_energy",
]


@dataclass
class AudioBuffer:
    """Multichannel time-domain signal.

    Attributes:
        samples: real array of shape (n_channels, n_samples).
        sample_rate: sampling frequency in Hz.
    """

    samples: np.ndarray
    sample_rate: float

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=float)
        if samples.ndim == 1:
            samples = samples[np.newaxis, :]
        if samples.ndim != 2:
            raise ValueError("samples must be (channels, time)")
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be positive")
        self.samples = samples

    @property
    def n_channels(self) -> int:
        return self.samples.shape[0]

    @property
    def n_samples(self) -> int:
        return self.samples.shape[1]

    @property
    def duration(self) -> float:
        return self.n_samples / self.sample_rate


@dataclass
class Spectrogram:
    """One-sided multichannel STFT.

    ``bins`` has shape (F, N, M) = (window_length // 2 + 1, frames, channels).
    Frame ``n`` is centred on sample ``n * hop`` of the original signal.
    """

    bins: np.ndarray
    sample_rate: float
    window_length: int
    hop: int
    length: int
    window: np.ndarray | None = None

    @property
    def n_bins(self) -> int:
        return self.bins.shape[0]

    @property
    def n_frames(self) -> int:
        return self.bins.shape[1]

    @property
    def n_channels(self) -> int:
        return self.bins.shape[2]

    @property
    def frame_period(self) -> float:
        return self.hop / self.sample_rate

    def frame_times(self) -> np.ndarray:
        return np.arange(self.n_frames) * self.frame_period

    def analysis_window(self) -> np.ndarray:
        if self.window is None:
            return sqrt_hann(self.window_length)
        return self.window

    def with_bins(self, bins: np.ndarray) -> "Spectrogram":
        """Copy of the metadata around new bin values (channel count may differ)."""
        bins = np.asarray(bins)
        if bins.ndim == 2:
            bins = bins[:, :, np.newaxis]
        return Spectrogram(bins, self.sample_rate, self.window_length, self.hop, self.length, self.window)


def sqrt_hann(n: int) -> np.ndarray:
    """Periodic square-root Hann window; its square sums to one at 50% overlap."""
    return np.sqrt(0.5 - 0.5 * np.cos(2 * np.pi * np.arange(n) / n))


def _check_params(window_length: int, hop: int):
    if window_length <= 0 or window_length % 2:
        raise ValueError("window_length must be a positive even number")
    if hop <= 0 or window_length % hop:
        raise ValueError("hop must divide window_length")


def stft(audio: AudioBuffer, window_length: int = 2048, hop: int | None = None,
         window: np.ndarray | None = None) -> Spectrogram:
    """Short-time Fourier transform of every channel.

    The signal is zero-padded by half a window at the start and enough at the
    end that each sample is covered by full analysis frames.

    Args:
        audio: input signal.
        window_length: DFT size and window length in samples.
        hop: frame advance; defaults to ``window_length // 2``.
        window: optional custom analysis window (default square-root Hann).

    Returns:
        Spectrogram with bins of shape (window_length // 2 + 1, frames, channels).
    """
    if hop is None:
        hop = window_length // 2
    _check_params(window_length, hop)
    if audio.n_samples < window_length:
        raise ValueError(f"audio has {audio.n_samples} samples, shorter than one window ({window_length})")
    if window is None:
        win = sqrt_hann(window_length)
    else:
        win = np.asarray(window, dtype=float)
        if win.shape != (window_length,):
            raise ValueError("window must have window_length samples")

    half = window_length // 2
    n_frames = int(np.ceil(audio.n_samples / hop)) + 1
    padded_len = (n_frames - 1) * hop + window_length
    padded = np.zeros((audio.n_channels, padded_len))
    padded[:, half:half + audio.n_samples] = audio.samples

    idx = np.arange(n_frames)[:, None] * hop + np.arange(window_length)[None, :]
    frames = padded[:, idx] * win  # (M, N, L)
    bins = np.fft.rfft(frames, axis=-1)
    return Spectrogram(
        bins=np.transpose(bins, (2, 1, 0)),
        sample_rate=audio.sample_rate,
        window_length=window_length,
        hop=hop,
        length=audio.n_samples,
        window=None if window is None else win,
    )


def istft(spec: Spectrogram) -> AudioBuffer:
    """Inverse STFT by weighted overlap-add.

    Uses the analysis window for synthesis and divides by the summed squared
    window, which for square-root Hann at 50% overlap is identically one in
    the interior.
    """
    L, hop = spec.window_length, spec.hop
    _check_params(L, hop)
    if spec.n_bins != L // 2 + 1:
        raise ValueError(f"spectrogram has {spec.n_bins} bins, expected {L // 2 + 1} for window {L}")
    win = spec.analysis_window()
    frames = np.fft.irfft(np.transpose(spec.bins, (2, 1, 0)), n=L, axis=-1) * win  # (M, N, L)
    n_ch, n_frames = frames.shape[0], frames.shape[1]
    out_len = (n_frames - 1) * hop + L
    out = np.zeros((n_ch, out_len))
    norm = np.zeros(out_len)
    w2 = win ** 2
    for n in range(n_frames):
        out[:, n * hop:n * hop + L] += frames[:, n]
        norm[n * hop:n * hop + L] += w2
    nz = norm > 1e-10
    out[:, nz] /= norm[nz]
    half = L // 2
    length = spec.length if spec.length else out_len - L
    return AudioBuffer(out[:, half:half + length], spec.sample_rate)


def frame_energy(spec: Spectrogram) -> np.ndarray:
    """Energy of each windowed frame from its one-sided spectrum, shape (N, M).

    By Parseval this equals the sum of squares of the windowed time frame.
    """
    L = spec.window_length
    p = np.abs(spec.bins) ** 2
    weights = np.full(spec.n_bins, 2.0)
    weights[0] = 1.0
    weights[-1] = 1.0
    return np.einsum("f,fnm->nm", weights, p) / L
