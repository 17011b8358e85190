"""RIFF/WAV reading and writing for multichannel audio."""

from __future__ import annotations

import wave
from pathlib import Path

import numpy as np
from scipy.io import wavfile

from .spectral import AudioBuffer

__all__ = ["read_wav", "write_wav"]

_INT_SCALE = {2: 32768.0, 3: 8388608.0, 4: 2147483648.0}


def read_wav(path) -> AudioBuffer:
    """Read PCM 16/24/32-bit or float WAV into floats in [-1, 1]."""
    rate, data = wavfile.read(str(path))
    if data.ndim == 1:
        data = data[:, np.newaxis]
    if data.dtype.kind == "f":
        samples = data.astype(np.float64)
    elif data.dtype == np.uint8:
        samples = (data.astype(np.float64) - 128.0) / 128.0
    elif data.dtype == np.int16:
        samples = data / 32768.0
    elif data.dtype == np.int32:
        # scipy left-justifies 24-bit samples into int32
        samples = data / 2147483648.0
    else:
        raise ValueError(f"unsupported WAV sample type {data.dtype}")
    return AudioBuffer(samples.T.copy(), float(rate))


def write_wav(path, audio: AudioBuffer, fmt: str = "float32"):
    """Write ``audio`` as ``float32``, ``pcm16`` or ``pcm24``.

    Float output round-trips float32-representable samples exactly; integer
    formats clip to [-1, 1).
    """
    path = Path(path)
    data = audio.samples.T
    rate = int(round(audio.sample_rate))
    if fmt == "float32":
        wavfile.write(str(path), rate, np.ascontiguousarray(data, dtype=np.float32))
        return
    width = {"pcm16": 2, "pcm24": 3}.get(fmt)
    if width is None:
        raise ValueError(f"unknown WAV format {fmt!r}")
    scale = _INT_SCALE[width]
    # interleaved frames must be contiguous before the byte view below
    ints = np.ascontiguousarray(np.clip(np.round(data * scale), -scale, scale - 1), dtype="<i4")
    if width == 2:
        raw = ints.astype("<i2").tobytes()
    else:
        raw = ints.view(np.uint8).reshape(-1, 4)[:, :3].tobytes()
    with wave.open(str(path), "wb") as w:
        w.setnchannels(audio.n_channels)
        w.setsampwidth(width)
        w.setframerate(rate)
        w.writeframes(raw)
