"""Anechoic moving-source scene generator with ground truth.

Each source is mixed frame by frame in the STFT domain: within a frame the
source is treated as static at its current azimuth and every channel picks up
that direction's plane-wave phase shifts. Mixing is therefore exactly the
frame-wise constant model the separation stage assumes.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geometry import ArrayGeometry, bin_frequencies
from .spectral import AudioBuffer, istft, stft
from .trajectories import TrajectorySet
from .wavio import read_wav

__all__ = [
    "SourceSpec",
    "SceneSpec",
    "SynthResult",
    "default_scene",
    "load_scene",
    "write_scene",
    "speech_like",
    "tone_complex",
    "noise_bursts",
    "synthesize",
]


@dataclass
class SourceSpec:
    """One moving source.

    ``speed_deg_s`` is signed: positive moves counter-clockwise (increasing
    azimuth). ``activity`` limits the time span in which the source emits.
    """

    start_deg: float = 0.0
    speed_deg_s: float = 24.0
    signal: str = "speech"
    f0: float = 140.0
    level_db: float = 0.0
    activity: tuple | None = None
    distance: float = 1.0


@dataclass
class SceneSpec:
    duration: float = 10.0
    sources: list = field(default_factory=list)
    noise_snr_db: float | None = 30.0
    noise_color: str = "white"  # "white" or "pink" (power falling as 1/f)
    seed: int = 0

    def validate(self, frame_period: float):
        if self.duration <= 0:
            raise ValueError("scene duration must be positive")
        for s in self.sources:
            if abs(np.radians(s.speed_deg_s)) * frame_period >= np.pi:
                raise ValueError("angular velocity exceeds pi per frame")


@dataclass
class SynthResult:
    mixture: AudioBuffer
    images: np.ndarray  # (P, M, T) per-source array images
    references: list  # per-source channel-1 images as single-channel AudioBuffers
    dry: np.ndarray  # (P, T) source signals at the array origin
    truth: TrajectorySet
    vad: np.ndarray  # (P, N) frame activity
    gates: np.ndarray  # (P, T) sample-level activity


def default_scene(seed: int = 0, duration: float = 10.0) -> SceneSpec:
    """Two talkers circling in opposite directions and crossing once."""
    return SceneSpec(
        duration=duration,
        sources=[
            SourceSpec(start_deg=0.0, speed_deg_s=24.0, signal="speech", f0=120.0),
            SourceSpec(start_deg=180.0, speed_deg_s=-24.0, signal="speech", f0=210.0),
        ],
        noise_snr_db=10.0,
        noise_color="pink",
        seed=seed,
    )


_SOURCE_KEYS = {"start_deg": float, "speed_deg_s": float, "signal": str, "f0": float,
                "level_db": float, "activity": str, "distance": float, "direction": str}


def load_scene(path) -> SceneSpec:
    """Read a flat ``key = value`` scene description.

    Global keys: ``duration``, ``noise_snr_db`` (``none`` disables noise),
    ``noise_color`` (``white`` or ``pink``), ``seed``. Per-source keys use ``source.<i>.<key>`` with keys
    ``start_deg``, ``speed_deg_s``, ``direction`` (``cw``/``ccw``), ``signal``
    (``speech``, ``tones``, ``noise`` or a WAV path), ``f0``, ``level_db``,
    ``activity`` (``start-end`` seconds) and ``distance``.
    """
    scene = SceneSpec()
    sources: dict[int, dict] = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key == "duration":
            scene.duration = float(value)
        elif key == "noise_snr_db":
            scene.noise_snr_db = None if value.lower() == "none" else float(value)
        elif key == "noise_color":
            scene.noise_color = value.lower()
        elif key == "seed":
            scene.seed = int(value)
        elif key.startswith("source."):
            parts = key.split(".")
            if len(parts) != 3 or parts[2] not in _SOURCE_KEYS:
                raise ValueError(f"{path}:{lineno}: unknown source key {key!r}")
            sources.setdefault(int(parts[1]), {})[parts[2]] = value
        else:
            raise ValueError(f"{path}:{lineno}: unknown key {key!r}")
    for idx in sorted(sources):
        kv = sources[idx]
        spec = SourceSpec()
        for k, v in kv.items():
            if k in ("direction", "activity"):
                continue
            setattr(spec, k, _SOURCE_KEYS[k](v))
        if "direction" in kv:
            d = kv["direction"].lower()
            if d not in ("cw", "ccw"):
                raise ValueError(f"{path}: direction must be cw or ccw")
            spec.speed_deg_s = abs(spec.speed_deg_s) * (-1 if d == "cw" else 1)
        if "activity" in kv:
            a, b = kv["activity"].split("-")
            spec.activity = (float(a), float(b))
        scene.sources.append(spec)
    return scene


def write_scene(path, scene: SceneSpec):
    lines = [f"duration = {scene.duration}",
             f"noise_snr_db = {'none' if scene.noise_snr_db is None else scene.noise_snr_db}",
             f"noise_color = {scene.noise_color}",
             f"seed = {scene.seed}"]
    for i, s in enumerate(scene.sources, 1):
        lines += [f"source.{i}.start_deg = {s.start_deg}",
                  f"source.{i}.speed_deg_s = {s.speed_deg_s}",
                  f"source.{i}.signal = {s.signal}",
                  f"source.{i}.f0 = {s.f0}",
                  f"source.{i}.level_db = {s.level_db}",
                  f"source.{i}.distance = {s.distance}"]
        if s.activity is not None:
            lines.append(f"source.{i}.activity = {s.activity[0]}-{s.activity[1]}")
    Path(path).write_text("\n".join(lines) + "\n")


def _syllable_gate(n_samples: int, fs: float, rng, start: int = 0, stop: int | None = None):
    """Random syllable/pause pattern; returns a list of (begin, end) sample spans."""
    stop = n_samples if stop is None else stop
    spans = []
    t = start + int(rng.uniform(0.0, 0.2) * fs)
    while t < stop:
        n_syll = rng.integers(2, 7)
        for _ in range(n_syll):
            length = int(rng.uniform(0.12, 0.32) * fs)
            end = min(t + length, stop)
            if end - t > int(0.04 * fs):
                spans.append((t, end))
            t = end + int(rng.uniform(0.02, 0.08) * fs)
            if t >= stop:
                break
        t += int(rng.uniform(0.15, 0.5) * fs)
    return spans


def _noise(shape, color: str, rng) -> np.ndarray:
    """Independent unit-variance noise per channel, white or pink."""
    x = rng.standard_normal(shape)
    if color == "white":
        return x
    if color != "pink":
        raise ValueError(f"unknown noise colour {color!r}")
    X = np.fft.rfft(x, axis=-1)
    k = np.arange(X.shape[-1], dtype=float)
    k[0] = 1.0
    x = np.fft.irfft(X / np.sqrt(k), n=shape[-1], axis=-1)
    return x / x.std(axis=-1, keepdims=True)


def _envelope(length: int, fs: float) -> np.ndarray:
    ramp = max(1, min(int(0.02 * fs), length // 2))
    env = np.ones(length)
    r = 0.5 - 0.5 * np.cos(np.pi * np.arange(ramp) / ramp)
    env[:ramp] = r
    env[length - ramp:] = r[::-1]
    return env


def speech_like(n_samples: int, fs: float, rng: np.random.Generator, f0: float = 140.0,
                span: tuple | None = None):
    """Voiced syllables with gliding pitch and random formants, plus short fricative noise.

    Returns (signal, gate) where gate marks the emitting samples.
    """
    start, stop = (0, n_samples) if span is None else span
    x = np.zeros(n_samples)
    gate = np.zeros(n_samples)
    nyq = fs / 2
    for b, e in _syllable_gate(n_samples, fs, rng, start, stop):
        L = e - b
        t = np.arange(L) / fs
        glide = rng.uniform(-0.25, 0.25)
        f_inst = f0 * rng.uniform(0.85, 1.2) * (1 + glide * t / max(t[-1], 1e-3)) * (1 + 0.03 * np.sin(2 * np.pi * 5 * t))
        phase = 2 * np.pi * np.cumsum(f_inst) / fs
        formants = np.sort(rng.uniform([300, 900, 2200], [900, 2400, 3600]))
        n_harm = int(min(7000, 0.95 * nyq) / (f_inst.max()))
        seg = np.zeros(L)
        for h in range(1, n_harm + 1):
            fh = h * f_inst.mean()
            gain = sum(np.exp(-0.5 * ((fh - fm) / (90 + 0.08 * fm)) ** 2) for fm in formants)
            gain = (gain + 0.08) / h ** 0.6
            seg += gain * np.sin(h * phase + rng.uniform(0, 2 * np.pi))
        if rng.random() < 0.3:
            burst = rng.standard_normal(L)
            burst = np.diff(burst, prepend=0.0)  # tilt towards high frequencies
            seg += 0.3 * burst * np.std(seg) / (np.std(burst) + 1e-12)
        seg *= _envelope(L, fs)
        x[b:e] += seg
        gate[b:e] = 1.0
    return x, gate


def tone_complex(n_samples: int, fs: float, rng: np.random.Generator, f0: float = 220.0,
                 span: tuple | None = None):
    start, stop = (0, n_samples) if span is None else span
    t = np.arange(stop - start) / fs
    x = np.zeros(n_samples)
    n_harm = int(0.9 * fs / 2 / f0)
    seg = sum(np.sin(2 * np.pi * h * f0 * t + rng.uniform(0, 2 * np.pi)) / h for h in range(1, n_harm + 1))
    x[start:stop] = seg * _envelope(stop - start, fs)
    gate = np.zeros(n_samples)
    gate[start:stop] = 1.0
    return x, gate


def noise_bursts(n_samples: int, fs: float, rng: np.random.Generator, f0: float = 0.0,
                 span: tuple | None = None):
    """Speech-shaped (low-pass tilted) noise gated with the syllable pattern."""
    start, stop = (0, n_samples) if span is None else span
    white = rng.standard_normal(n_samples)
    spec = np.fft.rfft(white)
    f = np.fft.rfftfreq(n_samples, 1 / fs)
    spec *= 1.0 / np.sqrt(1 + (f / 500.0) ** 2)
    shaped = np.fft.irfft(spec, n=n_samples)
    x = np.zeros(n_samples)
    gate = np.zeros(n_samples)
    for b, e in _syllable_gate(n_samples, fs, rng, start, stop):
        x[b:e] = shaped[b:e] * _envelope(e - b, fs)
        gate[b:e] = 1.0
    return x, gate


_GENERATORS = {"speech": speech_like, "tones": tone_complex, "noise": noise_bursts}


def _source_signal(spec: SourceSpec, n_samples: int, fs: float, rng):
    span = None
    if spec.activity is not None:
        a = int(np.clip(spec.activity[0] * fs, 0, n_samples))
        b = int(np.clip(spec.activity[1] * fs, a, n_samples))
        span = (a, b)
    if spec.signal in _GENERATORS:
        x, gate = _GENERATORS[spec.signal](n_samples, fs, rng, spec.f0, span=span)
    else:
        audio = read_wav(spec.signal)
        if abs(audio.sample_rate - fs) > 1e-6:
            raise ValueError(f"{spec.signal}: sample rate {audio.sample_rate} != {fs}")
        x = np.zeros(n_samples)
        src = audio.samples[0, :n_samples]
        x[:len(src)] = src
        gate = (np.abs(x) > 0).astype(float)
        if span is not None:
            mask = np.zeros(n_samples)
            mask[span[0]:span[1]] = 1.0
            x *= mask
            gate *= mask
    rms = np.sqrt(np.mean(x[gate > 0] ** 2)) if np.any(gate > 0) else 0.0
    if rms > 0:
        x = x * (0.05 / rms) * 10 ** (spec.level_db / 20)
    return x, gate


def synthesize(scene: SceneSpec, geom: ArrayGeometry, sample_rate: float = 24000,
               window_length: int = 2048, hop: int | None = None) -> SynthResult:
    """Render a scene to array signals with ground-truth trajectories and VAD."""
    hop = window_length // 2 if hop is None else hop
    frame_period = hop / sample_rate
    scene.validate(frame_period)
    rng = np.random.default_rng(scene.seed)
    T = int(round(scene.duration * sample_rate))
    if T < window_length:
        raise ValueError("scene shorter than one analysis window")
    M = geom.n_mics
    P = len(scene.sources)
    images = np.zeros((P, M, T))
    dry = np.zeros((P, T))
    gates = np.zeros((P, T))
    n_frames = int(np.ceil(T / hop)) + 1
    times = np.arange(n_frames) * frame_period
    azimuth = np.zeros((P, n_frames))
    active = np.zeros((P, n_frames), bool)
    vad = np.zeros((P, n_frames), bool)
    omega = bin_frequencies(window_length // 2 + 1, window_length, sample_rate)

    for p, src in enumerate(scene.sources):
        x, gate = _source_signal(src, T, sample_rate, rng)
        dry[p], gates[p] = x, gate
        theta = np.mod(np.radians(src.start_deg) + np.radians(src.speed_deg_s) * times, 2 * np.pi)
        azimuth[p] = theta
        S = stft(AudioBuffer(x, sample_rate), window_length, hop)
        k = np.stack([np.cos(theta), np.sin(theta), np.zeros_like(theta)], axis=-1)  # (N, 3)
        delays = -(k @ geom.mic_positions.T) / geom.speed_of_sound  # (N, M)
        steer = np.exp(-1j * omega[:, None, None] * delays[None, :, :])  # (F, N, M)
        img_spec = S.with_bins(S.bins[:, :, 0:1] * steer)
        images[p] = istft(img_spec).samples

        lo, hi = (0.0, scene.duration) if src.activity is None else src.activity
        active[p] = (times >= lo - 1e-9) & (times <= hi + 1e-9)
        half = hop // 2
        for n in range(n_frames):
            a, b = max(0, n * hop - half), min(T, n * hop + half)
            vad[p, n] = b > a and gate[a:b].mean() > 0.5
        # a frame centred past the end of activity is never voiced
        vad[p] &= active[p]

    mixture = images.sum(axis=0)
    if scene.noise_snr_db is not None and P > 0:
        power = np.mean(mixture ** 2)
        if power > 0:
            noise = _noise(mixture.shape, scene.noise_color, rng)
            mixture = mixture + noise * np.sqrt(power / 10 ** (scene.noise_snr_db / 10))
    truth = TrajectorySet(np.where(active, azimuth, np.nan), np.where(active, 0.0, np.nan), active,
                          list(range(1, P + 1)), frame_period)
    refs = [AudioBuffer(images[p, 0], sample_rate) for p in range(P)]
    return SynthResult(AudioBuffer(mixture, sample_rate), images, refs, dry, truth, vad, gates)
