"""Array geometry, azimuth grid, TDOAs, steering vectors and DOA kernels.

Phase convention: with numpy's forward DFT, a plane wave from unit direction
``k`` reaches microphone ``m`` with delay ``-k.p_m / v`` relative to the
origin, so its STFT picks up the factor ``exp(-j w (-k.p_m / v))``. That factor
is the steering vector ``a``, and the DOA kernel of a direction is the rank-1
matrix ``a a^H``, whose ``(m1, m2)`` entry is ``exp(-j w tau(m1, m2))``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

__all__ = [
    "ArrayGeometry",
    "DirectionGrid",
    "DoaKernelSet",
    "tdoa",
    "steering_vector",
    "doa_kernels",
    "bin_frequencies",
    "load_geometry",
    "default_geometry",
    "azimuth_vector",
]

SPEED_OF_SOUND = 343.0


@dataclass(frozen=True)
class ArrayGeometry:
    mic_positions: np.ndarray
    speed_of_sound: float = SPEED_OF_SOUND

    def __post_init__(self):
        pos = np.asarray(self.mic_positions, dtype=float)
        if pos.ndim != 2 or pos.shape[1] != 3:
            raise ValueError("mic_positions must have shape (M, 3)")
        if pos.shape[0] < 2:
            raise ValueError("at least two microphones are required")
        if not np.all(np.isfinite(pos)):
            raise ValueError("mic positions must be finite")
        if self.speed_of_sound <= 0:
            raise ValueError("speed_of_sound must be positive")
        object.__setattr__(self, "mic_positions", pos)

    @property
    def n_mics(self) -> int:
        return self.mic_positions.shape[0]

    @property
    def center(self) -> np.ndarray:
        return self.mic_positions.mean(axis=0)

    def delays(self, k) -> np.ndarray:
        """Arrival delay at each microphone relative to the origin, seconds."""
        k = _unit(k)
        return -(self.mic_positions @ k) / self.speed_of_sound

    def permuted(self, order) -> "ArrayGeometry":
        return ArrayGeometry(self.mic_positions[np.asarray(order)], self.speed_of_sound)


@dataclass(frozen=True)
class DirectionGrid:
    """Uniform azimuth grid on the horizontal plane covering [0, 2*pi)."""

    n_directions: int = 72
    azimuths: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.n_directions < 1:
            raise ValueError("n_directions must be >= 1")
        az = 2 * np.pi * np.arange(self.n_directions) / self.n_directions
        object.__setattr__(self, "azimuths", az)

    @property
    def step(self) -> float:
        return 2 * np.pi / self.n_directions

    def vectors(self) -> np.ndarray:
        """Unit direction vectors, shape (D, 3)."""
        return azimuth_vector(self.azimuths)

    def nearest(self, azimuth) -> np.ndarray:
        return np.round(np.mod(azimuth, 2 * np.pi) / self.step).astype(int) % self.n_directions


def azimuth_vector(azimuth) -> np.ndarray:
    az = np.asarray(azimuth, dtype=float)
    return np.stack([np.cos(az), np.sin(az), np.zeros_like(az)], axis=-1)


def _unit(k) -> np.ndarray:
    k = np.asarray(k, dtype=float)
    if k.shape != (3,):
        raise ValueError("direction vector must have 3 components")
    if abs(np.linalg.norm(k) - 1.0) > 1e-9:
        raise ValueError("direction vector must have unit norm")
    return k


def tdoa(geom: ArrayGeometry, k, m1: int, m2: int) -> float:
    """Time difference of arrival between microphones ``m1`` and ``m2``."""
    k = _unit(k)
    diff = geom.mic_positions[m1] - geom.mic_positions[m2]
    return float(-(k @ diff) / geom.speed_of_sound)


def bin_frequencies(n_bins: int, n_dft: int, sample_rate: float) -> np.ndarray:
    """Angular frequency of each one-sided bin (bin 0 is DC)."""
    return 2 * np.pi * np.arange(n_bins) * sample_rate / n_dft


def steering_vector(geom: ArrayGeometry, k, f: int, n_dft: int, sample_rate: float,
                    origin=None) -> np.ndarray:
    """Array response of bin ``f`` (0-based) to a plane wave from ``k``.

    ``origin`` shifts the phase reference away from the coordinate origin
    (e.g. to the array centroid).
    """
    k = _unit(k)
    omega = 2 * np.pi * f * sample_rate / n_dft
    delays = geom.delays(k)
    if origin is not None:
        delays = delays + (np.asarray(origin, dtype=float) @ k) / geom.speed_of_sound
    return np.exp(-1j * omega * delays)


@dataclass
class DoaKernelSet:
    """DOA kernels ``W[f, d] = a_fd a_fd^H`` kept in factored form.

    Attributes:
        steering: complex array (F, D, M) of steering vectors ``a_fd``.
    """

    steering: np.ndarray
    n_dft: int
    sample_rate: float

    @property
    def n_bins(self) -> int:
        return self.steering.shape[0]

    @property
    def n_directions(self) -> int:
        return self.steering.shape[1]

    @property
    def n_mics(self) -> int:
        return self.steering.shape[2]

    def matrix(self, f: int, d: int) -> np.ndarray:
        a = self.steering[f, d]
        return np.outer(a, a.conj())

    def matrices(self) -> np.ndarray:
        """Dense kernels (F, D, M, M); only for small problems."""
        a = self.steering
        return a[..., :, None] * a[..., None, :].conj()

    def pair_traces(self, f_slice=slice(None)) -> np.ndarray:
        """``tr(W_fd W_fd')`` = ``|a_fd^H a_fd'|^2`` for the given bins, shape (F', D, D)."""
        a = self.steering[f_slice]
        g = np.einsum("fdm,fem->fde", a.conj(), a)
        return g.real ** 2 + g.imag ** 2


def doa_kernels(geom: ArrayGeometry, grid: DirectionGrid, n_bins: int, n_dft: int,
                sample_rate: float) -> DoaKernelSet:
    if n_bins != n_dft // 2 + 1:
        raise ValueError("n_bins must equal n_dft // 2 + 1")
    omega = bin_frequencies(n_bins, n_dft, sample_rate)
    delays = -(grid.vectors() @ geom.mic_positions.T) / geom.speed_of_sound  # (D, M)
    steering = np.exp(-1j * omega[:, None, None] * delays[None, :, :])
    return DoaKernelSet(steering, n_dft, sample_rate)


def load_geometry(path) -> ArrayGeometry:
    """Parse a geometry file of ``mic.<i> = x y z`` and ``speed_of_sound = v`` lines."""
    mics = {}
    speed = SPEED_OF_SOUND
    text = Path(path).read_text()
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key == "speed_of_sound":
            speed = float(value)
        elif key.startswith("mic."):
            try:
                idx = int(key[4:])
                xyz = [float(v) for v in value.split()]
            except ValueError:
                raise ValueError(f"{path}:{lineno}: malformed microphone entry") from None
            if len(xyz) != 3:
                raise ValueError(f"{path}:{lineno}: microphone needs x y z")
            if idx in mics:
                raise ValueError(f"{path}:{lineno}: duplicate microphone {idx}")
            mics[idx] = xyz
        else:
            raise ValueError(f"{path}:{lineno}: unknown key {key!r}")
    if not mics:
        raise ValueError(f"{path}: no microphones defined")
    positions = [mics[i] for i in sorted(mics)]
    return ArrayGeometry(np.array(positions), speed)


def default_geometry() -> ArrayGeometry:
    """Compact four-microphone diamond shipped with the package."""
    with resources.as_file(resources.files("movsep") / "data" / "diamond4.geom") as p:
        return load_geometry(p)
