"""Per-frame DOA measurements from SRP-PHAT maps and wrapped Gaussian mixtures."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .geometry import DoaKernelSet, DirectionGrid
from .spectral import Spectrogram

__all__ = [
    "SrpMap",
    "WgmmFrame",
    "DoaMeasurementSet",
    "srp_phat",
    "wrap_angle",
    "wrapped_gaussian_pdf",
    "wgmm_loglik",
    "wgmm_em",
    "initial_wgmm",
    "threshold_components",
    "extract_measurements",
    "write_measurements_csv",
    "write_srp_csv",
]

WRAP_ORDER = 3
PHAT_EPS = 1e-12
VAR_FLOOR = 1e-3
VAR_CAP = 4.0


@dataclass
class SrpMap:
    """Spatial energy over directions and frames.

    ``power`` is the rectified and exponentiated map used as the per-frame
    histogram; ``raw`` is the signed steered response.
    """

    power: np.ndarray  # (D, N)
    raw: np.ndarray
    azimuths: np.ndarray
    frame_period: float

    @property
    def n_frames(self) -> int:
        return self.power.shape[1]


@dataclass
class WgmmFrame:
    means: np.ndarray
    variances: np.ndarray
    weights: np.ndarray

    @property
    def n_components(self) -> int:
        return len(self.means)

    def copy(self) -> "WgmmFrame":
        return WgmmFrame(self.means.copy(), self.variances.copy(), self.weights.copy())


@dataclass
class DoaMeasurementSet:
    """Surviving measurements per frame as (K_n, 3) arrays of (mean, variance, weight).

    Rows are ordered by decreasing weight.
    """

    frames: list
    frame_period: float
    fits: list = field(default_factory=list, repr=False)

    @property
    def n_frames(self) -> int:
        return len(self.frames)

    def count(self) -> int:
        return sum(len(f) for f in self.frames)

    def mean_variance(self) -> float:
        allv = [f[:, 1] for f in self.frames if len(f)]
        return float(np.mean(np.concatenate(allv))) if allv else float("nan")

    def rescaled(self, target_mean: float = 0.25) -> "DoaMeasurementSet":
        """Scale every variance so the signal-wide mean equals ``target_mean``."""
        mean = self.mean_variance()
        if not np.isfinite(mean) or mean <= 0:
            return self
        scale = target_mean / mean
        frames = []
        for f in self.frames:
            g = f.copy()
            g[:, 1] *= scale
            frames.append(g)
        return DoaMeasurementSet(frames, self.frame_period, self.fits)


def wrap_angle(x):
    """Wrap to [-pi, pi)."""
    return np.mod(np.asarray(x) + np.pi, 2 * np.pi) - np.pi


def srp_phat(spec: Spectrogram, kernels: DoaKernelSet, exponent: float = 1.5,
             eps: float = PHAT_EPS, grid: DirectionGrid | None = None) -> SrpMap:
    """Steered response power with phase transform.

    Sums the PHAT-normalised cross spectra of every microphone pair after
    time alignment towards each grid direction. Negative sums are clipped to
    zero before raising to ``exponent``.
    """
    M = spec.n_channels
    if M < 2:
        raise ValueError("SRP-PHAT needs at least two channels")
    if kernels.n_mics != M or kernels.n_bins != spec.n_bins:
        raise ValueError("kernel set does not match spectrogram dimensions")
    x = spec.bins
    a = kernels.steering  # (F, D, M)
    raw = np.zeros((kernels.n_directions, spec.n_frames))
    for m1 in range(M - 1):
        for m2 in range(m1 + 1, M):
            cross = x[:, :, m1] * x[:, :, m2].conj()
            mag = np.abs(cross)
            ok = mag >= eps
            phat = np.zeros_like(cross)
            phat[ok] = cross[ok] / mag[ok]
            align = a[:, :, m1].conj() * a[:, :, m2]  # exp(j w tau_d(m1, m2)), (F, D)
            raw += np.real(align.T @ phat)
    power = np.maximum(raw, 0.0) ** exponent
    if grid is None:
        grid = DirectionGrid(kernels.n_directions)
    return SrpMap(power, raw, grid.azimuths, spec.frame_period)


def _wrap_offsets(order: int) -> np.ndarray:
    return 2 * np.pi * np.arange(-order, order + 1)


def wrapped_gaussian_pdf(theta, mu, var, order: int = WRAP_ORDER):
    """Wrapped normal density truncated to ``2 * order + 1`` images.

    The images are taken around the wrapped difference ``theta - mu`` so the
    result is exactly 2*pi periodic in both arguments.
    """
    var = np.asarray(var, dtype=float)
    if np.any(var <= 0):
        raise ValueError("variance must be positive")
    delta = wrap_angle(np.asarray(theta, dtype=float) - mu)
    shifted = delta[..., None] - _wrap_offsets(order)
    v = var[..., None]
    return np.sum(np.exp(-shifted ** 2 / (2 * v)) / np.sqrt(2 * np.pi * v), axis=-1)


def _component_terms(theta, params: WgmmFrame, order: int):
    """Weighted image densities g[d, k, l] and offsets (theta_d - mu_k wrapped - 2 pi l)."""
    delta = wrap_angle(theta[:, None] - params.means[None, :])  # (D, K)
    shifted = delta[:, :, None] - _wrap_offsets(order)[None, None, :]
    v = params.variances[None, :, None]
    g = params.weights[None, :, None] * np.exp(-shifted ** 2 / (2 * v)) / np.sqrt(2 * np.pi * v)
    return g, shifted


def wgmm_loglik(hist, theta, params: WgmmFrame, order: int = WRAP_ORDER) -> float:
    """Histogram-weighted log-likelihood sum_d s_d log p(theta_d)."""
    g, _ = _component_terms(np.asarray(theta, float), params, order)
    dens = g.sum(axis=(1, 2))
    s = np.asarray(hist, float)
    nz = s > 0
    return float(np.sum(s[nz] * np.log(np.maximum(dens[nz], 1e-300))))


def initial_wgmm(n_components: int, variance: float = 0.25) -> WgmmFrame:
    means = wrap_angle(-np.pi + 2 * np.pi * np.arange(n_components) / n_components)
    return WgmmFrame(means, np.full(n_components, variance), np.full(n_components, 1.0 / n_components))


def wgmm_em(hist, theta, init: WgmmFrame, max_iter: int = 50, tol: float = 1e-6,
            order: int = WRAP_ORDER, var_floor: float = VAR_FLOOR, var_cap: float = VAR_CAP):
    """Fit a wrapped Gaussian mixture to a histogram over the azimuth grid by EM.

    Each grid azimuth acts as a data point weighted by its histogram value.

    Args:
        hist: nonnegative histogram values s_d.
        theta: grid azimuths (radians), same length as ``hist``.
        init: starting parameters; the component count comes from here.
        max_iter: iteration cap.
        tol: stop once the largest responsibility change falls below this.

    Returns:
        (fitted WgmmFrame, final log-likelihood, list of log-likelihoods per
        iteration starting with the initial parameters).
    """
    s = np.asarray(hist, dtype=float)
    theta = np.asarray(theta, dtype=float)
    if s.shape != theta.shape:
        raise ValueError("histogram and azimuths must have equal length")
    if np.any(s < 0) or not np.all(np.isfinite(s)):
        raise ValueError("histogram must be finite and nonnegative")
    total = s.sum()
    if total <= 0:
        raise ValueError("histogram is all zero")
    if init.n_components < 1:
        raise ValueError("need at least one component")

    params = init.copy()
    params.means = wrap_angle(params.means)
    g, shifted = _component_terms(theta, params, order)
    dens = np.maximum(g.sum(axis=(1, 2)), 1e-300)
    eta = g / dens[:, None, None]
    history = [float(np.sum(s * np.log(dens)))]
    for _ in range(max_iter):
        w = eta * s[:, None, None]
        mass = w.sum(axis=(0, 2))  # (K,)
        live = mass > 1e-12 * total
        step = np.zeros_like(mass)
        step[live] = np.einsum("dkl,dkl->k", w, shifted)[live] / mass[live]
        new_var = params.variances.copy()
        resid = shifted - step[None, :, None]
        new_var[live] = np.einsum("dkl,dkl->k", w, resid ** 2)[live] / mass[live]
        params = WgmmFrame(
            means=wrap_angle(params.means + step),
            variances=np.clip(new_var, var_floor, var_cap),
            weights=mass / total,
        )
        g, shifted = _component_terms(theta, params, order)
        dens = np.maximum(g.sum(axis=(1, 2)), 1e-300)
        new_eta = g / dens[:, None, None]
        history.append(float(np.sum(s * np.log(dens))))
        change = np.max(np.abs(new_eta - eta))
        eta = new_eta
        if change < tol:
            break
    return params, history[-1], history


def threshold_components(fit: WgmmFrame, sigma_max: float = 0.6, weight_min: float = 0.15) -> np.ndarray:
    """Keep components with std <= ``sigma_max`` rad and weight >= ``weight_min``.

    Returns rows (mean, variance, weight) sorted by decreasing weight.
    """
    keep = (np.sqrt(fit.variances) <= sigma_max) & (fit.weights >= weight_min)
    rows = np.column_stack([wrap_angle(fit.means), fit.variances, fit.weights])[keep]
    return rows[np.argsort(-rows[:, 2], kind="stable")]


def extract_measurements(srp: SrpMap, n_components: int = 5, sigma_max: float = 0.6,
                         weight_min: float = 0.15, max_iter: int = 50, tol: float = 1e-6,
                         warm_start: bool = True, silence: float = 1e-12) -> DoaMeasurementSet:
    """Run the WGMM fit on every SRP frame and drop unreliable components.

    With ``warm_start`` the fit of each frame starts from the previous frame's
    parameters; otherwise every frame starts from the uniform initialisation.
    """
    theta = srp.azimuths
    base = initial_wgmm(n_components)
    prev = base
    frames, fits = [], []
    peak = float(srp.power.max()) if srp.power.size else 0.0
    for n in range(srp.n_frames):
        hist = srp.power[:, n]
        if peak <= 0 or hist.sum() <= silence * max(peak, 1.0):
            frames.append(np.zeros((0, 3)))
            fits.append(None)
            continue
        init = prev if warm_start else base
        if warm_start:
            w = np.maximum(init.weights, 1e-3)
            init = WgmmFrame(init.means.copy(), init.variances.copy(), w / w.sum())
        fit, _, _ = wgmm_em(hist / hist.sum(), theta, init, max_iter=max_iter, tol=tol)
        fits.append(fit)
        frames.append(threshold_components(fit, sigma_max, weight_min))
        prev = fit
    return DoaMeasurementSet(frames, srp.frame_period, fits)


def write_measurements_csv(path, meas: DoaMeasurementSet, header: str | None = None):
    with open(path, "w", newline="") as fh:
        if header:
            fh.write(f"# {header}\n")
        w = csv.writer(fh)
        w.writerow(["frame", "time_s", "azimuth_deg", "sigma2", "weight"])
        for n, rows in enumerate(meas.frames):
            for mu, var, a in rows:
                w.writerow([n, f"{n * meas.frame_period:.6f}", f"{np.degrees(mu) % 360:.4f}",
                            f"{var:.6g}", f"{a:.6g}"])


def write_srp_csv(path, srp: SrpMap):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["frame", "time_s", "azimuth_deg", "power"])
        for n in range(srp.n_frames):
            for d, az in enumerate(srp.azimuths):
                w.writerow([n, f"{n * srp.frame_period:.6f}", f"{np.degrees(az):.4f}", f"{srp.power[d, n]:.6g}"])
