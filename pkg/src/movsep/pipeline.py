"""End-to-end processing chains used by the command line and the tests."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .config import PipelineConfig
from .geometry import ArrayGeometry, DirectionGrid, doa_kernels
from .localization import DoaMeasurementSet, SrpMap, extract_measurements, srp_phat
from .mnmf import MnmfResult, init_params, source_spectrograms, trace_model, update
from .separation import apply_masks, dsb, ideal_ratio_mask, reconstruct, wiener_masks
from .spatial_model import SpatialWeights, mixture_scm, spatial_weights
from .spectral import AudioBuffer, Spectrogram, stft
from .tracker import track
from .trajectories import TrajectorySet

__all__ = ["Analysis", "Separation", "analyze", "run_tracking", "run_separation", "dsb_baseline", "irm_baseline"]

log = logging.getLogger(__name__)


@dataclass
class Analysis:
    spec: Spectrogram
    grid: DirectionGrid
    kernels: object
    srp: SrpMap
    measurements: DoaMeasurementSet


@dataclass
class Separation:
    sources: list  # AudioBuffer per tracked source, then the background
    weights: SpatialWeights
    masks: np.ndarray
    mnmf: MnmfResult


def _check_rate(audio: AudioBuffer, cfg: PipelineConfig):
    if abs(audio.sample_rate - cfg.sample_rate) > 1e-6:
        raise ValueError(f"audio sample rate {audio.sample_rate} differs from configured {cfg.sample_rate}")


def analyze(audio: AudioBuffer, geom: ArrayGeometry, cfg: PipelineConfig) -> Analysis:
    _check_rate(audio, cfg)
    if audio.n_channels != geom.n_mics:
        raise ValueError(f"audio has {audio.n_channels} channels, geometry {geom.n_mics} microphones")
    spec = stft(audio, cfg.window_length, cfg.hop)
    grid = DirectionGrid(cfg.n_directions)
    kernels = doa_kernels(geom, grid, spec.n_bins, cfg.window_length, audio.sample_rate)
    srp = srp_phat(spec, kernels, exponent=cfg.srp_exponent, grid=grid)
    meas = extract_measurements(srp, cfg.n_components, cfg.sigma_threshold, cfg.weight_threshold,
                                cfg.em_max_iter, cfg.em_tol)
    log.info("localization: %d measurements over %d frames", meas.count(), meas.n_frames)
    return Analysis(spec, grid, kernels, srp, meas)


def run_tracking(audio: AudioBuffer, geom: ArrayGeometry, cfg: PipelineConfig):
    """Returns (TrajectorySet, Analysis)."""
    an = analyze(audio, geom, cfg)
    traj = track(an.measurements, cfg.tracker())
    log.info("tracking: %d sources", traj.n_sources)
    return traj, an


def _reference(cfg: PipelineConfig):
    return None if cfg.dsb_reference < 0 else cfg.dsb_reference


def run_separation(audio: AudioBuffer, traj: TrajectorySet, geom: ArrayGeometry, cfg: PipelineConfig,
                   spec: Spectrogram | None = None, callback=None) -> Separation:
    """Spatial weights from ``traj``, MNMF, Wiener masks, beamforming and resynthesis."""
    _check_rate(audio, cfg)
    if spec is None:
        spec = stft(audio, cfg.window_length, cfg.hop)
    if traj.n_frames != spec.n_frames:
        raise ValueError(f"trajectories have {traj.n_frames} frames, audio has {spec.n_frames}")
    grid = DirectionGrid(cfg.n_directions)
    kernels = doa_kernels(geom, grid, spec.n_bins, cfg.window_length, audio.sample_rate)
    weights = spatial_weights(traj, grid, cfg.var_min, cfg.var_max, cfg.var_sum, cfg.background_threshold)
    X = mixture_scm(spec)
    tm = trace_model(X, weights, kernels)
    params = init_params(spec.n_bins, spec.n_frames, cfg.nmf_components, weights.n_sources, cfg.seed, cfg.eps)
    res = update(tm, params, cfg.iterations, cfg.eps, callback=callback)
    masks = wiener_masks(source_spectrograms(res.params), cfg.eps)
    masked = apply_masks(spec, masks)
    ref = _reference(cfg)
    outs = []
    for p, y in enumerate(masked):
        src = None if p == weights.n_sources - 1 else p
        outs.append(dsb(y, traj, src, geom, reference=ref))
    sources = [a for a in reconstruct(outs)]
    return Separation(sources, weights, masks, res)


def dsb_baseline(audio: AudioBuffer, traj: TrajectorySet, geom: ArrayGeometry, cfg: PipelineConfig,
                 spec: Spectrogram | None = None) -> list:
    """Beamform the unmasked mixture towards every track."""
    if spec is None:
        spec = stft(audio, cfg.window_length, cfg.hop)
    outs = [dsb(spec, traj, p, geom, reference=_reference(cfg)) for p in range(traj.n_sources)]
    return reconstruct(outs)


def irm_baseline(audio: AudioBuffer, references, traj: TrajectorySet, geom: ArrayGeometry,
                 cfg: PipelineConfig, spec: Spectrogram | None = None) -> list:
    """Oracle ratio masks in place of the MNMF masks, followed by the same beamformer.

    ``references`` are the clean channel-1 source images and ``traj`` the
    trajectories to steer to (normally the ground truth).
    """
    if spec is None:
        spec = stft(audio, cfg.window_length, cfg.hop)
    if len(references) != traj.n_sources:
        raise ValueError("need one reference per trajectory")
    masks = ideal_ratio_mask(references, spec, 0)
    masked = apply_masks(spec, masks)
    return reconstruct([dsb(y, traj, p, geom, reference=_reference(cfg)) for p, y in enumerate(masked)])
