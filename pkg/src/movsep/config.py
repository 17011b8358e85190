"""Pipeline settings as a flat ``key = value`` file."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields

import numpy as np

from .tracker import TrackerConfig

__all__ = ["PipelineConfig", "load_config", "write_config"]


@dataclass
class PipelineConfig:
    # analysis
    window_length: int = 2048
    hop: int = 1024
    sample_rate: float = 24000.0
    n_directions: int = 72
    # localization
    n_components: int = 5
    srp_exponent: float = 1.5
    sigma_threshold: float = 0.6
    weight_threshold: float = 0.15
    em_max_iter: int = 50
    em_tol: float = 1e-6
    # tracking
    n_particles: int = 100
    variance_mean: float = 0.25
    clutter_prior: float = 0.1
    birth_prior: float = 0.005
    gamma_shape: float = 3.0
    gamma_rate: float = 4.0
    death_probability: float = 0.95
    initial_state: tuple = (-1.0, 0.0, 0.1, 0.1)
    initial_cov: float = 0.5
    process_noise: float = 7e-4
    min_track_duration: float = 0.3
    smooth: bool = True
    merge_distance_deg: float = 10.0
    merge_fraction: float = 0.8
    # spatial model
    var_min: float = 0.025
    var_max: float = 0.3
    var_sum: float = 0.325
    background_threshold: float = 0.01
    # nmf
    nmf_components: int = 80
    iterations: int = 200
    eps: float = 1e-12
    # beamforming: microphone index (0-based) used as phase reference, or -1 for the array centre
    dsb_reference: int = 0
    seed: int = 0

    def validate(self):
        if self.window_length <= 0 or self.window_length % 2:
            raise ValueError("window_length must be a positive even number")
        if self.hop <= 0 or self.window_length % self.hop:
            raise ValueError("hop must divide window_length")
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be positive")
        for name in ("n_directions", "n_components", "n_particles", "nmf_components", "em_max_iter"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be at least 1")
        if self.iterations < 0:
            raise ValueError("iterations must be nonnegative")
        if not 0 < self.clutter_prior < 1 or not 0 < self.birth_prior < 1:
            raise ValueError("clutter_prior and birth_prior must lie in (0, 1)")
        if self.clutter_prior + self.birth_prior >= 1:
            raise ValueError("clutter_prior + birth_prior must be below 1")
        if not 0 < self.var_min < self.var_max:
            raise ValueError("need 0 < var_min < var_max")
        if self.var_sum <= self.var_max:
            raise ValueError("var_sum must exceed var_max")
        if len(self.initial_state) != 4:
            raise ValueError("initial_state needs four values")
        for name in ("process_noise", "variance_mean", "initial_cov", "eps", "srp_exponent",
                     "gamma_shape", "gamma_rate"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.merge_distance_deg < 0 or self.merge_fraction <= 0:
            raise ValueError("merge_distance_deg must be nonnegative and merge_fraction positive")
        if not 0 < self.death_probability < 1:
            raise ValueError("death_probability must lie in (0, 1)")
        return self

    def tracker(self) -> TrackerConfig:
        return TrackerConfig(
            n_particles=self.n_particles,
            clutter_prior=self.clutter_prior,
            birth_prior=self.birth_prior,
            gamma_shape=self.gamma_shape,
            gamma_rate=self.gamma_rate,
            death_probability=self.death_probability,
            initial_state=tuple(self.initial_state),
            initial_cov=self.initial_cov,
            process_noise=self.process_noise,
            measurement_variance_mean=self.variance_mean,
            min_track_duration=self.min_track_duration,
            seed=self.seed,
            smooth=self.smooth,
            merge_distance=float(np.radians(self.merge_distance_deg)),
            merge_fraction=self.merge_fraction,
        )

    def replace(self, **changes) -> "PipelineConfig":
        return dataclasses.replace(self, **changes).validate()


def _parse_value(raw: str, default):
    if isinstance(default, bool):
        low = raw.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"expected a boolean, got {raw!r}")
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    if isinstance(default, tuple):
        return tuple(float(x) for x in raw.replace(",", " ").split())
    return raw


def load_config(path) -> PipelineConfig:
    """Read a config file; unknown keys and malformed lines are errors."""
    cfg = PipelineConfig()
    known = {f.name for f in fields(PipelineConfig)}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected 'key = value'")
            key, raw = (s.strip() for s in line.split("=", 1))
            if key not in known:
                raise ValueError(f"{path}:{lineno}: unknown key {key!r}")
            try:
                setattr(cfg, key, _parse_value(raw, getattr(PipelineConfig(), key)))
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: {key}: {exc}") from None
    return cfg.validate()


def write_config(path, cfg: PipelineConfig):
    with open(path, "w") as fh:
        for f in fields(cfg):
            val = getattr(cfg, f.name)
            if isinstance(val, tuple):
                val = " ".join(repr(float(x)) for x in val)
            elif isinstance(val, float):
                val = repr(val)
            elif isinstance(val, (bool, np.bool_)):
                val = "true" if val else "false"
            fh.write(f"{f.name} = {val}\n")
