"""Multi-target DOA tracking with a Rao-Blackwellised particle filter.

Each particle carries a data-association hypothesis: which targets exist and
which measurement fed which target. Conditioned on that hypothesis every
target is tracked with an exact Kalman filter on the unit-circle state
``[x, y, vx, vy]``; the DOA is ``atan2(y, x)``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import gamma

from .localization import DoaMeasurementSet
from .trajectories import TrajectorySet

__all__ = [
    "TargetState",
    "TrackerConfig",
    "transition_matrix",
    "MEASUREMENT_MATRIX",
    "kalman_predict",
    "kalman_update",
    "smooth_track",
    "track",
]

log = logging.getLogger(__name__)

MEASUREMENT_MATRIX = np.array([[1.0, 0.0, 0.0, 0.0],
                               [0.0, 1.0, 0.0, 0.0]])


@dataclass
class TargetState:
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=float)
        self.cov = np.asarray(self.cov, dtype=float)

    @property
    def azimuth(self) -> float:
        return float(np.arctan2(self.mean[1], self.mean[0]))

    @property
    def position_variance(self) -> float:
        return float(self.cov[0, 0] + self.cov[1, 1])


@dataclass
class TrackerConfig:
    n_particles: int = 100
    clutter_prior: float = 0.1
    birth_prior: float = 0.005
    gamma_shape: float = 3.0
    gamma_rate: float = 4.0
    death_probability: float = 0.95
    initial_state: tuple = (-1.0, 0.0, 0.1, 0.1)
    initial_cov: float = 0.5
    process_noise: float = 7e-4
    measurement_variance_mean: float = 0.25
    min_track_duration: float = 0.3
    resample_fraction: float = 0.5
    seed: int = 0
    smooth: bool = True
    # a track that stays within merge_distance (rad) of a better supported
    # track for at least merge_fraction of its frames is dropped
    merge_distance: float = float(np.radians(10.0))
    merge_fraction: float = 0.8

    def death_time(self) -> float:
        """Seconds without association after which a target is removed."""
        return float(gamma.ppf(self.death_probability, self.gamma_shape, scale=1.0 / self.gamma_rate))


def transition_matrix(dt: float) -> np.ndarray:
    """Constant-velocity transition for ``[x, y, vx, vy]``."""
    A = np.eye(4)
    A[0, 2] = dt
    A[1, 3] = dt
    return A


def kalman_predict(state: TargetState, dt: float, process_noise: float) -> TargetState:
    if dt <= 0:
        raise ValueError("dt must be positive")
    A = transition_matrix(dt)
    cov = A @ state.cov @ A.T + process_noise * np.eye(4)
    return TargetState(A @ state.mean, 0.5 * (cov + cov.T))


def _innovation(state: TargetState, azimuth: float, meas_var: float):
    B = MEASUREMENT_MATRIX
    z = np.array([np.cos(azimuth), np.sin(azimuth)])
    resid = z - B @ state.mean
    S = B @ state.cov @ B.T + meas_var * np.eye(2)
    return resid, S


_LOG2PI = float(np.log(2 * np.pi))


def _log_gauss2(resid, S) -> float:
    det = S[0, 0] * S[1, 1] - S[0, 1] * S[1, 0]
    q = (S[1, 1] * resid[0] ** 2 - 2 * S[0, 1] * resid[0] * resid[1] + S[0, 0] * resid[1] ** 2) / det
    return float(-0.5 * q - _LOG2PI - 0.5 * np.log(det))


def _log_predictive(state: TargetState, azimuth: float, meas_var: float) -> float:
    m, P = state.mean, state.cov
    rx = np.cos(azimuth) - m[0]
    ry = np.sin(azimuth) - m[1]
    sxx = P[0, 0] + meas_var
    syy = P[1, 1] + meas_var
    sxy = P[0, 1]
    det = sxx * syy - sxy * sxy
    q = (syy * rx * rx - 2 * sxy * rx * ry + sxx * ry * ry) / det
    return -0.5 * q - _LOG2PI - 0.5 * np.log(det)


def kalman_update(state: TargetState, azimuth: float, meas_var: float,
                  B: np.ndarray = MEASUREMENT_MATRIX):
    """Condition ``state`` on an angle measurement mapped onto the unit circle.

    Returns:
        (posterior TargetState, predictive density of the measurement vector).
    """
    if meas_var <= 0:
        raise ValueError("measurement variance must be positive")
    z = np.array([np.cos(azimuth), np.sin(azimuth)])
    R = meas_var * np.eye(2)
    resid = z - B @ state.mean
    S = B @ state.cov @ B.T + R
    K = np.linalg.solve(S, B @ state.cov).T
    mean = state.mean + K @ resid
    IKB = np.eye(4) - K @ B
    cov = IKB @ state.cov @ IKB.T + K @ R @ K.T
    cov = 0.5 * (cov + cov.T)
    if np.linalg.eigvalsh(cov)[0] < -1e-9:
        raise RuntimeError("posterior covariance lost positive semidefiniteness")
    return TargetState(mean, cov), float(np.exp(_log_gauss2(resid, S)))


@dataclass
class _Target:
    tid: int
    state: TargetState
    birth: int
    last_assoc: int
    meas: tuple | None = None  # (azimuth, variance) associated in the current frame


@dataclass
class _Particle:
    log_weight: float
    targets: list = field(default_factory=list)

    def clone(self) -> "_Particle":
        return _Particle(self.log_weight,
                         [_Target(t.tid, t.state, t.birth, t.last_assoc, t.meas) for t in self.targets])


def _systematic_resample(weights: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    n = len(weights)
    positions = (rng.random() + np.arange(n)) / n
    cum = np.cumsum(weights)
    cum[-1] = 1.0
    return np.searchsorted(cum, positions)


def smooth_track(meas: list, prior: TargetState, dt: float, process_noise: float):
    """Fixed-interval (RTS) smoothing of one track given its associations.

    ``meas`` holds per consecutive frame either None or the associated
    (azimuth, variance); the first entry is the birth measurement. The
    forward pass repeats the particle's Kalman recursion exactly.

    Returns:
        (azimuths, position variances) per frame.
    """
    A = transition_matrix(dt)
    filt, pred = [], []
    state = prior
    for i, m in enumerate(meas):
        if i > 0:
            state = kalman_predict(state, dt, process_noise)
        pred.append(state)
        if m is not None:
            state, _ = kalman_update(state, m[0], m[1])
        filt.append(state)
    mean, cov = filt[-1].mean, filt[-1].cov
    az = [float(np.arctan2(mean[1], mean[0]))]
    var = [float(cov[0, 0] + cov[1, 1])]
    for i in range(len(meas) - 2, -1, -1):
        f, p = filt[i], pred[i + 1]
        G = np.linalg.solve(p.cov, A @ f.cov).T
        mean = f.mean + G @ (mean - p.mean)
        cov = f.cov + G @ (cov - p.cov) @ G.T
        cov = 0.5 * (cov + cov.T)
        az.append(float(np.arctan2(mean[1], mean[0])))
        var.append(float(cov[0, 0] + cov[1, 1]))
    return az[::-1], var[::-1]


def _drop_duplicates(records: list, distance: float, fraction: float) -> list:
    """Remove tracks that shadow better supported ones.

    A split spectral peak can feed a second target at the same DOA; such a
    track spends most of its life next to other tracks. Tracks are visited
    in order of decreasing association count and one is dropped when, in at
    least ``fraction`` of its frames, some already kept track lies within
    ``distance``.
    """
    if fraction > 1 or not records:
        return records

    def support(rec):
        return (sum(m is not None for m in rec["meas"]), len(rec["frames"]))

    kept = []
    for rec in sorted(records, key=support, reverse=True):
        close = 0
        for f, a in zip(rec["frames"], rec["az"]):
            for other in kept:
                b = other["lookup"].get(f)
                if b is not None and abs(np.angle(np.exp(1j * (a - b)))) < distance:
                    close += 1
                    break
        if close < fraction * len(rec["frames"]):
            rec["lookup"] = dict(zip(rec["frames"], rec["az"]))
            kept.append(rec)
    return sorted(kept, key=lambda r: r["frames"][0])


def track(measurements: DoaMeasurementSet, config: TrackerConfig | None = None,
          rescale: bool = True, monitor=None) -> TrajectorySet:
    """Track an unknown number of sources through per-frame DOA measurements.

    For every particle and every measurement (processed in order of
    decreasing weight) an association is sampled among the still-unclaimed
    live targets, clutter, and a newly born target, with probabilities
    proportional to ``(1 - CP - BP) / n_targets * predictive likelihood``, ``CP`` and
    ``BP``. The particle weight is multiplied by the sum of those terms. A
    newborn target starts from the configured initial state conditioned on its
    measurement. Targets that go longer than the gamma-lifetime quantile
    without an association are removed. The output follows the ancestry of
    the final highest-weight particle; with ``smooth`` each kept track is
    RTS-smoothed given that particle's associations. Tracks shorter than
    ``min_track_duration`` and tracks that duplicate a better supported one are dropped.

    ``monitor``, if given, is called after every frame with the frame index,
    the normalised particle weights and the list of all target covariances.
    """
    cfg = config or TrackerConfig()
    n_frames = measurements.n_frames
    dt = measurements.frame_period
    if rescale:
        measurements = measurements.rescaled(cfg.measurement_variance_mean)
    rng = np.random.default_rng(cfg.seed)
    death_frames = cfg.death_time() / dt
    target_prior = 1.0 - cfg.clutter_prior - cfg.birth_prior
    if target_prior <= 0:
        raise ValueError("clutter and birth priors must sum below one")
    log_tp = np.log(target_prior)
    log_cp = np.log(cfg.clutter_prior)
    log_bp = np.log(cfg.birth_prior)
    birth_state = TargetState(np.array(cfg.initial_state, float), cfg.initial_cov * np.eye(4))

    n_p = cfg.n_particles
    particles = [_Particle(-np.log(n_p)) for _ in range(n_p)]
    next_id = 0
    snapshots = []  # per frame: per particle tuple of (tid, azimuth, variance, associated)
    ancestry = []
    n_resample = 0

    for n in range(n_frames):
        meas = measurements.frames[n]
        for part in particles:
            alive = []
            for t in part.targets:
                if n > 0:
                    t.state = kalman_predict(t.state, dt, cfg.process_noise)
                if (n - t.last_assoc) > death_frames:
                    continue
                t.meas = None
                alive.append(t)
            part.targets = alive
            claimed = set()
            for mu, var, _w in meas:
                options = []
                logp = []
                log_share = log_tp - np.log(max(len(part.targets), 1))
                for t in part.targets:
                    if t.tid in claimed:
                        continue
                    options.append(t)
                    logp.append(log_share + _log_predictive(t.state, mu, var))
                options.append("clutter")
                logp.append(log_cp)
                options.append("birth")
                logp.append(log_bp)
                logp = np.array(logp)
                top = logp.max()
                probs = np.exp(logp - top)
                total = probs.sum()
                part.log_weight += top + np.log(total)
                choice = options[rng.choice(len(options), p=probs / total)]
                if choice == "clutter":
                    continue
                if choice == "birth":
                    state, _ = kalman_update(birth_state, mu, var)
                    tgt = _Target(next_id, state, n, n, (mu, var))
                    next_id += 1
                    part.targets.append(tgt)
                    claimed.add(tgt.tid)
                else:
                    choice.state, _ = kalman_update(choice.state, mu, var)
                    choice.last_assoc = n
                    choice.meas = (mu, var)
                    claimed.add(choice.tid)
        lw = np.array([p.log_weight for p in particles])
        w = np.exp(lw - lw.max())
        w /= w.sum()
        for p, wi in zip(particles, w):
            p.log_weight = np.log(wi) if wi > 0 else -np.inf
        snapshots.append([
            tuple((t.tid, t.state.azimuth, t.state.position_variance, t.meas) for t in p.targets)
            for p in particles
        ])
        if monitor is not None:
            monitor(n, w.copy(), [t.state.cov for p in particles for t in p.targets])
        ess = 1.0 / np.sum(w ** 2)
        if ess < cfg.resample_fraction * n_p:
            idx = _systematic_resample(w, rng)
            particles = [particles[i].clone() for i in idx]
            for p in particles:
                p.log_weight = -np.log(n_p)
            ancestry.append(idx)
            n_resample += 1
        else:
            ancestry.append(np.arange(n_p))
    log.debug("tracker: %d frames, %d resampling steps, %d targets born", n_frames, n_resample, next_id)
    if n_frames == 0:
        return TrajectorySet.empty(0, dt)

    # follow the lineage of the final best particle backwards
    best = int(np.argmax([p.log_weight for p in particles]))
    lineage = np.empty(n_frames, dtype=int)
    idx = best
    for n in range(n_frames - 1, -1, -1):
        # snapshot n was taken before the resampling recorded in ancestry[n]
        idx = ancestry[n][idx]
        lineage[n] = idx

    records = {}
    for n in range(n_frames):
        for tid, az, var, meas in snapshots[n][lineage[n]]:
            rec = records.setdefault(tid, {"frames": [], "az": [], "var": [], "meas": []})
            rec["frames"].append(n)
            rec["az"].append(az)
            rec["var"].append(var)
            rec["meas"].append(meas)

    kept = []
    for tid in sorted(records, key=lambda t: (records[t]["frames"][0], t)):
        rec = records[tid]
        assoc_frames = [f for f, m in zip(rec["frames"], rec["meas"]) if m is not None]
        span = (assoc_frames[-1] - rec["frames"][0]) * dt if assoc_frames else 0.0
        if span < cfg.min_track_duration:
            continue
        if cfg.smooth:
            rec["az"], rec["var"] = smooth_track(rec["meas"], birth_state, dt, cfg.process_noise)
        kept.append(rec)
    kept = _drop_duplicates(kept, cfg.merge_distance, cfg.merge_fraction)
    P = len(kept)
    az = np.full((P, n_frames), np.nan)
    var = np.full((P, n_frames), np.nan)
    act = np.zeros((P, n_frames), bool)
    for p, rec in enumerate(kept):
        f = np.array(rec["frames"])
        az[p, f] = rec["az"]
        var[p, f] = rec["var"]
        act[p, f] = True
    return TrajectorySet(az, var, act, list(range(1, P + 1)), dt)
