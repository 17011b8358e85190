"""Per-source DOA trajectories and their CSV form."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

__all__ = ["TrajectorySet", "write_trajectories_csv", "read_trajectories_csv"]

CSV_FIELDS = ["source_id", "frame", "time_s", "azimuth_deg", "state_variance", "active"]


@dataclass
class TrajectorySet:
    """DOA trajectories on the STFT frame grid.

    Attributes:
        azimuth: (P, N) radians; NaN where inactive.
        variance: (P, N) tracker state variance; NaN where inactive.
        active: (P, N) bool.
        ids: stable integer id per source row.
        frame_period: seconds between frames.
    """

    azimuth: np.ndarray
    variance: np.ndarray
    active: np.ndarray
    ids: list
    frame_period: float

    def __post_init__(self):
        self.azimuth = np.asarray(self.azimuth, dtype=float)
        if self.azimuth.ndim != 2:
            self.azimuth = self.azimuth.reshape(len(self.ids), -1)
        self.variance = np.asarray(self.variance, dtype=float).reshape(self.azimuth.shape)
        self.active = np.asarray(self.active, dtype=bool).reshape(self.azimuth.shape)
        self.ids = list(self.ids)

    @classmethod
    def empty(cls, n_frames: int, frame_period: float) -> "TrajectorySet":
        z = np.zeros((0, n_frames))
        return cls(z, z, z.astype(bool), [], frame_period)

    @property
    def n_sources(self) -> int:
        return self.azimuth.shape[0]

    @property
    def n_frames(self) -> int:
        return self.azimuth.shape[1]

    def subset(self, rows) -> "TrajectorySet":
        rows = list(rows)
        return TrajectorySet(self.azimuth[rows], self.variance[rows], self.active[rows],
                             [self.ids[r] for r in rows], self.frame_period)


def write_trajectories_csv(path, traj: TrajectorySet, header: str | None = None):
    """Write one row per (source, frame); inactive frames have empty angle/variance."""
    with open(path, "w", newline="") as fh:
        if header:
            fh.write(f"# {header}\n")
        w = csv.writer(fh)
        w.writerow(CSV_FIELDS)
        for p, sid in enumerate(traj.ids):
            for n in range(traj.n_frames):
                act = bool(traj.active[p, n])
                az = f"{np.degrees(traj.azimuth[p, n]) % 360:.6f}" if act else ""
                var = f"{traj.variance[p, n]:.8g}" if act else ""
                w.writerow([sid, n, f"{n * traj.frame_period:.6f}", az, var, int(act)])


def read_trajectories_csv(path, n_frames: int | None = None, frame_period: float | None = None) -> TrajectorySet:
    """Read a trajectory CSV; ``n_frames`` pads/validates the frame axis."""
    rows = []
    with open(path, newline="") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    reader = csv.DictReader(lines)
    if reader.fieldnames is None or set(CSV_FIELDS) - set(reader.fieldnames):
        raise ValueError(f"{path}: missing trajectory columns")
    for r in reader:
        rows.append(r)
    ids = sorted({int(r["source_id"]) for r in rows})
    max_frame = max((int(r["frame"]) for r in rows), default=-1)
    if n_frames is None:
        n_frames = max_frame + 1
    elif max_frame >= n_frames:
        raise ValueError(f"{path}: trajectory has frame {max_frame} but audio has {n_frames} frames")
    if frame_period is None:
        times = {int(r["frame"]): float(r["time_s"]) for r in rows}
        frame_period = times.get(1, 0.0) - times.get(0, 0.0) if len(times) > 1 else 1.0
    P = len(ids)
    az = np.full((P, n_frames), np.nan)
    var = np.full((P, n_frames), np.nan)
    act = np.zeros((P, n_frames), bool)
    index = {sid: i for i, sid in enumerate(ids)}
    for r in rows:
        if int(r["active"]):
            p, n = index[int(r["source_id"])], int(r["frame"])
            act[p, n] = True
            az[p, n] = np.radians(float(r["azimuth_deg"]))
            var[p, n] = float(r["state_variance"])
    return TrajectorySet(az, var, act, ids, frame_period)
