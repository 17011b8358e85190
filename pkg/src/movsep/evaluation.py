"""Tracking and separation scores with source permutation matching."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from .localization import wrap_angle
from .trajectories import TrajectorySet

__all__ = [
    "SourceScore",
    "EvalReport",
    "angular_errors",
    "mae",
    "recall",
    "score_assignment",
    "best_permutation",
    "segment_snr_values",
    "segmental_snr",
    "segmental_sir",
    "db_mean",
    "write_report_csv",
    "write_summary",
    "format_report",
]

DB_CAP = 60.0


@dataclass
class SourceScore:
    annotated: int
    estimated: int | None
    mae: float | None
    recall: float

    @property
    def maer(self) -> float:
        return 0.0 if self.mae is None else 1.0 - self.mae / np.pi

    @property
    def accuracy(self) -> float:
        return self.maer + self.recall


@dataclass
class EvalReport:
    sources: list
    permutation: tuple
    ssnr: dict = field(default_factory=dict)
    ssir: dict = field(default_factory=dict)

    @property
    def mae(self) -> float | None:
        vals = [s.mae for s in self.sources if s.mae is not None]
        return float(np.mean(vals)) if vals else None

    @property
    def recall(self) -> float:
        return float(np.mean([s.recall for s in self.sources])) if self.sources else 0.0

    @property
    def maer(self) -> float:
        return float(np.mean([s.maer for s in self.sources])) if self.sources else 0.0

    @property
    def accuracy(self) -> float:
        return self.maer + self.recall


def angular_errors(est_az, ann_az) -> np.ndarray:
    """Absolute angle differences wrapped to [0, pi]."""
    return np.abs(wrap_angle(np.asarray(ann_az) - np.asarray(est_az)))


def _frames(est: TrajectorySet, r: int, ann: TrajectorySet, p: int, vad=None):
    sel = ann.active[p] & est.active[r]
    if vad is not None:
        sel &= np.asarray(vad[p], bool)
    return sel


def mae(est: TrajectorySet, ann: TrajectorySet, permutation, vad=None) -> list:
    """Mean absolute wrapped DOA error per annotated source.

    ``permutation[p]`` is the estimated row matched to annotated source ``p``
    (or None). Frames count when the annotation (and VAD, if given) and the
    matched track are all active. Entries are None where no frame overlaps.
    """
    out = []
    for p, r in enumerate(permutation):
        if r is None:
            out.append(None)
            continue
        sel = _frames(est, r, ann, p, vad)
        if not np.any(sel):
            out.append(None)
            continue
        out.append(float(np.mean(angular_errors(est.azimuth[r, sel], ann.azimuth[p, sel]))))
    return out


def recall(est_active, vad) -> float:
    """Share of truly active frames during which the matched track is alive."""
    vad = np.asarray(vad, bool)
    if not np.any(vad):
        return 1.0
    if est_active is None:
        return 0.0
    return float(np.sum(vad & np.asarray(est_active, bool)) / np.sum(vad))


def score_assignment(est: TrajectorySet, ann: TrajectorySet, assignment, vad=None) -> list:
    vad_rows = ann.active if vad is None else np.asarray(vad, bool)
    maes = mae(est, ann, assignment, vad)
    return [SourceScore(p, r, maes[p], recall(None if r is None else est.active[r], vad_rows[p]))
            for p, r in enumerate(assignment)]


def _pair_score(est: TrajectorySet, ann: TrajectorySet, r: int, p: int, vad=None) -> SourceScore:
    return score_assignment(est, ann, [None] * p + [r], vad)[p]


def best_permutation(est: TrajectorySet, ann: TrajectorySet, vad=None) -> EvalReport:
    """Injective matching that maximises mean (MAER + recall) over annotated sources.

    The score is a sum of independent per-pair terms, so the search is a
    linear assignment problem; unmatched annotated sources score zero.
    """
    P_ann, P_est = ann.n_sources, est.n_sources
    if P_ann == 0:
        return EvalReport([], ())
    gain = np.zeros((P_ann, P_est + P_ann))
    for p in range(P_ann):
        for r in range(P_est):
            gain[p, r] = _pair_score(est, ann, r, p, vad).accuracy
    rows, cols = linear_sum_assignment(gain, maximize=True)
    assignment = [None] * P_ann
    for p, c in zip(rows, cols):
        if c < P_est and gain[p, c] > 0:
            assignment[p] = int(c)
    return EvalReport(score_assignment(est, ann, assignment, vad), tuple(assignment))


def _segments(n: int, seg: int):
    for start in range(0, n - seg + 1, seg):
        yield slice(start, start + seg)
    if n % seg and n >= seg:
        yield slice(n - n % seg, n)
    elif n < seg:
        yield slice(0, n)


def _ratio_db(num: float, den: float) -> float:
    if num <= 0:
        return -DB_CAP
    if den <= 0:
        return DB_CAP
    return float(np.clip(10 * np.log10(num / den), -DB_CAP, DB_CAP))


def segment_snr_values(separated, reference, sample_rate: float, segment: float = 0.2,
                       silence_db: float = -40.0) -> np.ndarray:
    """Scale-invariant SNR of each segment in dB.

    The estimate is projected onto the reference within each segment; the
    projection is the target and the remainder the error. Segments whose
    reference energy is more than ``silence_db`` below the loudest segment
    are skipped.
    """
    s = np.asarray(separated, float).ravel()
    r = np.asarray(reference, float).ravel()
    if s.shape != r.shape:
        raise ValueError("separated and reference lengths differ")
    seg = max(1, int(round(segment * sample_rate)))
    slices = list(_segments(len(r), seg))
    energies = np.array([np.dot(r[sl], r[sl]) for sl in slices])
    if energies.max(initial=0.0) <= 0:
        return np.zeros(0)
    floor = energies.max() * 10 ** (silence_db / 10)
    out = []
    for sl, e in zip(slices, energies):
        if e <= floor:
            continue
        alpha = np.dot(s[sl], r[sl]) / e
        target = alpha * r[sl]
        err = s[sl] - target
        out.append(_ratio_db(np.dot(target, target), np.dot(err, err)))
    return np.array(out)


def db_mean(values) -> float:
    """Average dB values in the linear power domain and convert back."""
    values = np.asarray(values, float)
    if values.size == 0:
        return float("nan")
    return float(10 * np.log10(np.mean(10 ** (values / 10))))


def segmental_snr(separated, reference, sample_rate: float, segment: float = 0.2) -> float:
    return db_mean(segment_snr_values(separated, reference, sample_rate, segment))


def segmental_sir(separated, references, index: int, sample_rate: float, segment: float = 0.2,
                  silence_db: float = -40.0) -> float:
    """Segmental signal-to-interference ratio of ``separated`` for ``references[index]``.

    Per segment the estimate is least-squares projected onto the span of all
    references; the part along the target reference is signal and the
    remainder of the projection is interference. Segments where the target
    is silent, or where every other reference is silent (no interference to
    measure), are skipped. Returns NaN when no segment qualifies.
    """
    s = np.asarray(separated, float).ravel()
    R = np.vstack([np.asarray(r, float).ravel() for r in references])
    seg = max(1, int(round(segment * sample_rate)))
    slices = list(_segments(len(s), seg))
    energies = np.array([[np.dot(r[sl], r[sl]) for sl in slices] for r in R])  # (P, S)
    peak = energies.max(axis=1)
    if peak[index] <= 0:
        return float("nan")
    audible = energies > (peak * 10 ** (silence_db / 10))[:, None]
    others = np.delete(audible, index, axis=0)
    vals = []
    for j, sl in enumerate(slices):
        if not audible[index, j] or not others[:, j].any():
            continue
        coef, *_ = np.linalg.lstsq(R[:, sl].T, s[sl], rcond=None)
        target = coef[index] * R[index, sl]
        interf = R[:, sl].T @ coef - target
        vals.append(_ratio_db(np.dot(target, target), np.dot(interf, interf)))
    return db_mean(vals)


def write_report_csv(path, report: EvalReport, header: str | None = None):
    with open(path, "w", newline="") as fh:
        if header:
            fh.write(f"# {header}\n")
        w = csv.writer(fh)
        w.writerow(["annotated", "estimated", "mae_deg", "recall", "maer", "accuracy", "ssnr_db", "ssir_db"])
        for s in report.sources:
            w.writerow([s.annotated + 1, "" if s.estimated is None else s.estimated + 1,
                        "" if s.mae is None else f"{np.degrees(s.mae):.3f}", f"{s.recall:.4f}",
                        f"{s.maer:.4f}", f"{s.accuracy:.4f}",
                        _fmt(report.ssnr.get(s.annotated)), _fmt(report.ssir.get(s.annotated))])


def _fmt(v):
    return "" if v is None or not np.isfinite(v) else f"{v:.3f}"


def summary_dict(report: EvalReport, extra: dict | None = None) -> dict:
    out = {
        "mae_deg": None if report.mae is None else float(np.degrees(report.mae)),
        "recall": report.recall,
        "maer": report.maer,
        "accuracy": report.accuracy,
        "permutation": [None if r is None else r + 1 for r in report.permutation],
    }
    if report.ssnr:
        out["ssnr_db"] = db_mean(list(report.ssnr.values()))
    if report.ssir:
        out["ssir_db"] = db_mean(list(report.ssir.values()))
    if extra:
        out.update(extra)
    return out


def write_summary(path, report: EvalReport, extra: dict | None = None):
    """Flat ``key = value`` summary file."""
    d = summary_dict(report, extra)
    with open(path, "w") as fh:
        for k, v in d.items():
            fh.write(f"{k} = {json.dumps(v)}\n")


def format_report(report: EvalReport) -> str:
    lines = [f"{'ann':>4} {'est':>4} {'MAE(deg)':>9} {'recall':>7} {'F':>6} {'SSNR':>7} {'SSIR':>7}"]
    for s in report.sources:
        lines.append(
            f"{s.annotated + 1:>4} {'-' if s.estimated is None else s.estimated + 1:>4} "
            f"{'-' if s.mae is None else f'{np.degrees(s.mae):.2f}':>9} {s.recall:>7.3f} {s.accuracy:>6.3f} "
            f"{_fmt(report.ssnr.get(s.annotated)) or '-':>7} {_fmt(report.ssir.get(s.annotated)) or '-':>7}")
    mae_deg = "-" if report.mae is None else f"{np.degrees(report.mae):.2f}"
    lines.append(f"mean MAE {mae_deg} deg, recall {report.recall:.3f}, F {report.accuracy:.3f}")
    return "\n".join(lines)
