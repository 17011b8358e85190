"""Command line interface: ``movsep {synth,track,separate,eval,pipeline}``.

Exit codes: 0 success, 1 usage error, 2 data error (unreadable or
inconsistent inputs).
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import PipelineConfig, load_config, write_config
from .evaluation import (EvalReport, best_permutation, format_report, segmental_sir, segmental_snr,
                         write_report_csv, write_summary)
from .geometry import default_geometry, load_geometry
from .localization import write_measurements_csv
from .mnmf import save_params, write_cost_csv
from .pipeline import run_separation, run_tracking
from .spatial_model import write_weights_csv
from .geometry import DirectionGrid
from .spectral import AudioBuffer, stft
from .synth import default_scene, load_scene, synthesize, write_scene
from .trajectories import TrajectorySet, read_trajectories_csv, write_trajectories_csv
from .wavio import read_wav, write_wav

log = logging.getLogger("movsep")

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# ---------------------------------------------------------------- helpers

def _header(cfg: PipelineConfig, what: str) -> str:
    return f"movsep {__version__} {what} seed={cfg.seed}"


def _config(args) -> PipelineConfig:
    try:
        cfg = load_config(args.config) if args.config else PipelineConfig()
    except OSError as exc:
        raise DataError(f"cannot read config: {exc}") from None
    except ValueError as exc:
        raise DataError(str(exc)) from None
    if args.seed is not None:
        cfg.seed = args.seed
    return cfg


def _geometry(args):
    if not args.geometry:
        return default_geometry()
    try:
        return load_geometry(args.geometry)
    except OSError as exc:
        raise DataError(f"cannot read geometry: {exc}") from None
    except ValueError as exc:
        raise DataError(str(exc)) from None


def _read_audio(path) -> AudioBuffer:
    try:
        return read_wav(path)
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot read WAV {path}: {exc}") from None


def _read_traj(path, n_frames: int | None, frame_period: float | None) -> TrajectorySet:
    try:
        traj = read_trajectories_csv(path, None, frame_period)
    except OSError as exc:
        raise DataError(f"cannot read trajectories: {exc}") from None
    except (ValueError, KeyError) as exc:
        raise DataError(f"{path}: malformed trajectory file ({exc})") from None
    if n_frames is not None and traj.n_sources and traj.n_frames != n_frames:
        raise DataError(f"{path}: trajectories cover {traj.n_frames} frames, audio has {n_frames}")
    if n_frames is not None and not traj.n_sources:
        traj = TrajectorySet.empty(n_frames, traj.frame_period if frame_period is None else frame_period)
    return traj


def _write_vad(path, vad: np.ndarray, ids, header: str):
    with open(path, "w", newline="") as fh:
        fh.write(f"# {header}\n")
        w = csv.writer(fh)
        w.writerow(["source_id", "frame", "active"])
        for p, sid in enumerate(ids):
            for n in range(vad.shape[1]):
                w.writerow([sid, n, int(vad[p, n])])


def _read_vad(path, ids, n_frames: int) -> np.ndarray:
    vad = np.zeros((len(ids), n_frames), bool)
    index = {sid: i for i, sid in enumerate(ids)}
    try:
        with open(path, newline="") as fh:
            for r in csv.DictReader(ln for ln in fh if not ln.startswith("#")):
                p = index.get(int(r["source_id"]))
                n = int(r["frame"])
                if p is not None and n < n_frames:
                    vad[p, n] = bool(int(r["active"]))
    except OSError as exc:
        raise DataError(f"cannot read VAD: {exc}") from None
    except (ValueError, KeyError) as exc:
        raise DataError(f"{path}: malformed VAD file ({exc})") from None
    return vad


def _write_manifest(outdir: Path, cfg: PipelineConfig, files):
    with open(outdir / "manifest.txt", "w") as fh:
        fh.write(f"# {_header(cfg, 'outputs')}\n")
        for f in files:
            fh.write(f"{Path(f).name}\n")


# ---------------------------------------------------------------- commands

def cmd_synth(args) -> int:
    try:
        scene = load_scene(args.scene) if args.scene else default_scene()
    except OSError as exc:
        raise DataError(f"cannot read scene: {exc}") from None
    except ValueError as exc:
        raise DataError(str(exc)) from None
    if args.seed is not None:
        scene.seed = args.seed
    cfg = _config(args)
    cfg.seed = scene.seed
    geom = _geometry(args)
    try:
        res = synthesize(scene, geom, cfg.sample_rate, cfg.window_length, cfg.hop)
    except ValueError as exc:
        raise DataError(str(exc)) from None
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    files = [out / "mixture.wav"]
    write_wav(files[0], res.mixture)
    for sid, ref in zip(res.truth.ids, res.references):
        files.append(out / f"reference_{sid}.wav")
        write_wav(files[-1], ref)
    hdr = _header(cfg, "synth")
    write_trajectories_csv(out / "truth.csv", res.truth, hdr)
    _write_vad(out / "vad.csv", res.vad, res.truth.ids, hdr)
    write_scene(out / "scene.txt", scene)
    files += [out / "truth.csv", out / "vad.csv", out / "scene.txt"]
    _write_manifest(out, cfg, files)
    print(f"wrote {len(res.references)}-source mixture to {out}")
    return EXIT_OK


def _track(audio, geom, cfg, output: Path, measurements=None):
    try:
        traj, an = run_tracking(audio, geom, cfg)
    except ValueError as exc:
        raise DataError(str(exc)) from None
    hdr = _header(cfg, "track")
    write_trajectories_csv(output, traj, hdr)
    if measurements:
        write_measurements_csv(measurements, an.measurements, hdr)
    return traj, an


def cmd_track(args) -> int:
    cfg = _config(args)
    geom = _geometry(args)
    audio = _read_audio(args.input)
    traj, _ = _track(audio, geom, cfg, Path(args.output), args.measurements)
    print(f"{traj.n_sources} source(s) tracked, written to {args.output}")
    return EXIT_OK


def _separate(audio, traj, geom, cfg, outdir: Path, spec=None, save_state=None):
    try:
        sep = run_separation(audio, traj, geom, cfg, spec=spec)
    except ValueError as exc:
        raise DataError(str(exc)) from None
    outdir.mkdir(parents=True, exist_ok=True)
    files = []
    for sid, a in zip(traj.ids, sep.sources):
        files.append(outdir / f"source_{sid}.wav")
        write_wav(files[-1], a)
    files.append(outdir / "background.wav")
    write_wav(files[-1], sep.sources[-1])
    hdr = _header(cfg, "separate")
    write_cost_csv(outdir / "cost.csv", sep.mnmf.costs, hdr)
    files.append(outdir / "cost.csv")
    if save_state:
        save_params(save_state, sep.mnmf.params)
    return sep, files


def cmd_separate(args) -> int:
    cfg = _config(args)
    geom = _geometry(args)
    audio = _read_audio(args.input)
    spec = stft(audio, cfg.window_length, cfg.hop)
    path = args.annotations or args.trajectories
    traj = _read_traj(path, spec.n_frames, cfg.hop / audio.sample_rate)
    out = Path(args.output)
    sep, files = _separate(audio, traj, geom, cfg, out, spec, args.save_params)
    if args.weights:
        write_weights_csv(args.weights, sep.weights, DirectionGrid(cfg.n_directions), 1e-6)
    _write_manifest(out, cfg, files)
    c = sep.mnmf.costs
    print(f"separated {traj.n_sources} source(s) + background into {out}; cost {c[0]:.4g} -> {c[-1]:.4g}")
    return EXIT_OK


def _evaluate(est, truth, vad, separated=None, references=None, sample_rate=None) -> EvalReport:
    rep = best_permutation(est, truth, vad)
    if separated is not None:
        refs = [r.samples[0] for r in references]
        for p, r in enumerate(rep.permutation):
            sig = np.zeros_like(refs[p]) if r is None else separated.get(est.ids[r])
            if sig is None:
                raise DataError(f"no separated signal for estimated source {est.ids[r]}")
            if len(sig) != len(refs[p]):
                raise DataError("separated and reference signals differ in length")
            rep.ssnr[p] = segmental_snr(sig, refs[p], sample_rate)
            rep.ssir[p] = segmental_sir(sig, refs, p, sample_rate)
    return rep


def _load_separated(directory: Path, ids) -> dict:
    out = {}
    for sid in ids:
        f = directory / f"source_{sid}.wav"
        if f.exists():
            out[sid] = _read_audio(f).samples[0]
    return out


def cmd_eval(args) -> int:
    cfg = _config(args)
    truth = _read_traj(args.truth, None, None)
    est = _read_traj(args.estimated, truth.n_frames, truth.frame_period)
    vad = _read_vad(args.vad, truth.ids, truth.n_frames) if args.vad else None
    separated = refs = None
    rate = None
    if args.separated:
        if not args.references:
            raise UsageError("--separated needs --references")
        refs = [_read_audio(p) for p in args.references]
        if len(refs) != truth.n_sources:
            raise DataError(f"{len(refs)} reference(s) for {truth.n_sources} annotated source(s)")
        rate = refs[0].sample_rate
        separated = _load_separated(Path(args.separated), est.ids)
    rep = _evaluate(est, truth, vad, separated, refs, rate)
    hdr = _header(cfg, "eval")
    write_report_csv(args.output, rep, hdr)
    if args.summary:
        write_summary(args.summary, rep, {"seed": cfg.seed})
    print(format_report(rep))
    return EXIT_OK


def cmd_pipeline(args) -> int:
    cfg = _config(args)
    geom = _geometry(args)
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    truth = vad = refs = None
    if args.input and args.input.lower().endswith(".wav"):
        audio = _read_audio(args.input)
    else:
        try:
            scene = load_scene(args.input) if args.input else default_scene(cfg.seed)
        except OSError as exc:
            raise DataError(f"cannot read scene: {exc}") from None
        except ValueError as exc:
            raise DataError(str(exc)) from None
        if args.seed is not None:
            scene.seed = args.seed
        try:
            res = synthesize(scene, geom, cfg.sample_rate, cfg.window_length, cfg.hop)
        except ValueError as exc:
            raise DataError(str(exc)) from None
        audio, truth, vad, refs = res.mixture, res.truth, res.vad, res.references
        hdr = _header(cfg, "synth")
        write_wav(out / "mixture.wav", audio)
        for sid, ref in zip(truth.ids, refs):
            write_wav(out / f"reference_{sid}.wav", ref)
        write_trajectories_csv(out / "truth.csv", truth, hdr)
        _write_vad(out / "vad.csv", vad, truth.ids, hdr)
        write_scene(out / "scene.txt", scene)
    write_config(out / "config.txt", cfg)
    traj, an = _track(audio, geom, cfg, out / "trajectories.csv", out / "measurements.csv")
    sep, files = _separate(audio, traj, geom, cfg, out / "separated", an.spec)
    _write_manifest(out / "separated", cfg, files)
    if truth is not None:
        separated = {sid: a.samples[0] for sid, a in zip(traj.ids, sep.sources)}
        rep = _evaluate(traj, truth, vad, separated, refs, audio.sample_rate)
        write_report_csv(out / "report.csv", rep, _header(cfg, "eval"))
        write_summary(out / "summary.txt", rep, {"seed": cfg.seed})
        print(format_report(rep))
    print(f"{traj.n_sources} source(s) tracked and separated; outputs in {out}")
    return EXIT_OK


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value configuration file")
    common.add_argument("--geometry", help="microphone geometry file (default: shipped 4-mic diamond)")
    common.add_argument("--seed", type=int, help="random seed, overrides the config")
    common.add_argument("-v", "--verbose", action="count", default=0)

    p = _Parser(prog="movsep", description="Moving sound source tracking and separation.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    s = sub.add_parser("synth", parents=[common], help="render a simulated scene")
    s.add_argument("scene", nargs="?", help="scene file (default: two crossing talkers)")
    s.add_argument("-o", "--output", required=True, help="output directory")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("track", parents=[common], help="localize and track sources in a WAV")
    s.add_argument("input", help="multichannel WAV")
    s.add_argument("-o", "--output", required=True, help="trajectory CSV")
    s.add_argument("--measurements", help="also write DOA measurements CSV")
    s.set_defaults(func=cmd_track)

    s = sub.add_parser("separate", parents=[common], help="separate sources along trajectories")
    s.add_argument("input", help="multichannel WAV")
    g = s.add_mutually_exclusive_group(required=True)
    g.add_argument("--trajectories", help="trajectory CSV from 'track'")
    g.add_argument("--annotations", help="external (e.g. ground-truth) trajectory CSV")
    s.add_argument("-o", "--output", required=True, help="output directory")
    s.add_argument("--save-params", help="write the learned NMF parameters to this file")
    s.add_argument("--weights", help="write the spatial weights CSV")
    s.set_defaults(func=cmd_separate)

    s = sub.add_parser("eval", parents=[common], help="score trajectories and separated signals")
    s.add_argument("--estimated", required=True, help="estimated trajectory CSV")
    s.add_argument("--truth", required=True, help="annotated trajectory CSV")
    s.add_argument("--vad", help="voice activity CSV (source_id, frame, active)")
    s.add_argument("--separated", help="directory with source_<id>.wav files")
    s.add_argument("--references", nargs="+", help="reference WAVs in annotated source order")
    s.add_argument("-o", "--output", required=True, help="report CSV")
    s.add_argument("--summary", help="key = value summary file")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("pipeline", parents=[common], help="synthesize or read, track, separate and evaluate")
    s.add_argument("input", nargs="?", help="scene file or WAV (default: two crossing talkers)")
    s.add_argument("-o", "--output", required=True, help="output directory")
    s.set_defaults(func=cmd_pipeline)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if not getattr(args, "command", None):
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"movsep: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"movsep: error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
