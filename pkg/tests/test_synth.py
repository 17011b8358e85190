import numpy as np
import pytest

from movsep.geometry import DirectionGrid, doa_kernels
from movsep.localization import srp_phat
from movsep.spectral import AudioBuffer, stft
from movsep.synth import (SceneSpec, SourceSpec, _noise, default_scene, load_scene, noise_bursts, speech_like,
                          synthesize, tone_complex, write_scene)
from movsep.wavio import write_wav


def _scene(**kw):
    base = dict(duration=1.5, sources=[SourceSpec(start_deg=30.0, speed_deg_s=20.0, signal="tones", f0=300.0)],
                noise_snr_db=None, seed=1)
    base.update(kw)
    return SceneSpec(**base)


def test_mixture_is_sum_of_images(geom):
    scene = _scene(sources=[SourceSpec(0.0, 24.0, "speech"), SourceSpec(180.0, -24.0, "noise")])
    res = synthesize(scene, geom)
    np.testing.assert_array_equal(res.mixture.samples, res.images.sum(axis=0))
    for p, ref in enumerate(res.references):
        np.testing.assert_array_equal(ref.samples[0], res.images[p, 0])


def test_silent_scene(geom):
    res = synthesize(_scene(sources=[], noise_snr_db=20.0), geom)
    assert np.all(res.mixture.samples == 0)
    assert res.truth.n_sources == 0


def test_deterministic_per_seed(geom):
    a = synthesize(default_scene(3, duration=1.0), geom)
    b = synthesize(default_scene(3, duration=1.0), geom)
    c = synthesize(default_scene(4, duration=1.0), geom)
    np.testing.assert_array_equal(a.mixture.samples, b.mixture.samples)
    assert not np.array_equal(a.mixture.samples, c.mixture.samples)


def test_truth_matches_applied_phase_shifts(geom):
    # each image frame is the dry frame times the steering phases of the recorded azimuth
    scene = _scene(sources=[SourceSpec(350.0, 40.0, "tones", f0=250.0)])
    res = synthesize(scene, geom)
    S = stft(AudioBuffer(res.dry[0], 24000.0), 2048)
    I = stft(AudioBuffer(res.images[0], 24000.0), 2048)
    grid_k = np.stack([np.cos(res.truth.azimuth[0]), np.sin(res.truth.azimuth[0]), 0 * res.truth.azimuth[0]], -1)
    delays = -(grid_k @ geom.mic_positions.T) / geom.speed_of_sound
    omega = 2 * np.pi * np.arange(1025) * 24000.0 / 2048
    steer = np.exp(-1j * omega[:, None, None] * delays[None])
    # images are resynthesised, so compare loudest bins away from the edges
    n = slice(3, -3)
    f = np.argsort(np.abs(S.bins[:, 10, 0]))[-5:]
    pred = S.bins[f][:, n] * steer[f][:, n]
    np.testing.assert_allclose(I.bins[f][:, n], pred, rtol=0.05, atol=0.05 * np.abs(pred).max())


def test_azimuth_wraps_and_moves(geom):
    scene = _scene(sources=[SourceSpec(350.0, 40.0, "tones")])
    res = synthesize(scene, geom)
    act = res.truth.active[0]
    assert not act[-1]  # the padded last frame lies past the end of the scene
    az = res.truth.azimuth[0, act]
    assert np.all((az >= 0) & (az < 2 * np.pi))
    step = np.angle(np.exp(1j * np.diff(az)))
    np.testing.assert_allclose(step, np.radians(40) * res.truth.frame_period, atol=1e-12)


def test_activity_limits_emission(geom):
    scene = _scene(sources=[SourceSpec(0.0, 0.0, "tones", activity=(0.5, 1.0))])
    res = synthesize(scene, geom)
    t = np.arange(res.dry.shape[1]) / 24000
    assert np.all(res.dry[0][(t < 0.5) | (t >= 1.0)] == 0)
    frames = np.arange(res.truth.n_frames) * res.truth.frame_period
    np.testing.assert_array_equal(res.truth.active[0], (frames >= 0.5 - 1e-9) & (frames <= 1.0 + 1e-9))
    assert not np.any(res.vad[0] & ~res.truth.active[0])


def test_no_voicing_after_the_scene_ends(geom):
    res = synthesize(_scene(sources=[SourceSpec(0.0, 0.0, "noise")]), geom)
    late = np.arange(res.truth.n_frames) * res.truth.frame_period > 1.5
    assert late.any() and not res.vad[0, late].any()
    assert not np.any(res.vad[0] & ~res.truth.active[0])


def test_noise_level(geom):
    res = synthesize(_scene(noise_snr_db=10.0, noise_color="white"), geom)
    clean = res.images.sum(axis=0)
    noise = res.mixture.samples - clean
    snr = 10 * np.log10(np.mean(clean ** 2) / np.mean(noise ** 2))
    assert snr == pytest.approx(10.0, abs=0.1)


def test_pink_noise_spectrum():
    x = _noise((2, 2 ** 16), "pink", np.random.default_rng(0))
    np.testing.assert_allclose(x.std(axis=1), 1.0)
    P = np.abs(np.fft.rfft(x[0])) ** 2
    lo, hi = P[100:200].mean(), P[1000:2000].mean()
    # power per bin falls as 1/f: a decade up costs about 10 dB
    assert 10 * np.log10(lo / hi) == pytest.approx(10.0, abs=1.5)
    with pytest.raises(ValueError):
        _noise((1, 8), "blue", np.random.default_rng(0))


@pytest.mark.parametrize("signal", ["noise", "tones"])
@pytest.mark.parametrize("d_star", [20, 37])
def test_stationary_source_localises_on_grid(geom, signal, d_star):
    grid = DirectionGrid(72)
    scene = _scene(sources=[SourceSpec(float(np.degrees(grid.azimuths[d_star])) % 360, 0.0, signal)],
                   duration=3.0)
    res = synthesize(scene, geom)
    spec = stft(res.mixture, 2048)
    srp = srp_phat(spec, doa_kernels(geom, grid, spec.n_bins, 2048, 24000.0))
    assert np.all(np.argmax(srp.power[:, res.vad[0]], axis=0) == d_star)


def test_harmonic_speech_localises_within_one_step(geom):
    # sparse harmonic spectra leave near-empty bins that PHAT weights fully,
    # so the peak may land on a neighbouring grid point
    grid = DirectionGrid(72)
    res = synthesize(_scene(sources=[SourceSpec(100.0, 0.0, "speech")], duration=3.0), geom)
    spec = stft(res.mixture, 2048)
    srp = srp_phat(spec, doa_kernels(geom, grid, spec.n_bins, 2048, 24000.0))
    assert np.all(np.abs(np.argmax(srp.power[:, res.vad[0]], axis=0) - 20) <= 1)


def test_generators_gate_and_scale():
    r = np.random.default_rng(0)
    for gen in (speech_like, tone_complex, noise_bursts):
        x, gate = gen(24000, 24000.0, r, 150.0, span=(6000, 18000))
        assert np.all(x[:6000] == 0) and np.all(x[18000:] == 0)
        assert np.all(x[gate == 0] == 0)
        assert gate.max() == 1.0


def test_wav_source(tmp_path, geom):
    r = np.random.default_rng(2)
    write_wav(tmp_path / "s.wav", AudioBuffer(0.1 * r.standard_normal(24000), 24000.0))
    res = synthesize(_scene(sources=[SourceSpec(10.0, 0.0, str(tmp_path / "s.wav"))], duration=2.0), geom)
    assert np.all(res.dry[0, 24000:] == 0)
    assert np.sqrt(np.mean(res.dry[0, :24000] ** 2)) == pytest.approx(0.05, rel=1e-3)
    write_wav(tmp_path / "b.wav", AudioBuffer(np.zeros(100), 16000.0))
    with pytest.raises(ValueError, match="sample rate"):
        synthesize(_scene(sources=[SourceSpec(signal=str(tmp_path / "b.wav"))]), geom)


def test_scene_validation(geom):
    with pytest.raises(ValueError):
        synthesize(_scene(duration=0.0), geom)
    with pytest.raises(ValueError, match="angular velocity"):
        synthesize(_scene(sources=[SourceSpec(0.0, 5000.0)]), geom)
    with pytest.raises(ValueError, match="shorter"):
        synthesize(_scene(duration=0.05), geom)


def test_scene_file_round_trip(tmp_path):
    scene = default_scene(7)
    scene.sources[0].activity = (1.0, 4.5)
    write_scene(tmp_path / "s.txt", scene)
    back = load_scene(tmp_path / "s.txt")
    assert back == scene


def test_scene_file_direction_and_errors(tmp_path):
    p = tmp_path / "s.txt"
    p.write_text("duration = 2\nnoise_snr_db = none\nsource.1.speed_deg_s = 30\nsource.1.direction = cw\n")
    s = load_scene(p)
    assert s.noise_snr_db is None and s.sources[0].speed_deg_s == -30.0
    p.write_text("source.1.colour = red\n")
    with pytest.raises(ValueError, match="unknown source key"):
        load_scene(p)
    p.write_text("volume = 11\n")
    with pytest.raises(ValueError, match="unknown key"):
        load_scene(p)
    p.write_text("source.1.direction = up\n")
    with pytest.raises(ValueError, match="cw or ccw"):
        load_scene(p)


def test_default_scene_shape():
    s = default_scene()
    assert s.duration == 10.0 and len(s.sources) == 2
    a, b = s.sources
    sep = abs(((a.start_deg - b.start_deg) + 180) % 360 - 180)
    assert sep >= 45
    assert a.speed_deg_s * b.speed_deg_s < 0
