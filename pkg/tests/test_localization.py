import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import quad

from movsep.geometry import DirectionGrid, doa_kernels
from movsep.localization import (DoaMeasurementSet, SrpMap, WgmmFrame, extract_measurements, initial_wgmm,
                                 srp_phat, threshold_components, wgmm_em, wgmm_loglik, wrap_angle,
                                 wrapped_gaussian_pdf)
from movsep.spectral import AudioBuffer, stft

from helpers import plane_wave

GRID = DirectionGrid(72)


def _hist(components):
    h = sum(a * wrapped_gaussian_pdf(GRID.azimuths, mu, var) for mu, var, a in components)
    return h / h.sum()


# ---------------------------------------------------------------- wrapped Gaussian

def test_pdf_peak_value():
    assert wrapped_gaussian_pdf(0.3, 0.3, 0.1) == pytest.approx(1 / np.sqrt(2 * np.pi * 0.1), rel=1e-12)


def test_pdf_periodic():
    th = np.linspace(-7, 7, 41)
    # equal up to the rounding of th + 2 pi itself
    np.testing.assert_allclose(wrapped_gaussian_pdf(th, 0.4, 0.7), wrapped_gaussian_pdf(th + 2 * np.pi, 0.4, 0.7),
                               rtol=1e-12, atol=1e-15)


@pytest.mark.parametrize("var", [0.01, 0.1, 0.5, 1.0])
def test_pdf_integrates_to_one(var):
    val, _ = quad(lambda t: float(wrapped_gaussian_pdf(t, 1.0, var)), -np.pi, np.pi, limit=200, points=[1.0])
    assert val == pytest.approx(1.0, abs=1e-6)


def test_pdf_rejects_nonpositive_variance():
    with pytest.raises(ValueError):
        wrapped_gaussian_pdf(0.0, 0.0, 0.0)


# ---------------------------------------------------------------- EM

def test_em_single_component_recovery():
    h = _hist([(np.pi / 4, 0.1, 1.0)])
    fit, _, _ = wgmm_em(h, GRID.azimuths, WgmmFrame(np.array([0.0]), np.array([0.5]), np.array([1.0])),
                        max_iter=500, tol=1e-10)
    assert abs(wrap_angle(fit.means[0] - np.pi / 4)) < 0.01
    assert fit.variances[0] == pytest.approx(0.1, rel=0.1)


def test_em_two_peaks():
    h = _hist([(0.0, 0.05, 0.5), (np.pi, 0.05, 0.5)])
    init = WgmmFrame(np.array([0.5, 2.5]), np.array([0.3, 0.3]), np.array([0.5, 0.5]))
    fit, _, _ = wgmm_em(h, GRID.azimuths, init, max_iter=300, tol=1e-10)
    order = np.argsort(np.abs(wrap_angle(fit.means)))
    assert abs(wrap_angle(fit.means[order[0]])) < 0.05
    assert abs(wrap_angle(fit.means[order[1]] - np.pi)) < 0.05
    np.testing.assert_allclose(fit.weights, 0.5, atol=0.05)


def test_em_monotone_and_weights_sum_to_one(rng):
    for _ in range(10):
        h = rng.random(72) ** 4
        fit, ll, hist = wgmm_em(h / h.sum(), GRID.azimuths, initial_wgmm(5), max_iter=50)
        assert np.all(np.diff(hist) >= -1e-8)
        assert fit.weights.sum() == pytest.approx(1.0, abs=1e-12)
        assert ll == pytest.approx(wgmm_loglik(h / h.sum(), GRID.azimuths, fit), abs=1e-9)


def test_em_errors():
    with pytest.raises(ValueError, match="all zero"):
        wgmm_em(np.zeros(72), GRID.azimuths, initial_wgmm(3))
    with pytest.raises(ValueError):
        wgmm_em(-np.ones(72), GRID.azimuths, initial_wgmm(3))
    with pytest.raises(ValueError):
        wgmm_em(np.ones(10), GRID.azimuths, initial_wgmm(3))


# ---------------------------------------------------------------- thresholds

def test_threshold_keeps_only_sharp_heavy_components():
    fit = WgmmFrame(np.array([0.1, 1.0, 2.0]), np.array([0.2, 0.7, 0.1]) ** 2, np.array([0.5, 0.4, 0.1]))
    rows = threshold_components(fit)
    assert rows.shape == (1, 3)
    assert rows[0, 0] == pytest.approx(0.1)


def test_broad_component_removed_two_peaks_survive():
    # a frame with two sharp peaks and a wide component around 71 degrees
    # spread over roughly 117 degrees (about 2 rad, beyond the 0.6 rad limit)
    broad = (np.radians(71), 2.0 ** 2, 0.3)
    h = _hist([(np.radians(-40), 0.02, 0.4), (np.radians(160), 0.03, 0.3), broad])
    init = WgmmFrame(np.radians([-30.0, 150.0, 60.0]), np.array([0.2, 0.2, 1.0]), np.full(3, 1 / 3))
    fit, _, _ = wgmm_em(h, GRID.azimuths, init, max_iter=300, tol=1e-9)
    rows = threshold_components(fit)
    assert len(rows) == 2
    got = np.sort(np.degrees(rows[:, 0]))
    np.testing.assert_allclose(got, [-40, 160], atol=3)
    assert np.sqrt(fit.variances.max()) > 0.6


# ---------------------------------------------------------------- SRP-PHAT

def test_srp_identical_channels_peak_at_zero_tdoa_directions(rng):
    from movsep.geometry import ArrayGeometry
    # a pair on the x axis: all TDOAs vanish at broadside (90 and 270 degrees)
    g = ArrayGeometry(np.array([[0.05, 0, 0], [-0.05, 0, 0]]))
    x = np.tile(rng.standard_normal(8192), (2, 1))
    spec = stft(AudioBuffer(x, 16000.0), 512)
    srp = srp_phat(spec, doa_kernels(g, GRID, 257, 512, 16000.0))
    best = srp.raw.max(axis=0)
    np.testing.assert_allclose(srp.raw[18], best, rtol=1e-12)
    np.testing.assert_allclose(srp.raw[54], best, rtol=1e-12)


def test_srp_scale_invariant_and_permutation_covariant(geom, rng):
    x = rng.standard_normal((4, 8192))
    spec = stft(AudioBuffer(x, 24000.0), 512)
    K = doa_kernels(geom, GRID, 257, 512, 24000.0)
    a = srp_phat(spec, K).power
    np.testing.assert_array_almost_equal(srp_phat(spec.with_bins(3.7 * spec.bins), K).power, a, decimal=10)
    order = [2, 0, 3, 1]
    Kp = doa_kernels(geom.permuted(order), GRID, 257, 512, 24000.0)
    np.testing.assert_allclose(srp_phat(spec.with_bins(spec.bins[:, :, order]), Kp).power, a, rtol=1e-9, atol=1e-9)


@pytest.mark.parametrize("d_star", [0, 13, 40, 65])
def test_srp_argmax_at_true_direction(geom, d_star):
    _, spec = plane_wave(geom, GRID.azimuths[d_star], n_samples=12000)
    K = doa_kernels(geom, GRID, spec.n_bins, 2048, 24000.0)
    srp = srp_phat(spec, K)
    assert np.all(np.argmax(srp.power[:, 2:-2], axis=0) == d_star)


def test_srp_needs_two_channels(rng):
    from movsep.geometry import ArrayGeometry
    spec = stft(AudioBuffer(rng.standard_normal(4096), 16000.0), 512)
    K = doa_kernels(ArrayGeometry(np.array([[0, 0, 0], [0.1, 0, 0]])), GRID, 257, 512, 16000.0)
    with pytest.raises(ValueError):
        srp_phat(spec, K)


def test_srp_nonnegative_power(geom, rng):
    spec = stft(AudioBuffer(rng.standard_normal((4, 4096)), 24000.0), 256)
    srp = srp_phat(spec, doa_kernels(geom, GRID, 129, 256, 24000.0))
    assert np.all(srp.power >= 0)
    np.testing.assert_allclose(srp.power, np.maximum(srp.raw, 0) ** 1.5)


# ---------------------------------------------------------------- measurements

def test_silent_signal_gives_no_measurements():
    srp = SrpMap(np.zeros((72, 10)), np.zeros((72, 10)), GRID.azimuths, 0.04)
    meas = extract_measurements(srp)
    assert meas.n_frames == 10 and meas.count() == 0


def test_measurements_from_plane_wave(geom):
    _, spec = plane_wave(geom, np.radians(100), n_samples=12000)
    srp = srp_phat(spec, doa_kernels(geom, GRID, spec.n_bins, 2048, 24000.0))
    meas = extract_measurements(srp)
    for rows in meas.frames[2:-2]:
        assert len(rows) >= 1
        assert abs(np.degrees(wrap_angle(rows[0, 0] - np.radians(100)))) < 5
        assert np.all((rows[:, 0] >= -np.pi) & (rows[:, 0] < np.pi))


def test_rescaled_mean_variance():
    frames = [np.array([[0.1, 0.02, 0.5], [1.0, 0.06, 0.3]]), np.zeros((0, 3)), np.array([[2.0, 0.1, 0.9]])]
    m = DoaMeasurementSet(frames, 0.04)
    r = m.rescaled(0.25)
    assert r.mean_variance() == pytest.approx(0.25)
    np.testing.assert_allclose(r.frames[0][:, 0], frames[0][:, 0])


@settings(max_examples=60)
@given(seed=st.integers(0, 2 ** 31 - 1), k=st.integers(1, 6))
def test_em_monotone_property(seed, k):
    r = np.random.default_rng(seed)
    h = r.random(72) ** r.uniform(1, 8)
    _, _, hist = wgmm_em(h, GRID.azimuths, initial_wgmm(k), max_iter=30)
    assert np.all(np.diff(hist) >= -1e-8 * max(1.0, abs(hist[0])))
