"""Signal builders and oracles shared by the tests."""

import numpy as np

from movsep.mnmf import EPS, TraceModel
from movsep.spectral import AudioBuffer


def plane_wave(geom, azimuth, n_samples=24000, fs=24000.0, seed=0, window_length=2048):
    """Multichannel noise arriving from ``azimuth`` as exact per-bin phase shifts."""
    from movsep.geometry import azimuth_vector, bin_frequencies
    from movsep.spectral import istft, stft

    r = np.random.default_rng(seed)
    mono = stft(AudioBuffer(r.standard_normal(n_samples), fs), window_length)
    k = azimuth_vector(azimuth)
    delays = geom.delays(k)
    omega = bin_frequencies(mono.n_bins, window_length, fs)
    bins = mono.bins[:, :, :1] * np.exp(-1j * omega[:, None, None] * delays[None, None, :])
    return istft(mono.with_bins(bins)), mono.with_bins(bins)


def exact_trace_model(tm: TraceModel, s: np.ndarray) -> TraceModel:
    """Trace model of the data X = sum_p H_p s_p generated by ``s`` itself."""
    A = np.einsum("fnq,fnqp->fnp", s, tm.C)
    return TraceModel(A, tm.C, float(np.sum(A * s)))


def scalar_nmf(V, b, t, v, iterations):
    """Frobenius NMF of V ~ T diag(b) V with elementwise loops."""
    F, N = V.shape
    Q = len(b)
    b, t, v = b.copy(), t.copy(), v.copy()

    def S():
        out = np.zeros((F, N))
        for f in range(F):
            for n in range(N):
                out[f, n] = sum(b[q] * t[f, q] * v[q, n] for q in range(Q))
        return out

    costs = [float(((V - S()) ** 2).sum())]
    for _ in range(iterations):
        s = S()
        for q in range(Q):
            num = sum(t[f, q] * v[q, n] * V[f, n] for f in range(F) for n in range(N))
            den = sum(t[f, q] * v[q, n] * s[f, n] for f in range(F) for n in range(N))
            b[q] = max(b[q] * num / den, EPS)
        s = S()
        new = t.copy()
        for f in range(F):
            for q in range(Q):
                num = sum(b[q] * v[q, n] * V[f, n] for n in range(N))
                den = sum(b[q] * v[q, n] * s[f, n] for n in range(N))
                new[f, q] = max(t[f, q] * num / den, EPS)
        t = new
        s = S()
        new = v.copy()
        for q in range(Q):
            for n in range(N):
                num = sum(b[q] * t[f, q] * V[f, n] for f in range(F))
                den = sum(b[q] * t[f, q] * s[f, n] for f in range(F))
                new[q, n] = max(v[q, n] * num / den, EPS)
        v = new
        costs.append(float(((V - S()) ** 2).sum()))
    return b, t, v, np.array(costs)
