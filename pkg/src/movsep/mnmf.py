"""Multichannel NMF with time-varying spatial covariance matrices.

The mixture SCM of every time-frequency point is modelled as
``X_fn ~ sum_p H_fnp s_fnp`` with ``H_fnp = sum_d W_fd z_ndp`` fixed by the
tracker and ``s_fnp = sum_q b_qp t_fq v_qn`` learned by multiplicative
updates on the squared Frobenius distance.

Only traces are needed. With ``A_fnp = tr(X_fn H_fnp)`` and
``C_fnpp' = tr(H_fnp H_fnp')`` the cost is
``sum ||X||^2 - 2 sum A s + sum_pp' s_p C_pp' s_p'``.
"""

from __future__ import annotations

import csv
import logging
import struct
from dataclasses import dataclass

import numpy as np

from .geometry import DoaKernelSet
from .spatial_model import MixtureScm, SpatialWeights

__all__ = [
    "EPS",
    "MnmfParams",
    "TraceModel",
    "MnmfResult",
    "init_params",
    "source_spectrograms",
    "trace_model",
    "model_scm",
    "cost",
    "update",
    "write_cost_csv",
    "save_params",
    "load_params",
]

log = logging.getLogger(__name__)

EPS = 1e-12
_MAGIC = b"MNMF"
_VERSION = 1


@dataclass
class MnmfParams:
    b: np.ndarray  # (Q, P)
    t: np.ndarray  # (F, Q)
    v: np.ndarray  # (Q, N)

    @property
    def n_components(self) -> int:
        return self.b.shape[0]

    @property
    def n_sources(self) -> int:
        return self.b.shape[1]

    def copy(self) -> "MnmfParams":
        return MnmfParams(self.b.copy(), self.t.copy(), self.v.copy())


def init_params(n_bins: int, n_frames: int, n_components: int = 80, n_sources: int = 2,
                seed: int = 0, eps: float = EPS) -> MnmfParams:
    if n_components < 1 or n_sources < 1:
        raise ValueError("need at least one component and one source")
    rng = np.random.default_rng(seed)
    b = rng.uniform(eps, 1.0, (n_components, n_sources))
    t = rng.uniform(eps, 1.0, (n_bins, n_components))
    v = rng.uniform(eps, 1.0, (n_components, n_frames))
    return MnmfParams(b, t, v)


def source_spectrograms(params: MnmfParams) -> np.ndarray:
    """``s[f, n, p] = sum_q b_qp t_fq v_qn``."""
    return np.einsum("fq,qp,qn->fnp", params.t, params.b, params.v, optimize=True)


@dataclass
class TraceModel:
    """Fixed trace quantities of a problem.

    Attributes:
        A: (F, N, P) ``tr(X_fn H_fnp)``.
        C: (F, N, P, P) ``tr(H_fnp H_fnp')``.
        x_energy: ``sum_fn ||X_fn||_F^2``.
    """

    A: np.ndarray
    C: np.ndarray
    x_energy: float


def trace_model(X: MixtureScm, weights: SpatialWeights, kernels: DoaKernelSet,
                chunk: int = 64) -> TraceModel:
    z = weights.z
    G = X.kernel_traces(kernels)  # (F, N, D)
    A = np.einsum("fnd,ndp->fnp", G, z, optimize=True)
    F, N = G.shape[:2]
    P = z.shape[2]
    C = np.empty((F, N, P, P))
    a = kernels.steering
    for f0 in range(0, F, chunk):
        sl = slice(f0, min(F, f0 + chunk))
        # H[f, n, p] = sum_d z a a^H, materialised per bin block
        H = np.einsum("fdm,fde,ndp->fnpme", a[sl], a[sl].conj(), z, optimize=True)
        # tr(H_p H_p') for Hermitian H is the real inner product of the entries
        C[sl] = np.einsum("fnpme,fnqme->fnpq", H, H.conj(), optimize=True).real
    mag = np.abs(X.xh) ** 2
    x_energy = float(np.sum(mag.sum(axis=2) ** 2))
    return TraceModel(A, C, x_energy)


def model_scm(params: MnmfParams, weights: SpatialWeights, kernels: DoaKernelSet) -> np.ndarray:
    """Dense ``X_hat[f, n] = sum_p H_fnp s_fnp`` (F, N, M, M); only for small problems."""
    s = source_spectrograms(params)
    a = kernels.steering
    return np.einsum("fdm,fde,ndp,fnp->fnme", a, a.conj(), weights.z, s, optimize=True)


def cost(X: MixtureScm, params: MnmfParams, weights: SpatialWeights, kernels: DoaKernelSet) -> float:
    """Squared Frobenius distance evaluated on dense matrices."""
    R = X.dense() - model_scm(params, weights, kernels)
    return float(np.sum(R.real ** 2 + R.imag ** 2))


def _expanded_cost(tm: TraceModel, s: np.ndarray, D: np.ndarray) -> float:
    return float(tm.x_energy - 2.0 * np.sum(tm.A * s) + np.sum(s * D))


def _denominator(tm: TraceModel, s: np.ndarray) -> np.ndarray:
    """``tr(X_hat_fn H_fnp) = sum_p' s_fnp' C_fnp'p``."""
    return np.einsum("fnq,fnqp->fnp", s, tm.C, optimize=True)


def _ratio(num: np.ndarray, den: np.ndarray, eps: float):
    ok = den >= eps
    r = np.ones_like(num)
    r[ok] = num[ok] / den[ok]
    return r, int(np.count_nonzero(~ok))


@dataclass
class MnmfResult:
    params: MnmfParams
    costs: np.ndarray  # cost before the first and after every iteration
    guarded: int  # entries whose denominator fell below eps


def update(tm: TraceModel, params: MnmfParams, iterations: int = 200, eps: float = EPS,
           callback=None) -> MnmfResult:
    """Run multiplicative updates for b, t and v in that order.

    The model is refreshed after every block. Entries are floored at ``eps``;
    a denominator below ``eps`` leaves its entry unchanged and is counted.
    """
    p = params.copy()
    if np.any(p.b < 0) or np.any(p.t < 0) or np.any(p.v < 0):
        raise ValueError("parameters must be nonnegative")
    A = tm.A
    if A.shape[2] != p.n_sources:
        raise ValueError("parameter source count does not match spatial weights")
    guarded = 0
    s = source_spectrograms(p)
    D = _denominator(tm, s)
    costs = [_expanded_cost(tm, s, D)]
    for it in range(iterations):
        # b: sum_fn t_fq v_qn (.)_fnp
        tA = np.einsum("fq,fnp->qnp", p.t, A, optimize=True)
        tD = np.einsum("fq,fnp->qnp", p.t, D, optimize=True)
        num = np.einsum("qnp,qn->qp", tA, p.v)
        den = np.einsum("qnp,qn->qp", tD, p.v)
        r, k = _ratio(num, den, eps)
        guarded += k
        p.b = np.maximum(p.b * r, eps)
        s = source_spectrograms(p)
        D = _denominator(tm, s)

        # t: sum_np b_qp v_qn (.)_fnp
        num = np.einsum("fnp,qp,qn->fq", A, p.b, p.v, optimize=True)
        den = np.einsum("fnp,qp,qn->fq", D, p.b, p.v, optimize=True)
        r, k = _ratio(num, den, eps)
        guarded += k
        p.t = np.maximum(p.t * r, eps)
        s = source_spectrograms(p)
        D = _denominator(tm, s)

        # v: sum_fp b_qp t_fq (.)_fnp
        num = np.einsum("fnp,qp,fq->qn", A, p.b, p.t, optimize=True)
        den = np.einsum("fnp,qp,fq->qn", D, p.b, p.t, optimize=True)
        r, k = _ratio(num, den, eps)
        guarded += k
        p.v = np.maximum(p.v * r, eps)
        s = source_spectrograms(p)
        D = _denominator(tm, s)

        costs.append(_expanded_cost(tm, s, D))
        if callback is not None:
            callback(it, p, costs[-1])
    if p.b.max() > 1.0:
        log.info("mnmf: max b = %.3g exceeds 1 (left unconstrained)", p.b.max())
    if guarded:
        log.info("mnmf: %d update entries skipped for denominators below %g", guarded, eps)
    return MnmfResult(p, np.array(costs), guarded)


def write_cost_csv(path, costs, header: str | None = None):
    with open(path, "w", newline="") as fh:
        if header:
            fh.write(f"# {header}\n")
        w = csv.writer(fh)
        w.writerow(["iteration", "cost"])
        for i, c in enumerate(costs):
            w.writerow([i, f"{c:.10g}"])


def save_params(path, params: MnmfParams):
    """Binary checkpoint.

    Layout (little endian): 4-byte magic ``MNMF``, uint32 version, uint32
    Q, P, F, N, then float64 arrays b (Q x P), t (F x Q) and v (Q x N) in
    row-major order.
    """
    Q, P = params.b.shape
    F = params.t.shape[0]
    N = params.v.shape[1]
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<5I", _VERSION, Q, P, F, N))
        for arr in (params.b, params.t, params.v):
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_params(path) -> MnmfParams:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != _MAGIC:
        raise ValueError(f"{path}: not an MNMF checkpoint")
    version, Q, P, F, N = struct.unpack("<5I", data[4:24])
    if version != _VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    sizes = [Q * P, F * Q, Q * N]
    if len(data) != 24 + 8 * sum(sizes):
        raise ValueError(f"{path}: truncated checkpoint")
    arrays, off = [], 24
    for n in sizes:
        arrays.append(np.frombuffer(data, dtype="<f8", count=n, offset=off).copy())
        off += 8 * n
    return MnmfParams(arrays[0].reshape(Q, P), arrays[1].reshape(F, Q), arrays[2].reshape(Q, N))
