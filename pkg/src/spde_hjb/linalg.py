"""Small dense linear-algebra helpers for covariance factors."""

from dataclasses import dataclass

import numpy as np

RANK_RTOL = 1e-12


@dataclass(frozen=True)
class PsdFactor:
    """Factorisation ``cov ~= factor @ factor.T`` restricted to the numerical range.

    ``whitening`` is the left inverse of ``factor`` (``whitening @ factor = I_rank``),
    so that ``whitening.T @ whitening`` is a generalised inverse of ``cov``.
    """

    factor: np.ndarray
    whitening: np.ndarray
    rank: int
    eigenvalues: np.ndarray
    scale: np.ndarray


def psd_factor(cov, rtol=RANK_RTOL):
    """Factor a symmetric PSD matrix through a Jacobi-equilibrated eigendecomposition.

    The diagonal scaling makes covariances whose entries live on very different
    scales (``t**3`` against ``t`` for second-order systems at small ``t``)
    well conditioned before the eigensolver sees them. Eigenvalues of the
    equilibrated matrix below ``rtol * max`` are clamped to zero.
    """
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    cov = 0.5 * (cov + cov.T)
    n = cov.shape[0]
    diag = np.clip(np.diag(cov), 0.0, None)
    dmax = diag.max() if n else 0.0
    active = diag > 1e-300 + 1e-30 * dmax
    scale = np.zeros(n)
    scale[active] = 1.0 / np.sqrt(diag[active])
    if not active.any():
        return PsdFactor(np.zeros((n, 0)), np.zeros((0, n)), 0, np.zeros(0), scale)

    idx = np.flatnonzero(active)
    sub = cov[np.ix_(idx, idx)] * np.outer(scale[idx], scale[idx])
    w, U = np.linalg.eigh(sub)
    w = np.clip(w, 0.0, None)
    order = np.argsort(w)[::-1]
    w, U = w[order], U[:, order]
    keep = w > rtol * w[0]
    r = int(keep.sum())
    sq = np.sqrt(w[:r])

    factor = np.zeros((n, r))
    factor[idx, :] = U[:, :r] * sq / scale[idx, None]
    whitening = np.zeros((r, n))
    whitening[:, idx] = (U[:, :r] / sq).T * scale[idx]
    return PsdFactor(factor, whitening, r, w, scale)


def sym_sqrt(cov, rtol=RANK_RTOL):
    """Symmetric PSD square root with negative/insignificant eigenvalues clamped to 0."""
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    w, U = np.linalg.eigh(0.5 * (cov + cov.T))
    w = np.clip(w, 0.0, None)
    if w.size and w.max() > 0:
        w[w <= rtol * w.max()] = 0.0
    return (U * np.sqrt(w)) @ U.T


def sinc(x):
    """sin(x)/x with the removable singularity filled in."""
    return np.sinc(np.asarray(x, dtype=float) / np.pi)


def sinc_diff(x, y):
    """sinc(x) - sinc(y) without cancellation when both arguments are small."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    x, y = np.broadcast_arrays(x, y)
    direct = sinc(x) - sinc(y)
    small = np.maximum(np.abs(x), np.abs(y)) < 1.0
    if not small.any():
        return direct
    xs, ys = x[small], y[small]
    x2, y2 = xs * xs, ys * ys
    # x^{2k} - y^{2k} = (x - y)(x + y) * h_k,  h_{k+1} = x^2 h_k + y^{2k}
    diff2 = (xs - ys) * (xs + ys)
    h = np.ones_like(xs)
    ypow = y2.copy()
    fact = 6.0
    total = -diff2 * h / fact
    for k in range(2, 16):
        h = x2 * h + ypow
        ypow = ypow * y2
        fact *= (2 * k) * (2 * k + 1)
        total = total + (-1) ** k * diff2 * h / fact
    out = direct.copy()
    out[small] = total
    return out
