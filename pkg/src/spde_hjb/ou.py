"""Ornstein-Uhlenbeck transition semigroup and its B-gradient on functions of Px.

With P commuting with e^{tA}, P_t[phi](x) = E fhat(A_P(t) z + eta), z = Px,
eta ~ N(0, Qbar_t), and

    <grad^B P_t[phi](x), k> = E[fhat(A_P(t) z + eta) <Lambda(t) k, Qbar_t^{-1/2} eta>].
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse
from scipy.special import ndtr

from .errors import NegativeTime, NonFiniteIntegrand, RangeViolation
from .quadrature import ProjectedGaussian, QuadScheme, expect, expect_weighted, standard_nodes
from .smoothing import RANGE_RTOL
from .spectral import SpectralModel


@dataclass(frozen=True, eq=False)
class GridFunction:
    """Tabulated function on a tensor grid; multilinear inside, constant (clamped) outside."""

    bounds: tuple
    nodes_per_axis: tuple
    values: np.ndarray

    def __post_init__(self):
        bounds = tuple((float(lo), float(hi)) for lo, hi in self.bounds)
        nodes = tuple(int(k) for k in self.nodes_per_axis)
        if len(bounds) != len(nodes):
            raise ValueError("bounds and nodes_per_axis disagree on the dimension")
        if any(hi <= lo for lo, hi in bounds) or any(k < 2 for k in nodes):
            raise ValueError("each axis needs lo < hi and at least 2 nodes")
        vals = np.asarray(self.values, float)
        if vals.shape[: len(nodes)] != nodes:
            raise ValueError(f"values shape {vals.shape} does not start with {nodes}")
        if not np.all(np.isfinite(vals)):
            raise ValueError("grid values must be finite")
        object.__setattr__(self, "bounds", bounds)
        object.__setattr__(self, "nodes_per_axis", nodes)
        object.__setattr__(self, "values", vals)

    @property
    def dim(self):
        return len(self.nodes_per_axis)

    @property
    def value_shape(self):
        return self.values.shape[self.dim:]

    @property
    def size(self):
        return int(np.prod(self.nodes_per_axis))

    @property
    def axes(self):
        return [np.linspace(lo, hi, k) for (lo, hi), k in zip(self.bounds, self.nodes_per_axis)]

    def points(self):
        """All grid nodes, shape (size, dim), C order."""
        mesh = np.meshgrid(*self.axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    @property
    def flat(self):
        return self.values.reshape((self.size,) + self.value_shape)

    def with_values(self, flat_values):
        flat_values = np.asarray(flat_values, float)
        return GridFunction(self.bounds, self.nodes_per_axis,
                            flat_values.reshape(self.nodes_per_axis + flat_values.shape[1:]))

    @classmethod
    def from_callable(cls, bounds, nodes_per_axis, fn):
        """Tabulate a vectorised ``fn(points (N, n)) -> (N,) or (N, m)``."""
        blank = cls(bounds, nodes_per_axis, np.zeros(tuple(nodes_per_axis)))
        return blank.with_values(np.asarray(fn(blank.points()), float))

    def interp_matrix(self, pts):
        """Sparse S with S @ flat == self(pts) for scalar values."""
        pts = np.atleast_2d(np.asarray(pts, float))
        if pts.shape[1] != self.dim:
            raise ValueError(f"points have dimension {pts.shape[1]}, grid has {self.dim}")
        npts = pts.shape[0]
        idx_list, frac_list = [], []
        for d, ((lo, hi), k) in enumerate(zip(self.bounds, self.nodes_per_axis)):
            h = (hi - lo) / (k - 1)
            x = np.clip(pts[:, d], lo, hi)
            i = np.clip(np.floor((x - lo) / h).astype(int), 0, k - 2)
            idx_list.append(i)
            frac_list.append((x - (lo + i * h)) / h)
        strides = np.cumprod((1,) + self.nodes_per_axis[::-1])[:-1][::-1]
        rows, cols, data = [], [], []
        for corner in range(2**self.dim):
            flat = np.zeros(npts, dtype=np.int64)
            wt = np.ones(npts)
            for d in range(self.dim):
                bit = (corner >> (self.dim - 1 - d)) & 1
                flat += (idx_list[d] + bit) * strides[d]
                wt *= frac_list[d] if bit else 1.0 - frac_list[d]
            rows.append(np.arange(npts))
            cols.append(flat)
            data.append(wt)
        return scipy.sparse.csr_matrix(
            (np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))),
            shape=(npts, self.size),
        )

    def __call__(self, pts):
        pts = np.asarray(pts, float)
        single = pts.ndim == 1
        out = self.interp_matrix(np.atleast_2d(pts)) @ self.flat
        return out[0] if single else out

    def sup_norm(self):
        if self.values.ndim > self.dim:
            return float(np.max(np.linalg.norm(self.flat, axis=1)))
        return float(np.max(np.abs(self.values)))

    def to_dict(self):
        return {
            "bounds": [list(b) for b in self.bounds],
            "nodes_per_axis": list(self.nodes_per_axis),
            "values": self.values.tolist(),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(tuple(b) for b in d["bounds"]), tuple(d["nodes_per_axis"]), np.asarray(d["values"], float))


# --- exact Gaussian integrals of piecewise-linear functions (1-D grids) -------------


def _interval_prob(alpha, beta):
    # Phi(beta) - Phi(alpha) evaluated on the tail side to avoid 1 - 1 cancellation
    upper = alpha > 0
    return np.where(upper, ndtr(-alpha) - ndtr(-beta), ndtr(beta) - ndtr(alpha))


def _phi(x):
    return np.exp(-0.5 * x * x) / np.sqrt(2.0 * np.pi)


def pl_gaussian_weights(axis, mean, factor):
    """Rows (a, b) with E g(X) = a . g and E[g(X) xi] = b . g, X = mean + factor * xi.

    ``g`` is the continuous piecewise-linear interpolant of its node values on
    ``axis``, held constant outside.  ``mean`` may be an array; the rows stack.
    """
    axis = np.asarray(axis, float)
    mean = np.atleast_1d(np.asarray(mean, float))[:, None]
    sigma = abs(float(factor))
    h = np.diff(axis)
    k = axis.size
    a = np.zeros((mean.shape[0], k))
    b = np.zeros((mean.shape[0], k))
    if sigma == 0.0:
        blank = GridFunction(((axis[0], axis[-1]),), (k,), np.zeros(k))
        return blank.interp_matrix(mean).toarray(), b
    z = (axis[None, :] - mean) / sigma
    za, zb = z[:, :-1], z[:, 1:]
    p = _interval_prob(za, zb)
    m = (mean - axis[None, :-1]) * p + sigma * (_phi(za) - _phi(zb))
    a[:, 0] += ndtr(z[:, 0])
    a[:, -1] += ndtr(-z[:, -1])
    a[:, :-1] += p - m / h
    a[:, 1:] += m / h
    slope_w = float(factor) * p / h
    b[:, :-1] -= slope_w
    b[:, 1:] += slope_w
    return a, b


# --- projected laws -------------------------------------------------------------------


def projected_law(model: SpectralModel, t: float, z=None):
    """Law of the projected uncontrolled state at time t started from z, plus M = P e^{tA} B."""
    if not t > 0:
        raise NegativeTime(f"t must be positive, got {t}")
    m, qbar = model.smoothing_pair(t)
    z = np.zeros(model.dim_p) if z is None else np.asarray(z, float)
    mean = model.projected_semigroup(t) @ z
    return ProjectedGaussian.from_cov(mean, qbar), m


def _lambda_white(law, m):
    lam = law.whitening @ m
    resid = np.linalg.norm(law.factor @ lam - m) if m.size else 0.0
    if resid > RANGE_RTOL * np.linalg.norm(m):
        raise RangeViolation(f"P e^(tA) B leaves the range of Qbar^(1/2): residual {resid:.3e}")
    return lam


def _is_exact(fhat, scheme):
    return scheme is None and isinstance(fhat, GridFunction) and fhat.dim == 1 and fhat.value_shape == ()


def ou_apply(model: SpectralModel, t: float, fhat, z, scheme: QuadScheme | None = None) -> float:
    """P_t[phi] at a point with Pz-coordinates ``z``.

    ``fhat`` is a GridFunction or a vectorised callable of (N, n) points.  With
    ``scheme=None`` a 1-D GridFunction is integrated exactly (piecewise-linear
    against the Gaussian); otherwise tensor Gauss-Hermite of order 20 is used.
    """
    z = np.atleast_1d(np.asarray(z, float))
    if t < 0:
        raise NegativeTime(f"t={t} < 0")
    if t == 0:
        return float(np.asarray(fhat(z[None, :]))[0])
    law, _ = projected_law(model, t, z)
    if _is_exact(fhat, scheme):
        a, _ = pl_gaussian_weights(fhat.axes[0], law.mean, law.factor[0, 0] if law.rank else 0.0)
        return float(a[0] @ fhat.flat)
    return float(expect(fhat, law, scheme or QuadScheme(), vectorized=True).value)


def ou_b_gradient(model: SpectralModel, t: float, fhat, z, scheme: QuadScheme | None = None) -> np.ndarray:
    """grad^B P_t[phi] at Pz-coordinates ``z`` as an m-vector."""
    if not t > 0:
        raise NegativeTime(f"the B-gradient needs t > 0, got {t}")
    z = np.atleast_1d(np.asarray(z, float))
    law, m = projected_law(model, t, z)
    lam = _lambda_white(law, m)
    if law.rank == 0 or not np.any(lam):
        return np.zeros(model.dim_k)
    if _is_exact(fhat, scheme):
        _, b = pl_gaussian_weights(fhat.axes[0], law.mean, law.factor[0, 0])
        return float(b[0] @ fhat.flat) * lam[0]
    scheme = scheme or QuadScheme()
    xi, wts = standard_nodes(law.rank, scheme)
    pts = law.mean + xi @ law.factor.T
    vals = np.asarray(fhat(pts), float)
    if not np.all(np.isfinite(vals)):
        raise NonFiniteIntegrand("integrand returned a non-finite value")
    return (wts * vals) @ xi @ lam


def ou_b_gradient_direction(model, t, fhat, z, k, scheme=None) -> float:
    """<grad^B P_t[phi](z), k> via the weighted expectation with weight Lambda k."""
    law, m = projected_law(model, t, np.atleast_1d(z))
    lam = _lambda_white(law, m)
    weight = np.zeros(model.dim_p)
    weight[: law.rank] = lam @ np.asarray(k, float)
    return float(expect_weighted(fhat, law, weight, scheme or QuadScheme(), vectorized=True).value)


def transition_rows(model: SpectralModel, t: float, grid: GridFunction, zs, scheme: QuadScheme | None = None):
    """Linear maps g -> (P_t g)(zs) and g -> grad^B P_t g (zs) for grid values g.

    Returns (A, Bk) with A of shape (N, G) and Bk of shape (N, G, m).
    """
    zs = np.atleast_2d(np.asarray(zs, float))
    law, m = projected_law(model, t)
    lam = _lambda_white(law, m)
    means = zs @ model.projected_semigroup(t).T
    if scheme is None and grid.dim == 1:
        f = law.factor[0, 0] if law.rank else 0.0
        a, b = pl_gaussian_weights(grid.axes[0], means[:, 0], f)
        if law.rank == 0:
            return a, np.zeros(a.shape + (model.dim_k,))
        return a, b[:, :, None] * lam[0][None, None, :]
    xi, wts = standard_nodes(law.rank, scheme or QuadScheme())
    shifts = xi @ law.factor.T
    npts, q = zs.shape[0], wts.size
    pts = (means[:, None, :] + shifts[None, :, :]).reshape(npts * q, -1)
    s = grid.interp_matrix(pts)
    wmat = scipy.sparse.kron(scipy.sparse.identity(npts), scipy.sparse.csr_matrix(wts[None, :]))
    a = (wmat @ s).toarray()
    grads = []
    proj = xi @ lam  # (q, m)
    for j in range(model.dim_k):
        wj = scipy.sparse.kron(scipy.sparse.identity(npts), scipy.sparse.csr_matrix((wts * proj[:, j])[None, :]))
        grads.append((wj @ s).toarray())
    return a, np.stack(grads, axis=-1)
