"""Expectations against the projected Gaussian laws N(mean, Qbar_t).

Tensor Gauss-Hermite for rank <= 3, seeded Monte Carlo otherwise (or on request).
Integration runs over the numerical range of the covariance only: y = F xi with
F F^T = Qbar and xi standard normal in rank(Qbar) dimensions.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import NonFiniteIntegrand
from .linalg import RANK_RTOL, psd_factor, sym_sqrt

GH_MAX_POINTS = 20**3


@dataclass(frozen=True)
class ProjectedGaussian:
    mean: np.ndarray
    cov_root: np.ndarray
    rank: int
    factor: np.ndarray
    whitening: np.ndarray

    @classmethod
    def from_cov(cls, mean, cov, rtol=RANK_RTOL):
        mean = np.atleast_1d(np.asarray(mean, float))
        cov = np.atleast_2d(np.asarray(cov, float))
        if cov.shape != (mean.size, mean.size):
            raise ValueError("covariance shape does not match the mean")
        f = psd_factor(cov, rtol)
        return cls(mean, sym_sqrt(cov, rtol), f.rank, f.factor, f.whitening)

    @property
    def dim(self):
        return self.mean.size

    def shifted(self, mean):
        """Same covariance, new mean."""
        return ProjectedGaussian(np.asarray(mean, float), self.cov_root, self.rank, self.factor, self.whitening)


@dataclass(frozen=True)
class QuadScheme:
    kind: str = "gauss_hermite"
    order: int = 20
    samples: int = 100_000
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("gauss_hermite", "monte_carlo"):
            raise ValueError(f"unknown scheme {self.kind!r}")
        if self.kind == "gauss_hermite" and self.order < 2:
            raise ValueError("Gauss-Hermite order must be >= 2")
        if self.kind == "monte_carlo" and self.samples < 1000:
            raise ValueError("Monte Carlo needs >= 1000 samples")

    @classmethod
    def gauss_hermite(cls, order=20):
        return cls("gauss_hermite", order=order)

    @classmethod
    def monte_carlo(cls, samples=100_000, seed=0):
        return cls("monte_carlo", samples=samples, seed=seed)


@dataclass(frozen=True)
class Estimate:
    value: float | np.ndarray
    std_error: float | np.ndarray = 0.0

    def __float__(self):
        return float(self.value)


@lru_cache(maxsize=64)
def gh_rule(order):
    """Probabilists' Gauss-Hermite nodes and weights for N(0, 1)."""
    x, w = np.polynomial.hermite_e.hermegauss(order)
    return x, w / np.sqrt(2.0 * np.pi)


@lru_cache(maxsize=64)
def _tensor_rule(order, dim):
    if dim == 0:
        return np.zeros((1, 0)), np.ones(1)
    x, w = gh_rule(order)
    grids = np.meshgrid(*([x] * dim), indexing="ij")
    wgrids = np.meshgrid(*([w] * dim), indexing="ij")
    pts = np.stack([g.ravel() for g in grids], axis=1)
    wts = np.prod(np.stack([g.ravel() for g in wgrids], axis=1), axis=1)
    return pts, wts


def _stream_seed(seed, context):
    h = hashlib.sha256(f"{seed}:{context}".encode()).digest()
    return int.from_bytes(h[:8], "little")


def standard_nodes(rank, scheme: QuadScheme, context=""):
    """Standard-normal nodes xi (N, rank) and weights (N,) for the scheme."""
    if scheme.kind == "gauss_hermite" and rank <= 3 and scheme.order**rank <= GH_MAX_POINTS:
        return _tensor_rule(scheme.order, rank)
    if scheme.kind == "gauss_hermite":
        # too many tensor points: fall back to Monte Carlo
        scheme = QuadScheme.monte_carlo(seed=scheme.seed)
    rng = np.random.default_rng(_stream_seed(scheme.seed, context))
    xi = rng.standard_normal((scheme.samples, rank))
    return xi, np.full(scheme.samples, 1.0 / scheme.samples)


def _evaluate(g, pts, vectorized):
    if vectorized:
        vals = np.asarray(g(pts), float)
    else:
        vals = np.array([g(p) for p in pts], dtype=float)
    if not np.all(np.isfinite(vals)):
        raise NonFiniteIntegrand("integrand returned a non-finite value")
    return vals


def _mc_error(vals, wts):
    n = vals.shape[0]
    if n < 2:
        return 0.0
    return np.std(vals, axis=0, ddof=1) / np.sqrt(n)


def expect(g, law: ProjectedGaussian, scheme: QuadScheme = QuadScheme(), vectorized=False,
           context="") -> Estimate:
    """E g(mean + y), y ~ N(0, Qbar)."""
    xi, wts = standard_nodes(law.rank, scheme, context)
    pts = law.mean + xi @ law.factor.T
    vals = _evaluate(g, pts, vectorized)
    value = np.tensordot(wts, vals, axes=1)
    err = _mc_error(vals, wts) if _is_mc(scheme, law.rank) else 0.0
    return Estimate(value, err)


def _is_mc(scheme, rank):
    return not (scheme.kind == "gauss_hermite" and rank <= 3 and scheme.order**rank <= GH_MAX_POINTS)


def expect_weighted(g, law: ProjectedGaussian, weight, scheme: QuadScheme = QuadScheme(),
                    vectorized=False, context="") -> Estimate:
    """E[g(mean + y) <w, Qbar^{-1/2} y>] with Qbar^{-1/2} y = xi in the whitened frame.

    ``weight`` has length n; components beyond the numerical rank lie in the null
    space of Qbar and contribute nothing by convention.
    """
    weight = np.asarray(weight, float)
    if not np.all(np.isfinite(weight)):
        raise ValueError("weight vector must be finite")
    w = weight[: law.rank]
    xi, wts = standard_nodes(law.rank, scheme, context)
    pts = law.mean + xi @ law.factor.T
    vals = _evaluate(g, pts, vectorized)
    proj = xi @ w
    prod = vals * proj if vals.ndim == 1 else vals * proj[:, None]
    value = np.tensordot(wts, prod, axes=1)
    err = _mc_error(prod, wts) if _is_mc(scheme, law.rank) else 0.0
    return Estimate(value, err)
