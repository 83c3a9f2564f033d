"""Partial-smoothing operator Lambda(t) = (P Q_t P*)^{-1/2} P e^{tA} B and its diagnostics.

Lambda is evaluated in a whitened frame: with Qbar = F F^T and W the left
inverse of F, Lambda_w = W M.  Any two square-root factors differ by a left
orthogonal factor, so norms and Lambda^T Lambda = M^T Qbar^+ M are unaffected.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.integrate
import scipy.linalg

from .errors import BadWeight, DegeneratePencil, NegativeTime, RangeViolation
from .linalg import RANK_RTOL, psd_factor
from .parallel import pmap
from .spectral import HEAT, SpectralModel

RANGE_RTOL = 1e-8


@dataclass(frozen=True)
class LambdaResult:
    matrix: np.ndarray
    residual: float
    rank: int


@dataclass
class EstimateReport:
    t_samples: np.ndarray
    norms: np.ndarray
    fitted_exponent: float
    fit_r2: float
    kappa0: float
    duality: np.ndarray | None = None
    residuals: np.ndarray | None = None
    unprojected_norms: np.ndarray | None = None
    unprojected_exponent: float | None = None
    unprojected_r2: float | None = None
    extra: dict = field(default_factory=dict)

    @property
    def gamma(self):
        """Singularity exponent gamma = -slope, clipped into [0, 1)."""
        return float(np.clip(-self.fitted_exponent, 0.0, 1.0 - 1e-9))

    def to_dict(self):
        def arr(a):
            return None if a is None else [float(x) for x in a]

        return {
            "t_samples": arr(self.t_samples),
            "norms": arr(self.norms),
            "fitted_exponent": float(self.fitted_exponent),
            "fit_r2": float(self.fit_r2),
            "kappa0": float(self.kappa0),
            "gamma": self.gamma,
            "unprojected_exponent": self.unprojected_exponent,
            "unprojected_r2": self.unprojected_r2,
            **self.extra,
        }


def _whitened(cov, image, what):
    f = psd_factor(cov, RANK_RTOL)
    lam = f.whitening @ image
    resid = float(np.linalg.norm(f.factor @ lam - image, 2)) if image.size else 0.0
    scale = float(np.linalg.norm(image, 2)) if image.size else 0.0
    if resid > RANGE_RTOL * scale:
        raise RangeViolation(f"{what}: residual {resid:.3e} exceeds {RANGE_RTOL:g} * {scale:.3e}")
    return lam, resid, f.rank


def lambda_operator(model: SpectralModel, t: float) -> LambdaResult:
    """Lambda(t) as an n x m array (rows past the numerical rank of Qbar are zero)."""
    if not t > 0:
        raise NegativeTime(f"t must be positive, got {t}")
    m, qbar = model.smoothing_pair(t)
    lam, resid, rank = _whitened(qbar, m, f"t={t:g}")
    out = np.zeros((model.dim_p, model.dim_k))
    out[:rank] = lam
    return LambdaResult(out, resid, rank)


def lambda_norm(model: SpectralModel, t: float) -> float:
    lam = lambda_operator(model, t).matrix
    return float(np.linalg.norm(lam, 2)) if lam.size else 0.0


def duality_constant(model: SpectralModel, t: float) -> float:
    """Smallest c with |M^T z|^2 <= c <Qbar z, z>: top generalised eigenvalue of (M M^T, Qbar)."""
    if not t > 0:
        raise NegativeTime(f"t must be positive, got {t}")
    m, qbar = model.smoothing_pair(t)
    d = np.sqrt(np.clip(np.diag(qbar), 0.0, None))
    if np.any(d <= 1e-300):
        if np.linalg.norm(m[d <= 1e-300]) > 0:
            raise DegeneratePencil(f"Qbar vanishes on a direction reached by P e^(tA) B at t={t:g}")
        keep = d > 1e-300
        m, qbar, d = m[keep], qbar[np.ix_(keep, keep)], d[keep]
    if m.size == 0 or not np.any(m):
        return 0.0
    a = (m / d[:, None]) @ (m / d[:, None]).T
    b = qbar / np.outer(d, d)
    try:
        w = scipy.linalg.eigh(a, b, eigvals_only=True)
    except np.linalg.LinAlgError as exc:
        raise DegeneratePencil(f"Qbar not positive definite at t={t:g}: {exc}") from exc
    return float(max(w.max(), 0.0))


def unprojected_norm(model: SpectralModel, t: float) -> float:
    """|| Q_t^{-1/2} e^{tA} B || on the full truncated state (no projection)."""
    img = model.semigroup_ortho(t, model.control_matrix)
    lam, _, _ = _whitened(model.covariance(t), img, f"unprojected t={t:g}")
    return float(np.linalg.norm(lam, 2))


def full_smoothing_norm(model: SpectralModel, t: float) -> float:
    """|| Q_t^{-1/2} e^{tA} || on the truncated state; bounded in N_H only if strong Feller holds."""
    img = model.semigroup_matrix(t)
    f = psd_factor(model.covariance(t), RANK_RTOL)
    if f.rank < model.state_dim:
        return float("inf")
    return float(np.linalg.norm(f.whitening @ img, 2))


def loglog_fit(t, y):
    """Least-squares slope of log y against log t and its R^2."""
    lt, ly = np.log(t), np.log(y)
    slope, icpt = np.polyfit(lt, ly, 1)
    pred = slope * lt + icpt
    ss_res = float(np.sum((ly - pred) ** 2))
    ss_tot = float(np.sum((ly - ly.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return float(slope), float(r2)


def kappa_for(t, norms, gamma):
    t = np.asarray(t, float)
    return float(np.max(np.asarray(norms) / np.maximum(t**-gamma, 1.0)))


def fit_exponent(model: SpectralModel, t_min: float, t_max: float, n_samples: int = 24,
                 threads=None) -> EstimateReport:
    if not 0 < t_min < t_max:
        raise ValueError("need 0 < t_min < t_max")
    if n_samples < 8:
        raise ValueError("need at least 8 samples")
    ts = np.geomspace(t_min, t_max, n_samples)

    def row(t):
        lr = lambda_operator(model, t)
        return np.linalg.norm(lr.matrix, 2), duality_constant(model, t), lr.residual

    rows = np.array(pmap(row, ts, threads))
    norms = rows[:, 0]
    slope, r2 = loglog_fit(ts, norms)
    gamma = float(np.clip(-slope, 0.0, 1.0 - 1e-9))
    report = EstimateReport(
        t_samples=ts,
        norms=norms,
        fitted_exponent=slope,
        fit_r2=r2,
        kappa0=kappa_for(ts, norms, gamma),
        duality=rows[:, 1],
        residuals=rows[:, 2],
    )
    if model.kind == HEAT:
        un = np.array(pmap(lambda t: unprojected_norm(model, t), ts, threads))
        report.unprojected_norms = un
        report.unprojected_exponent, report.unprojected_r2 = loglog_fit(ts, un)
    return report


def integrated_norm(model: SpectralModel, t_max: float = 1.0, t_min: float = 1e-10, nodes: int = 200):
    """int_0^{t_max} ||Lambda(t)|| dt on a log-graded grid; the [0, t_min] piece uses the local power law."""
    ts = np.geomspace(t_min, t_max, nodes)
    norms = np.array([lambda_norm(model, t) for t in ts])
    body = scipy.integrate.trapezoid(norms * ts, np.log(ts))
    slope, _ = loglog_fit(ts[:5], norms[:5])
    if slope <= -1:
        return float("inf")
    head = norms[0] * t_min / (1.0 + slope)
    return float(body + head)


# --- lifting to trajectories -----------------------------------------------------


@dataclass(frozen=True)
class LiftDiscretization:
    time_nodes: np.ndarray
    quad_weights: np.ndarray
    rho: float

    def __post_init__(self):
        t = np.asarray(self.time_nodes, float)
        w = np.asarray(self.quad_weights, float)
        if t.ndim != 1 or t.shape != w.shape or t.size < 2:
            raise ValueError("time_nodes and quad_weights must be matching 1-D arrays")
        if np.any(t <= 0) or np.any(np.diff(t) <= 0):
            raise ValueError("time nodes must be positive and strictly increasing")
        if np.any(w <= 0):
            raise ValueError("quadrature weights must be positive")
        object.__setattr__(self, "time_nodes", t)
        object.__setattr__(self, "quad_weights", w)

    @property
    def scales(self):
        """sqrt(weight_i) * exp(-rho t_i): the L2_rho norm becomes Euclidean after this scaling."""
        return np.sqrt(self.quad_weights) * np.exp(-self.rho * self.time_nodes)


def default_lift(rho=1.0, n_nodes=80, t_min=1e-6, horizon=20.0):
    """Geometric nodes on [t_min, horizon/rho], trapezoid weights in log t."""
    if not rho > 0:
        raise BadWeight(f"rho={rho} must be positive")
    t = np.geomspace(t_min, horizon / rho, n_nodes)
    h = np.log(t[1] / t[0])
    w = h * t
    w[0] *= 0.5
    w[-1] *= 0.5
    return LiftDiscretization(t, w, float(rho))


def _check_rho(model, disc):
    if not disc.rho > model.omega:
        raise BadWeight(f"rho={disc.rho} must exceed the semigroup type {model.omega}")


def lift_apply(model: SpectralModel, disc: LiftDiscretization, y) -> np.ndarray:
    """Trajectory values P e^{t_i A} y at the nodes, shape (K, n); y in orthonormal coordinates."""
    _check_rho(model, disc)
    y = np.asarray(y, float)
    return np.array([model.projection_vectors @ model.semigroup_ortho(t, y) for t in disc.time_nodes])


def lift_adjoint_apply(model: SpectralModel, disc: LiftDiscretization, z) -> np.ndarray:
    """sum_i w_i e^{-2 rho t_i} e^{t_i A*} P* z_i: the adjoint for the discrete L2_rho pairing."""
    _check_rho(model, disc)
    z = np.asarray(z, float)
    out = np.zeros(model.state_dim)
    wts = disc.quad_weights * np.exp(-2.0 * disc.rho * disc.time_nodes)
    for t, wt, zi in zip(disc.time_nodes, wts, z):
        out += wt * model.semigroup_ortho(t, model.projection_vectors.T @ zi, adjoint=True)
    return out


def l2rho_inner(disc: LiftDiscretization, f, g) -> float:
    wts = disc.quad_weights * np.exp(-2.0 * disc.rho * disc.time_nodes)
    return float(np.sum(wts * np.einsum("ij,ij->i", np.asarray(f), np.asarray(g))))


def lift_operator(model: SpectralModel, disc: LiftDiscretization) -> np.ndarray:
    """Matrix of the lift in Euclidean-ised L2_rho: blocks sqrt(w_i) e^{-rho t_i} P e^{t_i A}."""
    _check_rho(model, disc)
    v = model.projection_vectors
    blocks = [
        s * model.semigroup_ortho(t, v.T, adjoint=True).T
        for t, s in zip(disc.time_nodes, disc.scales)
    ]
    return np.vstack(blocks)


def lift_adjoint_check(model: SpectralModel, disc: LiftDiscretization, z, y=None, rng=None) -> float:
    """Relative mismatch between <lift y, z>_{L2_rho} and <y, lift* z>_H."""
    z = np.asarray(z, float)
    if y is None:
        rng = np.random.default_rng(0) if rng is None else rng
        y = rng.standard_normal(model.state_dim)
    lhs = l2rho_inner(disc, lift_apply(model, disc, y), z)
    rhs = float(np.dot(y, lift_adjoint_apply(model, disc, z)))
    scale = np.sqrt(l2rho_inner(disc, lift_apply(model, disc, y), lift_apply(model, disc, y))
                    * l2rho_inner(disc, z, z))
    if scale == 0:
        return abs(lhs - rhs)
    return abs(lhs - rhs) / scale


def lifted_lambda_norm(model: SpectralModel, disc: LiftDiscretization, t: float) -> float:
    """|| (L Q_t L*)^{-1/2} L e^{tA} B || with L the discretised lift."""
    if not t > 0:
        raise NegativeTime(f"t must be positive, got {t}")
    lift = lift_operator(model, disc)
    cov = lift @ model.covariance(t) @ lift.T
    img = lift @ model.semigroup_ortho(t, model.control_matrix)
    if not np.any(img):
        return 0.0
    lam, _, _ = _whitened(cov, img, f"lifted t={t:g}")
    return float(np.linalg.norm(lam, 2))
