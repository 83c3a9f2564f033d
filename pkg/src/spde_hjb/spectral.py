"""Spectral truncations of the boundary-controlled heat and distributed-control wave models.

Both models live on O = (0, 1) with the Dirichlet sine basis
e_j = sqrt(2) sin(j pi xi), Laplacian eigenvalues lambda_j = (j pi)^2.

Internally every operator is stored in *orthonormal* coordinates of the state
space H.  For the heat model these are the eigen-coefficients themselves.  For
the wave model the natural coefficients are interleaved pairs (u_j, v_j) and
the energy norm c^2 |grad u|^2 + |v|^2 becomes Euclidean after the rescaling
y = (c kappa_j u_j, v_j); in those coordinates the semigroup is a rotation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .config import ModelConfig
from .errors import ConfigError, DegenerateNoise, DimensionMismatch, InvalidExponents, NegativeTime
from .linalg import sinc, sinc_diff, sym_sqrt

HEAT = "heat"
WAVE = "wave"
_KIND_ALIASES = {
    "heat": HEAT,
    "heatboundary": HEAT,
    "heat_boundary": HEAT,
    "wave": WAVE,
    "wavedistributed": WAVE,
    "wave_distributed": WAVE,
}
DEFAULT_DIM_H = {HEAT: 64, WAVE: 16}
NOISE_PD_TOL = 1e-12


@dataclass(frozen=True)
class StateVector:
    """Coefficients in the model's natural basis, tagged with the space they live in."""

    coeffs: np.ndarray
    space: str = "H"

    def __post_init__(self):
        object.__setattr__(self, "coeffs", np.asarray(self.coeffs, dtype=float))
        if self.space not in ("H", "HBar"):
            raise ValueError(f"unknown space tag {self.space!r}")


@dataclass(frozen=True, eq=False)
class SpectralModel:
    kind: str
    dim_h: int
    dim_p: int
    dim_k: int
    eigenvalues: np.ndarray
    beta: float
    alpha: float
    epsilon: float
    wave_speed: float
    noise_scale: float
    sigma_coeffs: np.ndarray
    projection_vectors: np.ndarray
    gram: np.ndarray
    gram_condition: float
    extended_weight_exponent: float
    energy_weights: np.ndarray = field(repr=False)
    hbar_weights: np.ndarray = field(repr=False)
    control_matrix: np.ndarray = field(repr=False)
    noise_matrix: np.ndarray = field(repr=False)
    noise_excitation: float = 0.0
    config: ModelConfig | None = field(default=None, repr=False)

    # semigroup type: both generators are dissipative/skew
    omega: float = 0.0

    @property
    def state_dim(self):
        return self.dim_h if self.kind == HEAT else 2 * self.dim_h

    @property
    def frequencies(self):
        """c * kappa_j for the wave model, lambda_j for the heat model."""
        if self.kind == WAVE:
            return self.wave_speed * np.sqrt(self.eigenvalues)
        return self.eigenvalues

    @property
    def right_inverse(self):
        """V^+ = V^T Gram^{-1}: maps projected coordinates back into Im P."""
        return np.linalg.solve(self.gram, self.projection_vectors).T

    @property
    def projector(self):
        """Orthogonal projector onto span{v_i} (orthonormal coordinates)."""
        return self.right_inverse @ self.projection_vectors

    # --- coordinate changes -------------------------------------------------
    def to_ortho(self, coeffs):
        c = np.asarray(coeffs, dtype=float)
        return c * np.sqrt(self.energy_weights).reshape((-1,) + (1,) * (c.ndim - 1))

    def from_ortho(self, y):
        y = np.asarray(y, dtype=float)
        return y / np.sqrt(self.energy_weights).reshape((-1,) + (1,) * (y.ndim - 1))

    def state_from_projected(self, z):
        """The element of Im P whose projected coordinates are ``z``."""
        return StateVector(self.from_ortho(self.right_inverse @ np.asarray(z, dtype=float)))

    # --- semigroup ----------------------------------------------------------
    def semigroup_ortho(self, t, y, adjoint=False):
        """Apply e^{tA} (or e^{tA*}) to orthonormal coordinates ``y`` of shape (state_dim, ...)."""
        y = np.asarray(y, dtype=float)
        if self.kind == HEAT:
            decay = np.exp(-self.eigenvalues * t)
            return y * decay.reshape((-1,) + (1,) * (y.ndim - 1))
        w = self.frequencies * t
        c, s = np.cos(w), np.sin(w)
        if adjoint:
            s = -s
        pairs = y.reshape((self.dim_h, 2) + y.shape[1:])
        shape = (-1,) + (1,) * (y.ndim - 1)
        c, s = c.reshape(shape), s.reshape(shape)
        out = np.empty_like(pairs)
        out[:, 0] = c * pairs[:, 0] + s * pairs[:, 1]
        out[:, 1] = -s * pairs[:, 0] + c * pairs[:, 1]
        return out.reshape(y.shape)

    def semigroup_matrix(self, t):
        return self.semigroup_ortho(t, np.eye(self.state_dim))

    # --- noise --------------------------------------------------------------
    def covariance(self, t):
        """Full Q_t = int_0^t e^{sA} G G* e^{sA*} ds in orthonormal coordinates (closed form)."""
        if self.kind == HEAT:
            lam = self.eigenvalues
            g2 = np.sum(self.noise_matrix**2, axis=1)
            return np.diag(g2 * (-np.expm1(-2.0 * lam * t)) / (2.0 * lam))
        return self._wave_covariance(t)

    def _wave_covariance(self, t):
        w = self.frequencies
        a, b = w[:, None], w[None, :]
        s_mat = self.sigma_coeffs @ self.sigma_coeffs.T
        xd, xs = (a - b) * t, (a + b) * t
        i_cc = 0.5 * t * (sinc(xd) + sinc(xs))
        i_ss = 0.5 * t * sinc_diff(xd, xs)

        def c_fun(wt):
            # int_0^t sin(w s) ds = t * (w t / 2) * sinc(w t / 2)^2
            half = 0.5 * wt
            return t * half * sinc(half) ** 2

        i_sc = 0.5 * (c_fun(xs) + c_fun(xd))  # int sin(a s) cos(b s)
        i_cs = i_sc.T
        n = self.dim_h
        q = np.empty((n, 2, n, 2))
        q[:, 0, :, 0] = s_mat * i_ss
        q[:, 0, :, 1] = s_mat * i_sc
        q[:, 1, :, 0] = s_mat * i_cs
        q[:, 1, :, 1] = s_mat * i_cc
        q = q.reshape(2 * n, 2 * n)
        return 0.5 * (q + q.T)

    # --- projected objects ----------------------------------------------------
    def projected_semigroup(self, t):
        """A_P(t) with V e^{tA} = A_P(t) V when P commutes with the semigroup."""
        et_vplus = self.semigroup_ortho(t, self.right_inverse)
        return self.projection_vectors @ et_vplus

    def smoothing_pair(self, t):
        """(P e^{tA} B, P Q_t P*) in projected coordinates."""
        m = self.projection_vectors @ self.semigroup_ortho(t, self.control_matrix)
        v = self.projection_vectors
        qbar = v @ self.covariance(t) @ v.T
        return m, 0.5 * (qbar + qbar.T)

    def hbar_norm(self, coeffs):
        y = self.to_ortho(coeffs)
        return float(np.linalg.norm(self.hbar_weights * y))

    def h_norm(self, coeffs):
        return float(np.linalg.norm(self.to_ortho(coeffs)))

    def growth_ratio(self, t):
        """sup_x |P e^{tA} x|_H / |x|_HBar (operator norm HBar -> H)."""
        op = self.projection_vectors @ self.semigroup_ortho(t, np.diag(1.0 / self.hbar_weights))
        return float(np.linalg.norm(op, 2))


def _laplacian_eigenvalues(n):
    return (np.arange(1, n + 1) * np.pi) ** 2


def _orthonormal_rows(vectors):
    q, r = np.linalg.qr(vectors.T)
    # keep orientation of the user's vectors
    signs = np.sign(np.diag(r))
    signs[signs == 0] = 1.0
    return (q * signs).T


def make_model(config: ModelConfig) -> SpectralModel:
    kind = _KIND_ALIASES.get(str(config.kind).lower())
    if kind is None:
        raise ConfigError(f"unknown model kind {config.kind!r}")
    dim_h = int(config.dim_h or DEFAULT_DIM_H[kind])
    if dim_h < 1:
        raise ConfigError("dim_h must be positive")
    lam = _laplacian_eigenvalues(dim_h)

    beta, alpha, eps = float(config.beta), float(config.alpha), float(config.epsilon)
    if kind == HEAT:
        if not 0.0 < eps < 0.25:
            raise InvalidExponents(f"epsilon={eps} must lie in (0, 1/4)")
        if beta < 0:
            raise InvalidExponents(f"beta={beta} must be >= 0")
        if not alpha > beta + 0.25:
            raise InvalidExponents(f"alpha={alpha} must exceed beta + 1/4 = {beta + 0.25}")
    c = float(config.wave_speed)
    if kind == WAVE and not c > 0:
        raise ConfigError("wave_speed must be positive")

    state_dim = dim_h if kind == HEAT else 2 * dim_h
    if kind == HEAT:
        energy = np.ones(dim_h)
        hbar = lam ** -(0.75 + eps)
    else:
        energy = np.empty(state_dim)
        energy[0::2] = c**2 * lam
        energy[1::2] = 1.0
        hbar = np.ones(state_dim)

    # control operator
    if kind == HEAT:
        dim_k = 2
        if config.dim_k not in (None, 2):
            raise DimensionMismatch("the 1-D heat model has exactly two boundary controls")
        j = np.arange(1, dim_h + 1)
        ctrl = np.empty((dim_h, 2))
        ctrl[:, 0] = np.sqrt(2.0) * j * np.pi
        ctrl[:, 1] = np.sqrt(2.0) * j * np.pi * (-1.0) ** (j + 1)
    else:
        dim_k = int(config.dim_k or dim_h)
        if not 1 <= dim_k <= dim_h:
            raise DimensionMismatch(f"dim_k={dim_k} must be in [1, {dim_h}]")
        ctrl = np.zeros((state_dim, dim_k))
        ctrl[2 * np.arange(dim_k) + 1, np.arange(dim_k)] = 1.0

    # noise operator
    scale = float(config.noise_scale)
    if kind == HEAT:
        sigma = np.diag(scale * lam**-beta)
        noise = sigma.copy()
    else:
        sigma = np.eye(dim_h) if config.sigma is None else np.atleast_2d(np.asarray(config.sigma, float))
        if sigma.shape[0] != dim_h:
            raise DimensionMismatch(f"sigma must have {dim_h} rows, got {sigma.shape[0]}")
        noise = np.zeros((state_dim, sigma.shape[1]))
        noise[1::2, :] = sigma

    # projection
    if config.projection_vectors is not None:
        raw = np.atleast_2d(np.asarray(config.projection_vectors, float))
        if raw.shape[1] > state_dim:
            raise DimensionMismatch("projection vector longer than the state dimension")
        vecs = np.zeros((raw.shape[0], state_dim))
        vecs[:, : raw.shape[1]] = raw
    else:
        modes = list(config.projection_modes or [1])
        if any(not 1 <= k <= dim_h for k in modes) or len(set(modes)) != len(modes):
            raise ConfigError(f"projection modes {modes} must be distinct and within 1..{dim_h}")
        rows = []
        for k in modes:
            if kind == HEAT:
                rows.append(np.eye(state_dim)[k - 1])
            else:
                rows.append(np.eye(state_dim)[2 * (k - 1)])
                rows.append(np.eye(state_dim)[2 * (k - 1) + 1])
        vecs = np.array(rows)
    gram_raw = vecs @ vecs.T
    cond = float(np.linalg.cond(gram_raw))
    if not np.isfinite(cond) or cond > 1e12:
        raise ConfigError(f"projection vectors are linearly dependent (Gram condition {cond:.3g})")
    if config.orthonormalize:
        vecs = _orthonormal_rows(vecs)
    gram = vecs @ vecs.T

    excitation = _noise_excitation(kind, vecs, noise, gram)
    if kind == WAVE and not excitation > NOISE_PD_TOL:
        raise DegenerateNoise(
            f"projected noise covariance on the velocity block has min eigenvalue {excitation:.3g}"
        )

    return SpectralModel(
        kind=kind,
        dim_h=dim_h,
        dim_p=vecs.shape[0],
        dim_k=dim_k,
        eigenvalues=lam,
        beta=beta,
        alpha=alpha,
        epsilon=eps,
        wave_speed=c,
        noise_scale=scale,
        sigma_coeffs=sigma,
        projection_vectors=vecs,
        gram=gram,
        gram_condition=cond,
        extended_weight_exponent=0.75 + eps,
        energy_weights=energy,
        hbar_weights=hbar,
        control_matrix=ctrl,
        noise_matrix=noise,
        noise_excitation=excitation,
        config=config,
    )


def _noise_excitation(kind, vecs, noise, gram):
    """Smallest eigenvalue of P G G* P* on the part of Im P that the noise can reach.

    For the wave model G only feeds velocities, so P G G* P* is always singular
    on position directions; the check is made on the velocity block.
    """
    pg = vecs @ noise
    kmat = pg @ pg.T
    if kind == WAVE:
        vel = np.zeros(vecs.shape[1])
        vel[1::2] = 1.0
        sub = (vecs * vel) @ vecs.T
        w, u = np.linalg.eigh(0.5 * (sub + sub.T))
        basis = u[:, w > 1e-10]
        if basis.shape[1] == 0:
            return 0.0
        kmat = basis.T @ kmat @ basis
    return float(np.linalg.eigvalsh(0.5 * (kmat + kmat.T)).min())


# --- operation-level API -----------------------------------------------------


def _check_state(model, x):
    if isinstance(x, StateVector):
        coeffs, space = x.coeffs, x.space
    else:
        coeffs, space = np.asarray(x, dtype=float), "H"
    if coeffs.shape[0] != model.state_dim:
        raise DimensionMismatch(f"state has length {coeffs.shape[0]}, model expects {model.state_dim}")
    return coeffs, space


def semigroup_apply(model: SpectralModel, t: float, x) -> StateVector:
    if t < 0:
        raise NegativeTime(f"t={t} < 0")
    coeffs, space = _check_state(model, x)
    y = model.semigroup_ortho(t, model.to_ortho(coeffs))
    return StateVector(model.from_ortho(y), space)


def covariance_projected(model: SpectralModel, t: float):
    """Return (P Q_t P*, symmetric square root) in projected coordinates."""
    if not t > 0:
        raise NegativeTime(f"covariance needs t > 0, got {t}")
    _, qbar = model.smoothing_pair(t)
    return qbar, sym_sqrt(qbar)


def control_operator_apply(model: SpectralModel, u) -> StateVector:
    u = np.asarray(u, dtype=float)
    if u.shape != (model.dim_k,):
        raise DimensionMismatch(f"control has shape {u.shape}, expected ({model.dim_k},)")
    return StateVector(model.from_ortho(model.control_matrix @ u), "HBar")


def projection_apply(model: SpectralModel, x) -> np.ndarray:
    """Coordinates (<x, v_1>, ..., <x, v_n>)."""
    coeffs, _ = _check_state(model, x)
    return model.projection_vectors @ model.to_ortho(coeffs)


def check_commutation(model: SpectralModel, t_samples) -> float:
    """max_t || P e^{tA} - e^{tA} P || in operator norm."""
    p = model.projector
    worst = 0.0
    for t in t_samples:
        e = model.semigroup_matrix(float(t))
        worst = max(worst, float(np.linalg.norm(p @ e - e @ p, 2)))
    return worst
