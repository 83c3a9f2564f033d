"""Hamiltonians, the integral operator F = (F1, F2) and its Picard fixed point.

Unknowns live on a tensor grid in the projected coordinates z = Px:

    F1(w)(z) = int_0^inf e^{-lam t} P_t[l0 + H_min(w)](z) dt
    F2(w)(z) = int_0^inf e^{-lam t} grad^B P_t[l0 + H_min(w)](z) dt

Both are affine in the grid values g = H_min(w(z_j)), so the time integral and
the Gaussian averages are assembled once into matrices; each Picard step is a
pair of matrix-vector products.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.integrate
from scipy.special import gamma as gamma_fn
from scipy.special import gammainc

from .config import ControlConfig, CostConfig, SolverConfig
from .errors import BadExponent, ConfigError, ControlOutOfSet, NoThreshold, NotContracted
from .ou import GridFunction, _lambda_white, pl_gaussian_weights, projected_law, transition_rows
from .quadrature import QuadScheme, standard_nodes
from .smoothing import kappa_for, lambda_norm, loglog_fit
from .spectral import SpectralModel

SET_TOL = 1e-12
SAFETY = 0.9


# --- control sets and running costs ------------------------------------------------


@dataclass(frozen=True, eq=False)
class ControlSet:
    kind: str  # "ball" | "box"
    dim: int
    radius: float = 1.0
    lower: np.ndarray | None = None
    upper: np.ndarray | None = None

    def __post_init__(self):
        if self.kind == "ball":
            if not self.radius > 0:
                raise ConfigError("ball radius must be positive")
        elif self.kind == "box":
            lo, hi = np.asarray(self.lower, float), np.asarray(self.upper, float)
            if lo.shape != (self.dim,) or hi.shape != (self.dim,) or np.any(hi <= lo):
                raise ConfigError("box needs lower < upper in every coordinate")
            object.__setattr__(self, "lower", lo)
            object.__setattr__(self, "upper", hi)
        else:
            raise ConfigError(f"unknown control set {self.kind!r}")

    def contains_rows(self, u):
        u = np.atleast_2d(np.asarray(u, float))
        if self.kind == "ball":
            return np.linalg.norm(u, axis=1) <= self.radius * (1 + SET_TOL) + SET_TOL
        return np.all((u >= self.lower - SET_TOL) & (u <= self.upper + SET_TOL), axis=1)

    def contains(self, u):
        return bool(self.contains_rows(u)[0])

    @property
    def sup_norm(self):
        """sup_{u in U} |u|."""
        if self.kind == "ball":
            return float(self.radius)
        return float(np.linalg.norm(np.maximum(np.abs(self.lower), np.abs(self.upper))))

    def grid(self, per_axis=201):
        """Brute-force candidate controls covering the set."""
        if self.kind == "ball":
            axes = [np.linspace(-self.radius, self.radius, per_axis)] * self.dim
        else:
            axes = [np.linspace(lo, hi, per_axis) for lo, hi in zip(self.lower, self.upper)]
        mesh = np.meshgrid(*axes, indexing="ij")
        pts = np.stack([m.ravel() for m in mesh], axis=1)
        if self.kind == "ball":
            pts = pts[np.linalg.norm(pts, axis=1) <= self.radius]
        return pts


@dataclass(frozen=True, eq=False)
class RunningCost:
    kind: str  # "quadratic" | "linear" | "custom"
    eta: float = 1.0
    c: float = 1.0
    controls: np.ndarray | None = None
    costs: np.ndarray | None = None

    def __call__(self, u):
        u = np.asarray(u, float)
        if self.kind == "quadratic":
            return 0.5 * self.eta * np.sum(u * u, axis=-1)
        if self.kind == "linear":
            return self.c * np.linalg.norm(u, axis=-1)
        # custom: nearest tabulated control
        flat = np.atleast_2d(u)
        d = np.linalg.norm(flat[:, None, :] - self.controls[None], axis=2)
        vals = self.costs[np.argmin(d, axis=1)]
        return vals if u.ndim > 1 else float(vals[0])


@dataclass(frozen=True, eq=False)
class StateCost:
    """Bounded cost l0 on the projected coordinates, vectorised over (N, n) points."""

    kind: str
    amplitude: float = 1.0
    center: np.ndarray | None = None
    scale: float = 1.0
    grid: GridFunction | None = None

    def __call__(self, pts):
        pts = np.asarray(pts, float)
        single = pts.ndim == 1
        pts = np.atleast_2d(pts)
        if self.kind == "grid":
            out = self.grid(pts)
        elif self.kind == "zero":
            out = np.zeros(pts.shape[0])
        elif self.kind == "constant":
            out = np.full(pts.shape[0], self.amplitude)
        else:
            r2 = np.sum(((pts - self.center) / self.scale) ** 2, axis=1)
            if self.kind == "saturated_quadratic":
                out = self.amplitude * r2 / (1.0 + r2)
            elif self.kind == "gaussian_well":
                out = self.amplitude * -np.expm1(-0.5 * r2)
            elif self.kind == "step":
                out = self.amplitude * (pts[:, 0] > self.center[0]).astype(float)
            else:
                raise ConfigError(f"unknown state cost {self.kind!r}")
        return float(out[0]) if single else out

    @property
    def sup(self):
        if self.kind == "grid":
            return self.grid.sup_norm()
        if self.kind == "zero":
            return 0.0
        return abs(float(self.amplitude))

    @property
    def smooth(self):
        return self.kind in ("zero", "constant", "saturated_quadratic", "gaussian_well")


def make_state_cost(cfg: CostConfig, dim_p: int) -> StateCost:
    center = np.zeros(dim_p) if cfg.center is None else np.asarray(cfg.center, float)
    if center.shape != (dim_p,):
        raise ConfigError(f"cost center must have length {dim_p}")
    grid = None
    if cfg.kind == "grid":
        if cfg.bounds is None or cfg.values is None:
            raise ConfigError("grid cost needs bounds and values")
        vals = np.asarray(cfg.values, float)
        grid = GridFunction(tuple(tuple(b) for b in cfg.bounds), vals.shape[:dim_p], vals)
    elif cfg.kind not in ("zero", "constant", "saturated_quadratic", "gaussian_well", "step"):
        raise ConfigError(f"unknown state cost {cfg.kind!r}")
    if not cfg.scale > 0:
        raise ConfigError("cost scale must be positive")
    return StateCost(cfg.kind, float(cfg.amplitude), center, float(cfg.scale), grid)


@dataclass(frozen=True, eq=False)
class HamiltonianSpec:
    control_set: ControlSet
    l1: RunningCost
    l0: StateCost

    @property
    def dim_k(self):
        return self.control_set.dim

    @property
    def lipschitz(self):
        """L_H: |H_min(p) - H_min(q)| <= sup_U |u| * |p - q|."""
        if self.l1.kind == "custom":
            return float(np.max(np.linalg.norm(self.l1.controls, axis=1)))
        return self.control_set.sup_norm

    @property
    def l1_sup(self):
        if self.l1.kind == "custom":
            return float(np.max(np.abs(self.l1.costs)))
        r = self.control_set.sup_norm
        return 0.5 * self.l1.eta * r * r if self.l1.kind == "quadratic" else self.l1.c * r


def make_hamiltonian(ctrl: ControlConfig, cost: CostConfig, dim_k: int, dim_p: int) -> HamiltonianSpec:
    cset = ControlSet(ctrl.set, dim_k, float(ctrl.radius), ctrl.lower, ctrl.upper)
    if ctrl.cost == "quadratic":
        if not ctrl.eta > 0:
            raise ConfigError("quadratic control cost needs eta > 0")
        l1 = RunningCost("quadratic", eta=float(ctrl.eta))
    elif ctrl.cost == "linear":
        if not ctrl.c >= 0:
            raise ConfigError("linear control cost needs c >= 0")
        l1 = RunningCost("linear", c=float(ctrl.c))
    elif ctrl.cost == "custom":
        tab = np.atleast_2d(np.asarray(ctrl.table, float))
        if tab.shape[1] != dim_k + 1:
            raise ConfigError(f"custom table rows need {dim_k} control entries and a cost")
        controls, costs = tab[:, :dim_k], tab[:, dim_k]
        if not all(cset.contains(u) for u in controls):
            raise ConfigError("custom table contains controls outside U")
        l1 = RunningCost("custom", controls=controls, costs=costs)
    else:
        raise ConfigError(f"unknown control cost {ctrl.cost!r}")
    return HamiltonianSpec(cset, l1, make_state_cost(cost, dim_p))


# --- Hamiltonians ------------------------------------------------------------------


def h_cv(p, u, spec: HamiltonianSpec) -> float:
    """Current-value Hamiltonian <p, u> + l1(u)."""
    p, u = np.asarray(p, float), np.asarray(u, float)
    if not spec.control_set.contains(u):
        raise ControlOutOfSet(f"u={u} is not in U")
    return float(p @ u + spec.l1(u))


def h_min_batch(p, spec: HamiltonianSpec):
    """Minimised Hamiltonian and argmin for each row of ``p`` (N, m)."""
    p = np.atleast_2d(np.asarray(p, float))
    cs, l1 = spec.control_set, spec.l1
    if l1.kind == "custom":
        scores = p @ l1.controls.T + l1.costs[None, :]
        j = np.argmin(scores, axis=1)
        return scores[np.arange(p.shape[0]), j], l1.controls[j]
    if cs.kind == "ball" and l1.kind == "quadratic":
        eta, r = l1.eta, cs.radius
        norm = np.linalg.norm(p, axis=1)
        inside = norm <= eta * r
        safe = np.where(norm > 0, norm, 1.0)
        u = np.where(inside[:, None], -p / eta, -r * p / safe[:, None])
        val = np.where(inside, -0.5 * norm**2 / eta, -r * norm + 0.5 * eta * r * r)
        return val, u
    if cs.kind == "box" and l1.kind == "quadratic":
        u = np.clip(-p / l1.eta, cs.lower, cs.upper)
        return np.sum(p * u, axis=1) + 0.5 * l1.eta * np.sum(u * u, axis=1), u
    if cs.kind == "ball" and l1.kind == "linear":
        norm = np.linalg.norm(p, axis=1)
        active = norm > l1.c
        safe = np.where(norm > 0, norm, 1.0)
        u = np.where(active[:, None], -cs.radius * p / safe[:, None], 0.0)
        return np.where(active, cs.radius * (l1.c - norm), 0.0), u
    cand = cs.grid(201 if cs.dim <= 2 else 21)
    scores = p @ cand.T + l1(cand)[None, :]
    j = np.argmin(scores, axis=1)
    return scores[np.arange(p.shape[0]), j], cand[j]


def h_min(p, spec: HamiltonianSpec):
    val, u = h_min_batch(np.asarray(p, float)[None, :], spec)
    return float(val[0]), u[0]


# --- contraction certificate ----------------------------------------------------------


def contraction_bound(lam: float, gamma: float, kappa0: float) -> float:
    """kappa0 * int_0^inf e^{-lam t} max(1, t^{-gamma}) dt in closed form."""
    if not 0.0 <= gamma < 1.0:
        raise BadExponent(f"gamma={gamma} must lie in [0, 1)")
    if not lam > 0:
        raise ValueError(f"lambda={lam} must be positive")
    s = 1.0 - gamma
    head = lam ** (gamma - 1.0) * gammainc(s, lam) * gamma_fn(s)
    return float(kappa0 * (head + math.exp(-lam) / lam))


def contraction_bound_quad(lam, gamma, kappa0):
    """Independent quadrature of the same integral (substitution t = u^{1/s} removes the singularity)."""
    s = 1.0 - gamma
    head, _ = scipy.integrate.quad(lambda u: np.exp(-lam * u ** (1.0 / s)) / s, 0.0, 1.0,
                                   epsabs=1e-13, epsrel=1e-12)
    tail, _ = scipy.integrate.quad(lambda t: np.exp(-lam * t), 1.0, np.inf, epsabs=1e-13, epsrel=1e-12)
    return kappa0 * (head + tail)


def threshold_from_constants(kappa0, gamma, lipschitz, safety=SAFETY, lam_min=1e-3, lam_max=1e6):
    """Smallest lambda (to bisection accuracy, rounded up) with L_H * bound <= safety."""
    if kappa0 * lipschitz == 0:
        return float(lam_min)

    def ok(lam):
        return lipschitz * contraction_bound(lam, gamma, kappa0) <= safety

    if ok(lam_min):
        return float(lam_min)
    if not ok(lam_max):
        raise NoThreshold(f"no lambda below {lam_max:g} certifies a contraction")
    lo, hi = math.log(lam_min), math.log(lam_max)
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        if ok(math.exp(mid)):
            hi = mid
        else:
            lo = mid
    return float(math.exp(hi))


@dataclass
class Certificate:
    gamma: float
    kappa0: float
    fit_r2: float
    lipschitz: float
    lambda0: float

    def bound(self, lam):
        return self.lipschitz * contraction_bound(lam, self.gamma, max(self.kappa0, 1.0))

    def to_dict(self):
        return {"gamma": self.gamma, "kappa0": self.kappa0, "fit_r2": self.fit_r2,
                "lipschitz": self.lipschitz, "lambda0": self.lambda0}


def certify(model: SpectralModel, spec: HamiltonianSpec, solver: SolverConfig = SolverConfig()) -> Certificate:
    """Fit gamma on the small-t window, then take kappa0 over a wide window so the bound holds globally.

    kappa0 is floored at 1: F1 differences obey the same estimate with gamma = 0,
    kappa0 = 1, so the joint (v, w) sup-norm contracts under the larger constant.
    """
    ts = np.geomspace(solver.fit_t_min, solver.fit_t_max, solver.fit_samples)
    norms = np.array([lambda_norm(model, t) for t in ts])
    if np.all(norms == 0):
        return Certificate(0.0, 0.0, 1.0, spec.lipschitz, threshold_from_constants(0, 0, spec.lipschitz))
    slope, r2 = loglog_fit(ts, norms)
    gamma = float(np.clip(-slope, 0.0, 1.0 - 1e-9))
    wide = np.geomspace(1e-6, 1e2, 161)
    kappa0 = kappa_for(wide, [lambda_norm(model, t) for t in wide], gamma)
    lam0 = threshold_from_constants(max(kappa0, 1.0), gamma, spec.lipschitz)
    return Certificate(gamma, kappa0, r2, spec.lipschitz, lam0)


def lambda_threshold(model: SpectralModel, spec: HamiltonianSpec, solver: SolverConfig = SolverConfig()) -> float:
    return certify(model, spec, solver).lambda0


# --- time quadrature -----------------------------------------------------------------


@dataclass(frozen=True)
class TimeQuadrature:
    """Nodes and weights for int_0^inf e^{-lam t} f(t) dt (discount included in the weights)."""

    nodes: np.ndarray
    weights: np.ndarray
    lam: float
    horizon: float

    @property
    def tail_factor(self):
        """int_T^inf e^{-lam t} dt; multiply by sup|f| for the truncation budget."""
        return math.exp(-self.lam * self.horizon) / self.lam

    @property
    def head(self):
        return float(self.nodes[0])


def time_quadrature(lam, n_nodes=96, t_cut=1e-6, horizon_factor=40.0) -> TimeQuadrature:
    """Gregory-corrected trapezoid in log t on [t_cut, horizon_factor/lam]; [0, t_cut] lumped onto the first node."""
    if not lam > 0:
        raise ValueError("lambda must be positive")
    horizon = horizon_factor / lam
    if horizon <= t_cut:
        raise ValueError("horizon must exceed t_cut")
    t = np.geomspace(t_cut, horizon, n_nodes)
    h = math.log(t[1] / t[0])
    w = h * t
    # third-order Gregory end weights: the integrand t e^{-lam t} has no decay at t_cut
    ends = np.array([3 / 8, 7 / 6, 23 / 24])
    w[:3] *= ends
    w[-3:] *= ends[::-1]
    w = w * np.exp(-lam * t)
    w[0] += -math.expm1(-lam * t_cut) / lam
    return TimeQuadrature(t, w, float(lam), horizon)


# --- the operator F ------------------------------------------------------------------


def default_grid(model: SpectralModel, lam: float, solver: SolverConfig) -> GridFunction:
    n = model.dim_p
    if n > 3:
        raise ConfigError(f"grid solves support n <= 3 projected coordinates, got {n}")
    nodes = solver.grid_nodes or (33 if n <= 2 else 17)
    _, qbar = model.smoothing_pair(solver.horizon_factor / lam)
    sd = np.sqrt(np.clip(np.diag(qbar), 1e-300, None))
    bounds = tuple((-solver.grid_halfwidth * s, solver.grid_halfwidth * s) for s in sd)
    return GridFunction(bounds, (nodes,) * n, np.zeros((nodes,) * n))


class IntegralOperator:
    """Assembled F for fixed (model, spec, lambda, grid, time quadrature)."""

    def __init__(self, model: SpectralModel, spec: HamiltonianSpec, lam: float, grid: GridFunction,
                 tq: TimeQuadrature, gh_order: int = 20):
        if model.dim_k != spec.dim_k:
            raise ConfigError(f"control dimension {spec.dim_k} does not match the model ({model.dim_k})")
        dev = _commutation_defect(model, tq)
        if dev > 1e-10:
            raise ConfigError(f"grid solves need P to commute with the semigroup (defect {dev:.2e})")
        self.model, self.spec, self.lam, self.grid, self.tq = model, spec, float(lam), grid, tq
        self.scheme = QuadScheme.gauss_hermite(gh_order)
        self.exact = grid.dim == 1
        self._laws = []
        for t in tq.nodes:
            law, m = projected_law(model, float(t))
            self._laws.append((model.projected_semigroup(float(t)), law, _lambda_white(law, m)))
        pts = grid.points()
        self.s1, self.s2 = self.source_at(pts)
        self.k1, self.k2 = self.kernel_at(pts)

    def kernel_at(self, zs):
        """Matrices (N, G) and (N, G, m) mapping grid values g to the g-part of (F1, F2) at ``zs``."""
        zs = np.atleast_2d(np.asarray(zs, float))
        k1 = np.zeros((zs.shape[0], self.grid.size))
        k2 = np.zeros((zs.shape[0], self.grid.size, self.model.dim_k))
        scheme = None if self.exact else self.scheme
        for wt, t in zip(self.tq.weights, self.tq.nodes):
            a, b = transition_rows(self.model, float(t), self.grid, zs, scheme)
            k1 += wt * a
            k2 += wt * b
        return k1, k2

    def source_at(self, zs):
        """The l0-part of (F1, F2) at ``zs``, integrating l0 itself (not its interpolant)."""
        zs = np.atleast_2d(np.asarray(zs, float))
        l0 = self.spec.l0
        s1 = np.zeros(zs.shape[0])
        s2 = np.zeros((zs.shape[0], self.model.dim_k))
        if l0.kind == "zero":
            return s1, s2
        use_exact = self.exact and l0.kind == "grid"
        for wt, (ap, law, lam_w) in zip(self.tq.weights, self._laws):
            means = zs @ ap.T
            if use_exact:
                f = law.factor[0, 0] if law.rank else 0.0
                a, b = pl_gaussian_weights(l0.grid.axes[0], means[:, 0], f)
                s1 += wt * (a @ l0.grid.flat)
                if law.rank:
                    s2 += wt * np.outer(b @ l0.grid.flat, lam_w[0])
                continue
            xi, qw = standard_nodes(law.rank, self.scheme)
            shifts = xi @ law.factor.T
            vals = l0((means[:, None, :] + shifts[None]).reshape(-1, zs.shape[1])).reshape(zs.shape[0], -1)
            s1 += wt * (vals @ qw)
            s2 += wt * (vals @ (qw[:, None] * (xi @ lam_w)))
        return s1, s2

    def hamiltonian_values(self, w_flat):
        return h_min_batch(w_flat, self.spec)[0]

    def apply(self, w_flat):
        """(F1, F2) on the grid for gradient values ``w_flat`` (G, m)."""
        g = self.hamiltonian_values(w_flat)
        return self.s1 + self.k1 @ g, self.s2 + np.einsum("ngm,g->nm", self.k2, g)

    def evaluate(self, zs, g):
        """Off-grid (Nystrom) evaluation of (v, w) given the Hamiltonian grid values ``g``."""
        s1, s2 = self.source_at(zs)
        k1, k2 = self.kernel_at(zs)
        return s1 + k1 @ g, s2 + np.einsum("ngm,g->nm", k2, g)

    def error_budget(self, g):
        """Tail of the time integral beyond the horizon, for F1 and F2."""
        sup = self.spec.l0.sup + float(np.max(np.abs(g))) if np.size(g) else self.spec.l0.sup
        lam_tail = lambda_norm(self.model, self.tq.horizon)
        return {"tail_F1": sup * self.tq.tail_factor, "tail_F2": sup * lam_tail * self.tq.tail_factor}


def _commutation_defect(model, tq):
    from .spectral import check_commutation

    return check_commutation(model, [tq.nodes[0], tq.nodes[len(tq.nodes) // 2], tq.nodes[-1]])


def apply_F(op: IntegralOperator, v: GridFunction, w: GridFunction):
    """One application of F; ``v`` is unused by F but kept for the (v, w) state signature."""
    f1, f2 = op.apply(w.flat)
    return op.grid.with_values(f1), op.grid.with_values(f2)


# --- solutions -------------------------------------------------------------------------


@dataclass
class ValueSolution:
    v: GridFunction
    w: GridFunction
    lam: float
    residual_history: list
    contraction_bound: float
    hamiltonian_grid: np.ndarray
    converged: bool = True
    diagnostics: dict = field(default_factory=dict)
    operator: IntegralOperator | None = field(default=None, repr=False)

    def value_at(self, zs):
        """v at Pz-coordinates; Nystrom evaluation when the operator is attached."""
        zs = np.atleast_2d(np.asarray(zs, float))
        if self.operator is not None:
            return self.operator.evaluate(zs, self.hamiltonian_grid)[0]
        return self.v(zs)

    def gradient_at(self, zs):
        zs = np.atleast_2d(np.asarray(zs, float))
        if self.operator is not None:
            return self.operator.evaluate(zs, self.hamiltonian_grid)[1]
        return self.w(zs)

    def ratios(self):
        r = np.asarray(self.residual_history, float)
        with np.errstate(divide="ignore", invalid="ignore"):
            return r[1:] / r[:-1]

    def to_dict(self):
        return {
            "lambda": self.lam,
            "contraction_bound": self.contraction_bound,
            "converged": self.converged,
            "residual_history": [float(x) for x in self.residual_history],
            "v": self.v.to_dict(),
            "w": self.w.to_dict(),
            "hamiltonian_grid": [float(x) for x in self.hamiltonian_grid],
            "diagnostics": self.diagnostics,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            v=GridFunction.from_dict(d["v"]),
            w=GridFunction.from_dict(d["w"]),
            lam=float(d["lambda"]),
            residual_history=list(d["residual_history"]),
            contraction_bound=float(d["contraction_bound"]),
            hamiltonian_grid=np.asarray(d["hamiltonian_grid"], float),
            converged=bool(d.get("converged", True)),
            diagnostics=dict(d.get("diagnostics", {})),
        )


def _sup_pair(dv, dw):
    return float(max(np.max(np.abs(dv)), np.max(np.linalg.norm(dw, axis=1))))


def solve_fixed_point(op: IntegralOperator, tol=1e-6, max_iter=60, v0=None, w0=None,
                      certified_bound=None) -> ValueSolution:
    """Plain Picard iteration of F from (v0, w0) (default (0, 0))."""
    size, mk = op.grid.size, op.model.dim_k
    v = np.zeros(size) if v0 is None else np.broadcast_to(np.asarray(v0, float), (size,)).copy()
    w = np.zeros((size, mk)) if w0 is None else np.broadcast_to(np.asarray(w0, float), (size, mk)).copy()
    history = []
    rising = 0
    converged = False
    for _ in range(max_iter):
        v_new, w_new = op.apply(w)
        res = _sup_pair(v_new - v, w_new - w)
        if history and res > history[-1] > 0:
            rising += 1
            if rising >= 3:
                raise NotContracted(f"residual grew for 3 consecutive iterations (last {res:.3e})")
        else:
            rising = 0
        history.append(res)
        v, w = v_new, w_new
        if res <= tol:
            converged = True
            break
    g = op.hamiltonian_values(w)
    sol = ValueSolution(
        v=op.grid.with_values(v),
        w=op.grid.with_values(w),
        lam=op.lam,
        residual_history=history,
        contraction_bound=float("nan") if certified_bound is None else float(certified_bound),
        hamiltonian_grid=g,
        converged=converged,
        operator=op,
    )
    sol.diagnostics.update(op.error_budget(g))
    return sol


def gradient_consistency(sol: ValueSolution, h=1e-4, interior_margin=1):
    """sup over interior nodes of | FD B-gradient of v - w |, FD on the Nystrom extension of v."""
    op = sol.operator
    if op is None:
        raise ValueError("gradient check needs the assembled operator")
    model = op.model
    pb = model.projection_vectors @ model.control_matrix  # (n, m): P B e_j
    pts = op.grid.points()
    keep = np.ones(len(pts), bool)
    for d, ax in enumerate(op.grid.axes):
        keep &= (pts[:, d] > ax[interior_margin - 1]) & (pts[:, d] < ax[-interior_margin])
    pts = pts[keep]
    w = sol.gradient_at(pts)
    fd = np.zeros_like(w)
    for j in range(model.dim_k):
        step = h * pb[:, j]
        fd[:, j] = (sol.value_at(pts + step) - sol.value_at(pts - step)) / (2 * h)
    return float(np.max(np.abs(fd - w)))


def build_operator(model: SpectralModel, spec: HamiltonianSpec, lam: float, solver: SolverConfig = SolverConfig(),
                   grid: GridFunction | None = None) -> IntegralOperator:
    tq = time_quadrature(lam, solver.time_nodes, solver.t_cut, solver.horizon_factor)
    grid = grid or default_grid(model, lam, solver)
    return IntegralOperator(model, spec, lam, grid, tq, solver.gh_order)
