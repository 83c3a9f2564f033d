"""End-to-end acceptance checks, one test per criterion.

Each test prints a single PASS/FAIL line with the measured quantities (shown even
without ``-s``) and then asserts.  Run with ``pytest tests/test_acceptance.py -v``.
"""

import json
import time

import numpy as np
import pytest

from spde_hjb.cli import main as cli_main
from spde_hjb.config import ModelConfig, load_config
from spde_hjb.hjb import (build_operator, certify, contraction_bound, contraction_bound_quad,
                          gradient_consistency, make_hamiltonian, solve_fixed_point)
from spde_hjb.ou import ou_apply, ou_b_gradient
from spde_hjb.quadrature import QuadScheme
from spde_hjb.smoothing import (default_lift, duality_constant, fit_exponent, lambda_norm,
                                lift_adjoint_check, lifted_lambda_norm)
from spde_hjb.spectral import check_commutation, control_operator_apply, make_model, projection_apply
from spde_hjb.synthesis import verification_report

from conftest import CONFIGS


@pytest.fixture
def verdict(capsys):
    def emit(number, title, ok, detail):
        with capsys.disabled():
            print(f"\n[criterion {number:2d}] {'PASS' if ok else 'FAIL'}  {title}: {detail}")
        assert ok, f"criterion {number} failed: {detail}"
    return emit


@pytest.fixture(scope="module")
def both():
    return {"heat": make_model(ModelConfig(kind="heat")), "wave": make_model(ModelConfig(kind="wave", dim_h=8))}


@pytest.fixture(scope="module")
def default_solve():
    cfg = load_config(CONFIGS / "heat.toml")
    start = time.perf_counter()
    model = make_model(cfg.model)
    spec = make_hamiltonian(cfg.control, cfg.cost, model.dim_k, model.dim_p)
    cert = certify(model, spec, cfg.solver)
    op = build_operator(model, spec, cert.lambda0, cfg.solver)
    sol = solve_fixed_point(op, cfg.solver.tol, cfg.solver.max_iter, certified_bound=cert.bound(cert.lambda0))
    return cfg, model, spec, cert, sol, time.perf_counter() - start


def test_criterion_01_wave_exponent(both, verdict):
    start = time.perf_counter()
    rep = fit_exponent(both["wave"], 1e-4, 1e-2, 24)
    elapsed = time.perf_counter() - start
    ok = abs(rep.fitted_exponent + 0.5) <= 0.1 and rep.fit_r2 >= 0.98 and elapsed < 10
    verdict(1, "wave smoothing exponent", ok,
            f"slope={rep.fitted_exponent:.4f} R2={rep.fit_r2:.5f} time={elapsed:.2f}s")


def test_criterion_02_heat_exponents(both, verdict):
    start = time.perf_counter()
    rep = fit_exponent(both["heat"], 1e-4, 1e-2, 24)
    elapsed = time.perf_counter() - start
    ok = -1 < rep.fitted_exponent <= -0.5 and rep.unprojected_exponent <= -1 and elapsed < 10
    verdict(2, "heat projected/unprojected exponents", ok,
            f"projected={rep.fitted_exponent:.4f} unprojected={rep.unprojected_exponent:.4f} time={elapsed:.2f}s")


def test_criterion_03_duality(both, verdict):
    worst = 0.0
    for model in both.values():
        for t in np.geomspace(1e-4, 1.0, 20):
            n2 = lambda_norm(model, t) ** 2
            worst = max(worst, abs(duality_constant(model, t) - n2) / n2)
    verdict(3, "duality constant = norm^2", worst <= 1e-8, f"max relative mismatch={worst:.2e}")


def test_criterion_04_commutation(both, verdict):
    ts = np.geomspace(1e-4, 1.0, 12)
    defect = max(check_commutation(m, ts) for m in both.values())
    d1, d2 = default_lift(n_nodes=40), default_lift(n_nodes=80)
    worst, halving = 0.0, True
    for model in both.values():
        for t in (1e-3, 1e-2, 1e-1):
            base = lambda_norm(model, t)
            g1 = abs(lifted_lambda_norm(model, d1, t) - base) / base
            g2 = abs(lifted_lambda_norm(model, d2, t) - base) / base
            worst = max(worst, g1, g2)
            halving &= g2 <= g1 / 2 or max(g1, g2) <= 1e-9
    ok = defect <= 1e-12 and worst <= 5e-2 and halving
    verdict(4, "commutation and lifted norms", ok,
            f"commutation defect={defect:.1e} lifted gap={worst:.1e} halving-or-roundoff={halving}")


def test_criterion_05_lift_adjoint(both, verdict):
    rng = np.random.default_rng(5)
    disc = default_lift()
    worst = 0.0
    for model in both.values():
        for _ in range(50):
            z = rng.standard_normal((disc.time_nodes.size, model.dim_p))
            worst = max(worst, lift_adjoint_check(model, disc, z, rng=rng))
    verdict(5, "lift adjoint", worst <= 1e-10, f"max relative residual={worst:.1e} over 100 pairs")


def test_criterion_06_gradient_formula(both, verdict):
    rng = np.random.default_rng(6)
    gh = QuadScheme.gauss_hermite(20)
    smooth = lambda p: np.tanh(p[:, 0]) + 0.3 * np.cos(p.sum(axis=1))
    step = lambda p: np.where(p[:, 0] > 0.05, 1.0, -1.0)
    worst, bound_ok = 0.0, True
    for model, t in ((both["heat"], 0.02), (both["wave"], 0.3)):
        for _ in range(10):
            z = 0.5 * rng.standard_normal(model.dim_p)
            k = rng.standard_normal(model.dim_k)
            d = projection_apply(model, control_operator_apply(model, k))
            h = 1e-5
            fd = (ou_apply(model, t, smooth, z + h * d, gh) - ou_apply(model, t, smooth, z - h * d, gh)) / (2 * h)
            g = ou_b_gradient(model, t, smooth, z, gh) @ k
            worst = max(worst, abs(g - fd) / max(abs(fd), 1e-12))
        for s in (1e-3, 1e-2, 1e-1):
            k = rng.standard_normal(model.dim_k)
            g = ou_b_gradient(model, s, step, np.zeros(model.dim_p), QuadScheme.gauss_hermite(60)) @ k
            bound_ok &= abs(g) <= lambda_norm(model, s) * 1.0 * np.linalg.norm(k) * (1 + 1e-8)
    verdict(6, "B-gradient formula", worst <= 1e-3 and bound_ok,
            f"max FD relative error={worst:.1e} step-function bound held={bound_ok}")


def test_criterion_07_contraction(default_solve, verdict):
    cfg, model, spec, cert, sol, elapsed = default_solve
    bound = cert.bound(cert.lambda0)
    ratios = sol.ratios()[1:]
    other = solve_fixed_point(sol.operator, cfg.solver.tol, cfg.solver.max_iter,
                              v0=spec.l0.sup / sol.lam, w0=np.full((sol.operator.grid.size, model.dim_k), 0.5))
    diff = max(np.max(np.abs(other.v.flat - sol.v.flat)), np.max(np.abs(other.w.flat - sol.w.flat)))
    closed, oracle = contraction_bound(1.0, 0.5, 1.0), contraction_bound_quad(1.0, 0.5, 1.0)
    ok = (sol.converged and np.all(ratios <= bound + 0.05) and diff <= 10 * cfg.solver.tol
          and abs(closed - 1.86152) <= 1e-4 and abs(closed - oracle) <= 1e-8 and elapsed < 300)
    verdict(7, "contraction certificate", ok,
            f"lambda0={cert.lambda0:.3f} bound={bound:.3f} max ratio={np.max(ratios, initial=0):.3f} "
            f"init gap={diff:.1e} closed form={closed:.6f} solve time={elapsed:.1f}s")


def test_criterion_08_mild_consistency(default_solve, verdict):
    cfg, *_, sol, _ = default_solve
    err = gradient_consistency(sol)
    verdict(8, "finite-difference B-gradient of v = w", err <= 10 * cfg.solver.tol,
            f"sup error={err:.1e} (limit {10 * cfg.solver.tol:.0e})")


def test_criterion_09_verification(default_solve, verdict):
    cfg, model, spec, _, sol, _ = default_solve
    sim = cfg.simulation
    start = time.perf_counter()
    rep = verification_report(model, spec, sol, sim.initial_states, n_constant=10, dt=sim.dt,
                              n_paths=2000, seed=sim.seed, tol=cfg.solver.tol)
    elapsed = time.perf_counter() - start
    worst_fb = max(abs(s["feedback"]["gap"]) / s["feedback"]["cost_se"] for s in rep["states"])
    worst_c = min(o["gap"] / o["paired_se"] for s in rep["states"] for o in s["constant_policies"])
    ok = rep["pass"]["optimal_gap"] and rep["pass"]["positive_gaps"] and elapsed < 600
    verdict(9, "verification theorem", ok,
            f"max |feedback gap|/se={worst_fb:.2f} min constant gap/paired se={worst_c:.1f} "
            f"states={len(rep['states'])} time={elapsed:.0f}s")


def test_criterion_10_determinism(tmp_path, verdict):
    cfg = CONFIGS / "heat.toml"
    same = True
    for run in ("a", "b"):
        out = tmp_path / run
        assert cli_main(["estimates", "--config", str(cfg), "--out", str(out / "est"), "--quiet"]) == 0
        assert cli_main(["solve", "--config", str(cfg), "--out", str(out / "sol"), "--quiet"]) == 0
        assert cli_main(["simulate", "--config", str(cfg), "--solution", str(out / "sol" / "solution.json"),
                         "--paths", "50", "--out", str(out / "sim"), "--quiet"]) == 0
    files = ["est/estimates.json", "sol/solution.json", "sim/simulation.json"]
    for f in files:
        same &= (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
    json.loads((tmp_path / "a" / files[1]).read_text())
    verdict(10, "determinism", same, f"{len(files)} JSON outputs byte-identical across two runs: {same}")
