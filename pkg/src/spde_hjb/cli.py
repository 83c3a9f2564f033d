"""Command-line entry point: estimates, solve, simulate, verify.

Exit codes: 0 ok, 2 config/IO, 3 non-contraction, 4 threshold guard,
5 verification failure (including range violations in the estimates).
"""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .config import ProblemConfig, config_digest, config_from_dict, load_document
from .errors import ConfigError, NotContracted, RangeViolation, SpdeHjbError
from .hjb import ValueSolution, build_operator, certify, gradient_consistency, make_hamiltonian, solve_fixed_point
from .parallel import set_threads
from .smoothing import (
    default_lift,
    duality_constant,
    fit_exponent,
    lambda_operator,
    lift_adjoint_check,
    lifted_lambda_norm,
)
from .spectral import check_commutation, make_model
from .synthesis import Feedback, evaluate_cost, verification_report

EXIT_OK, EXIT_CONFIG, EXIT_CONTRACT, EXIT_GUARD, EXIT_VERIFY = 0, 2, 3, 4, 5


@dataclass
class RunManifest:
    command: str
    config_digest: str
    seed: int
    version: str = __version__
    started: str = ""
    finished: str = ""
    outputs: list = field(default_factory=list)

    def to_dict(self):
        return {
            "command": self.command,
            "config_digest": self.config_digest,
            "seed": self.seed,
            "version": self.version,
            "started": self.started,
            "finished": self.finished,
            "outputs": sorted(self.outputs),
        }


def _now():
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


class Run:
    """Tracks every file written so the manifest lists them all."""

    def __init__(self, command, out_dir, digest, seed, quiet):
        self.out = Path(out_dir)
        self.quiet = quiet
        self.manifest = RunManifest(command, digest, seed, started=_now())

    def log(self, msg):
        if not self.quiet:
            print(msg)

    def write_json(self, name, obj):
        self.out.mkdir(parents=True, exist_ok=True)
        path = self.out / name
        path.write_text(json.dumps(obj, sort_keys=True, indent=2, default=_jsonable) + "\n", encoding="utf-8")
        self.manifest.outputs.append(name)
        return path

    def write_csv(self, name, header, rows):
        self.out.mkdir(parents=True, exist_ok=True)
        path = self.out / name
        with path.open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for r in rows:
                w.writerow([_fmt(x) for x in r])
        self.manifest.outputs.append(name)
        return path

    def finish(self):
        self.manifest.finished = _now()
        self.manifest.outputs.append("manifest.json")
        self.out.mkdir(parents=True, exist_ok=True)
        (self.out / "manifest.json").write_text(json.dumps(self.manifest.to_dict(), indent=2) + "\n")


def _fmt(x):
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def _jsonable(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer, np.bool_)):
        return o.item()
    raise TypeError(f"cannot serialise {type(o).__name__}")


def _load(args):
    raw = load_document(args.config)
    cfg = config_from_dict(raw)
    if getattr(args, "seed", None) is not None:
        cfg.simulation.seed = args.seed
    if getattr(args, "paths", None) is not None:
        cfg.simulation.paths = args.paths
    return raw, cfg


def _problem(cfg: ProblemConfig):
    model = make_model(cfg.model)
    spec = make_hamiltonian(cfg.control, cfg.cost, model.dim_k, model.dim_p)
    return model, spec


# --- commands ---------------------------------------------------------------------------


def cmd_estimates(args, raw, cfg):
    est = cfg.estimates
    t_min = args.t_min if args.t_min is not None else est.t_min
    t_max = args.t_max if args.t_max is not None else est.t_max
    samples = args.samples if args.samples is not None else est.samples
    model = make_model(cfg.model)
    run = Run("estimates", args.out, config_digest(raw), cfg.simulation.seed, args.quiet)
    report = fit_exponent(model, t_min, t_max, samples)
    disc = default_lift(est.rho, est.lift_nodes)
    rows = []
    for t, nrm, dual in zip(report.t_samples, report.norms, report.duality):
        lr = lambda_operator(model, t)
        rows.append((t, nrm, dual, lifted_lambda_norm(model, disc, t), lr.residual))
    run.write_csv("estimates.csv", ["t", "lambda_norm", "duality_constant", "lifted_lambda_norm", "residual"], rows)
    rng = np.random.default_rng(cfg.simulation.seed)
    adj = max(lift_adjoint_check(model, disc, rng.standard_normal((disc.time_nodes.size, model.dim_p)), rng=rng)
              for _ in range(10))
    summary = report.to_dict()
    summary.update({
        "model": model.kind,
        "dim_h": model.dim_h,
        "dim_p": model.dim_p,
        "commutation_defect": check_commutation(model, [t_min, t_max, 1.0]),
        "lift_adjoint_residual": adj,
        "max_duality_mismatch": float(np.max(np.abs(report.duality / report.norms**2 - 1))),
        "noise_excitation": model.noise_excitation,
        "gram_condition": model.gram_condition,
    })
    run.write_json("estimates.json", summary)
    run.log(f"fitted exponent {report.fitted_exponent:.4f} (R^2 {report.fit_r2:.5f}), kappa0 {report.kappa0:.4g}")
    run.finish()
    return EXIT_OK


def _solve(cfg, lam_override, force, log):
    model, spec = _problem(cfg)
    cert = certify(model, spec, cfg.solver)
    lam_cfg = cfg.solver.lambda_ if lam_override is None else lam_override
    lam = cert.lambda0 if lam_cfg in ("auto", None) else float(lam_cfg)
    if lam < cert.lambda0 and not force:
        return None, cert, lam
    op = build_operator(model, spec, lam, cfg.solver)
    sol = solve_fixed_point(op, cfg.solver.tol, cfg.solver.max_iter, certified_bound=cert.bound(lam))
    sol.diagnostics["certificate"] = cert.to_dict()
    sol.diagnostics["below_threshold_override"] = bool(lam < cert.lambda0)
    sol.diagnostics["gradient_consistency"] = gradient_consistency(sol) if op.grid.dim == 1 else None
    log(f"lambda {lam:.6g} (certified lambda0 {cert.lambda0:.6g}), {len(sol.residual_history)} iterations, "
        f"final residual {sol.residual_history[-1]:.3e}")
    return sol, cert, lam


def cmd_solve(args, raw, cfg):
    run = Run("solve", args.out, config_digest(raw), cfg.simulation.seed, args.quiet)
    sol, cert, lam = _solve(cfg, args.lambda_, args.force, run.log)
    if sol is None:
        print(f"lambda {lam:g} is below the certified threshold lambda0 = {cert.lambda0:.6g}; "
              "pass --force to solve anyway", file=sys.stderr)
        return EXIT_GUARD
    doc = sol.to_dict()
    doc["config_digest"] = config_digest(raw)
    run.write_json("solution.json", doc)
    run.write_csv("residuals.csv", ["iteration", "residual"],
                  [(i + 1, r) for i, r in enumerate(sol.residual_history)])
    run.finish()
    return EXIT_OK if sol.converged else EXIT_CONTRACT


def _load_solution(path, cfg):
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
        sol = ValueSolution.from_dict(doc)
    except OSError as exc:
        raise ConfigError(f"cannot read solution file {path}: {exc.strerror}") from exc
    except (ValueError, KeyError, TypeError) as exc:
        raise ConfigError(f"cannot parse solution file {path}: {exc}") from exc
    model, spec = _problem(cfg)
    op = build_operator(model, spec, sol.lam, cfg.solver)
    if op.grid.bounds != sol.v.bounds or op.grid.nodes_per_axis != sol.v.nodes_per_axis:
        raise ConfigError(f"solution file {path} does not match the configured grid")
    if sol.hamiltonian_grid.shape != (op.grid.size,):
        raise ConfigError(f"solution file {path} has a malformed hamiltonian_grid")
    sol.operator = op
    return model, spec, sol


def cmd_simulate(args, raw, cfg):
    model, spec, sol = _load_solution(args.solution, cfg)
    sim = cfg.simulation
    run = Run("simulate", args.out, config_digest(raw), sim.seed, args.quiet)
    horizon = sim.horizon or 40.0 / sol.lam
    results, traj = [], []
    for i, z in enumerate(sim.initial_states):
        x = model.state_from_projected(np.asarray(z, float))
        res = evaluate_cost(model, spec, Feedback(sol, spec), x, sim.dt, horizon, sim.paths, sim.seed, sol.lam,
                            keep_paths=args.trajectories)
        d = res.to_dict()
        d["z0"] = list(map(float, z))
        d["value"] = float(sol.value_at(np.atleast_2d(z))[0])
        results.append(d)
        for p, t, zz, uu in res.sample_trajectories or []:
            traj.append([i, p, t, *zz, *uu])
        run.log(f"state {z}: J = {res.cost_estimate:.6g} +- {res.std_error:.2g}, v = {d['value']:.6g}")
    run.write_json("simulation.json", {"lambda": sol.lam, "results": results})
    if args.trajectories:
        head = ["state", "path", "t"] + [f"z_{k + 1}" for k in range(model.dim_p)] + \
            [f"u_{k + 1}" for k in range(model.dim_k)]
        run.write_csv("trajectories.csv", head, traj)
    run.finish()
    return EXIT_OK


def cmd_verify(args, raw, cfg):
    model, spec, sol = _load_solution(args.solution, cfg)
    sim = cfg.simulation
    run = Run("verify", args.out, config_digest(raw), sim.seed, args.quiet)
    report = verification_report(model, spec, sol, sim.initial_states, sim.n_constant_policies, sim.dt,
                                 sim.horizon, sim.paths, sim.seed, cfg.solver.tol)
    run.write_json("verification.json", report)
    for k, v in report["pass"].items():
        run.log(f"{k}: {'PASS' if v else 'FAIL'}")
    run.finish()
    return EXIT_OK if report["pass"]["optimal_gap"] else EXIT_VERIFY


def build_parser():
    p = argparse.ArgumentParser(prog="spde-hjb", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", required=True, help="problem TOML/JSON (schema = 1)")
        sp.add_argument("--out", default="out", help="output directory")
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--threads", type=int, default=None, help="worker threads (default: $HJB_THREADS or 1)")
        sp.add_argument("--paths", type=int, default=None)
        sp.add_argument("--quiet", action="store_true")

    sp = sub.add_parser("estimates", help="smoothing-norm sweep and exponent fit")
    common(sp)
    sp.add_argument("--t-min", type=float, default=None)
    sp.add_argument("--t-max", type=float, default=None)
    sp.add_argument("--samples", type=int, default=None)
    sp.set_defaults(func=cmd_estimates)

    sp = sub.add_parser("solve", help="fixed-point solve of the HJB equation")
    common(sp)
    sp.add_argument("--lambda", dest="lambda_", type=float, default=None)
    sp.add_argument("--force", action="store_true", help="allow lambda below the certified threshold")
    sp.set_defaults(func=cmd_solve)

    for name, fn, helptext in (("simulate", cmd_simulate, "closed-loop Monte Carlo of the feedback"),
                               ("verify", cmd_verify, "verification-theorem checks")):
        sp = sub.add_parser(name, help=helptext)
        common(sp)
        sp.add_argument("--solution", required=True, help="solution.json written by solve")
        if name == "simulate":
            sp.add_argument("--trajectories", type=int, default=0, help="dump this many sample paths")
        sp.set_defaults(func=fn)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    set_threads(args.threads)
    try:
        raw, cfg = _load(args)
        return args.func(args, raw, cfg)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NotContracted as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONTRACT
    except RangeViolation as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VERIFY
    except (SpdeHjbError, TypeError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
