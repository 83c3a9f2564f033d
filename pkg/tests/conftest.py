from pathlib import Path

import numpy as np
import pytest

from spde_hjb.config import ModelConfig, ProblemConfig
from spde_hjb.hjb import build_operator, certify, make_hamiltonian, solve_fixed_point
from spde_hjb.spectral import make_model

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


@pytest.fixture(scope="session")
def heat():
    return make_model(ModelConfig(kind="heat", dim_h=32))


@pytest.fixture(scope="session")
def heat64():
    return make_model(ModelConfig(kind="heat"))


@pytest.fixture(scope="session")
def wave():
    return make_model(ModelConfig(kind="wave", dim_h=8))


@pytest.fixture(scope="session")
def heat_problem():
    """Default heat problem solved at the certified threshold."""
    cfg = ProblemConfig()
    model = make_model(cfg.model)
    spec = make_hamiltonian(cfg.control, cfg.cost, model.dim_k, model.dim_p)
    cert = certify(model, spec, cfg.solver)
    op = build_operator(model, spec, cert.lambda0, cfg.solver)
    sol = solve_fixed_point(op, cfg.solver.tol, cfg.solver.max_iter, certified_bound=cert.bound(cert.lambda0))
    return cfg, model, spec, cert, op, sol


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
