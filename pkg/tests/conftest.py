import sys

import numpy as np
import pytest

from maxfactor.factor_model import ModelSpec, ParamVector

INF = np.inf

# two-category max-factor Gumbel design of the simulation study
GUMBEL_SPEC = ModelSpec("2b", 2, ("1", "2"))
GUMBEL_THETA = ParamVector(mu=[-1.15, -0.55], sigma=[0.11, 0.15], nu=[-1.30, -1.00])

# two-category linear Normal design of the simulation study
NORMAL_SPEC = ModelSpec("2a", 2, ("1", "2"))
NORMAL_THETA = ParamVector(mu=[-1.60, -0.85], sigma=[0.18, 0.28], tau=[0.13, 0.16])

# fitted max-factor model on the rating-class data
SP_SPEC = ModelSpec("2b", 3, ("BB", "B", "CCC"))
SP_THETA = ParamVector(mu=[-1.66, -1.18, -0.54], sigma=[0.112, 0.124, 0.162],
                       nu=[-1.73, -INF, -INF])


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running statistical checks")
    config.addinivalue_line("markers", "acceptance: acceptance criteria with stated tolerances")


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    lines = getattr(module, "RESULTS", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)


@pytest.fixture
def gumbel():
    return GUMBEL_SPEC, GUMBEL_THETA


@pytest.fixture
def normal():
    return NORMAL_SPEC, NORMAL_THETA


@pytest.fixture
def sp():
    return SP_SPEC, SP_THETA


def random_theta(spec, rng, absent_prob=0.2):
    """Admissible parameters with loss probabilities in a moderate range."""
    k = spec.k
    fam = spec.family.value
    mu = rng.uniform(-1.8, -0.3, k) if fam.endswith("b") else rng.uniform(-2.2, -0.6, k)
    sigma = rng.uniform(0.05, 0.4, k)
    tau = nu = None
    if fam == "2a":
        tau = np.where(rng.random(k) < absent_prob, 0.0, rng.uniform(0.02, 0.4, k))
    if fam == "2b":
        nu = np.where(rng.random(k) < absent_prob, -INF, mu + rng.uniform(-0.6, 0.3, k))
    return ParamVector(mu, sigma, tau=tau, nu=nu).validate(spec)
