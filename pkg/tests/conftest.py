import hypothesis
import numpy as np
import pytest

from reachcert.config import load_config

hypothesis.settings.register_profile("fast", max_examples=25, deadline=None)
hypothesis.settings.load_profile("fast")


@pytest.fixture(scope="session")
def paper_spec():
    return load_config("double-integrator-paper")


@pytest.fixture(scope="session")
def small_net():
    from reachcert import net

    return net.init(seed=11, sizes=(2, 8, 8, 1))


@pytest.fixture(scope="session")
def oracle_101(paper_spec):
    from reachcert import grid

    return grid.solve_stationary(paper_spec, (101, 101), tol=1e-6)


@pytest.fixture()
def rng():
    # Function-scoped so draws do not leak across tests (order independence).
    return np.random.default_rng(20240817)
