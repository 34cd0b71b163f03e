import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "repo", max_examples=25, deadline=None, suppress_health_check=[HealthCheck.function_scoped_fixture]
)
settings.load_profile("repo")


@pytest.fixture
def rng():
    return np.random.default_rng(1)


def random_state(basis, rng, max_sector=None):
    from hartreelab.fock import FockState

    amps = rng.normal(size=basis.dim) + 1j * rng.normal(size=basis.dim)
    if max_sector is not None:
        amps[basis.totals > max_sector] = 0
    return FockState(basis, amps / np.linalg.norm(amps))
