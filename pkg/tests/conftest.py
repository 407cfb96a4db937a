import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("ctvf", deadline=None, max_examples=40, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("ctvf")


@pytest.fixture
def rng():
    from ctvf.numeric import RngStream

    return RngStream(1234, 0)


def random_spd(rng, n, shift=0.5):
    L = rng.normal(n * n).reshape(n, n)
    return L @ L.T + shift * np.eye(n)


def random_hurwitz_matrix(rng, n, margin=0.2):
    A = rng.normal(n * n).reshape(n, n)
    return A - (max(0.0, np.max(np.linalg.eigvals(A).real)) + margin) * np.eye(n)
