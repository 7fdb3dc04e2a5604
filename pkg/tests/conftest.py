import numpy as np
import pytest
from hypothesis import settings

from frictionstokes import DomainSpec, Scenario

settings.register_profile("default", deadline=None, max_examples=50)
settings.load_profile("default")


@pytest.fixture
def unit_domain():
    return DomainSpec(2, ((0.0, 1.0),), 1.0)


@pytest.fixture
def periodic_domain():
    return DomainSpec(2, ((0.0, 1.0),), 1.0, periodic=(0,))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def couette(domain, ell=0.5, resolution=8, T=0.25, dt=1 / 16, **kw):
    kw.setdefault("eps_schedule", (1e-2, 1e-3, 1e-4))
    return Scenario(domain=domain, resolution=resolution, T=T, dt=dt, threshold=ell, **kw)
