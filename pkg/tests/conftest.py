import numpy as np
import pytest

from pgstab import LqrCostSpec, LtiSystem, Policy
from pgstab.oracle import spectral_radius


@pytest.fixture
def twodim():
    """The unstable 2-state benchmark plant with Q = I, R = 2."""
    plant = LtiSystem(np.array([[4.0, 3.0], [3.0, 1.5]]), np.array([[2.0], [2.0]]))
    return plant, np.eye(2), np.array([[2.0]])


@pytest.fixture
def scalar_plant():
    """Scalar A = 2, B = 1 with Q = R = 1."""
    return LtiSystem(np.array([[2.0]]), np.array([[1.0]])), np.eye(1), np.eye(1)


def random_stable_instance(rng, n_max=4, m_max=2, gamma_hi=0.95):
    """Random (plant, policy, spec) triple with a gamma-stable closed loop."""
    n = int(rng.integers(2, n_max + 1))
    m = int(rng.integers(1, m_max + 1))
    plant = LtiSystem(rng.standard_normal((n, n)), rng.standard_normal((n, m)))
    pol = Policy(0.3 * rng.standard_normal((m, n)))
    rho = spectral_radius(plant.a - plant.b @ pol.k)
    gamma = float(min(rng.uniform(0.05, gamma_hi) / max(rho, 1e-9) ** 2, 0.999))
    q = _random_spd(rng, n)
    r = _random_spd(rng, m)
    return plant, pol, LqrCostSpec(q, r, gamma)


def _random_spd(rng, n):
    g = rng.standard_normal((n, n))
    s = g @ g.T / n + np.eye(n) * rng.uniform(0.3, 1.5)
    return (s + s.T) / 2.0
