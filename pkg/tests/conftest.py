import numpy as np
import pytest

from qplab.model import golden_frequency, harper, zero_potential


@pytest.fixture(scope="session")
def golden():
    return golden_frequency()


@pytest.fixture(scope="session")
def pot_zero():
    return zero_potential()


@pytest.fixture(scope="session")
def pot_harper_005():
    return harper(0.05)


def rk4_evolve(diag, amps, t_final, dt=0.005):
    """Independent fixed-step RK4 integrator for i q' = Hq on a fixed window.

    Deliberately shares nothing with the Chebyshev propagator beyond the
    Hamiltonian definition.
    """
    def rhs(q):
        out = diag * q
        out[:-1] -= q[1:]
        out[1:] -= q[:-1]
        return -1j * out

    q = np.asarray(amps, dtype=complex).copy()
    nsteps = int(round(t_final / dt))
    for _ in range(nsteps):
        k1 = rhs(q)
        k2 = rhs(q + 0.5 * dt * k1)
        k3 = rhs(q + 0.5 * dt * k2)
        k4 = rhs(q + dt * k3)
        q = q + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
    return q
