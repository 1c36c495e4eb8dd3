import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qplab.model import (Frequency, Phase, PotentialSpec, diophantine_margin,
                         dist_to_pi_lattice, eval_potential, golden_frequency,
                         harper, hull_sequence, two_frequency, zero_potential)


def brute_margin(omega, tau, kmax):
    # independent re-derivation: explicit loop, different mod-pi reduction
    best, worst = np.inf, None
    import itertools
    for k in itertools.product(range(-kmax, kmax + 1), repeat=len(omega)):
        kn = max(abs(x) for x in k)
        if kn == 0:
            continue
        x = np.dot(k, omega) / 2.0
        d = abs(x - np.pi * round(x / np.pi))
        val = kn ** tau * d
        if val < best:
            best, worst = val, k
    return best, worst


def test_margin_golden_brute_force():
    fr = golden_frequency(tau=2.0)
    margin, worst = diophantine_margin(fr, 100)
    ref, _ = brute_margin(fr.omega, 2.0, 100)
    assert margin == pytest.approx(ref, abs=1e-12)
    assert margin >= 0.1


def test_margin_rational_frequency():
    fr = Frequency(np.array([np.pi]), gamma=0.01, tau=1.0)
    margin, worst = diophantine_margin(fr, 2)
    assert margin == pytest.approx(0.0, abs=1e-12)
    assert abs(worst[0]) == 2


def test_margin_two_frequencies():
    fr = Frequency(np.array([np.pi * (np.sqrt(5) - 1), np.pi * np.sqrt(2)]),
                   gamma=0.01, tau=3.0)
    margin, _ = diophantine_margin(fr, 50)
    ref, _ = brute_margin(fr.omega, 3.0, 50)
    assert margin == pytest.approx(ref, abs=1e-12)
    assert margin > 0


@pytest.mark.parametrize("kmaxes", [(1, 5), (5, 20), (20, 60)])
def test_margin_monotone_in_kmax(golden, kmaxes):
    k1, k2 = kmaxes
    m1, _ = diophantine_margin(golden, k1)
    m2, _ = diophantine_margin(golden, k2)
    assert m2 <= m1 + 1e-15


def test_margin_rejects_bad_kmax(golden):
    with pytest.raises(ValueError):
        diophantine_margin(golden, 0)


def test_harper_values():
    pot = harper(0.5)
    assert eval_potential(pot, [0.0]) == pytest.approx(1.0)
    assert eval_potential(pot, [np.pi / 2]) == pytest.approx(0.0, abs=1e-15)
    assert eval_potential(zero_potential(), [1.234]) == 0.0


def test_eval_dimension_mismatch():
    with pytest.raises(ValueError):
        eval_potential(harper(0.5), [0.0, 1.0])


@settings(max_examples=50, deadline=None)
@given(st.floats(-10, 10), st.integers(0, 1))
def test_eval_periodicity(theta, axis):
    pot = two_frequency(0.3)
    shift = np.zeros(2)
    shift[axis] = 2 * np.pi
    a = eval_potential(pot, [theta, -theta])
    b = eval_potential(pot, np.array([theta, -theta]) + shift)
    assert a == pytest.approx(b, abs=1e-12)


def test_hull_sequence_values(golden):
    pot = harper(0.7)
    seq = hull_sequence(pot, golden, [0.0], -5, 5)
    n = np.arange(-5, 6)
    assert np.allclose(seq, 2 * 0.7 * np.cos(n * golden.omega[0]), atol=1e-12)
    assert seq[5] == pytest.approx(eval_potential(pot, [0.0]))
    assert np.allclose(hull_sequence(zero_potential(), golden, [0.0], 0, 9), 0.0)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-1, 1), min_size=1, max_size=4), st.floats(0, 6))
def test_hull_bounded_by_coeff_sum(cs, theta0):
    coeffs = {(k + 1,): c for k, c in enumerate(cs)}
    pot = PotentialSpec(dim=1, coeffs=coeffs)
    fr = golden_frequency()
    seq = hull_sequence(pot, fr, [theta0], 0, 50)
    assert np.max(np.abs(seq)) <= pot.sup_bound + 1e-9


def test_hull_rejects_bad_range(golden):
    with pytest.raises(ValueError):
        hull_sequence(harper(0.1), golden, [0.0], 3, 2)


def test_eps0_is_upper_bound():
    pot = harper(0.5, radius_r=1.0)
    assert pot.eps0 >= 2 * 0.5 * np.exp(1.0) - 1e-12
    with pytest.raises(ValueError):
        PotentialSpec(dim=1, coeffs={(1,): 0.5}, eps0=0.1)
    # a looser stored bound is allowed
    loose = PotentialSpec(dim=1, coeffs={(1,): 0.5}, eps0=10.0)
    assert loose.eps0 == 10.0


def test_coefficient_symmetry_enforced():
    pot = PotentialSpec(dim=1, coeffs={(1,): 0.25})
    assert pot.coeffs[(-1,)] == 0.25
    with pytest.raises(ValueError):
        PotentialSpec(dim=1, coeffs={(1,): 0.25, (-1,): 0.5})


def test_phase_reduction_idempotent():
    ph = Phase(np.array([7.0, -3.0]))
    r1 = ph.reduced()
    r2 = Phase(r1).reduced()
    assert np.allclose(r1, r2)
    assert np.all((r1 >= 0) & (r1 < 2 * np.pi))


def test_frequency_validation():
    with pytest.raises(ValueError):
        Frequency(np.array([1.0]), gamma=-1.0)
    with pytest.raises(ValueError):
        Frequency(np.array([1.0, 2.0]), tau=0.5)  # tau must exceed d-1


def test_dist_to_pi_lattice_range():
    xs = np.linspace(-10, 10, 101)
    d = dist_to_pi_lattice(xs)
    assert np.all(d >= 0) and np.all(d <= np.pi / 2 + 1e-15)
    assert dist_to_pi_lattice(np.pi) == pytest.approx(0.0, abs=1e-15)
