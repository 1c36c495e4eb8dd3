import numpy as np
import pytest
from scipy.special import jv

from qplab.evolve import (EvolutionRecord, PropagationError, apply_hamiltonian,
                          check_ballistic_bound, diffusion_norm, fit_slope,
                          initial_state, l2_norm, propagate, run_evolution)
from qplab.model import harper
from qplab.spectral import eigen_spectrum, truncated_operator

from conftest import rk4_evolve


def test_apply_hamiltonian_free_delta(golden, pot_zero):
    st = initial_state(pot_zero, golden, [0.0])
    hq = apply_hamiltonian(st)
    idx = {n: i for i, n in enumerate(st.sites)}
    assert hq[idx[1]] == -1.0 and hq[idx[-1]] == -1.0
    hq[idx[1]] = hq[idx[-1]] = 0.0
    assert np.all(hq == 0.0)


def test_apply_hamiltonian_harper_delta(golden):
    lam = 0.3
    st = initial_state(harper(lam), golden, [0.0])
    hq = apply_hamiltonian(st)
    idx = {n: i for i, n in enumerate(st.sites)}
    assert hq[idx[0]] == pytest.approx(2 * lam)
    assert hq[idx[1]] == -1.0 and hq[idx[-1]] == -1.0


def test_apply_hamiltonian_matches_eigenpair(golden):
    op = truncated_operator(harper(0.4), golden, [0.3], 60)
    evals, evecs = eigen_spectrum(op, vectors=True)
    from qplab.evolve import WaveState
    st = WaveState(op.n_lo, op.n_hi, evecs[:, 7].astype(complex), 0.0,
                   op.pot, op.freq, op.theta)
    hq = apply_hamiltonian(st)
    assert np.max(np.abs(hq - evals[7] * st.amps)) < 1e-10


def test_diffusion_norm_examples(golden, pot_zero):
    st = initial_state(pot_zero, golden, [0.0])
    assert diffusion_norm(st) == 0.0
    st5 = initial_state(pot_zero, golden, [0.0], center=5)
    assert diffusion_norm(st5) == pytest.approx(5.0)
    stpm = initial_state(pot_zero, golden, [0.0], kind="values",
                         values=[1 / np.sqrt(2), 0.0, 1 / np.sqrt(2)])
    assert diffusion_norm(stpm) == pytest.approx(1.0)


def test_free_lattice_bessel_identity(golden, pot_zero):
    """q_n(t) = i^n J_n(2t) for V = 0, q(0) = e_0; hence ||q||_D^2 = 2 t^2."""
    st = initial_state(pot_zero, golden, [0.0])
    out = propagate(st, 10.0, 1, tol=1e-13)
    assert diffusion_norm(out) ** 2 == pytest.approx(200.0, rel=1e-3)
    n = out.sites
    exact = (1j ** n) * jv(n, 2 * out.t)
    assert np.max(np.abs(out.amps - exact)) < 1e-10


def test_propagator_against_rk4(golden):
    pot = harper(0.3)
    st = initial_state(pot, golden, [0.5], margin=40)
    out = propagate(st, 5.0, 1, tol=1e-13, grow=False)
    from qplab.evolve import _diagonal
    ref = rk4_evolve(_diagonal(st), st.amps, 5.0, dt=0.002)
    assert np.max(np.abs(out.amps - ref)) < 1e-6


def test_propagator_against_diagonalization(golden):
    pot = harper(0.2)
    st = initial_state(pot, golden, [0.1], margin=150)  # window ~300 <= 400
    op = truncated_operator(pot, golden, [0.1], st.amps.size, n_lo=st.n_lo)
    evals, evecs = eigen_spectrum(op, vectors=True)
    t = 7.0
    exact = evecs @ (np.exp(-1j * evals * t) * (evecs.T @ st.amps))
    out = propagate(st, t, 1, tol=1e-13, grow=False)
    assert np.linalg.norm(out.amps - exact) < 1e-8


def test_propagate_zero_steps_identity(golden, pot_zero):
    st = initial_state(pot_zero, golden, [0.0])
    assert np.array_equal(propagate(st, 0.5, 0).amps, st.amps)
    assert np.array_equal(propagate(st, 0.0, 5).amps, st.amps)


def test_propagate_unreachable_tolerance(golden, pot_zero):
    st = initial_state(pot_zero, golden, [0.0])
    with pytest.raises(PropagationError):
        propagate(st, 50.0, 1, tol=1e-14, max_order=10)


def test_l2_conservation_over_100_units(golden):
    pot = harper(0.1)
    st = initial_state(pot, golden, [0.0])
    rec = run_evolution(st, 100.0, 5.0)
    assert abs(rec.l2[-1] - rec.l2[0]) <= 1e-9


def test_window_growth_when_not_pregrown(golden, pot_zero):
    st = initial_state(pot_zero, golden, [0.0], margin=8)
    log = []
    out = propagate(st, 1.0, 12, tol=1e-12, growth_log=log)
    assert len(log) >= 1
    assert out.n_hi - out.n_lo > 16
    assert abs(l2_norm(out) - 1.0) < 1e-9


def test_diffusion_stable_under_guard_doubling(golden):
    pot = harper(0.05)
    st = initial_state(pot, golden, [0.0], margin=16)
    a = run_evolution(st, 20.0, 5.0).diffusion[-1]
    st2 = initial_state(pot, golden, [0.0], margin=16)
    st2 = st2.grown(60, 60)  # doubled guard margin on top of the pregrow
    b = run_evolution(st2, 20.0, 5.0).diffusion[-1]
    assert abs(a - b) < 1e-6


def _record_from(times, diff, l2=None):
    from qplab.model import golden_frequency, zero_potential
    times = np.asarray(times, float)
    return EvolutionRecord(times, np.ones_like(times) if l2 is None else l2,
                           np.asarray(diff, float), np.zeros(1),
                           zero_potential(), golden_frequency())


def test_fit_slope_exact_line():
    t = np.linspace(0, 10, 41)
    slope, err = fit_slope(_record_from(t, 1.5 * t + 0.3))
    assert slope == pytest.approx(1.5, abs=1e-12)
    assert err == pytest.approx(0.0, abs=1e-10)


def test_fit_slope_constant_record():
    t = np.linspace(0, 10, 41)
    slope, _ = fit_slope(_record_from(t, np.full_like(t, 2.0)))
    assert slope == pytest.approx(0.0, abs=1e-12)


def test_fit_slope_needs_samples():
    t = np.linspace(0, 10, 12)
    with pytest.raises(ValueError):
        fit_slope(_record_from(t, t), t_min_fraction=0.9)


def test_free_run_slope_and_bound(golden, pot_zero):
    st = initial_state(pot_zero, golden, [0.0])
    rec = run_evolution(st, 30.0, 0.5)
    slope, _ = fit_slope(rec, 0.5)
    assert slope == pytest.approx(np.sqrt(2.0), rel=1e-2)
    assert check_ballistic_bound(rec) <= 0.0


def test_ballistic_bound_t0_only(golden, pot_zero):
    st = initial_state(pot_zero, golden, [0.0])
    rec = EvolutionRecord(np.array([0.0]), np.array([1.0]), np.array([0.0]),
                          np.zeros(1), pot_zero, golden)
    assert check_ballistic_bound(rec) == 0.0


def test_ballistic_bound_harper(golden):
    st = initial_state(harper(0.05), golden, [0.0])
    rec = run_evolution(st, 30.0, 1.0)
    assert check_ballistic_bound(rec) <= 1e-6


def test_record_validation(golden, pot_zero):
    with pytest.raises(ValueError):
        EvolutionRecord(np.array([0.0, 0.0]), np.ones(2), np.ones(2),
                        np.zeros(1), pot_zero, golden)
    with pytest.raises(ValueError):
        EvolutionRecord(np.array([0.0, 1.0]), np.ones(3), np.ones(2),
                        np.zeros(1), pot_zero, golden)
