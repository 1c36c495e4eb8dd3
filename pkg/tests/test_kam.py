import numpy as np
import pytest

from qplab.cocycle import rotation_number
from qplab.kam import (AmbiguousResonanceError, KamError, NearParabolicError,
                       ResonanceError, TrigPolyMatrix, beta_coefficients,
                       bloch_wave, detect_resonance, eig_matrix, eigen_angle,
                       homological_solve, initial_kam_state, kam_step,
                       reduce_cocycle, renormalize)
from qplab.model import Frequency, golden_frequency, harper, hull_sequence, zero_potential

LAM = 1e-4
GRID_64 = np.arange(64) * (2 * np.pi / 64)


def bracket(freq, k):
    return float(np.dot(np.atleast_1d(k), freq.omega) / 2.0) % np.pi


@pytest.fixture(scope="module")
def pot_tiny():
    return harper(LAM)


# nonresonant energies: xi0 away from every small bracket
def nonresonant_energies(freq, count=10, margin=0.15, kscan=3):
    out = []
    for E in np.linspace(-1.8, 1.8, 73):
        xi = np.arccos(-E / 2.0)
        dists = []
        for k in range(-kscan, kscan + 1):
            if k == 0:
                continue
            d = abs(xi - bracket(freq, k))
            dists.append(min(d % np.pi, np.pi - d % np.pi))
        if min(dists) > margin:
            out.append(float(E))
        if len(out) == count:
            break
    assert len(out) == count
    return out


# -- eigen_angle / eig_matrix --------------------------------------------------

def test_eigen_angle_cases():
    kind, a = eigen_angle(np.array([[0.0, -1.0], [1.0, 0.0]]))
    assert kind == "elliptic" and a == pytest.approx(np.pi / 2)
    kind, a = eigen_angle(np.array([[-3.0, -1.0], [1.0, 0.0]]))
    assert kind == "hyperbolic" and a == pytest.approx(np.log((3 + np.sqrt(5)) / 2))
    kind, a = eigen_angle(np.array([[1.0, 1.0], [0.0, 1.0]]))
    assert kind == "parabolic" and a == 0.0
    kind, a = eigen_angle(np.array([[-1.0, 1.0], [0.0, -1.0]]))
    assert kind == "parabolic" and a == pytest.approx(np.pi)


def test_eig_matrix_reconstructs():
    A = np.array([[-0.7, -1.0], [1.0, 0.0]])
    C, Cinv, cond = eig_matrix(A)
    _, alpha = eigen_angle(A)
    D = np.diag([np.exp(1j * alpha), np.exp(-1j * alpha)])
    assert np.max(np.abs(C @ D @ Cinv - A)) < 1e-12
    assert cond >= 1.0
    with pytest.raises(NearParabolicError):
        eig_matrix(np.array([[-3.0, -1.0], [1.0, 0.0]]))


# -- resonance detection --------------------------------------------------------

def test_detect_resonance_exact_hit(golden):
    xi = bracket(golden, 2)
    k = detect_resonance(xi, 5.0, 1e-300, golden)
    assert k is not None and abs(k[0]) == 2


def test_detect_resonance_far(golden):
    # brute-force scan oracle: certify the distance floor first
    xi = 1.05
    dists = [abs((xi - bracket(golden, k)) % np.pi) for k in range(-5, 6) if k]
    dists = [min(d, np.pi - d) for d in dists]
    assert min(dists) > 0.12
    # eps small enough that thresholds ~ e^{-3.5} < min distance
    assert detect_resonance(xi, 5.0, np.exp(-700), golden) is None


def test_detect_resonance_midway_outside_threshold(golden):
    xi = bracket(golden, 1) + 0.05
    assert detect_resonance(xi, 5.0, np.exp(-1400), golden, c=0.5) is None


def test_detect_resonance_threshold_cap(golden):
    xi = bracket(golden, 1) + 0.05
    # nominal eps^sigma ~ 1 would fire; the cap keeps the test meaningful
    assert detect_resonance(xi, 5.0, 1e-4, golden, threshold_cap=0.01) is None
    k = detect_resonance(xi, 5.0, 1e-4, golden, threshold_cap=0.1)
    assert k is not None and k[0] == 1


def test_detect_resonance_ambiguity():
    fr = Frequency(np.array([0.1]), gamma=1e-4, tau=2.0)
    # brackets 0.05 and 0.10 both within the e^{-3}-scale threshold of 0.09
    with pytest.raises(AmbiguousResonanceError):
        detect_resonance(0.09, 2.0, np.exp(-600), fr)


def test_detect_resonance_c_range(golden):
    with pytest.raises(ValueError):
        detect_resonance(0.5, 5.0, 1e-4, golden, c=0.2)


# -- renormalization ------------------------------------------------------------

def test_renormalize_shifts_angle_exactly(golden, pot_tiny):
    st = initial_kam_state(0.7247, pot_tiny, golden)   # xi0 near <1>
    new = renormalize(st, np.array([1]))
    s = st.xi_j - new.xi_j
    assert abs((s - golden.omega[0] / 2.0) % np.pi) < 1e-12 or \
           abs((s - golden.omega[0] / 2.0) % np.pi - np.pi) < 1e-12
    _, a_new = eigen_angle(new.A_const)
    assert min(abs(a_new - abs(new.xi_j)), abs(np.pi - a_new - abs(new.xi_j))) < 1e-8
    assert new.history and new.history[0][0] == 1
    # remainder norm unchanged within 10x
    assert new.measured_norm <= 10 * st.measured_norm


def test_renormalize_zero_bracket_keeps_angle_class():
    # omega = 2 pi: <1> = pi = 0 mod pi, so the angle class is unchanged
    fr = Frequency(np.array([2 * np.pi]), gamma=1e-6, tau=1.0)
    st = initial_kam_state(0.6, zero_potential(), fr)
    new = renormalize(st, np.array([1]))
    _, a_old = eigen_angle(st.A_const)
    _, a_new = eigen_angle(new.A_const)
    assert min(abs(a_new - a_old), abs(np.pi - a_new - a_old)) < 1e-10


def test_renormalize_resonant_sample(golden, pot_tiny):
    br = golden.omega[0] / 2.0 % np.pi
    E = -2 * np.cos(br + 2e-3)
    st = initial_kam_state(E, pot_tiny, golden)
    new = renormalize(st, np.array([1]))
    assert abs(new.xi_j) <= 2.0 * st.eps_j ** st.sigma   # mirrors |xi_{j+1}| < (3/2) eps^sigma
    assert abs(new.xi_j) == pytest.approx(2e-3, abs=1e-9)


# -- homological equation --------------------------------------------------------

def test_homological_zero_remainder(golden):
    A = np.array([[-0.5, -1.0], [1.0, 0.0]])
    F = TrigPolyMatrix.constant(np.zeros((2, 2)), 1, 64)
    Y, worst = homological_solve(A, F, golden, 10, 1e-6)
    assert Y.sup_norm() == 0.0


def test_homological_equation_exact(golden):
    """Direct check of Y(.+w) A - A Y(.) + T_N F = 0 on the grid."""
    A = np.array([[-0.5, -1.0], [1.0, 0.0]])
    amp = 1e-3
    vals = np.zeros((2, 2, 64), complex)
    vals[0, 0] = amp * np.cos(2 * GRID_64)      # theta-mode +-1 (phi-mode +-2)
    F = TrigPolyMatrix(vals, 1)
    Y, worst = homological_solve(A, F, golden, 10, 1e-6)
    lhs = Y.shifted(golden.omega / 2.0) @ TrigPolyMatrix.constant(A, 1, 64)
    rhs = TrigPolyMatrix.constant(A, 1, 64) @ Y
    resid = (lhs - rhs + F).sup_norm()
    assert resid < 1e-15
    # Y touches only the modes F carries
    assert Y.bandwidth(abs_tol=1e-18) == 2


def test_homological_single_mode_contraction(golden):
    """Conjugating with Id - Y drops the remainder to O(|F|^2 / divisor^2)."""
    A = np.array([[-0.5, -1.0], [1.0, 0.0]])
    amp = 1e-3
    vals = np.zeros((2, 2, 64), complex)
    vals[0, 0] = amp * np.cos(2 * GRID_64)
    F = TrigPolyMatrix(vals, 1)
    Y, worst = homological_solve(A, F, golden, 10, 1e-6)
    Z = TrigPolyMatrix.identity(1, 64) - Y
    M = TrigPolyMatrix.constant(A, 1, 64) + F
    G = Z.shifted(golden.omega / 2.0).inv() @ M @ Z
    Aconst = G.mean().real
    resid = (G - TrigPolyMatrix.constant(Aconst, 1, 64)).sup_norm()
    assert resid <= 10 * amp ** 2 / worst ** 2


def test_homological_worst_divisor_brute_force(golden):
    """alpha = pi/2, all modes |k| <= 20 populated: worst divisor matches a scan."""
    A = np.array([[0.0, -1.0], [1.0, 0.0]])
    rng = np.random.default_rng(7)
    m = 128
    grid = np.arange(m) * (2 * np.pi / m)
    vals = np.zeros((2, 2, m), complex)
    for k in range(1, 21):
        c = 1e-6 * rng.normal(size=(2, 2))
        for i in range(2):
            for j in range(2):
                vals[i, j] += c[i, j] * np.cos(2 * k * grid)
    F = TrigPolyMatrix(vals, 1)
    Y, worst = homological_solve(A, F, golden, 40, 1e-12)
    alpha = np.pi / 2
    best = np.inf
    for k in range(-20, 21):
        if k == 0:
            continue
        tw = np.exp(1j * k * golden.omega[0])
        for shift in (0.0, 2 * alpha, -2 * alpha):
            best = min(best, abs(tw * np.exp(-1j * shift) - 1.0))
    assert worst == pytest.approx(best, rel=1e-12)


def test_homological_divisor_floor_raises(golden):
    # angle tuned so that 2*alpha ~ <2, omega> mod 2pi: divisor nearly zero
    target = (2 * golden.omega[0] / 2.0) % np.pi
    A_res = np.array([[-2 * np.cos(target), -1.0], [1.0, 0.0]])
    vals = np.zeros((2, 2, 64), complex)
    vals[0, 0] = 1e-3 * np.cos(4 * GRID_64)     # theta-mode 2
    F = TrigPolyMatrix(vals, 1)
    with pytest.raises(ResonanceError) as err:
        homological_solve(A_res, F, golden, 10, 1e-3)
    assert abs(err.value.k[0]) == 2


# -- full steps -----------------------------------------------------------------

def test_kam_step_free_is_identity(golden, pot_zero):
    st = initial_kam_state(0.5, pot_zero, golden)
    new = kam_step(st)
    assert new.measured_norm == 0.0
    assert (new.Z_accum - TrigPolyMatrix.identity(1, 256)).sup_norm() < 1e-12


def test_kam_step_contracts(golden, pot_tiny):
    for E in nonresonant_energies(golden, count=3):
        st = initial_kam_state(E, pot_tiny, golden)
        new = kam_step(st)
        assert new.measured_norm <= LAM ** 1.3
        assert new.accepted and not new.history


def test_kam_step_contraction_exponent(golden, pot_tiny):
    st = initial_kam_state(0.3, pot_tiny, golden)
    s1 = kam_step(st)
    assert s1.measured_norm <= st.measured_norm ** 1.3
    s2 = kam_step(s1)
    assert s2.measured_norm <= s1.measured_norm ** 1.3


def test_kam_step_resonant_renormalizes(golden, pot_tiny):
    br = golden.omega[0] / 2.0 % np.pi
    E = -2 * np.cos(br + 2e-3)
    st = initial_kam_state(E, pot_tiny, golden)
    new = kam_step(st)
    assert len(new.history) == 1 and abs(new.history[0][0]) == 1
    assert abs(new.xi_j) <= 2.0 * st.eps_j ** st.sigma


def test_kam_state_sequences(golden, pot_tiny):
    st = initial_kam_state(0.3, pot_tiny, golden)
    s1 = kam_step(st)
    assert s1.eps_j == pytest.approx(st.eps_j ** (1 + st.sigma))
    assert s1.N_j == pytest.approx(16 * st.sigma * abs(np.log(s1.eps_j)))
    assert s1.measured_norm <= s1.eps_j  # marked accepted
    assert s1.accepted


# -- reduce and its consumers -----------------------------------------------------

def test_reduce_free(golden, pot_zero):
    pair = reduce_cocycle(1.0, pot_zero, golden, jmax=2)
    assert pair.residual < 1e-12
    assert np.max(np.abs(np.asarray(pair.B) - [[-1.0, -1.0], [1.0, 0.0]])) < 1e-12
    assert (pair.Z - TrigPolyMatrix.identity(1, 256)).sup_norm() < 1e-12
    assert pair.rho_rep == pytest.approx(np.arccos(-0.5), abs=1e-12)


def test_reduce_nonresonant_batch(golden, pot_tiny):
    for E in nonresonant_energies(golden, count=4):
        pair = reduce_cocycle(E, pot_tiny, golden, jmax=3)
        assert pair.converged
        assert pair.residual <= 10 * LAM ** 2
        rho_num = rotation_number(E, pot_tiny, golden, [0.0], 100_000)
        assert abs(pair.rho_rep - rho_num) <= 1e-4
        assert pair.history == [] and pair.level == 0


def test_reduce_resonant_sample(golden, pot_tiny):
    br = golden.omega[0] / 2.0 % np.pi
    E = -2 * np.cos(br + 2e-3)
    pair = reduce_cocycle(E, pot_tiny, golden, jmax=3)
    assert pair.history and len(pair.history) == 1
    assert abs(pair.xi) <= 2.0 * pot_tiny.eps0 ** (1.0 / 200.0)
    assert pair.level == 1
    assert pair.converged and pair.residual <= 10 * LAM ** 2


def test_reduce_hyperbolic_reported(golden, pot_tiny):
    pair = reduce_cocycle(3.0, pot_tiny, golden, jmax=2)
    assert pair.kind == "hyperbolic" and not pair.converged


def test_reduce_conjugation_self_consistency(golden, pot_tiny):
    pair = reduce_cocycle(0.3, pot_tiny, golden, jmax=3)
    recomputed = pair.conjugation_residual(pot_tiny, 0.3)
    assert recomputed == pytest.approx(pair.residual, rel=1e-9)
    det = pair.Z.det()
    assert np.max(np.abs(det - 1.0)) < 1e-6


def test_reduce_rejects_large_jmax(golden, pot_tiny):
    with pytest.raises(ValueError):
        reduce_cocycle(0.3, pot_tiny, golden, jmax=7)


def test_bloch_wave_free_plane_wave(golden, pot_zero):
    pair = reduce_cocycle(0.0, pot_zero, golden, jmax=1)
    window = np.arange(-10, 11)
    psi = bloch_wave(pair, [0.0], window)
    resid = np.abs(-psi[2:] - psi[:-2] - 0.0 * psi[1:-1])
    assert np.max(resid) < 1e-12
    # plane wave at rho = pi/2: |psi_n| constant
    assert np.allclose(np.abs(psi), np.abs(psi[0]))


def test_bloch_wave_harper_eigen_residual(golden, pot_tiny):
    E = 0.3
    pair = reduce_cocycle(E, pot_tiny, golden, jmax=3)
    theta = np.array([0.37])
    window = np.arange(-40, 41)
    psi = bloch_wave(pair, theta, window)
    V = hull_sequence(pot_tiny, golden, theta, -40, 40)
    resid = np.max(np.abs(-psi[2:] - psi[:-2] + V[1:-1] * psi[1:-1] - E * psi[1:-1]))
    floor = 1e-11  # grid evaluation noise dominates once the residual is ~1e-15
    assert resid <= 10 * pair.residual + floor


def test_bloch_wave_covariance(golden, pot_tiny):
    """psi_{n+1}(theta) = e^{i rho} psi_n(theta + omega)."""
    pair = reduce_cocycle(-0.5, pot_tiny, golden, jmax=2)
    theta = np.array([1.1])
    win = np.arange(0, 5)
    a = bloch_wave(pair, theta, win + 1)
    b = bloch_wave(pair, theta + golden.omega, win)
    assert np.max(np.abs(a - np.exp(1j * pair.rho_rep) * b)) < 1e-9


def test_bloch_wave_rejects_band_edge(golden, pot_zero):
    pair = reduce_cocycle(-2.0, pot_zero, golden, jmax=1)  # parabolic edge
    assert pair.kind == "parabolic"
    with pytest.raises(KamError):
        bloch_wave(pair, [0.0], np.arange(-2, 3))


def test_beta_free_delta(golden, pot_zero):
    pair = reduce_cocycle(0.7, pot_zero, golden, jmax=1)
    for n in (-3, 0, 2):
        bm, bn, bp = beta_coefficients(pair, [0.9], n)
        assert bn == pytest.approx(1.0, abs=1e-12)
        assert abs(bm) < 1e-12 and abs(bp) < 1e-12


def test_beta_harper_close_to_delta(golden, pot_tiny):
    pair = reduce_cocycle(0.3, pot_tiny, golden, jmax=3)
    for n in (-5, 0, 1, 7):
        bm, bn, bp = beta_coefficients(pair, [0.37], n)
        assert abs(bn - 1.0) <= LAM ** 0.25
        assert abs(bm) <= LAM ** 0.25 and abs(bp) <= LAM ** 0.25


def test_beta_symmetry_at_origin(golden, pot_tiny):
    pair = reduce_cocycle(-0.8, pot_tiny, golden, jmax=3)
    for th in (0.0, 0.7, 2.9):
        bm, _, bp = beta_coefficients(pair, [th], 0)
        assert bm == bp  # beta_{0,1} == beta_{0,-1} identically


def test_beta_fourier_identity(golden, pot_tiny):
    """e^{i n rho} f_n conj(f_0) must expand as sum_nD beta e^{i nD rho}."""
    pair = reduce_cocycle(0.3, pot_tiny, golden, jmax=3)
    theta = np.array([0.37])
    rho = pair.rho_rep
    n = 4
    psi = bloch_wave(pair, theta, np.array([n, 0]))
    lhs = psi[0] * np.conj(psi[1])
    bm, bn, bp = beta_coefficients(pair, theta, n)
    rhs = (bm * np.exp(1j * (n - 1) * rho) + bn * np.exp(1j * n * rho)
           + bp * np.exp(1j * (n + 1) * rho))
    assert abs(lhs - rhs) < 1e-12


# -- TrigPolyMatrix plumbing ------------------------------------------------------

def test_trigpoly_shift_exact(golden):
    vals = np.zeros((2, 2, 64), complex)
    vals[0, 1] = np.cos(3 * GRID_64) + 0.5 * np.sin(GRID_64)
    T = TrigPolyMatrix(vals, 1)
    delta = 0.613
    shifted = T.shifted(np.array([delta]))
    expect = np.cos(3 * (GRID_64 + delta)) + 0.5 * np.sin(GRID_64 + delta)
    assert np.max(np.abs(shifted.vals[0, 1] - expect)) < 1e-12


def test_trigpoly_matmul_inverse(golden):
    rng = np.random.default_rng(3)
    vals = rng.normal(size=(2, 2, 16)) + 0.0j
    vals[0, 0] += 3.0  # keep it invertible
    T = TrigPolyMatrix(vals, 1)
    prod = T @ T.inv()
    assert (prod - TrigPolyMatrix.identity(1, 16)).sup_norm() < 1e-12


def test_trigpoly_eval_matches_grid():
    vals = np.zeros((2, 2, 32), complex)
    grid = np.arange(32) * (2 * np.pi / 32)
    vals[1, 0] = np.sin(2 * grid)
    T = TrigPolyMatrix(vals, 1)
    got = T.eval_at([grid[5]])
    assert got[1, 0] == pytest.approx(vals[1, 0, 5], abs=1e-12)


def test_trigpoly_realized_guard():
    vals = np.full((2, 2, 8), 1j, dtype=complex)
    with pytest.raises(KamError):
        TrigPolyMatrix(vals, 1).realized(1e-12)
