"""Finite-truncation spectral toolkit for the quasi-periodic operator.

Dirichlet boxes of the Hamiltonian are symmetric tridiagonal matrices with
off-diagonals -1 and diagonal V(theta + n*omega).  From their eigenvalues
this module builds the integrated density of states, the Thouless-formula
residual L(E) - int ln|E'-E| dk(E'), gap detection with the <l, omega>/2
labelling, half-line m-functions (Herglotz), the Borel-transform
combination, the free-operator generalized eigenvectors, and the phase
test <q(t), v_k> = e^{-i E_k t} <q(0), v_k> tying spectral data to the
propagator.

The spectral measure itself is only ever represented through eigenvalue
staircases of truncations; boundary-condition sensitivity is O(1/N) and
absorbed in tolerances.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import eigh_tridiagonal, eigvalsh_tridiagonal

from .model import Frequency, Phase, PotentialSpec, dist_to_pi_lattice, hull_sequence
from .evolve import WaveState, propagate

__all__ = [
    "TruncatedOperator",
    "IdsCurve",
    "GapRecord",
    "MFunctionError",
    "truncated_operator",
    "eigen_spectrum",
    "theta_sample_grid",
    "ids",
    "ids_curve",
    "thouless_residual",
    "gap_detect_and_label",
    "m_function",
    "borel_transform",
    "free_classical_transform",
    "eigenbasis_phase_check",
]


class MFunctionError(RuntimeError):
    """Half-line recursion failed to converge across depths."""


@dataclass(frozen=True)
class TruncatedOperator:
    """H restricted to the window [n_lo, n_lo+N-1] with Dirichlet ends."""

    diag: np.ndarray
    n_lo: int
    pot: PotentialSpec
    freq: Frequency
    theta: np.ndarray

    @property
    def size(self) -> int:
        return self.diag.size

    @property
    def n_hi(self) -> int:
        return self.n_lo + self.size - 1

    def dense(self) -> np.ndarray:
        H = np.diag(self.diag)
        off = -np.ones(self.size - 1)
        H += np.diag(off, 1) + np.diag(off, -1)
        return H


def truncated_operator(pot: PotentialSpec, freq: Frequency, theta, N: int,
                       n_lo: int | None = None) -> TruncatedOperator:
    if N < 1:
        raise ValueError("N must be >= 1")
    th = theta.theta if isinstance(theta, Phase) else np.atleast_1d(np.asarray(theta, float))
    if n_lo is None:
        n_lo = -(N // 2)
    if pot.is_zero():
        diag = np.zeros(N)
    else:
        diag = hull_sequence(pot, freq, th, n_lo, n_lo + N - 1)
    return TruncatedOperator(diag, int(n_lo), pot, freq, th)


def eigen_spectrum(op: TruncatedOperator, vectors: bool = False):
    """All eigenvalues (ascending), optionally with orthonormal eigenvectors."""
    if op.size == 1:
        vals = op.diag.copy()
        return (vals, np.ones((1, 1))) if vectors else vals
    off = -np.ones(op.size - 1)
    if vectors:
        return eigh_tridiagonal(op.diag, off)
    return eigvalsh_tridiagonal(op.diag, off)


def theta_sample_grid(freq: Frequency, theta0, m: int) -> np.ndarray:
    """m phases for averaging: uniform grid (d=1) or Kronecker sequence (d>1)."""
    th0 = theta0.theta if isinstance(theta0, Phase) else np.atleast_1d(np.asarray(theta0, float))
    j = np.arange(m)[:, None]
    if freq.dim == 1:
        return th0[None, :] + 2.0 * np.pi * j / m
    alpha = np.array([np.sqrt(p) % 1.0 for p in (2, 3, 5, 7, 11, 13)[: freq.dim]])
    return th0[None, :] + 2.0 * np.pi * ((j * alpha) % 1.0)


def _eig_samples(pot, freq, theta, N, theta_samples):
    thetas = theta_sample_grid(freq, theta, theta_samples)
    allvals = [eigen_spectrum(truncated_operator(pot, freq, th, N)) for th in thetas]
    return np.sort(np.concatenate(allvals))


@dataclass(frozen=True)
class IdsCurve:
    """k(E) on a grid, averaged over phases; eig_samples holds the staircase."""

    E: np.ndarray
    k: np.ndarray
    N: int
    theta_count: int
    eig_samples: np.ndarray = field(repr=False, default=None)
    pot: PotentialSpec | None = None
    freq: Frequency | None = None
    theta0: np.ndarray | None = None

    def __post_init__(self):
        if np.any(np.diff(self.k) < -1e-12):
            raise ValueError("IDS values must be non-decreasing")


def ids(E: float, pot: PotentialSpec, freq: Frequency, N: int,
        theta_samples: int = 1, theta0=None) -> float:
    """theta-averaged eigenvalue counting: mean of #{eig <= E} / N."""
    th0 = np.zeros(freq.dim) if theta0 is None else theta0
    samples = _eig_samples(pot, freq, th0, N, theta_samples)
    return float(np.searchsorted(samples, E, side="right") / samples.size)


def ids_curve(E_grid, pot: PotentialSpec, freq: Frequency, N: int,
              theta_samples: int = 1, theta0=None) -> IdsCurve:
    E = np.asarray(E_grid, dtype=float)
    th0 = np.zeros(freq.dim) if theta0 is None else np.atleast_1d(np.asarray(theta0, float))
    samples = _eig_samples(pot, freq, th0, N, theta_samples)
    k = np.searchsorted(samples, E, side="right") / samples.size
    return IdsCurve(E, k, N, theta_samples, samples, pot, freq, th0)


def thouless_residual(E: float, curve: IdsCurve, lyap: float) -> float:
    """|L(E) - sum of ln|E_i - E| over the eigenvalue staircase|.

    The log singularity is summed nearest-first in symmetric pairs around
    E, which keeps the partial sums balanced; an eigenvalue within 1e-10
    of E makes the quadrature meaningless and raises.
    """
    eigs = curve.eig_samples
    if eigs is None:
        raise ValueError("curve carries no eigenvalue staircase")
    dist = np.abs(eigs - E)
    if np.min(dist) < 1e-10:
        raise ArithmeticError(f"eigenvalue within 1e-10 of E={E}; ill-conditioned")
    below = np.sort(dist[eigs < E])
    above = np.sort(dist[eigs >= E])
    npair = min(below.size, above.size)
    total = 0.0
    if npair:
        total += np.sum(np.log(below[:npair] * above[:npair]))
    total += np.sum(np.log(below[npair:])) + np.sum(np.log(above[npair:]))
    return float(abs(lyap - total / eigs.size))


@dataclass(frozen=True)
class GapRecord:
    """IDS plateau (E1, E2) with its integer label and bracket residual."""

    E1: float
    E2: float
    label: np.ndarray
    residual: float
    rho_gap: float


def gap_detect_and_label(curve: IdsCurve, rho_grid, freq: Frequency,
                         l_max: int = 3, plateau_tol: float | None = None):
    """Maximal flat IDS stretches free of bulk eigenvalues, labelled by the
    best l with dist(rho_gap - <l,omega>/2, pi*Z) minimal over |l|_inf <= l_max.

    Dirichlet boxes shed edge-localized eigenvalues into true gaps; a
    candidate plateau is accepted when every staircase eigenvalue inside it
    belongs to a boundary-localized eigenvector (rejected otherwise).
    """
    rho = np.asarray(rho_grid, dtype=float)
    if rho.size != curve.E.size:
        raise ValueError("rho grid must align with the IDS grid")
    tol = 0.5 / curve.N if plateau_tol is None else plateau_tol
    eigs = curve.eig_samples
    flat = np.diff(curve.k) <= tol
    records = []
    i = 0
    while i < flat.size:
        if not flat[i]:
            i += 1
            continue
        j = i
        while j + 1 < flat.size and flat[j + 1]:
            j += 1
        E1, E2 = float(curve.E[i]), float(curve.E[j + 1])
        inside = eigs[(eigs > E1) & (eigs < E2)] if eigs is not None else np.array([])
        if inside.size == 0 or _all_edge_states(curve, E1, E2):
            rho_gap = float(np.mean(rho[i:j + 2]))
            label, residual = _best_label(rho_gap, freq, l_max)
            records.append(GapRecord(E1, E2, label, residual, rho_gap))
        i = j + 1
    return records


def _all_edge_states(curve: IdsCurve, E1: float, E2: float) -> bool:
    """True when every box eigenvalue in (E1, E2) is boundary-localized."""
    if curve.pot is None:
        return False
    thetas = theta_sample_grid(curve.freq, curve.theta0, curve.theta_count)
    zone = max(8, curve.N // 20)
    for th in thetas:
        op = truncated_operator(curve.pot, curve.freq, th, curve.N)
        off = -np.ones(op.size - 1)
        w, v = eigh_tridiagonal(op.diag, off, select="v",
                                select_range=(E1 + 1e-12, E2 - 1e-12))
        for col in range(w.size):
            mass = (np.sum(v[:zone, col] ** 2) + np.sum(v[-zone:, col] ** 2))
            if mass < 0.5:
                return False
    return True


def _best_label(rho_gap: float, freq: Frequency, l_max: int):
    import itertools

    best = (None, np.inf)
    for l in itertools.product(range(-l_max, l_max + 1), repeat=freq.dim):
        r = float(dist_to_pi_lattice(rho_gap - np.dot(l, freq.omega) / 2.0))
        if r < best[1]:
            best = (np.array(l, dtype=int), r)
    return best


def m_function(z: complex, side: int, pot: PotentialSpec, freq: Frequency,
               theta, depth: int = 400, conv_tol: float = 3e-8) -> complex:
    """Half-line m-function m^+ or m^- (side=+1/-1) by backward recursion.

    Computed in the (-1)^n gauge (+Laplacian), in which both m-functions
    are Herglotz; the backward recursion from a Dirichlet cut at distance
    `depth` converges geometrically for Im z > 0 and the result is checked
    against the half-depth value.
    """
    if np.imag(z) <= 0:
        raise ValueError("m_function requires Im z > 0")
    if depth < 100:
        raise ValueError("depth must be >= 100")
    if side not in (+1, -1):
        raise ValueError("side must be +1 or -1")
    m_half = _m_recursion(z, side, pot, freq, theta, depth // 2)
    m_full = _m_recursion(z, side, pot, freq, theta, depth)
    if abs(m_full - m_half) > conv_tol * max(1.0, abs(m_full)):
        raise MFunctionError(
            f"m-function not converged at depth {depth}: |diff|={abs(m_full - m_half):.3g}"
        )
    return m_full


def _m_recursion(z, side, pot, freq, theta, depth):
    th = theta.theta if isinstance(theta, Phase) else np.atleast_1d(np.asarray(theta, float))
    if side == +1:
        diag = (np.zeros(depth + 1) if pot.is_zero()
                else hull_sequence(pot, freq, th, 0, depth))
    else:
        diag = (np.zeros(depth + 1) if pot.is_zero()
                else hull_sequence(pot, freq, th, -depth, 0)[::-1])
    # gauge n -> (-1)^n flips the Laplacian sign: recurse u_{k-1} = (z-V_k) u_k - u_{k+1}
    u_next = 0.0 + 0.0j
    u_cur = 1.0 + 0.0j
    for k in range(depth, 0, -1):
        u_prev = (z - diag[k]) * u_cur - u_next
        u_next, u_cur = u_cur, u_prev
        scale = abs(u_cur)
        if scale > 1e120:
            u_cur /= scale
            u_next /= scale
    # u_cur = u_0, u_next = u_{+-1}
    if u_cur == 0:
        raise MFunctionError("vanishing u_0 in half-line recursion")
    return -u_next / u_cur


def borel_transform(z: complex, m_plus: complex, m_minus: complex) -> complex:
    """(m+ m- - 1)/(m+ + m-), the Herglotz combination of the m-functions."""
    den = m_plus + m_minus
    if abs(den) < 1e-12 * max(1.0, abs(m_plus), abs(m_minus)):
        raise ArithmeticError("m+ + m- vanishes; Borel transform undefined here")
    return (m_plus * m_minus - 1.0) / den


def free_classical_transform(E: float, n: int):
    """Free generalized eigenvectors u_n = sin(n xi)/sin(xi),
    v_n = -sin((n-1) xi)/sin(xi), xi = arccos(-E/2); |E| < 2 only."""
    if not -2.0 < E < 2.0:
        raise ValueError("classical transform defined on -2 < E < 2 only")
    xi = np.arccos(-E / 2.0)
    s = np.sin(xi)
    return float(np.sin(n * xi) / s), float(-np.sin((n - 1) * xi) / s)


def eigenbasis_phase_check(op: TruncatedOperator, eigenpairs, q0, t: float,
                           tol: float = 1e-12) -> float:
    """max_k |<q(t), v_k> - e^{-i E_k t} <q(0), v_k>| on the operator's window.

    q(t) comes from the Chebyshev propagator on the same fixed window, so
    this cross-validates the propagator against the eigenbasis phases.
    """
    evals, evecs = eigenpairs
    q0 = np.asarray(q0, dtype=complex)
    if q0.size != op.size:
        raise ValueError("q0 must live on the operator window")
    state = WaveState(op.n_lo, op.n_hi, q0, 0.0, op.pot, op.freq, op.theta)
    out = propagate(state, t, 1, tol=tol, grow=False) if t > 0 else state
    c0 = evecs.T @ q0
    ct = evecs.T @ out.amps
    return float(np.max(np.abs(ct - np.exp(-1j * evals * t) * c0)))
