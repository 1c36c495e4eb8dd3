"""Desk-scale KAM reducibility of the Schrodinger cocycle.

Starting from (A0(E), F0) with A0 elliptic and |F0| = O(eps0), each step
conjugates by Id + Y, where Y solves the homological equation

    Y(theta+omega) A - A Y(theta) = -T_N F(theta)

coefficientwise in the eigenbasis of A, then re-measures the remainder on
a theta grid.  When the fibered angle xi_j lands near a half-frequency
bracket <k> = <k,omega>/2 mod pi, the small divisors degenerate and the
step first renormalizes by

    H_{k,A}(theta) = C_A diag(e^{i<k,theta>/2}, e^{-i<k,theta>/2}) C_A^{-1},

which shifts the angle by <k> exactly.  After the last step an additional
constant-diagonalizing transformation moves the eigenvalues from
e^{+-i xi} to e^{+-i rho}, rho = xi + sum_l <k_l>, giving the reduced pair
(Z, B) from which Bloch waves and the beta coefficients of the spectral
transform are assembled.

All trigonometric-polynomial data lives on the doubled torus (2T)^d: the
working coordinate is phi = theta/2, so the bracket modes e^{i<k,theta>/2}
are integer modes in phi and FFTs between value and coefficient space are
exact.  Remainder norms come from the grid, never from the theory; the
contraction sequence eps_{j+1} = eps_j^{1+sigma}, N_j = 4^{j+1} sigma
|ln eps_j| (sigma = 1/200) is stored for bookkeeping, while the mode
cutoff and resonance thresholds are floored/capped so the scheme stays
meaningful at double-precision eps0 (the nominal eps^sigma is ~1 there).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .model import Frequency, Phase, PotentialSpec, dist_to_pi_lattice

__all__ = [
    "TrigPolyMatrix",
    "KamState",
    "ReducedPair",
    "KamError",
    "ResonanceError",
    "AmbiguousResonanceError",
    "NearParabolicError",
    "SIGMA",
    "eigen_angle",
    "eig_matrix",
    "detect_resonance",
    "renormalize",
    "homological_solve",
    "kam_step",
    "initial_kam_state",
    "reduce_cocycle",
    "bloch_wave",
    "beta_coefficients",
]

SIGMA = 1.0 / 200.0


class KamError(RuntimeError):
    pass


class ResonanceError(KamError):
    """Small divisor below the floor; carries the offending theta-mode k."""

    def __init__(self, k, divisor):
        self.k = np.atleast_1d(np.asarray(k, dtype=int))
        self.divisor = float(divisor)
        super().__init__(f"divisor {divisor:.3e} below floor at k={self.k.tolist()}")


class AmbiguousResonanceError(KamError):
    """Two resonance candidates: the Diophantine budget is violated."""

    def __init__(self, candidates):
        self.candidates = candidates
        super().__init__(f"multiple resonance candidates {candidates}; "
                         "Diophantine condition violated at this scale")


class NearParabolicError(KamError):
    pass


# ---------------------------------------------------------------------------
# trig-polynomial 2x2 matrices on the doubled torus


class TrigPolyMatrix:
    """2x2 matrix of trig polynomials on (2T)^d, sampled on a phi-grid.

    vals has shape (2, 2) + (m,)*d over the uniform grid of phi = theta/2
    in [0, 2pi)^d; Fourier modes in phi are integers (theta-modes k map to
    phi-modes 2k, brackets e^{i<k,theta>/2} to phi-modes k).
    """

    def __init__(self, vals: np.ndarray, dim: int):
        vals = np.asarray(vals)
        if vals.shape[:2] != (2, 2) or vals.ndim != 2 + dim:
            raise ValueError("vals must have shape (2,2)+grid")
        self.vals = vals.astype(complex)
        self.dim = dim

    # -- constructors ------------------------------------------------------
    @classmethod
    def constant(cls, mat, dim: int, m: int) -> "TrigPolyMatrix":
        grid = (m,) * dim
        vals = np.zeros((2, 2) + grid, complex)
        for i in range(2):
            for j in range(2):
                vals[i, j] = mat[i][j]
        return cls(vals, dim)

    @classmethod
    def identity(cls, dim: int, m: int) -> "TrigPolyMatrix":
        return cls.constant(np.eye(2), dim, m)

    @classmethod
    def from_potential(cls, pot: PotentialSpec, m: int) -> "TrigPolyMatrix":
        """F0(theta) = [[V(theta), 0], [0, 0]] sampled on the phi-grid."""
        axes = _phi_axes(pot.dim, m)
        v = np.zeros((m,) * pot.dim, complex)
        for k, c in pot.coeffs.items():
            phase = np.zeros((m,) * pot.dim)
            for a, ka in enumerate(k):
                phase = phase + 2.0 * ka * axes[a]   # theta = 2 phi
            v = v + c * np.exp(1j * phase)
        vals = np.zeros((2, 2) + (m,) * pot.dim, complex)
        vals[0, 0] = v
        return cls(vals, pot.dim)

    # -- basic algebra (pointwise on the grid) ------------------------------
    @property
    def grid_shape(self):
        return self.vals.shape[2:]

    def __matmul__(self, other: "TrigPolyMatrix") -> "TrigPolyMatrix":
        vals = np.einsum("ij...,jk...->ik...", self.vals, other.vals)
        return TrigPolyMatrix(vals, self.dim)

    def __add__(self, other):
        return TrigPolyMatrix(self.vals + other.vals, self.dim)

    def __sub__(self, other):
        return TrigPolyMatrix(self.vals - other.vals, self.dim)

    def det(self) -> np.ndarray:
        v = self.vals
        return v[0, 0] * v[1, 1] - v[0, 1] * v[1, 0]

    def inv(self) -> "TrigPolyMatrix":
        v = self.vals
        d = self.det()
        out = np.empty_like(v)
        out[0, 0] = v[1, 1] / d
        out[0, 1] = -v[0, 1] / d
        out[1, 0] = -v[1, 0] / d
        out[1, 1] = v[0, 0] / d
        return TrigPolyMatrix(out, self.dim)

    def mean(self) -> np.ndarray:
        axes = tuple(range(2, 2 + self.dim))
        return self.vals.mean(axis=axes)

    def sup_norm(self) -> float:
        """sup over the grid of the Frobenius norm of the 2x2 value."""
        fro = np.sqrt(np.sum(np.abs(self.vals) ** 2, axis=(0, 1)))
        return float(np.max(fro))

    def imag_norm(self) -> float:
        return float(np.max(np.abs(self.vals.imag)))

    def realized(self, tol: float = 1e-8) -> "TrigPolyMatrix":
        scale = max(np.max(np.abs(self.vals)), 1.0)
        if self.imag_norm() > tol * scale:
            raise KamError(f"matrix expected real; imag residue {self.imag_norm():.3e}")
        return TrigPolyMatrix(self.vals.real.astype(complex), self.dim)

    # -- Fourier side --------------------------------------------------------
    def coeffs(self) -> np.ndarray:
        axes = tuple(range(2, 2 + self.dim))
        return np.fft.fftn(self.vals, axes=axes) / np.prod(self.grid_shape)

    @classmethod
    def from_coeffs(cls, cf: np.ndarray, dim: int) -> "TrigPolyMatrix":
        axes = tuple(range(2, 2 + dim))
        vals = np.fft.ifftn(cf * np.prod(cf.shape[2:]), axes=axes)
        return cls(vals, dim)

    def mode_grids(self):
        return [np.fft.fftfreq(m, 1.0 / m).astype(int) for m in self.grid_shape]

    def bandwidth(self, rel_tol: float = 1e-15, abs_tol: float = 0.0) -> int:
        """Largest |mode|_inf carrying weight above max(rel_tol*sup, abs_tol)."""
        cf = self.coeffs()
        mags = np.max(np.abs(cf), axis=(0, 1))
        cut = max(rel_tol * max(np.max(mags), 1e-300), abs_tol)
        modes = self.mode_grids()
        best = 0
        idx = np.nonzero(mags > cut)
        for pt in zip(*idx):
            best = max(best, max(abs(int(modes[a][i])) for a, i in enumerate(pt)))
        return best

    def shifted(self, delta_phi) -> "TrigPolyMatrix":
        """F(phi + delta_phi) via the exact Fourier phase twist."""
        cf = self.coeffs()
        delta = np.atleast_1d(np.asarray(delta_phi, float))
        modes = self.mode_grids()
        phase = np.zeros(self.grid_shape)
        for a in range(self.dim):
            shape = [1] * self.dim
            shape[a] = -1
            phase = phase + modes[a].reshape(shape) * delta[a]
        cf = cf * np.exp(1j * phase)
        return TrigPolyMatrix.from_coeffs(cf, self.dim)

    def eval_at(self, phi) -> np.ndarray:
        """2x2 value at one point phi (exact trig-poly evaluation)."""
        return self.eval_batch(np.atleast_2d(np.asarray(phi, float)))[..., 0]

    def eval_batch(self, phis: np.ndarray) -> np.ndarray:
        """Values at rows of phis, shape (2, 2, npts)."""
        cf = self.coeffs()
        modes = self.mode_grids()
        npts = phis.shape[0]
        phase = np.zeros(self.grid_shape + (npts,))
        for a in range(self.dim):
            shape = [1] * self.dim + [1]
            shape[a] = -1
            phase = phase + modes[a].reshape(shape) * phis[:, a].reshape((1,) * self.dim + (-1,))
        basis = np.exp(1j * phase)
        axes = tuple(range(2, 2 + self.dim))
        return np.tensordot(cf, basis, axes=(axes, tuple(range(self.dim))))


def _phi_axes(dim: int, m: int):
    """Coordinate arrays of the phi-grid, broadcastable over (m,)*dim."""
    axis = np.arange(m) * (2.0 * np.pi / m)
    if dim == 1:
        return [axis]
    return list(np.meshgrid(*([axis] * dim), indexing="ij"))


def _bracket_mode(freq: Frequency, k) -> float:
    """<k, omega>/2 as a raw real number (no modular reduction)."""
    return float(np.dot(np.atleast_1d(k), freq.omega) / 2.0)


def _nearest_rep(value: float, target: float) -> float:
    """Representative of value mod pi nearest to target."""
    return value + np.pi * np.round((target - value) / np.pi)


# ---------------------------------------------------------------------------
# constant-matrix spectral helpers


def eigen_angle(A: np.ndarray, parabolic_tol: float = 1e-12):
    """Classify a unit-determinant matrix: ('elliptic', alpha in (0, pi)),
    ('parabolic', 0 or pi), or ('hyperbolic', log spectral radius)."""
    A = np.asarray(A, dtype=float)
    tr = A[0, 0] + A[1, 1]
    if abs(abs(tr) - 2.0) <= parabolic_tol:
        return "parabolic", 0.0 if tr > 0 else np.pi
    if abs(tr) < 2.0:
        return "elliptic", float(np.arccos(tr / 2.0))
    lam = abs(tr) / 2.0 + np.sqrt(tr * tr / 4.0 - 1.0)
    return "hyperbolic", float(np.log(lam))


def eig_matrix(A: np.ndarray):
    """Normalized eigenvector matrix C = [v, conj(v)] of an elliptic A,
    with A = C diag(e^{i a}, e^{-i a}) C^{-1}; returns (C, C^{-1}, cond)."""
    kind, alpha = eigen_angle(A)
    if kind != "elliptic":
        raise NearParabolicError(f"eig_matrix requires an elliptic matrix, got {kind}")
    mu = np.exp(1j * alpha)
    if abs(A[0, 1]) >= abs(A[1, 0]):
        v = np.array([A[0, 1], mu - A[0, 0]], dtype=complex)
    else:
        v = np.array([mu - A[1, 1], A[1, 0]], dtype=complex)
    nv = np.linalg.norm(v)
    if nv < 1e-300:
        raise NearParabolicError("degenerate eigenvector")
    v /= nv
    C = np.column_stack([v, v.conj()])
    det = C[0, 0] * C[1, 1] - C[0, 1] * C[1, 0]
    if abs(det) < 1e-300:
        raise NearParabolicError("eigenvector matrix is singular")
    Cinv = np.array([[C[1, 1], -C[0, 1]], [-C[1, 0], C[0, 0]]], complex) / det
    cond = np.linalg.norm(C, 2) * np.linalg.norm(Cinv, 2)
    return C, Cinv, float(cond)


# ---------------------------------------------------------------------------
# state and the four core operations


@dataclass
class KamState:
    """One level of the reducibility iteration."""

    j: int
    A_const: np.ndarray
    F: TrigPolyMatrix
    eps_j: float
    N_j: float
    xi_j: float                       # signed fibered angle
    history: list = field(default_factory=list)
    shifts: list = field(default_factory=list)   # signed bracket reps applied
    Z_accum: TrigPolyMatrix | None = None
    sigma: float = SIGMA
    freq: Frequency | None = None
    accepted: bool = True
    measured_norm: float = 0.0

    def eps_next(self) -> float:
        return self.eps_j ** (1.0 + self.sigma)

    @staticmethod
    def N_of(j: int, eps: float, sigma: float = SIGMA) -> float:
        return 4.0 ** (j + 1) * sigma * abs(np.log(eps))


def initial_kam_state(E: float, pot: PotentialSpec, freq: Frequency,
                      m: int | None = None) -> KamState:
    """Level-0 state (A0(E), F0) on a phi-grid of m points per dimension."""
    if m is None:
        m = 256 if pot.dim == 1 else 64
    A0 = np.array([[-E, -1.0], [1.0, 0.0]])
    F0 = TrigPolyMatrix.from_potential(pot, m)
    kind, alpha = eigen_angle(A0)
    xi = alpha if kind == "elliptic" else (0.0 if E < 0 else np.pi)
    eps0 = max(pot.eps0, 1e-300)
    return KamState(
        j=0, A_const=A0, F=F0, eps_j=eps0, N_j=KamState.N_of(0, eps0),
        xi_j=float(xi), history=[], shifts=[],
        Z_accum=TrigPolyMatrix.identity(pot.dim, m), freq=freq,
        measured_norm=F0.sup_norm(),
    )


def detect_resonance(xi_j: float, N_j: float, eps_j: float, freq: Frequency,
                     c: float = 1.0, sigma: float = SIGMA,
                     threshold_cap: float | None = None):
    """The unique theta-mode 0 < |k|_inf <= N_j with
    dist(xi_j - <k>, pi Z) < c eps_j^sigma / |k|^tau, or None.

    threshold_cap (radians) bounds the nominal eps^sigma scale, which is
    ~1 for any eps reachable in double precision; two candidates raise
    (the Diophantine budget cannot hold then).
    """
    if not 0.5 <= c <= 1.0:
        raise ValueError("c must lie in [1/2, 1]")
    import itertools

    kmax = int(np.floor(N_j))
    if kmax < 1:
        return None
    scale = c * eps_j ** sigma
    if threshold_cap is not None:
        scale = min(scale, threshold_cap)
    hits = []
    for k in itertools.product(range(-kmax, kmax + 1), repeat=freq.dim):
        knorm = max(abs(x) for x in k)
        if knorm == 0:
            continue
        gap = dist_to_pi_lattice(xi_j - _bracket_mode(freq, k))
        if gap < scale / knorm ** freq.tau:
            hits.append(np.array(k, dtype=int))
    if not hits:
        return None
    if len(hits) > 1:
        raise AmbiguousResonanceError([h.tolist() for h in hits])
    return hits[0]


def _bracket_matrix(C, Cinv, k, dim: int, m: int) -> TrigPolyMatrix:
    """H_{k,A}(theta) = C diag(e^{i<k,theta>/2}, e^{-i<k,theta>/2}) C^{-1}."""
    axes = _phi_axes(dim, m)
    phase = np.zeros((m,) * dim)
    for a, ka in enumerate(np.atleast_1d(k)):
        phase = phase + ka * axes[a]     # <k, theta>/2 = <k, phi>
    e = np.exp(1j * phase)
    vals = np.zeros((2, 2) + (m,) * dim, complex)
    # C diag(e, e^{-1}) Cinv, pointwise
    vals[0, 0] = C[0, 0] * Cinv[0, 0] * e + C[0, 1] * Cinv[1, 0] / e
    vals[0, 1] = C[0, 0] * Cinv[0, 1] * e + C[0, 1] * Cinv[1, 1] / e
    vals[1, 0] = C[1, 0] * Cinv[0, 0] * e + C[1, 1] * Cinv[1, 0] / e
    vals[1, 1] = C[1, 0] * Cinv[0, 1] * e + C[1, 1] * Cinv[1, 1] / e
    return TrigPolyMatrix(vals, dim).realized(1e-7)


def renormalize(state: KamState, k_j, cond_cap: float = 1e8) -> KamState:
    """Conjugate (A_j, F_j) by H_{k_j, A_j}: the eigen-angle drops by <k_j>
    exactly, the remainder norm may grow by at most the squared conditioning
    of the eigenbasis (aborts when nearly parabolic)."""
    A = state.A_const
    C, Cinv, cond = eig_matrix(A)
    if cond > cond_cap:
        raise NearParabolicError(
            f"eigenbasis conditioning {cond:.2e} exceeds {cond_cap:.0e}"
        )
    if state.xi_j < 0:
        # pair the first eigencolumn with e^{i xi_j}, xi_j signed
        C = C[:, ::-1].copy()
        Cinv = Cinv[::-1, :].copy()
    dim = state.F.dim
    m = state.F.grid_shape[0]
    H = _bracket_matrix(C, Cinv, k_j, dim, m)
    H_shift = H.shifted(state.freq.omega / 2.0)
    Hs_inv = H_shift.inv()

    s = _nearest_rep(_bracket_mode(state.freq, k_j), state.xi_j)
    xi_new = state.xi_j - s

    # exact conjugated constant: C diag(e^{i(xi - <k,w>/2)}, cc) C^{-1}
    ang = state.xi_j - _bracket_mode(state.freq, k_j)   # == xi_new mod pi
    A_new = (C @ np.diag([np.exp(1j * ang), np.exp(-1j * ang)]) @ Cinv)
    if np.max(np.abs(A_new.imag)) > 1e-9:
        raise KamError("renormalized constant is not real")
    A_new = A_new.real
    knd, a_new = eigen_angle(A_new)
    if knd == "elliptic":
        drift = min(dist_to_pi_lattice(a_new - xi_new),
                    dist_to_pi_lattice(a_new + xi_new))
        if drift > 1e-8:
            raise KamError(
                f"angle bookkeeping off: arccos gives {a_new}, expected {xi_new} mod pi"
            )

    F_new = (Hs_inv @ state.F @ H).realized(1e-7)
    old_norm, new_norm = state.F.sup_norm(), F_new.sup_norm()
    if new_norm > 10.0 * max(old_norm, 1e-300):
        raise KamError(
            f"remainder grew {new_norm / max(old_norm, 1e-300):.1f}x under renormalization"
        )
    Z_new = state.Z_accum @ H
    return KamState(
        j=state.j, A_const=A_new, F=F_new, eps_j=state.eps_j, N_j=state.N_j,
        xi_j=xi_new, history=state.history + [np.atleast_1d(np.asarray(k_j, int))],
        shifts=state.shifts + [s], Z_accum=Z_new, sigma=state.sigma,
        freq=state.freq, accepted=state.accepted, measured_norm=new_norm,
    )


def homological_solve(A: np.ndarray, F: TrigPolyMatrix, freq: Frequency,
                      N_trunc: int, divisor_floor: float):
    """Solve Y(theta+omega) A - A Y(theta) = -T_N F(theta) in A's eigenbasis.

    Only modes 0 < |k| <= N_trunc with nonzero data are touched (the mean
    is left for the constant part).  Returns (Y, worst_divisor); a divisor
    below the floor raises ResonanceError with the offending theta-mode.
    """
    C, Cinv, _ = eig_matrix(A)
    _, alpha = eigen_angle(A)
    dim = F.dim
    cf = F.coeffs()
    # move to the eigenbasis: Fhat = C^{-1} F C, coefficientwise
    cfh = np.einsum("ij,jk...->ik...", Cinv, np.einsum("jk...,kl->jl...", cf, C))
    modes = F.mode_grids()
    sup = max(F.sup_norm(), 1e-300)
    d = [np.exp(1j * alpha), np.exp(-1j * alpha)]
    out = np.zeros_like(cfh)
    worst = np.inf
    for idx in np.ndindex(*F.grid_shape):
        k_phi = np.array([int(modes[a][idx[a]]) for a in range(dim)])
        knorm = max(abs(x) for x in k_phi)
        if knorm == 0 or knorm > N_trunc:
            continue
        block = cfh[(slice(None), slice(None)) + idx]
        # skip empty modes and grid-FFT noise; untouched modes stay in the
        # remainder and are re-measured there
        if np.max(np.abs(block)) <= max(1e-18 * sup, 1e-16):
            continue
        tw = np.exp(1j * np.dot(k_phi, freq.omega) / 2.0)   # e^{i<k_phi, omega/2>}
        for p in range(2):
            for q in range(2):
                div = tw * d[q] - d[p]
                if abs(div) < divisor_floor:
                    # working modes are even in phi, i.e. integer theta-modes;
                    # the (2,1) divisor degenerates when alpha ~ <-k>, so the
                    # renormalization vector flips sign there
                    k_theta = k_phi // 2 if np.all(k_phi % 2 == 0) else k_phi
                    if p == 1 and q == 0:
                        k_theta = -k_theta
                    raise ResonanceError(k_theta, abs(div))
                worst = min(worst, abs(div))
                out[(p, q) + idx] = -block[p, q] / div
    Yh = TrigPolyMatrix.from_coeffs(out, dim)
    Y = TrigPolyMatrix(
        np.einsum("ij,jk...->ik...", C, np.einsum("jk...,kl->jl...", Yh.vals, Cinv)),
        dim,
    ).realized(1e-7)
    return Y, float(worst)


def kam_step(state: KamState, resonance_cap: float = 0.1,
             divisor_cap: float = 0.02, c: float = 1.0) -> KamState:
    """One full step: resonance detection/renormalization, truncated
    homological solve, conjugation by Id+Y, re-measured remainder."""
    kind, _ = eigen_angle(state.A_const)
    if kind == "hyperbolic":
        raise KamError("hyperbolic constant part: energy lies in a gap")
    st = state
    k = detect_resonance(st.xi_j, max(st.N_j, 1.0), st.eps_j, st.freq,
                         c=c, threshold_cap=resonance_cap)
    if k is not None:
        st = renormalize(st, k)

    F_band = st.F.bandwidth(abs_tol=1e-14)
    n_trunc = int(max(np.ceil(st.N_j), F_band, 2))
    nyquist = min(st.F.grid_shape) // 2 - 1
    n_trunc = min(n_trunc, nyquist)
    floor = min(st.eps_j ** st.sigma / max(st.N_j, 1.0) ** st.freq.tau, divisor_cap)
    try:
        Y, worst = homological_solve(st.A_const, st.F, st.freq, n_trunc, floor)
    except ResonanceError as err:
        if k is not None:
            raise KamError(
                f"divisor failure at k={err.k.tolist()} after renormalization"
            ) from err
        st = renormalize(st, err.k)
        Y, worst = homological_solve(st.A_const, st.F, st.freq, n_trunc, floor)

    dim, m = st.F.dim, st.F.grid_shape[0]
    # Y solves Y(.+w)A - A Y(.) = -T_N F, so under the left-inverse
    # conjugation Z^{-1}(.+w) M Z(.) the first order cancels with Z = Id - Y
    Z_hat = TrigPolyMatrix.identity(dim, m) - Y
    detz = Z_hat.det()
    Z_hat = TrigPolyMatrix(Z_hat.vals / np.sqrt(detz), dim)   # det == 1 exactly
    M = TrigPolyMatrix.constant(st.A_const, dim, m) + st.F
    G = Z_hat.shifted(st.freq.omega / 2.0).inv() @ M @ Z_hat
    A_new = G.mean()
    if np.max(np.abs(A_new.imag)) > 1e-8 * max(1.0, np.max(np.abs(A_new))):
        raise KamError("conjugated constant is not real")
    A_new = A_new.real
    det_a = A_new[0, 0] * A_new[1, 1] - A_new[0, 1] * A_new[1, 0]
    if det_a <= 0:
        raise KamError("conjugated constant lost unit determinant")
    A_new = A_new / np.sqrt(det_a)
    F_new = (G - TrigPolyMatrix.constant(A_new, dim, m)).realized(1e-6)

    eps_next = st.eps_next()
    norm_new = F_new.sup_norm()
    knd, a_new = eigen_angle(A_new)
    if knd == "elliptic":
        # representative of the class {+-a_new mod pi} nearest the previous xi
        cands = [c + np.pi * np.round((st.xi_j - c) / np.pi) for c in (a_new, -a_new)]
        xi_new = min(cands, key=lambda c: abs(c - st.xi_j))
    else:
        xi_new = 0.0 if abs(st.xi_j) < np.pi / 2 else np.pi
    return KamState(
        j=st.j + 1, A_const=A_new, F=F_new, eps_j=eps_next,
        N_j=KamState.N_of(st.j + 1, eps_next, st.sigma), xi_j=float(xi_new),
        history=list(st.history), shifts=list(st.shifts),
        Z_accum=st.Z_accum @ Z_hat, sigma=st.sigma, freq=st.freq,
        accepted=bool(norm_new <= max(eps_next, 1e-14)), measured_norm=norm_new,
    )


# ---------------------------------------------------------------------------
# the reduced pair and its consumers


@dataclass
class ReducedPair:
    """Conjugation Z and constant B with Z(.+w)^{-1}(A0+F0)Z(.) ~ B."""

    Z: TrigPolyMatrix
    B: np.ndarray
    rho_rep: float
    xi: float
    history: list
    residual: float
    level: int
    kind: str
    converged: bool
    freq: Frequency = None
    pot: PotentialSpec = None
    E: float = 0.0

    def conjugation_residual(self, pot: PotentialSpec, E: float) -> float:
        """sup over the grid of |Z(t+w)^{-1}(A0+F0(t))Z(t) - B| (recomputed)."""
        dim, m = self.Z.dim, self.Z.grid_shape[0]
        M = (TrigPolyMatrix.constant(np.array([[-E, -1.0], [1.0, 0.0]]), dim, m)
             + TrigPolyMatrix.from_potential(pot, m))
        G = self.Z.shifted(self.freq.omega / 2.0).inv() @ M @ self.Z
        return (G - TrigPolyMatrix.constant(self.B, dim, m)).sup_norm()


def reduce_cocycle(E: float, pot: PotentialSpec, freq: Frequency,
                   jmax: int = 3, m: int | None = None,
                   resonance_cap: float = 0.1,
                   divisor_cap: float = 0.02) -> ReducedPair:
    """Iterate kam_step from (A0(E), F0), then apply the additional
    transformation moving the eigenvalues to e^{+-i rho_rep},
    rho_rep = xi + sum_l <k_l> reduced to [0, pi]."""
    if jmax > 4:
        raise ValueError("jmax > 4 exceeds the meaningful double-precision range")
    state = initial_kam_state(E, pot, freq, m)
    kind0, _ = eigen_angle(state.A_const)
    if kind0 != "elliptic":
        Z = state.Z_accum
        rho = 0.0 if E < 0 else np.pi
        pair = ReducedPair(Z, state.A_const, rho, state.xi_j, [], np.inf,
                           0, kind0, False, freq, pot, E)
        return pair

    converged = True
    noise_floor = 1e-13 * (2.0 + abs(E))
    for _ in range(jmax):
        if state.measured_norm <= noise_floor:
            break
        prev = state.measured_norm
        prev_level = len(state.history)
        try:
            state = kam_step(state, resonance_cap=resonance_cap,
                             divisor_cap=divisor_cap)
        except KamError:
            converged = False
            break
        # a renormalization inside the step may grow the remainder by the
        # squared eigenbasis conditioning (bounded by 10x); otherwise the
        # step must not increase it
        budget = 10.0 * prev if len(state.history) > prev_level else prev
        if state.measured_norm > max(budget, noise_floor):
            converged = False
            break

    B_tilde = state.A_const
    kind, _ = eigen_angle(B_tilde)
    K_total = (np.sum(np.stack(state.history), axis=0)
               if state.history else np.zeros(freq.dim, dtype=int))
    level = len(state.history)
    rho_raw = state.xi_j + float(np.sum(state.shifts))
    dim, m_grid = state.F.dim, state.F.grid_shape[0]

    if np.all(K_total == 0) or kind != "elliptic":
        Z = state.Z_accum
        B = B_tilde
    else:
        C, Cinv, _ = eig_matrix(B_tilde)
        H = _bracket_matrix(C, Cinv, -np.asarray(K_total, int), dim, m_grid)
        Hs_inv = H.shifted(freq.omega / 2.0).inv()
        Bmat = Hs_inv @ TrigPolyMatrix.constant(B_tilde, dim, m_grid) @ H
        B = Bmat.mean()
        if (Bmat - TrigPolyMatrix.constant(B, dim, m_grid)).sup_norm() > 1e-8:
            raise KamError("additional transformation did not produce a constant")
        if np.max(np.abs(B.imag)) > 1e-8:
            raise KamError("reduced constant is not real")
        B = B.real
        Z = state.Z_accum @ H

    if kind == "elliptic":
        # calibrate the bookkeeping value against the exact angle class of B
        _, a_B = eigen_angle(B)
        cands = [c + np.pi * np.round((rho_raw - c) / np.pi) for c in (a_B, -a_B)]
        rho_rep = float(np.clip(min(cands, key=lambda c: abs(c - rho_raw)), 0.0, np.pi))
    else:
        rho_rep = 0.0 if E < 0 else np.pi
    pair = ReducedPair(Z, np.asarray(B, float) if np.isrealobj(B) else B,
                       rho_rep, state.xi_j, [k.tolist() for k in state.history],
                       0.0, level, kind, converged, freq, pot, E)
    pair.residual = pair.conjugation_residual(pot, E)
    return pair


def _zf_entries(pair: ReducedPair, theta, n_values: np.ndarray):
    """Bloch factors a_n, b_n from Z11, Z12 at theta + n*omega.

    Evaluating at theta + n*omega (one omega ahead of the analogous
    whole-line formula with Z(theta+(n-1)omega)) makes psi solve the
    operator at phase theta itself rather than theta - omega; the two
    conventions differ by the relabeling theta -> theta + omega only.
    """
    th = theta.theta if isinstance(theta, Phase) else np.atleast_1d(np.asarray(theta, float))
    pts = (th[None, :] + n_values[:, None] * pair.freq.omega[None, :]) / 2.0
    Zv = pair.Z.eval_batch(pts)
    if np.max(np.abs(Zv.imag)) > 1e-7 * max(1.0, np.max(np.abs(Zv))):
        raise KamError("Z evaluated non-real on real theta")
    Zv = Zv.real
    B = pair.B
    a = Zv[0, 0] * B[0, 1] - Zv[0, 1] * B[0, 0]
    b = Zv[0, 1]
    return a, b


def bloch_wave(pair: ReducedPair, theta, window) -> np.ndarray:
    """psi_n = e^{i n rho} f_n(theta) on the window (an integer range),
    with f_n from (Z, B); on resonance levels f_n carries sin^5(xi)."""
    if pair.kind != "elliptic":
        raise KamError("Bloch wave requires an elliptic reduced pair")
    rho = pair.rho_rep
    if abs(np.sin(rho)) < 1e-9:
        raise NearParabolicError("sin(rho) ~ 0: band edge, no Bloch wave")
    n = np.asarray(window, dtype=int)
    a, b = _zf_entries(pair, theta, n.astype(float))
    f = (a * np.exp(-1j * rho) + b)
    if pair.level >= 1:
        f = f * np.sin(pair.xi) ** 5
    return np.exp(1j * rho * n) * f


def beta_coefficients(pair: ReducedPair, theta, n: int, level: int | None = None):
    """(beta_{n,n-1}, beta_{n,n}, beta_{n,n+1}) at theta, real by construction;
    multiplied by sin^10(xi) on resonance levels.  beta_{0,1} == beta_{0,-1}."""
    if level is None:
        level = pair.level
    nv = np.array([float(n), 0.0])
    a, b = _zf_entries(pair, theta, nv)
    a_n, a_0 = a[0], a[1]
    b_n, b_0 = b[0], b[1]
    beta_mm = a_n * b_0          # beta_{n, n-1}
    beta_nn = a_n * a_0 + b_n * b_0
    beta_pp = b_n * a_0          # beta_{n, n+1}
    if level >= 1:
        sm = np.sin(pair.xi) ** 10
        beta_mm, beta_nn, beta_pp = beta_mm * sm, beta_nn * sm, beta_pp * sm
    return float(beta_mm), float(beta_nn), float(beta_pp)
