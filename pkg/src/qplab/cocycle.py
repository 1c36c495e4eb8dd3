"""Transfer-matrix cocycle over the torus rotation: products, rotation
number, Lyapunov exponent, and the boundedness diagnostic.

The eigenvalue problem Hq = Eq is equivalent to the skew-product

    (q_{n+1}, q_n)^T = (A0(E) + F0(theta + n*omega)) (q_n, q_{n-1})^T,
    A0(E) = [[-E, -1], [1, 0]],   F0(theta) = [[V(theta), 0], [0, 0]],

an SL(2,R) cocycle.  The fibered rotation number is the mean projective
angle advance of the iterated direction; the Lyapunov exponent is the mean
log norm growth.  Both are estimated from one long orbit, with the
uncertainty taken as the difference between the full- and half-length
estimates (no convergence rate is assumed).
"""

from __future__ import annotations

import numpy as np

from .model import Frequency, Phase, PotentialSpec, hull_sequence

__all__ = [
    "transfer_matrix",
    "rotation_number",
    "rotation_number_grid",
    "lyapunov_exponent",
    "lyapunov_exponent_grid",
    "lyapunov_theta_average",
    "boundedness_sup",
    "cocycle_product",
]


def transfer_matrix(E: float, pot: PotentialSpec, theta) -> np.ndarray:
    """A0(E) + F0(theta) = [[V(theta)-E, -1], [1, 0]]; unit determinant."""
    from .model import eval_potential

    v = 0.0 if pot.is_zero() else eval_potential(pot, theta)
    return np.array([[v - E, -1.0], [1.0, 0.0]])


def _orbit_diagonal(pot, freq, theta, niter):
    th0 = theta.theta if isinstance(theta, Phase) else np.atleast_1d(np.asarray(theta, float))
    if pot.is_zero():
        return np.zeros(niter)
    return hull_sequence(pot, freq, th0, 0, niter - 1)


def rotation_number_grid(E_values, pot: PotentialSpec, freq: Frequency, theta,
                         niter: int = 100_000, return_error: bool = False):
    """Fibered rotation number on a grid of energies, vectorized.

    The direction (q_{n+1}, q_n) is tracked as a unit vector and the angle
    advance per step is unwrapped into [-pi/2, 3pi/2): the step map sends
    a vector with first component of sign s to one whose second component
    has sign s, which pins the true advance inside that window, so the
    branch is continuous without any step halving.  The mean advance is
    reduced to [0, pi].
    """
    if niter < 1_000:
        raise ValueError("niter must be >= 1000")
    E = np.atleast_1d(np.asarray(E_values, dtype=float))
    diag = _orbit_diagonal(pot, freq, theta, niter)

    a = np.full(E.shape, np.cos(0.4))
    b = np.full(E.shape, np.sin(0.4))
    phi = np.arctan2(b, a)
    total = np.zeros(E.shape)
    half_total = np.zeros(E.shape)
    nhalf = niter // 2

    for n in range(niter):
        c = diag[n] - E
        a, b = c * a - b, a
        norm = np.hypot(a, b)
        bad = norm < 1e-280
        if np.any(bad):
            # degenerate direction: reseed those lanes (flagged via nan total)
            a = np.where(bad, 1.0, a / np.where(bad, 1.0, norm))
            b = np.where(bad, 0.0, b / np.where(bad, 1.0, norm))
            total = np.where(bad, np.nan, total)
        else:
            a /= norm
            b /= norm
        new_phi = np.arctan2(b, a)
        step = np.mod(new_phi - phi + 0.5 * np.pi, 2.0 * np.pi) - 0.5 * np.pi
        total += step
        phi = new_phi
        if n == nhalf - 1:
            half_total[:] = total

    rho = np.clip(total / niter, 0.0, np.pi)
    if not return_error:
        return rho if np.ndim(E_values) else float(rho[0])
    rho_half = np.clip(half_total / nhalf, 0.0, np.pi)
    err = np.abs(rho - rho_half)
    if np.ndim(E_values):
        return rho, err
    return float(rho[0]), float(err[0])


def rotation_number(E: float, pot: PotentialSpec, freq: Frequency, theta,
                    niter: int = 100_000) -> float:
    """Rotation number at a single energy; see rotation_number_grid."""
    return rotation_number_grid(np.array([E]), pot, freq, theta, niter)[0]


def lyapunov_exponent_grid(E_values, pot: PotentialSpec, freq: Frequency, theta,
                           niter: int = 100_000, clamp: bool = True,
                           return_error: bool = False):
    """Top Lyapunov exponent on a grid of energies from one vector orbit."""
    if niter < 1_000:
        raise ValueError("niter must be >= 1000")
    E = np.atleast_1d(np.asarray(E_values, dtype=float))
    diag = _orbit_diagonal(pot, freq, theta, niter)

    a = np.full(E.shape, np.cos(0.4))
    b = np.full(E.shape, np.sin(0.4))
    logsum = np.zeros(E.shape)
    half_logsum = np.zeros(E.shape)
    nhalf = niter // 2
    for n in range(niter):
        c = diag[n] - E
        a, b = c * a - b, a
        norm = np.hypot(a, b)
        logsum += np.log(norm)
        a /= norm
        b /= norm
        if n == nhalf - 1:
            half_logsum[:] = logsum

    raw = logsum / niter
    err = np.abs(raw - half_logsum / nhalf)
    out = np.maximum(raw, 0.0) if clamp else raw
    if not return_error:
        return out if np.ndim(E_values) else float(out[0])
    if np.ndim(E_values):
        return out, err
    return float(out[0]), float(err[0])


def lyapunov_exponent(E: float, pot: PotentialSpec, freq: Frequency, theta,
                      niter: int = 100_000, clamp: bool = True) -> float:
    """Lyapunov exponent at one energy, clamped at 0 unless clamp=False."""
    return lyapunov_exponent_grid(np.array([E]), pot, freq, theta, niter, clamp=clamp)[0]


def lyapunov_theta_average(E: float, pot: PotentialSpec, freq: Frequency,
                           niter: int = 20_000, nphase: int = 16) -> float:
    """Integral definition: average of the orbit estimate over nphase phases."""
    vals = []
    for j in range(nphase):
        th = np.full(freq.dim, 2.0 * np.pi * j / nphase)
        vals.append(lyapunov_exponent(E, pot, freq, th, niter, clamp=False))
    return float(np.mean(vals))


def cocycle_product(E: float, pot: PotentialSpec, freq: Frequency, theta, n: int) -> np.ndarray:
    """The n-step product A_n = prod_{j=n-1..0} (A0(E) + F0(theta + j*omega))."""
    diag = _orbit_diagonal(pot, freq, theta, n)
    P = np.eye(2)
    for j in range(n):
        A = np.array([[diag[j] - E, -1.0], [1.0, 0.0]])
        P = A @ P
    return P


def _spec_norm_2x2(P: np.ndarray) -> float:
    # closed-form largest singular value of a 2x2 matrix
    s = float(np.sum(P * P))
    d = float(P[0, 0] * P[1, 1] - P[0, 1] * P[1, 0])
    disc = max(s * s - 4.0 * d * d, 0.0)
    return np.sqrt(max((s + np.sqrt(disc)) / 2.0, 0.0))


def boundedness_grid(E_values, pot: PotentialSpec, freq: Frequency, theta,
                     nmax: int, ntheta: int = 4) -> np.ndarray:
    """Vectorized sup_n |A_n| over an E-grid (log-scaled against overflow)."""
    E = np.atleast_1d(np.asarray(E_values, dtype=float))
    th0 = theta.theta if isinstance(theta, Phase) else np.atleast_1d(np.asarray(theta, float))
    best_log = np.full(E.shape, -np.inf)
    for j in range(max(ntheta, 1)):
        th = th0 + 2.0 * np.pi * j / max(ntheta, 1)
        diag = _orbit_diagonal(pot, freq, th, nmax)
        P = np.broadcast_to(np.eye(2), E.shape + (2, 2)).copy()
        logscale = np.zeros(E.shape)
        for n in range(nmax):
            c = diag[n] - E
            top = P[:, 0, :].copy()
            P[:, 0, :] = c[:, None] * top - P[:, 1, :]
            P[:, 1, :] = top
            s = np.sum(P * P, axis=(1, 2))
            d = P[:, 0, 0] * P[:, 1, 1] - P[:, 0, 1] * P[:, 1, 0]
            disc = np.maximum(s * s - 4.0 * d * d, 0.0)
            nrm = np.sqrt(np.maximum((s + np.sqrt(disc)) / 2.0, 1e-300))
            best_log = np.maximum(best_log, logscale + np.log(nrm))
            big = nrm > 1e60    # rescale well before s*s can overflow
            if np.any(big):
                P[big] /= nrm[big, None, None]
                logscale[big] += np.log(nrm[big])
    out = np.where(best_log < 700.0, np.exp(np.minimum(best_log, 700.0)), np.inf)
    return out if np.ndim(E_values) else float(out[0])


def boundedness_sup(E: float, pot: PotentialSpec, freq: Frequency, theta,
                    nmax: int, ntheta: int = 8) -> float:
    """sup over 1<=n<=nmax and a phase sample set of |A_n(E, .)|.

    Products are renormalized against overflow; the returned value is the
    max norm (inf if it exceeds the floating range).
    """
    if nmax < 1:
        raise ValueError("nmax must be >= 1")
    th0 = theta.theta if isinstance(theta, Phase) else np.atleast_1d(np.asarray(theta, float))
    best_log = -np.inf
    for j in range(max(ntheta, 1)):
        th = th0 + 2.0 * np.pi * j / max(ntheta, 1)
        diag = _orbit_diagonal(pot, freq, th, nmax)
        P = np.eye(2)
        logscale = 0.0
        for n in range(nmax):
            A = np.array([[diag[n] - E, -1.0], [1.0, 0.0]])
            P = A @ P
            nrm = _spec_norm_2x2(P)
            best_log = max(best_log, logscale + np.log(nrm))
            if nrm > 1e100:
                P /= nrm
                logscale += np.log(nrm)
    return float(np.exp(best_log)) if best_log < 700.0 else np.inf
