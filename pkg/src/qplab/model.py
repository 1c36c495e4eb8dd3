"""Potentials, frequencies and phases of the quasi-periodic lattice model.

The lattice Hamiltonian is

    (H q)_n = -(q_{n+1} + q_{n-1}) + V(theta + n*omega) q_n,

with V a real trigonometric polynomial on the d-torus and omega a
Diophantine frequency vector.  This module owns the arithmetic data
(omega, gamma, tau), the potential coefficients, and the phase vector;
everything downstream (evolution, cocycles, KAM) consumes these types.

Conventions
-----------
* ``bracket(k) = <k, omega>/2 mod pi`` and distances to pi*Z are always
  reduced to [0, pi/2].
* Potentials are stored as Fourier coefficients c_k, k in Z^d, with the
  symmetry c_{-k} = c_k (real coefficients), so V(theta) is a real cosine
  polynomial.  |V|_r is bounded by sum_k |c_k| e^{r|k|_1}.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Frequency",
    "PotentialSpec",
    "Phase",
    "diophantine_margin",
    "eval_potential",
    "hull_sequence",
    "zero_potential",
    "harper",
    "two_frequency",
    "golden_frequency",
]

TWO_PI = 2.0 * np.pi


def dist_to_pi_lattice(x):
    """Distance from x (radians) to the lattice pi*Z, reduced to [0, pi/2]."""
    x = np.abs(np.asarray(x, dtype=float)) % np.pi
    return np.minimum(x, np.pi - x)


@dataclass(frozen=True)
class Frequency:
    """Frequency vector omega in R^d with Diophantine budget (gamma, tau)."""

    omega: np.ndarray
    gamma: float = 0.1
    tau: float = 2.0

    def __post_init__(self):
        om = np.atleast_1d(np.asarray(self.omega, dtype=float)).copy()
        if om.ndim != 1 or om.size < 1:
            raise ValueError("omega must be a non-empty 1-d vector")
        if not np.all(np.isfinite(om)):
            raise ValueError("omega entries must be finite")
        om.setflags(write=False)
        object.__setattr__(self, "omega", om)
        if not self.gamma > 0:
            raise ValueError("gamma must be positive")
        if not self.tau > om.size - 1:
            raise ValueError("tau must exceed d-1")

    @property
    def dim(self) -> int:
        return self.omega.size

    def bracket(self, k) -> float:
        """<k, omega>/2 mod pi, the half-frequency lattice point for k in Z^d."""
        k = np.atleast_1d(np.asarray(k, dtype=float))
        return float((k @ self.omega) / 2.0 % np.pi)


@dataclass(frozen=True)
class Phase:
    """Phase theta on the d-torus; kept as given, reduced views on demand."""

    theta: np.ndarray

    def __post_init__(self):
        th = np.atleast_1d(np.asarray(self.theta, dtype=float)).copy()
        if th.ndim != 1:
            raise ValueError("theta must be a 1-d vector")
        th.setflags(write=False)
        object.__setattr__(self, "theta", th)

    @property
    def dim(self) -> int:
        return self.theta.size

    def reduced(self, period: float = TWO_PI) -> np.ndarray:
        """Componentwise reduction mod `period` (2*pi, or 4*pi on (2T)^d)."""
        return np.mod(self.theta, period)

    def shifted(self, delta) -> "Phase":
        return Phase(self.theta + np.asarray(delta, dtype=float))


@dataclass(frozen=True)
class PotentialSpec:
    """Real trigonometric polynomial V on T^d.

    coeffs maps k (tuple of ints, one per dimension) to the real Fourier
    coefficient c_k; the symmetric partner c_{-k} is filled in
    automatically so V is real-valued.  eps0 caches an upper bound for
    |V|_r and is never allowed below the computed bound.
    """

    dim: int
    coeffs: dict = field(default_factory=dict)
    radius_r: float = 1.0
    eps0: float | None = None

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError("dim must be >= 1")
        if not (0.0 < self.radius_r <= 1.0):
            raise ValueError("radius_r must lie in (0, 1]")
        sym = {}
        for k, c in self.coeffs.items():
            k = tuple(int(x) for x in np.atleast_1d(k))
            if len(k) != self.dim:
                raise ValueError(f"coefficient index {k} has wrong dimension")
            c = float(c)
            mk = tuple(-x for x in k)
            for key in (k, mk):
                if key in sym and not np.isclose(sym[key], c, atol=1e-15):
                    raise ValueError(f"conflicting coefficients at {key}")
            sym[k] = c
            sym[mk] = c
        object.__setattr__(self, "coeffs", sym)
        bound = self._coeff_bound()
        if self.eps0 is None:
            object.__setattr__(self, "eps0", bound)
        elif self.eps0 < bound - 1e-15:
            raise ValueError(
                f"stored eps0={self.eps0} is below the computed |V|_r bound {bound}"
            )

    def _coeff_bound(self) -> float:
        # |V|_r <= sum_k |c_k| e^{r |k|_1}; |k|_1 controls e^{i<k,z>} on |Im z|<r.
        return float(
            sum(abs(c) * np.exp(self.radius_r * sum(abs(x) for x in k))
                for k, c in self.coeffs.items())
        )

    @property
    def sup_bound(self) -> float:
        """sum_k |c_k|, a sup-norm bound on the real torus."""
        return float(sum(abs(c) for c in self.coeffs.values()))

    @property
    def degree(self) -> int:
        """Largest |k|_inf carrying a nonzero coefficient."""
        kmax = 0
        for k, c in self.coeffs.items():
            if c != 0.0:
                kmax = max(kmax, max(abs(x) for x in k))
        return kmax

    def is_zero(self) -> bool:
        return all(c == 0.0 for c in self.coeffs.values())


def diophantine_margin(freq: Frequency, kmax: int):
    """min over 0 < |k|_inf <= kmax of |k|_inf^tau * dist(<k,omega>/2, pi*Z).

    Returns (margin, worst_k).  The caller compares margin against gamma;
    a rational frequency gives margin 0 at the first aligned k.
    """
    if kmax < 1:
        raise ValueError("kmax must be >= 1")
    d = freq.dim
    best = np.inf
    worst = None
    for k in itertools.product(range(-kmax, kmax + 1), repeat=d):
        knorm = max(abs(x) for x in k)
        if knorm == 0:
            continue
        val = knorm ** freq.tau * dist_to_pi_lattice(np.dot(k, freq.omega) / 2.0)
        if val < best:
            best = float(val)
            worst = np.array(k, dtype=int)
    return best, worst


def eval_potential(pot: PotentialSpec, theta) -> float:
    """V(theta) = sum_k c_k e^{i<k,theta>}; imaginary residue must vanish."""
    th = theta.theta if isinstance(theta, Phase) else np.atleast_1d(np.asarray(theta, float))
    if th.size != pot.dim:
        raise ValueError(f"theta has dimension {th.size}, potential expects {pot.dim}")
    total = 0.0 + 0.0j
    for k, c in pot.coeffs.items():
        total += c * np.exp(1j * np.dot(k, th))
    scale = pot.sup_bound
    if scale > 0 and abs(total.imag) > 1e-12 * scale:
        raise ArithmeticError("potential evaluation produced a non-real value")
    return float(total.real)


def hull_sequence(pot: PotentialSpec, freq: Frequency, theta0, n_lo: int, n_hi: int) -> np.ndarray:
    """V(theta0 + n*omega) for n = n_lo..n_hi inclusive (the operator diagonal)."""
    if n_lo > n_hi:
        raise ValueError("n_lo must not exceed n_hi")
    th0 = theta0.theta if isinstance(theta0, Phase) else np.atleast_1d(np.asarray(theta0, float))
    if th0.size != pot.dim or freq.dim != pot.dim:
        raise ValueError("dimension mismatch between potential, frequency and phase")
    n = np.arange(n_lo, n_hi + 1, dtype=float)
    vals = np.zeros(n.size, dtype=complex)
    for k, c in pot.coeffs.items():
        kdotth = np.dot(k, th0)
        kdotom = np.dot(k, freq.omega)
        vals += c * np.exp(1j * (kdotth + n * kdotom))
    return vals.real


# ---------------------------------------------------------------------------
# presets

def zero_potential(dim: int = 1, radius_r: float = 1.0) -> PotentialSpec:
    return PotentialSpec(dim=dim, coeffs={}, radius_r=radius_r)


def harper(lam: float, radius_r: float = 1.0) -> PotentialSpec:
    """V(theta) = 2*lam*cos(theta), i.e. c_{+-1} = lam."""
    return PotentialSpec(dim=1, coeffs={(1,): lam}, radius_r=radius_r)


def two_frequency(lam: float, radius_r: float = 1.0) -> PotentialSpec:
    """V(theta) = 2*lam*(cos theta_1 + cos theta_2)."""
    return PotentialSpec(dim=2, coeffs={(1, 0): lam, (0, 1): lam}, radius_r=radius_r)


def golden_frequency(gamma: float = 0.1, tau: float = 2.0) -> Frequency:
    """omega = (sqrt(5)-1)*pi, the golden-mean frequency used throughout."""
    return Frequency(omega=np.array([(np.sqrt(5.0) - 1.0) * np.pi]), gamma=gamma, tau=tau)
