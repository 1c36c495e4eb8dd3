"""The modified spectral transformation S and its L^2(dphi) geometry.

On an energy grid over the spectrum the table carries the rotation number
rho(E), its derivative, and the coefficients beta_{n,n_Delta}(E) out of
which

    K_n = sum_{nD} beta_{n,nD} sin(nD rho),   J_n = sum_{nD} beta_{n,nD} cos(nD rho),
    S q = (sum_n q_n K_n, sum_n q_n J_n),
    ||G||^2_{dphi} = (1/pi) * sum_nodes (|g1|^2 + |g2|^2) (drho)^{-1} dE.

The measure weights use (pi * drho)^{-1} dE on the retained nodes; gap
nodes (rho plateaus) and nodes failing the transversality floor
drho > (2 sin rho)^{-1} are excluded.  ||S q(0)|| is the predicted
ballistic slope of the diffusion norm.

Three beta modes: 'free' (exact closed forms on a rho-parametrized
midpoint grid, V = 0 only), 'delta' (beta = delta, the eps0^{1/4}-accurate
default), and 'kam' (beta from the reducibility engine, sampled every
kam_stride-th node).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .model import Frequency, Phase, PotentialSpec
from .cocycle import rotation_number_grid

__all__ = [
    "TransformTable",
    "TransformedState",
    "GridTooCoarseError",
    "build_table",
    "free_table",
    "apply_transform",
    "l2_dphi_norm",
    "slope_predictor",
    "orthogonality_check",
    "oscillatory_probe",
    "derivative_norm",
    "as_amplitude_map",
]

N_DELTA = (-1, 0, 1)


class GridTooCoarseError(ValueError):
    pass


@dataclass
class TransformTable:
    """Retained E-nodes with rho, drho, the node measure dE, and beta.

    rho_edges are the rho-cell boundaries (nodes+1 values): integrals
    against drho dE are evaluated as Stieltjes sums in rho, so excluded
    gap plateaus contribute zero measure and band-edge mass that the
    E-grid cannot resolve is still counted.
    """

    E: np.ndarray
    rho: np.ndarray
    drho: np.ndarray
    dE: np.ndarray
    rho_edges: np.ndarray
    beta: np.ndarray          # shape (2*n_max+1, 3, nodes); [n, nD-n+1, :]
    n_max: int
    mode: str
    level: np.ndarray | None = None   # resonance level per node (kam mode)
    dropped_gap: int = 0
    dropped_transversality: int = 0
    dropped_kam: int = 0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if np.any(self.drho <= 0):
            raise ValueError("retained nodes must have positive drho")
        if self.rho_edges.size != self.E.size + 1:
            raise ValueError("rho_edges must bound every node")

    @property
    def nodes(self) -> int:
        return self.E.size

    def weights(self, measure: str = "dphi") -> np.ndarray:
        """Node quadrature weights: dphi ~ (pi drho)^{-1} dE, dtilde ~ drho dE / pi."""
        if measure == "dphi":
            return self.dE / (np.pi * self.drho)
        if measure == "dtilde":
            return self.drho * self.dE / np.pi
        raise ValueError(f"unknown measure {measure!r}")

    def beta_of(self, n: int) -> np.ndarray:
        """beta_{n, n-1}, beta_{n,n}, beta_{n,n+1} rows for site n."""
        if abs(n) > self.n_max:
            raise ValueError(f"|n|={abs(n)} exceeds table n_max={self.n_max}")
        return self.beta[n + self.n_max]

    def K(self, n: int) -> np.ndarray:
        b = self.beta_of(n)
        return sum(b[i] * np.sin((n + d) * self.rho) for i, d in enumerate(N_DELTA))

    def J(self, n: int) -> np.ndarray:
        b = self.beta_of(n)
        return sum(b[i] * np.cos((n + d) * self.rho) for i, d in enumerate(N_DELTA))

    def K_hat(self, n: int) -> np.ndarray:
        """Dominant derivative term drho * sum nD beta cos(nD rho)."""
        b = self.beta_of(n)
        return self.drho * sum((n + d) * b[i] * np.cos((n + d) * self.rho)
                               for i, d in enumerate(N_DELTA))

    def J_hat(self, n: int) -> np.ndarray:
        b = self.beta_of(n)
        return -self.drho * sum((n + d) * b[i] * np.sin((n + d) * self.rho)
                                for i, d in enumerate(N_DELTA))

    def dbeta_of(self, n: int) -> np.ndarray:
        """Finite-difference partial beta along E (zero in delta/free modes).

        beta is differentiable per resonance level only (the smoothing
        factor jumps across levels), so differences never straddle a level
        change.
        """
        if self.mode != "kam":
            return np.zeros((3, self.nodes))
        b = self.beta_of(n)
        out = np.zeros_like(b)
        lev = self.level if self.level is not None else np.zeros(self.nodes, int)
        start = 0
        for stop in list(np.nonzero(np.diff(lev))[0] + 1) + [self.nodes]:
            if stop - start >= 2:
                for i in range(3):
                    out[i, start:stop] = np.gradient(b[i, start:stop],
                                                     self.E[start:stop])
            start = stop
        return out


@dataclass
class TransformedState:
    """(g1, g2) = S q on the table nodes."""

    g1: np.ndarray
    g2: np.ndarray

    def __post_init__(self):
        if not (np.all(np.isfinite(self.g1)) and np.all(np.isfinite(self.g2))):
            raise ValueError("transformed state has non-finite nodes")


def _delta_beta(n_max: int, nodes: int) -> np.ndarray:
    beta = np.zeros((2 * n_max + 1, 3, nodes))
    beta[:, 1, :] = 1.0
    return beta


def free_table(n_nodes: int = 2000, n_max: int = 64) -> TransformTable:
    """Exact free table on the midpoint rho-grid: E = -2 cos(rho),
    drho = 1/(2 sin rho), node measure dE = drho^{-1} * (pi/n_nodes)."""
    h = np.pi / n_nodes
    rho = (np.arange(n_nodes) + 0.5) * h
    E = -2.0 * np.cos(rho)
    drho = 1.0 / (2.0 * np.sin(rho))
    dE = h / drho
    edges = np.arange(n_nodes + 1) * h
    return TransformTable(E, rho, drho, dE, edges, _delta_beta(n_max, n_nodes),
                          n_max, "free", level=np.zeros(n_nodes, dtype=int),
                          meta={"n_nodes": n_nodes})


def _cell_edges(rho_kept: np.ndarray, rho_lo: float, rho_hi: float) -> np.ndarray:
    """rho-cell boundaries: midpoints between retained nodes, raw extremes at
    the ends, so the cells tile the full rotation range."""
    edges = np.empty(rho_kept.size + 1)
    edges[1:-1] = 0.5 * (rho_kept[1:] + rho_kept[:-1])
    edges[0] = min(rho_lo, rho_kept[0])
    edges[-1] = max(rho_hi, rho_kept[-1])
    return np.maximum.accumulate(edges)


def build_table(pot: PotentialSpec, freq: Frequency, theta, n_nodes: int = 2001,
                mode: str = "delta", n_max: int = 64, niter: int = 100_000,
                E_min: float | None = None, E_max: float | None = None,
                kam_stride: int = 4, jmax: int = 2,
                resonance_cap: float | None = None,
                divisor_cap: float | None = None,
                gap_floor: float = 0.3, trans_tol: float = 0.05,
                kam_failure_cap: float = 0.2) -> TransformTable:
    """Rotation-number table over [E_min, E_max] with beta per mode.

    Gap nodes (drho below gap_floor after the 1e-6 positivity floor) are
    excluded; nodes failing drho > (2 sin rho)^{-1} - trans_tol are dropped
    and counted.  kam mode computes beta every kam_stride-th retained node
    via the reducibility engine (renormalizing only on genuine divisor
    failures, hence the small resonance_cap) and holds it between samples.
    """
    if mode == "free":
        if not pot.is_zero():
            raise ValueError("free mode requires the zero potential")
        return free_table(n_nodes, n_max)
    if mode not in ("delta", "kam"):
        raise ValueError(f"unknown mode {mode!r}")

    th = theta.theta if isinstance(theta, Phase) else np.atleast_1d(np.asarray(theta, float))
    lo = -2.0 - pot.eps0 - 0.05 if E_min is None else E_min
    hi = 2.0 + pot.eps0 + 0.05 if E_max is None else E_max
    E = np.linspace(lo, hi, n_nodes)
    rho, rho_err = rotation_number_grid(E, pot, freq, th, niter, return_error=True)

    if np.max(np.abs(np.diff(rho))) > 0.1:
        raise GridTooCoarseError(
            "rho increments exceed 0.1 between adjacent nodes; refine the grid"
        )
    rho_lo, rho_hi = float(rho[0]), float(rho[-1])
    drho = np.gradient(rho, E)
    drho = np.maximum(drho, 1e-6)       # positivity floor on noise
    dE = np.full(E.size, E[1] - E[0])
    dE[0] = dE[-1] = (E[1] - E[0]) / 2.0

    keep = drho > gap_floor
    n_gap = int(np.count_nonzero(~keep))
    trans = drho > 1.0 / (2.0 * np.maximum(np.sin(rho), 1e-12)) - trans_tol
    n_trans = int(np.count_nonzero(keep & ~trans))
    keep &= trans

    E, rho, drho, dE = E[keep], rho[keep], drho[keep], dE[keep]
    meta = {"niter": niter, "rho_err_max": float(np.max(rho_err)), "jmax": jmax}

    if mode == "delta":
        beta = _delta_beta(n_max, E.size)
        level = np.zeros(E.size, dtype=int)
        dropped_kam = 0
    else:
        from .kam import reduce_cocycle, beta_coefficients, KamError

        if divisor_cap is None:
            divisor_cap = float(np.clip(np.sqrt(pot.sup_bound), 0.012, 0.05))
        if resonance_cap is None:
            resonance_cap = 0.6 * divisor_cap
        beta = _delta_beta(n_max, E.size)
        level = np.zeros(E.size, dtype=int)
        ok = np.ones(E.size, dtype=bool)
        sampled = set(range(0, E.size, kam_stride))
        failures = 0
        cache = None
        cache_level = 0
        for i in range(E.size):
            if i in sampled or cache is None:
                try:
                    pair = reduce_cocycle(E[i], pot, freq, jmax=jmax,
                                          resonance_cap=resonance_cap,
                                          divisor_cap=divisor_cap)
                    if pair.kind != "elliptic" or not pair.converged:
                        raise KamError("no elliptic reduction")
                    cols = np.empty((2 * n_max + 1, 3))
                    for n in range(-n_max, n_max + 1):
                        cols[n + n_max] = beta_coefficients(pair, th, n)
                    cache = cols
                    cache_level = pair.level
                except KamError:
                    failures += 1
                    ok[i] = False
                    cache = None
                    continue
            beta[:, :, i] = cache
            level[i] = cache_level
        if sampled and failures / max(len(sampled), 1) > kam_failure_cap:
            raise RuntimeError(
                f"KAM failure rate {failures}/{len(sampled)} exceeds the threshold"
            )
        beta = beta[:, :, ok]
        E, rho, drho, dE, level = E[ok], rho[ok], drho[ok], dE[ok], level[ok]
        dropped_kam = int(np.count_nonzero(~ok))
        meta["kam_stride"] = kam_stride
        meta["resonance_cap"] = resonance_cap

    edges = _cell_edges(rho, rho_lo, rho_hi)
    return TransformTable(E, rho, drho, dE, edges, beta, n_max, mode,
                          level=level, dropped_gap=n_gap,
                          dropped_transversality=n_trans,
                          dropped_kam=dropped_kam, meta=meta)


def as_amplitude_map(q, n_lo: int | None = None) -> dict:
    """Normalize q (dict n->amp, or a sequence with base index n_lo) to a dict."""
    if isinstance(q, dict):
        return {int(n): complex(a) for n, a in q.items()}
    arr = np.asarray(q)
    if n_lo is None:
        raise ValueError("array amplitudes require n_lo")
    return {n_lo + i: complex(a) for i, a in enumerate(arr)}


def apply_transform(table: TransformTable, q, n_lo: int | None = None) -> TransformedState:
    """S q = (sum_n q_n K_n, sum_n q_n J_n), linear in q, nodewise."""
    amps = as_amplitude_map(q, n_lo)
    g1 = np.zeros(table.nodes, dtype=complex)
    g2 = np.zeros(table.nodes, dtype=complex)
    for n, a in amps.items():
        if a == 0:
            continue
        if abs(n) > table.n_max:
            raise ValueError(f"support site {n} exceeds table n_max={table.n_max}")
        g1 += a * table.K(n)
        g2 += a * table.J(n)
    return TransformedState(g1, g2)


def l2_dphi_norm(table: TransformTable, G: TransformedState,
                 measure: str = "dphi") -> float:
    w = table.weights(measure)
    return float(np.sqrt(np.sum((np.abs(G.g1) ** 2 + np.abs(G.g2) ** 2) * w)))


def slope_predictor(table: TransformTable, q0, n_lo: int | None = None) -> float:
    """Predicted ballistic slope ||S q(0)||_{L^2(dphi)}."""
    return l2_dphi_norm(table, apply_transform(table, q0, n_lo))


def orthogonality_check(table: TransformTable, m: int, n: int) -> float:
    """max over (m_D, n_D) of |integral beta_{m,mD} beta_{n,nD} drho dE
    - delta_{m,mD} delta_{n,nD} pi|, as a Stieltjes sum in rho."""
    w = np.diff(table.rho_edges)
    bm = table.beta_of(m)
    bn = table.beta_of(n)
    worst = 0.0
    for i in range(3):
        for j in range(3):
            val = float(np.sum(bm[i] * bn[j] * w))
            target = np.pi if (N_DELTA[i] == 0 and N_DELTA[j] == 0) else 0.0
            worst = max(worst, abs(val - target))
    return worst


def oscillatory_probe(table: TransformTable, M_list, m: int = 0, n: int = 0):
    """|integral of beta_m beta_n cos(M rho) drho dE| for each M, maximized
    over the (m_D, n_D) pairs, plus a fitted decay exponent in |M|.

    cos(M rho) drho dE is integrated exactly in rho per cell (beta held at
    the node value), so the probe sees the genuine oscillatory cancellation
    rather than the E-grid resolution.
    """
    bm = table.beta_of(m)
    bn = table.beta_of(n)
    Ms = np.atleast_1d(np.asarray(M_list, dtype=int))
    if np.any(Ms == 0):
        raise ValueError("M must be nonzero")
    vals = np.zeros(Ms.size)
    for idx, M in enumerate(Ms):
        cell = np.diff(np.sin(M * table.rho_edges)) / M
        worst = 0.0
        for i in range(3):
            for j in range(3):
                worst = max(worst, abs(float(np.sum(bm[i] * bn[j] * cell))))
        vals[idx] = worst
    logM = np.log(np.abs(Ms).astype(float))
    logv = np.log(np.maximum(vals, 1e-300))
    if Ms.size >= 2 and np.ptp(logM) > 0:
        exponent = float(np.polyfit(logM, logv, 1)[0])
    else:
        exponent = float("nan")
    return vals, exponent


def derivative_norm(table: TransformTable, q, n_lo: int | None = None) -> float:
    """L^2(dphi) norm of (sum q_n dK_n, sum q_n dJ_n), with the dominant
    rho-derivative terms plus finite-difference dbeta in kam mode."""
    amps = as_amplitude_map(q, n_lo)
    h1 = np.zeros(table.nodes, dtype=complex)
    h2 = np.zeros(table.nodes, dtype=complex)
    for n, a in amps.items():
        if a == 0:
            continue
        if abs(n) > table.n_max:
            raise ValueError(f"support site {n} exceeds table n_max={table.n_max}")
        dk = table.K_hat(n)
        dj = table.J_hat(n)
        if table.mode == "kam":
            db = table.dbeta_of(n)
            for i, d in enumerate(N_DELTA):
                dk = dk + db[i] * np.sin((n + d) * table.rho)
                dj = dj + db[i] * np.cos((n + d) * table.rho)
        h1 += a * dk
        h2 += a * dj
    return l2_dphi_norm(table, TransformedState(h1, h2))
