"""qplab: numerical laboratory for ballistic transport in one-dimensional
quasi-periodic discrete Schrodinger equations.

Subpackages: model (potentials/frequencies), evolve (Chebyshev propagator,
diffusion norms), cocycle (rotation number, Lyapunov exponent), spectral
(truncations, IDS, m-functions), kam (reducibility engine), transform (the
modified spectral transformation and slope prediction), cli (experiment
runner).
"""

from .model import (Frequency, Phase, PotentialSpec, diophantine_margin,
                    eval_potential, hull_sequence, zero_potential, harper,
                    two_frequency, golden_frequency)
from .evolve import (WaveState, EvolutionRecord, initial_state, apply_hamiltonian,
                     diffusion_norm, propagate, run_evolution, fit_slope,
                     check_ballistic_bound)
from .cocycle import (transfer_matrix, rotation_number, rotation_number_grid,
                      lyapunov_exponent, lyapunov_exponent_grid, boundedness_sup)
from .spectral import (TruncatedOperator, IdsCurve, GapRecord, truncated_operator,
                       eigen_spectrum, ids, ids_curve, thouless_residual,
                       gap_detect_and_label, m_function, borel_transform,
                       free_classical_transform, eigenbasis_phase_check)
from .kam import (TrigPolyMatrix, KamState, ReducedPair, eigen_angle,
                  detect_resonance, renormalize, homological_solve, kam_step,
                  initial_kam_state, reduce_cocycle, bloch_wave, beta_coefficients)
from .transform import (TransformTable, TransformedState, build_table, free_table,
                        apply_transform, l2_dphi_norm, slope_predictor,
                        orthogonality_check, oscillatory_probe, derivative_norm)

__all__ = [name for name in dir() if not name.startswith("_")]
