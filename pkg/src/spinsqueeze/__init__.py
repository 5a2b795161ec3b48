"""Spin squeezing in a driven collective-spin/cavity model.

Simulation and optimal-control toolkit: collective-spin + truncated-boson
Hilbert space, Lindblad/unitary dynamics under a piecewise-constant cosine
drive, Kitagawa-Ueda squeezing analysis, constant-amplitude scans, effective
twisting models, a from-scratch DDPG agent for time-varying controls, and the
four-step combined (constant prefix + learned tail) strategy.
"""

__version__ = "0.1.0"

from .hilbert import (SpaceDescriptor, Operator, SpinOps, BosonOps, DensityMatrix,
                      build_spin_ops, build_boson_ops, embed, coherent_spin_state,
                      initial_state, initial_state_vector)
from .squeezing import (SpinMoments, SqueezingRecord, StorageResult,
                        mean_spin_direction, squeezing_parameter, optimal_angle,
                        xi2_to_db, storage_integral)
from .dynamics import (ModelParams, ControlSignal, Trajectory, IntegrationError,
                       hamiltonian_h0, control_hamiltonian, lindblad_rhs,
                       evolve, evolve_unitary, fidelity, stable_dt)
from .effective import (EffectiveParams, bessel_j, find_m0, oat_condition_roots,
                        tat_condition_roots, effective_hamiltonian,
                        validate_effective)
from .sweep import SweepResult, sweep_constant, find_zeta_min
from .ddpg import AgentConfig, MLPNet, ReplayBuffer, Transition, TrainingLog, train, evaluate
from .combined import (StitchedControl, CombinedResult, choose_regime, stitch_control,
                       optimize_stitched, learn_tail, combined_pipeline)
