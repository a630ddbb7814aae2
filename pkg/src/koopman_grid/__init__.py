"""Bilinear Koopman surrogates for microgrid transient prediction.

The toolkit simulates ground-truth inverter subsystems on a small power
network, identifies a discrete bilinear surrogate per subsystem from
sampled trajectories, and couples the surrogates through the network's
mixed-port constraint matrix to predict whole-system transients.
"""

from .observables import (
    ObservableDictionary, build_monomial_dictionary, lift, lift_many,
    state_extractor,
)
from .identification import (
    EXPLICIT, IMPLICIT, TrajectorySegment, TrajectoryDataset, DataMatrices,
    assemble_data_matrices, KbfModel, solve_kbf, eigen_analysis,
    canonical_transform, TruncationSuggestion, suggest_truncation_order,
)
from .runtime import (
    LiftedState, initial_lift, step_explicit, step_implicit,
    reconstruct_state, rollout, RolloutResult,
)
from .network import (
    NetworkModel, HybridNetwork, kron_reduce, existence_check,
    hybrid_from_admittance, hybrid_from_measurements, solve_mixed_ports,
    load_network_file,
)
from .der import (
    VfDerParams, PqDerParams, vf_derivative, pq_derivative,
    vf_input_fields, pq_input_fields, shift_phase, shift_der_state,
    wrap_angle, vf_equilibrium, pq_equilibrium, OMEGA_NOMINAL,
)
from .simulation import (
    Scenario, ScenarioEvent, MicrogridSystem, build_system,
    solve_power_flow, equilibrium_states, SimulationResult,
    simulate_microgrid, random_scenario, generate_training_data,
)
from .predictor import PredictionPlan, PredictionResult, predict, evaluate
from .config import canonical_system, load_system_file, system_from_dict

__version__ = "0.1.0"
