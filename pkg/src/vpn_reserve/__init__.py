"""Worst-case-aware dynamic bandwidth reservation for VPNs under the hose
model: finite MDP solvers, occupation-measure LPs, hierarchical multi-VPN
control, Cross-Entropy decomposition, switching-control games and
simulation-based policy gradients."""

__version__ = "0.1.0"

from .bellman import enumerate_optimal, rollout, sojourn_statistics, solve_chain, \
    solve_finite_horizon
from .ce import GammaParams, quantile_level, run_ce, sample_reservations, \
    update_parameters
from .costs import PriceTable, link_delay, link_stage_cost, phi, phi_inverse, \
    vpn_stage_cost
from .errors import ConfigurationError, DecompositionError, GameIterationError, \
    InstanceTooLargeError, SaturationError, SimplexError, VpnReserveError
from .game import SwitchingGame, build_switching_game, local_matrix_game, \
    partition_states, solve_single_controller, solve_switching_game
from .gradient import gradient_step, parametrized_kernel_and_cost, \
    policy_probabilities, run_policy_gradient
from .hierarchy import SatisfactionBounds, VpnUnit, aggregate_links, build_link_mdp, \
    satisfaction_check, simulate_hierarchical
from .hose import HoseSpec, build_state_space, build_transition_model, \
    transition_distribution
from .scenario import Scenario, load_scenario
from .stationary import build_dual_lp, ergodicity_check, extract_stationary_strategy, \
    solve_simplex
