"""Multi-armed bandits with abandonment.

Exact solvers for the model, state-aware index policies (ULCB, KL-ULCB and
their general-state variants), baselines, and a reproducible Monte-Carlo
regret harness.
"""
from .model import (ArmSet, AssumptionError, BanditInstance, BinaryAbandonment,
                    DegenerateInstanceWarning, GeneralAbandonment, LogCurve, StepOutcome,
                    TableCurve, TERMINAL, replication_rng, step, transition_probs)
from .policies import (AgentState, Kind, Orientation, PolicySpec, QTable, disc_state_map,
                       kl_index_lower, kl_index_upper, qlearn_step, select_action, ulcb_index,
                       update)
from .simulator import (DEFAULT_SEED, Estimator, RegretTrace, SimConfig, TruncationWarning,
                        cross_validate_estimators, monte_carlo, normalize_by_logk, run_trial,
                        run_trial_reference)
from .solver import (BoundConstants, ConvergenceError, GapOrientation, ValueSolution,
                     bernoulli_kl, bound_constants, check_gap_monotonicity, check_orientation,
                     expected_episode_length, solve_binary_values, solve_general_values,
                     solve_general_values_direct, sufficient_condition, verify_optimal_policy)

__version__ = "0.1.0"
