"""Joint optimization of traditional and conditional handovers.

A discrete-time simulator plus an online meta-learning controller that
assigns serving cells and prepared-cell sets per user and per slot,
trading spectral efficiency against signaling (switching) costs.
"""

from .model import (STATIC, DYNAMIC, NetworkConfig, Decision, SwitchingCosts,
                    switching_cost, weighted_norm, dual_weighted_norm)
from .objective import (SinrTensor, RateTensor, compute_rates,
                        surrogate_utility, surrogate_gradient,
                        surrogate_value_and_gradient, exact_utility,
                        max_approx_gap_bound)
from .feasible import (FeasibleSpec, FeasibilityError, FeasibilityReport,
                       validate, project, anchor_point, RoundResult,
                       round_static, round_dynamic, round_greedy)
from .learner import (LearnerBounds, compute_bounds, num_experts,
                      expert_step_sizes, hedge_rate, initial_weights,
                      MetaLearner, Proposal)
from .scenario import (VolatileScenario, StationaryScenario, TraceScenario,
                       UniformCosts, HeterogeneousCosts, MobilityTrace,
                       realize, gen_costs, gen_block_sinr, gen_gauss_markov,
                       compute_sinr, declared_rate_ceiling, load_trace,
                       save_trace, gen_synthetic_trace)
from .baselines import (ThresholdPolicy, PerSlotOracle, dp_exact_oracle,
                        enumerate_feasible_binary, maximize_slot_objective)
from .metrics import (RunLedger, objective_series, trajectory_objective,
                      dynamic_regret, path_length, count_switches,
                      exact_utility_series, mean_stderr)
from .runner import (RunPlan, PolicySpec, PolicyRun, ConfigError, load_plan,
                     parse_plan, scenario_hash, realize_seed, simulate_policy,
                     run_seed, run_experiment, comparison_table)

__version__ = "0.1.0"
