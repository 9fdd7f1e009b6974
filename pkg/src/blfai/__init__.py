"""Best feasible arm identification for linear bandits with a fixed budget."""

from .core import (ArmClassification, ArmSet, Instance, InvalidInstanceError,
                   best_feasible_arm, classify_arms, instance_from_dict,
                   instance_to_dict, is_alternative, load_instance,
                   save_instance)
from .env import RngStream, pull, split_seed
from .design import DesignError, g_optimal, info_matrix
from .hardness import (ConvergenceError, HardnessResult, SolverOptions,
                       f_values, gamma_closed_form, gamma_minmax_form,
                       project_to_alternative)
from .learners import (AdaHedgeState, RidgePosterior, adahedge_update,
                       empirical_feasible_best, ridge_update,
                       sample_constrained_posterior)
from .algorithms import (BlfaipsParams, RunResult, blfaips_run,
                         checkpoint_grid, lints_feasible_run, oracle_run,
                         peps_proxy_run, ttts_beta_run)
from .harness import (AlgorithmSpec, ConfigError, ExperimentConfig,
                      ExperimentError, ExponentFit, ExponentUnresolved,
                      RunRecord, estimate_error_exponent,
                      generate_eoo_instance, generate_random_instance,
                      load_config, load_dataset_instance, run_experiment)

__version__ = "0.1.0"
