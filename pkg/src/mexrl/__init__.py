"""Maximize-to-explore online RL for episodic MDPs and zero-sum Markov games."""
from .core import (ConfigurationError, Episode, EpisodicMDP, JointPolicy, Policy, ValueTable,
                   ZeroSumMG, dump_env, load_env, policy_evaluation, sample_episode)
from .hypothesis import (HypothesisClass, ModelBasedHypothesis, ModelFreeHypothesis,
                         enumerate_tabular_model_class, model_free_class_from_models)
from .mex import MexConfig, RunLog, mex_select, run_mex_mdp, run_mex_mg
from .planner import (best_response_value_iteration, ne_value_iteration, plan_optimal,
                      solve_matrix_game)

__version__ = "0.1.0"
