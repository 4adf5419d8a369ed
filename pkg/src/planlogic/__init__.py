"""Planner-gated neural logic reasoner.

Differentiable relational operators over predicate tensors, a learned
planner that gates them per layer (optionally wrapped in tree search),
RL training loops, and exact symbolic benchmarks with oracles.
"""

from .config import (TrainConfig, apply_overrides, default_train_config,
                     read_config, write_config)
from .env import ReasoningEnv, RewardConfig, accuracy, episode_return
from .errors import (ArityError, CheckpointError, ConfigError, DatasetError,
                     DivergenceError, ShapeError)
from .evaluate import (EvalResult, compute_pss, evaluate_model, export_trace,
                       reuse_matrix)
from .model import Model, init_model, named_parameters
from .planner import (SearchConfig, base_policy, candidate_footprints,
                      mcts_search, select_action)
from .predicates import OperatorFootprint, PredicateGroup, footprint_slots
from .reasoner import ReasonerConfig, ReasoningTrace, flops_of, layer_forward
from .tasks import (TASK_BY_NAME, TASK_NAMES, TaskId, make_instance,
                    read_instances, write_instances)
from .training import (ReplayBuffer, RolloutRecord, load_checkpoint,
                       run_muzero, run_ppo, run_reinforce, run_supervised,
                       run_training, save_checkpoint)

__version__ = "0.1.0"

__all__ = [
    "ArityError", "CheckpointError", "ConfigError", "DatasetError",
    "DivergenceError", "EvalResult", "Model", "OperatorFootprint",
    "PredicateGroup", "ReasonerConfig", "ReasoningEnv", "ReasoningTrace",
    "ReplayBuffer", "RewardConfig", "RolloutRecord", "SearchConfig",
    "ShapeError", "TASK_BY_NAME", "TASK_NAMES", "TaskId", "TrainConfig",
    "accuracy", "apply_overrides", "base_policy", "candidate_footprints",
    "compute_pss", "default_train_config", "episode_return", "evaluate_model",
    "export_trace", "flops_of", "footprint_slots", "init_model",
    "layer_forward", "load_checkpoint", "make_instance", "mcts_search",
    "named_parameters", "read_config", "read_instances", "reuse_matrix",
    "run_muzero", "run_ppo", "run_reinforce", "run_supervised",
    "run_training", "save_checkpoint", "select_action", "write_config",
    "write_instances",
]
