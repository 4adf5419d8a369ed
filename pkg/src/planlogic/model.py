"""Model container: reasoner layers, task heads, planner, one rng stream.

Parameter naming is deterministic so optimizer state and checkpoints can
key arrays by name: ``layer{t}.a{arity}.{branch}.w{i}|b{i}`` for the
reasoner, ``head.{task}...`` for output heads, ``planner....`` for the
policy/value stack.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import TrainConfig
from .nn import MlpParams
from .planner import PlannerParams, init_planner_params
from .predicates import ReasonerConfig, footprint_slots
from .reasoner import (
    HeadParams,
    LayerParams,
    init_head_params,
    init_reasoner_params,
)
from .tasks import TARGET_ARITY, TaskId
from .tensor import Tensor


@dataclass
class Model:
    config: ReasonerConfig
    layers: list[LayerParams]
    heads: dict[TaskId, HeadParams]
    planner: PlannerParams


def init_model(train_config: TrainConfig, rng: np.random.Generator) -> Model:
    config = train_config.reasoner_config()
    layers = init_reasoner_params(config, rng)
    heads = {task: init_head_params(config, TARGET_ARITY[task], rng)
             for task in sorted(train_config.tasks)}
    planner = init_planner_params(config, rng)
    return Model(config=config, layers=layers, heads=heads, planner=planner)


def _mlp_entries(prefix: str, mlp: MlpParams):
    for i, (w, b) in enumerate(zip(mlp.weights, mlp.biases)):
        yield f"{prefix}.w{i}", w
        yield f"{prefix}.b{i}", b


def _layer_entries(prefix: str, layer: LayerParams, config: ReasonerConfig):
    if config.formulation == "sum":
        for arity, branch in footprint_slots(config.breadth):
            yield from _mlp_entries(f"{prefix}.a{arity}.{branch}", layer[(arity, branch)])
    else:
        for arity in range(config.breadth + 1):
            yield from _mlp_entries(f"{prefix}.a{arity}.fused", layer[(arity, "fused")])


def named_parameters(model: Model) -> list[tuple[str, Tensor]]:
    """Stable (name, tensor) ordering shared by optimizers and checkpoints."""
    entries: list[tuple[str, Tensor]] = []
    for t, layer in enumerate(model.layers):
        entries.extend(_layer_entries(f"layer{t}", layer, model.config))
    for task in sorted(model.heads):
        entries.extend(_mlp_entries(f"head.{int(task)}", model.heads[task].mlp))
    entries.extend(_layer_entries("planner.layer", model.planner.layer, model.config))
    entries.extend(_mlp_entries("planner.op_head", model.planner.op_head))
    entries.extend(_mlp_entries("planner.value_head", model.planner.value_head))
    return entries


def reasoner_parameters(model: Model) -> list[Tensor]:
    """Layer MLPs plus task heads: everything the BCE loss trains."""
    params = [t for name, t in named_parameters(model) if name.startswith("layer")]
    params += [t for name, t in named_parameters(model) if name.startswith("head.")]
    return params


def policy_parameters(model: Model) -> list[Tensor]:
    return [t for name, t in named_parameters(model)
            if name.startswith(("planner.layer", "planner.op_head"))]


def value_parameters(model: Model) -> list[Tensor]:
    return [t for name, t in named_parameters(model)
            if name.startswith("planner.value_head")]


def parameter_fingerprint(params: list[Tensor]) -> float:
    """Cheap change detector for gradient-isolation checks."""
    return float(sum(np.abs(t.data).sum() for t in params))
