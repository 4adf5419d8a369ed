"""Episodic environment: states are predicate groups, actions are footprints.

One episode runs a fixed batch of same-task, same-size instances through
the reasoner, one layer per step (layer t owns step t's parameters). The
reward is -penalty * decay(t) * |active ops| each step, plus the batch
prediction accuracy at the terminal step.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ShapeError
from .predicates import (
    BASE_BINARY_SLOTS,
    BASE_UNARY_SLOTS,
    OperatorFootprint,
    PredicateGroup,
    ReasonerConfig,
)
from .reasoner import HeadParams, LayerParams, layer_forward, output_head
from .tasks import TARGET_ARITY, TaskId, TaskInstance
from .tensor import Tensor


@dataclass(frozen=True)
class RewardConfig:
    penalty: float = 0.01  # per active op per step
    gamma: float = 1.0
    decay: float | None = None  # penalty *= exp(-t/decay) when set

    def __post_init__(self):
        if self.penalty < 0:
            raise ValueError("penalty must be >= 0")
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError("gamma must lie in [0, 1]")
        if self.decay is not None and self.decay <= 0:
            raise ValueError("decay must be positive when set")

    def step_penalty(self, t: int, active_ops: int) -> float:
        scale = math.exp(-t / self.decay) if self.decay else 1.0
        return self.penalty * scale * active_ops


def build_input_group(instances: list[TaskInstance], config: ReasonerConfig,
                      multi_task: bool) -> PredicateGroup:
    """Zero-padded base tensors; the task one-hot fills the nullary slot
    only in multi-task mode (single-task runs keep it zero)."""
    n = len(instances)
    m = instances[0].m
    task = instances[0].task
    tensors = []
    for r in range(config.breadth + 1):
        tensors.append(np.zeros((n,) + (m,) * r + (config.state_width(r),),
                                dtype=np.float32))
    if multi_task:
        tensors[0][:, int(task)] = 1.0
    for i, inst in enumerate(instances):
        for slot, key in enumerate(BASE_UNARY_SLOTS):
            if key in inst.base:
                tensors[1][i, :, slot] = inst.base[key]
        for slot, key in enumerate(BASE_BINARY_SLOTS):
            if key in inst.base:
                tensors[2][i, :, :, slot] = inst.base[key]
    return PredicateGroup([Tensor(t) for t in tensors], m)


def accuracy(predictions, targets: np.ndarray) -> float:
    """Fraction of correctly thresholded groundings (>= 0.5 counts true).

    Binary-relation targets have their diagonal masked out.
    """
    pred = predictions.data if isinstance(predictions, Tensor) else np.asarray(predictions)
    tgt = np.asarray(targets)
    if pred.shape != tgt.shape:
        raise ShapeError(f"predictions {pred.shape} vs targets {tgt.shape}")
    bits = pred >= 0.5
    hit = bits == (tgt > 0)
    if tgt.ndim == 3 and tgt.shape[1] == tgt.shape[2]:
        mask = ~np.eye(tgt.shape[1], dtype=bool)[None, :, :]
        return float(hit[np.broadcast_to(mask, hit.shape)].mean())
    return float(hit.mean())


def episode_return(rewards, gamma: float) -> float:
    total = 0.0
    for r in reversed(list(rewards)):
        total = r + gamma * total
    return float(total)


def offdiag_mask(batch: int, m: int) -> np.ndarray:
    return np.broadcast_to(~np.eye(m, dtype=bool)[None, :, :], (batch, m, m)).astype(np.float32)


@dataclass
class EnvState:
    t: int
    group: PredicateGroup
    task: TaskId
    instances: tuple[TaskInstance, ...]
    targets: np.ndarray
    footprints: tuple[OperatorFootprint, ...] = ()
    flops: tuple[int, ...] = ()

    @property
    def m(self) -> int:
        return self.group.m


class ReasoningEnv:
    """Deterministic transitions: step t applies layer t under the action."""

    def __init__(self, config: ReasonerConfig, layers: list[LayerParams],
                 heads: dict[TaskId, HeadParams], reward: RewardConfig | None = None,
                 multi_task: bool = True):
        self.config = config
        self.layers = layers
        self.heads = heads
        self.reward = reward if reward is not None else RewardConfig()
        self.multi_task = multi_task
        self.horizon = config.depth

    @property
    def gamma(self) -> float:
        return self.reward.gamma

    def reset(self, instances: list[TaskInstance]) -> EnvState:
        if not instances:
            raise ValueError("an episode needs at least one instance")
        task, m = instances[0].task, instances[0].m
        if any(i.task != task or i.m != m for i in instances):
            raise ValueError("episode batch must share one task and one size")
        group = build_input_group(instances, self.config, self.multi_task)
        targets = np.stack([i.target for i in instances]).astype(np.float32)
        return EnvState(t=0, group=group, task=task, instances=tuple(instances),
                        targets=targets)

    def step(self, state: EnvState, footprint: OperatorFootprint):
        """Returns (next_state, reward, done)."""
        if state.t >= self.horizon:
            raise ValueError(f"episode already finished at t={state.t}")
        next_group, flops = layer_forward(state.group, footprint,
                                          self.layers[state.t], self.config)
        reward = -self.reward.step_penalty(state.t, footprint.num_active)
        done = state.t + 1 == self.horizon
        next_state = EnvState(
            t=state.t + 1, group=next_group, task=state.task,
            instances=state.instances, targets=state.targets,
            footprints=state.footprints + (footprint,),
            flops=state.flops + (flops,),
        )
        if done:
            reward += self.terminal_accuracy(next_state)
        return next_state, float(reward), done

    def predictions(self, state: EnvState) -> np.ndarray:
        return output_head(state.group, state.task, self.heads).data

    def terminal_accuracy(self, state: EnvState) -> float:
        return accuracy(self.predictions(state), state.targets)
