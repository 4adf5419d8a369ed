"""Reasoner layers: gated branch-sum forward, fused baseline, FLOPs, heads.

A layer maps a predicate group to the next one. In the ``sum`` formulation
each (arity, branch) slot has its own small MLP applied to the permuted
stack of its source tensor; active branch outputs are summed pre-sigmoid,
so an inactive branch contributes nothing and an arity with no active
branch yields an all-zeros tensor. The ``concat`` formulation (fused
baseline) concatenates all sources per arity and runs a single MLP,
ignoring the footprint.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import factorial

import numpy as np

from . import tensor as T
from .errors import ShapeError
from .nn import MlpParams, forward_mlp, init_mlp
from .predicates import (
    BRANCH_DIRECT,
    BRANCH_EXPAND,
    BRANCH_REDUCE,
    QUANT_EXISTS,
    QUANT_FORALL,
    OperatorFootprint,
    PredicateGroup,
    ReasonerConfig,
    expand,
    footprint_slots,
    permute_stack,
    reduce,
)
from .tensor import Tensor

# layer params are plain dicts keyed by (arity, branch); the fused
# formulation uses the pseudo-branch "fused"
LayerParams = dict

BRANCH_FUSED = "fused"


def branch_fan_in(config: ReasonerConfig, arity: int, branch: str) -> int:
    """Input width of the branch MLP after source transform + permute stack."""
    if branch == BRANCH_EXPAND:
        src = config.state_width(arity - 1)
    elif branch == BRANCH_DIRECT:
        src = config.state_width(arity)
    elif branch == BRANCH_REDUCE:
        src = 2 * config.state_width(arity + 1)  # forall and exists, concatenated
    elif branch == BRANCH_FUSED:
        src = config.state_width(arity)
        if arity > 0:
            src += config.state_width(arity - 1)
        if arity < config.breadth:
            src += 2 * config.state_width(arity + 1)
    else:
        raise ValueError(f"unknown branch {branch!r}")
    return src * factorial(arity)


def init_layer_params(config: ReasonerConfig, rng: np.random.Generator) -> LayerParams:
    params: LayerParams = {}
    if config.formulation == "sum":
        for arity, branch in footprint_slots(config.breadth):
            dims = [branch_fan_in(config, arity, branch), config.hidden, config.channels]
            params[(arity, branch)] = init_mlp(dims, rng)
    else:
        for arity in range(config.breadth + 1):
            dims = [branch_fan_in(config, arity, BRANCH_FUSED), config.hidden, config.channels]
            params[(arity, BRANCH_FUSED)] = init_mlp(dims, rng)
    return params


def init_reasoner_params(config: ReasonerConfig, rng: np.random.Generator) -> list[LayerParams]:
    return [init_layer_params(config, rng) for _ in range(config.depth)]


def _branch_input(group: PredicateGroup, arity: int, branch: str) -> Tensor:
    if branch == BRANCH_EXPAND:
        return expand(group[arity - 1], m=group.m)
    if branch == BRANCH_DIRECT:
        return group[arity]
    src = group[arity + 1]
    return T.concat([reduce(src, QUANT_FORALL), reduce(src, QUANT_EXISTS)],
                    axis=src.ndim - 2)


def _pad_channels(t: Tensor, width: int) -> Tensor:
    have = t.shape[-1]
    if have == width:
        return t
    pad = T.Tensor(np.zeros(t.shape[:-1] + (width - have,), dtype=np.float32))
    return T.concat([t, pad], axis=t.ndim - 1)


def _zeros_state(batch: int, m: int, arity: int, width: int) -> Tensor:
    return T.Tensor(np.zeros((batch,) + (m,) * arity + (width,), dtype=np.float32))


def layer_forward(
    group: PredicateGroup,
    footprint: OperatorFootprint,
    params: LayerParams,
    config: ReasonerConfig,
) -> tuple[PredicateGroup, int]:
    """One reasoner step. Returns the next group and this step's FLOPs."""
    if group.breadth != config.breadth:
        raise ShapeError(f"group breadth {group.breadth} != config {config.breadth}")
    if len(footprint.bits) != config.num_ops:
        raise ShapeError(
            f"footprint length {len(footprint.bits)} != {config.num_ops}"
        )
    outs: list[Tensor] = []
    if config.formulation == "sum":
        for arity in range(config.breadth + 1):
            acc = None
            for branch in (BRANCH_EXPAND, BRANCH_DIRECT, BRANCH_REDUCE):
                if (arity, branch) not in params or not footprint.active(arity, branch):
                    continue
                x = permute_stack(_branch_input(group, arity, branch))
                y = forward_mlp(params[(arity, branch)], x)
                acc = y if acc is None else acc + y
            if acc is None:
                out = _zeros_state(group.batch, group.m, arity, config.state_width(arity))
            else:
                out = _pad_channels(T.sigmoid(acc), config.state_width(arity))
            if config.residual:
                out = T.maximum(out, group[arity])
            outs.append(out)
        flops = flops_of(footprint, config, group.m)
    else:
        for arity in range(config.breadth + 1):
            parts = []
            if arity > 0:
                parts.append(expand(group[arity - 1], m=group.m))
            parts.append(group[arity])
            if arity < config.breadth:
                src = group[arity + 1]
                parts.append(reduce(src, QUANT_FORALL))
                parts.append(reduce(src, QUANT_EXISTS))
            x = parts[0] if len(parts) == 1 else T.concat(parts, axis=parts[0].ndim - 1)
            y = forward_mlp(params[(arity, BRANCH_FUSED)], permute_stack(x))
            out = _pad_channels(T.sigmoid(y), config.state_width(arity))
            if config.residual:
                out = T.maximum(out, group[arity])
            outs.append(out)
        flops = flops_of_fused(config, group.m)
    return PredicateGroup(outs, group.m), flops


# -- FLOPs accounting -----------------------------------------------------
# Conventions: one dense sub-layer with fan-in f, fan-out o over P positions
# costs 2*f*o*P + o*P; permute/expand/reduce blocks and elementwise
# activations cost 1 per output element; branch-sum adds and zero padding
# are free. Counts are per single instance (batch-independent) exact ints.


def _mlp_flops(dims: list[int], positions: int, hidden_layers_activated: bool = True) -> int:
    total = 0
    for i, (fi, fo) in enumerate(zip(dims[:-1], dims[1:])):
        total += (2 * fi * fo + fo) * positions
        if hidden_layers_activated and i < len(dims) - 2:
            total += fo * positions  # relu
    return total


def _branch_flops(config: ReasonerConfig, arity: int, branch: str, m: int) -> int:
    positions = m**arity
    fact = factorial(arity)
    if branch == BRANCH_EXPAND:
        src_w = config.state_width(arity - 1)
        transform = positions * src_w
        stacked_w = src_w * fact
    elif branch == BRANCH_DIRECT:
        src_w = config.state_width(arity)
        transform = 0
        stacked_w = src_w * fact
    elif branch == BRANCH_REDUCE:
        src_w = config.state_width(arity + 1)
        transform = 2 * positions * src_w
        stacked_w = 2 * src_w * fact
    else:
        raise ValueError(branch)
    stack = stacked_w * positions if arity >= 2 else 0
    mlp = _mlp_flops([stacked_w, config.hidden, config.channels], positions)
    return transform + stack + mlp


def flops_of(footprint: OperatorFootprint, config: ReasonerConfig, m: int) -> int:
    """Exact per-instance FLOPs of one gated layer application."""
    total = 0
    arity_active = [False] * (config.breadth + 1)
    for (arity, branch), bit in zip(footprint_slots(config.breadth), footprint.bits):
        if bit:
            total += _branch_flops(config, arity, branch, m)
            arity_active[arity] = True
    for arity, active in enumerate(arity_active):
        if active:
            total += config.channels * m**arity  # sigmoid over the branch sum
    return total


def flops_of_fused(config: ReasonerConfig, m: int) -> int:
    """Per-instance FLOPs of one fused-baseline layer application."""
    total = 0
    for arity in range(config.breadth + 1):
        positions = m**arity
        fact = factorial(arity)
        in_w = config.state_width(arity)
        if arity > 0:
            src = config.state_width(arity - 1)
            total += positions * src
            in_w += src
        if arity < config.breadth:
            src = config.state_width(arity + 1)
            total += 2 * positions * src
            in_w += 2 * src
        stacked_w = in_w * fact
        if arity >= 2:
            total += stacked_w * positions
        total += _mlp_flops([stacked_w, config.hidden, config.channels], positions)
        total += config.channels * positions
    return total


# -- multi-step forward ----------------------------------------------------


@dataclass
class ReasoningTrace:
    """Per-layer footprints and FLOPs of one reasoner pass."""

    footprints: tuple[OperatorFootprint, ...]
    flops: tuple[int, ...]
    snapshots: list | None = None

    @property
    def total_flops(self) -> int:
        return sum(self.flops)

    @property
    def active_op_count(self) -> int:
        return sum(fp.num_active for fp in self.footprints)


def reasoner_forward(
    group: PredicateGroup,
    footprints: list[OperatorFootprint],
    layers: list[LayerParams],
    config: ReasonerConfig,
    record_snapshots: bool = False,
) -> tuple[PredicateGroup, ReasoningTrace]:
    """Run every layer in order (footprint i gates layer i)."""
    if len(footprints) != len(layers):
        raise ShapeError(
            f"{len(footprints)} footprints for {len(layers)} layers"
        )
    snaps = [] if record_snapshots else None
    flops: list[int] = []
    for fp, params in zip(footprints, layers):
        group, f = layer_forward(group, fp, params, config)
        flops.append(f)
        if snaps is not None:
            snaps.append([np.array(t.data) for t in group.tensors])
    trace = ReasoningTrace(tuple(footprints), tuple(flops), snaps)
    return group, trace


# -- task output heads -------------------------------------------------------


@dataclass
class HeadParams:
    """Per-task readout: sigmoid MLP on the final tensor at the task's arity."""

    arity: int
    mlp: MlpParams


def init_head_params(config: ReasonerConfig, arity: int, rng: np.random.Generator) -> HeadParams:
    mlp = init_mlp([config.state_width(arity), 1], rng, output_activation="sigmoid")
    return HeadParams(arity=arity, mlp=mlp)


def output_head(group: PredicateGroup, task, heads: dict) -> Tensor:
    """Per-grounding probabilities for ``task``: shape [batch, m]*arity."""
    if task not in heads:
        raise KeyError(f"no output head for task {task!r}")
    head = heads[task]
    t = group[head.arity]
    out = forward_mlp(head.mlp, t)
    return T.reshape(out, out.shape[:-1])
