"""Evaluation campaigns: accuracy, FLOPs, seed success rates, op reuse,
and reasoning-path export."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .config import TrainConfig
from .env import ReasoningEnv, RewardConfig
from .errors import ShapeError
from .model import Model
from .planner import base_policy, select_action
from .predicates import OperatorFootprint, footprint_slots
from .reasoner import ReasoningTrace, flops_of
from .tasks import TASK_NAMES, TaskId, make_instance, spawn_instance_seed
from .training import RolloutRecord


@dataclass
class EvalResult:
    task: TaskId
    m: int
    mode: str  # "planner" (threshold footprints) or "full" (all ops on)
    accuracies: np.ndarray
    flops: np.ndarray
    full_flops: np.ndarray
    footprints: list[tuple[tuple[int, ...], ...]]
    traces: list[ReasoningTrace]

    @property
    def accuracy(self) -> float:
        return float(self.accuracies.mean())

    @property
    def mean_flops(self) -> float:
        return float(self.flops.mean())

    @property
    def flops_ratio(self) -> float:
        return float(self.flops.sum() / self.full_flops.sum())

    def activation_frequency(self) -> np.ndarray:
        """P(I^j): fraction of (instance, step) slots with op j active."""
        bits = np.array([[list(f) for f in fps] for fps in self.footprints],
                        dtype=np.float64)
        return bits.mean(axis=(0, 1))

    def to_json(self) -> dict:
        return {
            "task": TASK_NAMES[self.task],
            "m": self.m,
            "mode": self.mode,
            "accuracy": round(self.accuracy, 6),
            "accuracies": [round(float(a), 6) for a in self.accuracies],
            "mean_flops": round(self.mean_flops, 2),
            "flops_ratio": round(self.flops_ratio, 6),
            "activation_frequency": [round(float(f), 6)
                                     for f in self.activation_frequency()],
        }


def evaluate_model(model: Model, task: TaskId, m: int, n_instances: int,
                   config: TrainConfig, seed: int = 0,
                   mode: str = "planner") -> EvalResult:
    """Run ``n_instances`` single-instance episodes without search.

    ``planner`` mode thresholds the base policy per step; ``full`` runs
    every op. The planner is the inference-time footprint source; search
    is a training-only device.
    """
    if mode not in ("planner", "full"):
        raise ValueError(f"unknown eval mode {mode!r}")
    if task not in model.heads:
        raise ShapeError(f"model has no head for task {TASK_NAMES[task]}")
    rng = np.random.default_rng(seed)
    env = ReasoningEnv(model.config, model.layers, model.heads,
                       reward=RewardConfig(penalty=config.penalty, gamma=config.gamma),
                       multi_task=config.multi_task)
    ones = OperatorFootprint.ones(model.config.breadth)
    full_layer = flops_of(ones, model.config, m)

    accuracies, flops_list, full_list = [], [], []
    footprints_all, traces = [], []
    for _ in range(n_instances):
        inst = make_instance(task, m, spawn_instance_seed(rng),
                             edge_prob=config.edge_prob, red_prob=config.red_prob,
                             founder_prob=config.founder_prob)
        state = env.reset([inst])
        done = False
        while not done:
            if mode == "planner":
                pol = base_policy(state.group, model.planner, model.config)
                action = select_action(pol, mode="argmax")
            else:
                action = ones
            state, _, done = env.step(state, action)
        accuracies.append(env.terminal_accuracy(state))
        flops_list.append(sum(state.flops))
        full_list.append(full_layer * model.config.depth)
        footprints_all.append(tuple(f.bits for f in state.footprints))
        traces.append(ReasoningTrace(footprints=state.footprints,
                                     flops=state.flops))
    return EvalResult(task=task, m=m, mode=mode,
                      accuracies=np.array(accuracies),
                      flops=np.array(flops_list, dtype=np.int64),
                      full_flops=np.array(full_list, dtype=np.int64),
                      footprints=footprints_all, traces=traces)


def majority_rate(task: TaskId, m: int, n_instances: int, seed: int = 0,
                  **gen_kwargs) -> float:
    """Accuracy of always predicting the majority label (diagonal excluded
    for binary targets); the floor an untrained model hovers around."""
    rng = np.random.default_rng(seed)
    ones = total = 0
    for _ in range(n_instances):
        inst = make_instance(task, m, spawn_instance_seed(rng), **gen_kwargs)
        t = inst.target
        if t.ndim == 2:
            mask = ~np.eye(m, dtype=bool)
            ones += int(t[mask].sum())
            total += int(mask.sum())
        else:
            ones += int(t.sum())
            total += t.size
    p = ones / total
    return max(p, 1.0 - p)


def compute_pss(per_seed_accuracies: list[list[float]]) -> float:
    """100 x fraction of seeds with accuracy exactly 1.0 at every size."""
    if not per_seed_accuracies:
        raise ValueError("PSS needs at least one seed")
    good = sum(1 for accs in per_seed_accuracies if all(a == 1.0 for a in accs))
    return 100.0 * good / len(per_seed_accuracies)


def reuse_matrix(freqs: dict[TaskId, np.ndarray]) -> tuple[list[TaskId], np.ndarray]:
    """Pairwise op-reuse tensor: entry (a, b, j) = min(P_a(I^j), P_b(I^j))."""
    tasks = sorted(freqs)
    k = len(next(iter(freqs.values())))
    out = np.zeros((len(tasks), len(tasks), k))
    for i, a in enumerate(tasks):
        for j, b in enumerate(tasks):
            out[i, j] = np.minimum(freqs[a], freqs[b])
    return tasks, out


# -- reasoning-path export -------------------------------------------------------


def trace_edges(footprints, breadth: int):
    """Edges (t, arity, branch) -> (source state node, target state node).

    direct keeps the arity, expand lifts from arity-1, reduce drops from
    arity+1; one edge per active footprint bit.
    """
    edges = []
    slots = footprint_slots(breadth)
    for t, fp in enumerate(footprints):
        bits = fp.bits if isinstance(fp, OperatorFootprint) else tuple(fp)
        for (arity, branch), bit in zip(slots, bits):
            if not bit:
                continue
            src_arity = {"expand": arity - 1, "direct": arity, "reduce": arity + 1}[branch]
            edges.append((t, arity, branch, f"s{t}_a{src_arity}", f"s{t + 1}_a{arity}"))
    return edges


def export_trace(task_footprints: dict[TaskId, tuple], breadth: int):
    """Deterministic DOT digraph plus JSONL records.

    ``task_footprints`` maps each task to one representative footprint
    sequence. Edges present in >= 2 tasks are annotated shared.
    """
    per_task_edges = {}
    for task, footprints in sorted(task_footprints.items()):
        per_task_edges[task] = set(trace_edges(footprints, breadth))
    counts: dict[tuple, int] = {}
    for edges in per_task_edges.values():
        for e in edges:
            counts[e] = counts.get(e, 0) + 1

    lines = ["digraph reasoning {", "  rankdir=LR;"]
    records = []
    for task in sorted(per_task_edges):
        name = TASK_NAMES[task]
        for t, arity, branch, src, dst in sorted(per_task_edges[task]):
            shared = counts[(t, arity, branch, src, dst)] > 1
            label = f"{branch} L{t}"
            style = "bold" if shared else "solid"
            lines.append(f'  {src} -> {dst} [label="{label}" style={style} '
                         f'comment="{ "shared" if shared else name }"];')
            records.append({"task": name, "layer": t, "arity": arity,
                            "branch": branch, "source": src, "target": dst,
                            "shared": shared})
    lines.append("}")
    jsonl = "\n".join(json.dumps(r) for r in records)
    return "\n".join(lines), jsonl


def record_flops_table(results: list[EvalResult]) -> str:
    """Delimited text: one row per (task, m, mode)."""
    header = "task\tm\tmode\taccuracy\tmean_flops\tflops_ratio"
    rows = [header]
    for r in sorted(results, key=lambda r: (int(r.task), r.m, r.mode)):
        rows.append(f"{TASK_NAMES[r.task]}\t{r.m}\t{r.mode}\t"
                    f"{r.accuracy:.6f}\t{r.mean_flops:.1f}\t{r.flops_ratio:.6f}")
    return "\n".join(rows)


def rollout_records_jsonl(records: list[RolloutRecord]) -> str:
    return "\n".join(json.dumps(r.to_json()) for r in records)
