"""Training loops: REINFORCE, PPO, and the search-driven buffer loop.

All three share one episode format (RolloutRecord), one replay buffer, one
reasoner BCE pathway, and one metrics log. The planner learns from reward;
the reasoner learns supervised from oracle targets on the same rollouts.
Gradient isolation holds because policy losses consume detached state
snapshots: predicate groups rebuilt outside the tape never route gradients
into the reasoner stack.
"""

from __future__ import annotations

import json
import math
import os
import time
import zipfile
from dataclasses import dataclass, field, replace

import numpy as np

from . import tensor as T
from .config import TrainConfig, config_to_text, parse_config_text
from .env import ReasoningEnv, RewardConfig, episode_return, offdiag_mask
from .errors import CheckpointError, DivergenceError
from .model import (
    Model,
    init_model,
    named_parameters,
    policy_parameters,
    reasoner_parameters,
    value_parameters,
)
from .nn import Optimizer, bce_loss
from .planner import (
    SearchConfig,
    base_policy,
    bernoulli_log_prob,
    mcts_search,
    policy_forward,
    select_action,
)
from .predicates import OperatorFootprint
from .reasoner import layer_forward, output_head
from .tasks import (
    TARGET_ARITY,
    TRAIN_M,
    TaskId,
    make_instance,
    sample_task,
    spawn_instance_seed,
)
from .tensor import Tensor

CHECKPOINT_FORMAT = 1
DIVERGENCE_FLOOR = -1.0
DIVERGENCE_PATIENCE = 100


# -- rollout records and the buffer ---------------------------------------------


@dataclass(frozen=True)
class RolloutRecord:
    task: TaskId
    m: int
    seeds: tuple[int, ...]
    footprints: tuple[tuple[int, ...], ...]
    rewards: tuple[float, ...]
    candidates: tuple[tuple[tuple[int, ...], ...], ...]
    visit_probs: tuple[tuple[float, ...], ...]
    state_means: tuple[tuple[float, ...], ...]  # per step, mean activation per arity
    final_accuracy: float
    episode_return: float
    flops: tuple[int, ...]

    def to_json(self) -> dict:
        return {
            "task": int(self.task),
            "m": self.m,
            "seeds": list(self.seeds),
            "footprints": [list(f) for f in self.footprints],
            "rewards": list(self.rewards),
            "candidates": [[list(c) for c in step] for step in self.candidates],
            "visit_probs": [list(v) for v in self.visit_probs],
            "state_means": [list(s) for s in self.state_means],
            "final_accuracy": self.final_accuracy,
            "episode_return": self.episode_return,
            "flops": list(self.flops),
        }

    @classmethod
    def from_json(cls, d: dict) -> "RolloutRecord":
        return cls(
            task=TaskId(d["task"]),
            m=int(d["m"]),
            seeds=tuple(int(s) for s in d["seeds"]),
            footprints=tuple(tuple(int(b) for b in f) for f in d["footprints"]),
            rewards=tuple(float(r) for r in d["rewards"]),
            candidates=tuple(tuple(tuple(int(b) for b in c) for c in step)
                             for step in d["candidates"]),
            visit_probs=tuple(tuple(float(p) for p in v) for v in d["visit_probs"]),
            state_means=tuple(tuple(float(x) for x in s) for s in d["state_means"]),
            final_accuracy=float(d["final_accuracy"]),
            episode_return=float(d["episode_return"]),
            flops=tuple(int(f) for f in d["flops"]),
        )


class ReplayBuffer:
    """Bounded FIFO; uniform sampling without replacement within a batch."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self._records: list[RolloutRecord] = []

    def __len__(self) -> int:
        return len(self._records)

    def append(self, record: RolloutRecord) -> None:
        self._records.append(record)
        if len(self._records) > self.capacity:
            del self._records[0]

    def sample(self, rng: np.random.Generator, k: int) -> list[RolloutRecord]:
        if not self._records:
            raise ValueError("cannot sample from an empty buffer")
        k = min(k, len(self._records))
        idx = rng.choice(len(self._records), size=k, replace=False)
        return [self._records[int(i)] for i in idx]

    def to_json(self) -> list[dict]:
        return [r.to_json() for r in self._records]

    def load_json(self, records: list[dict]) -> None:
        self._records = [RolloutRecord.from_json(d) for d in records[-self.capacity:]]


class DivergenceGuard:
    """Aborts after `patience` consecutive returns below `floor`."""

    def __init__(self, floor: float = DIVERGENCE_FLOOR,
                 patience: int = DIVERGENCE_PATIENCE):
        self.floor = floor
        self.patience = patience
        self.streak = 0

    def update(self, mean_return: float) -> None:
        self.streak = self.streak + 1 if mean_return < self.floor else 0
        if self.streak >= self.patience:
            raise DivergenceError(
                f"mean return stayed below {self.floor} for "
                f"{self.patience} consecutive batches (last {mean_return:.4f})")


class MetricsLog:
    """Append-only JSONL; identical content for identical (config, seed).

    wall_ms is only emitted when ``timing=True`` since it breaks bit-level
    reproducibility of the log.
    """

    def __init__(self, path=None, timing: bool = False):
        self.path = path
        self.timing = timing
        self.rows: list[dict] = []
        self._fh = open(path, "w") if path is not None else None
        self._t0 = time.perf_counter()

    def log(self, step: int, task: TaskId, accuracy: float, ret: float,
            active_op_count: int, flops: int, wall_ms: float | None = None) -> None:
        row = {
            "step": int(step),
            "task": int(task),
            "accuracy": round(float(accuracy), 6),
            "return": round(float(ret), 6),
            "active_op_count": int(active_op_count),
            "flops": int(flops),
        }
        if self.timing:
            now = time.perf_counter()
            if wall_ms is None:
                wall_ms = (now - self._t0) * 1000.0
            self._t0 = now
            row["wall_ms"] = round(float(wall_ms), 3)
        self.rows.append(row)
        if self._fh is not None:
            self._fh.write(json.dumps(row) + "\n")
            self._fh.flush()

    def close(self) -> None:
        if self._fh is not None:
            self._fh.close()
            self._fh = None


# -- shared episode machinery ----------------------------------------------------


def build_envs(model: Model, config: TrainConfig) -> dict[TaskId, ReasoningEnv]:
    reward = RewardConfig(penalty=config.penalty, gamma=config.gamma,
                          decay=config.rwd_decay)
    return {task: ReasoningEnv(model.config, model.layers, model.heads,
                               reward=reward, multi_task=config.multi_task)
            for task in config.tasks}


def _sample_instances(task: TaskId, config: TrainConfig, rng: np.random.Generator):
    m = TRAIN_M[task]
    seeds = tuple(spawn_instance_seed(rng) for _ in range(config.instance_batch))
    instances = [make_instance(task, m, seed, edge_prob=config.edge_prob,
                               red_prob=config.red_prob,
                               founder_prob=config.founder_prob)
                 for seed in seeds]
    return instances, seeds


def _state_means(state) -> tuple[float, ...]:
    return tuple(float(t.data.mean()) for t in state.group.tensors)


def run_episode(model: Model, env: ReasoningEnv, task: TaskId, config: TrainConfig,
                rng: np.random.Generator, use_search: bool,
                temperature: float, train: bool = True) -> RolloutRecord:
    """One full episode; returns the stored record."""
    instances, seeds = _sample_instances(task, config, rng)
    state = env.reset(instances)
    search_cfg = SearchConfig(
        num_simulations=config.num_rollouts or 1,
        c1=config.c1 or 30.0, c2=config.c2 or 19652.0,
        candidate_budget=config.candidate_budget)
    footprints, rewards, flops = [], [], []
    candidates, visit_probs, means = [], [], []
    done = False
    while not done:
        means.append(_state_means(state))
        if use_search:
            result = mcts_search(env, state,
                                 lambda s: base_policy(s.group, model.planner, model.config),
                                 search_cfg, rng=rng, train=train)
            mode = "sample" if train and temperature > 0 else "argmax"
            action = select_action(result, mode=mode, temperature=temperature, rng=rng)
            candidates.append(tuple(f.bits for f in result.footprints))
            visit_probs.append(tuple(float(p) for p in result.visit_distribution()))
        else:
            pol = base_policy(state.group, model.planner, model.config)
            mode = "sample" if train else "argmax"
            action = select_action(pol, mode=mode, rng=rng)
            candidates.append((action.bits,))
            visit_probs.append((1.0,))
        state, reward, done = env.step(state, action)
        footprints.append(action.bits)
        rewards.append(float(reward))
        flops.append(state.flops[-1])
    return RolloutRecord(
        task=task, m=state.m, seeds=seeds,
        footprints=tuple(footprints), rewards=tuple(rewards),
        candidates=tuple(candidates), visit_probs=tuple(visit_probs),
        state_means=tuple(means),
        final_accuracy=float(env.terminal_accuracy(state)),
        episode_return=episode_return(rewards, config.gamma),
        flops=tuple(flops))


def _rebuild_instances(record: RolloutRecord, config: TrainConfig):
    return [make_instance(record.task, record.m, seed, edge_prob=config.edge_prob,
                          red_prob=config.red_prob, founder_prob=config.founder_prob)
            for seed in record.seeds]


def _target_mask(task: TaskId, targets: np.ndarray):
    if TARGET_ARITY[task] == 2:
        return offdiag_mask(targets.shape[0], targets.shape[1])
    return None


def replay_states(model: Model, record: RolloutRecord, config: TrainConfig,
                  env: ReasoningEnv):
    """Re-run the stored episode. Returns (per-step input groups, predictions).

    Called under an active tape this rebuilds the reasoner graph for BCE;
    the returned groups list holds the state BEFORE each step plus the
    terminal state.
    """
    from .env import build_input_group

    instances = _rebuild_instances(record, config)
    group = build_input_group(instances, model.config, config.multi_task)
    groups = [group]
    for t, bits in enumerate(record.footprints):
        group, _ = layer_forward(group, OperatorFootprint(bits),
                                 model.layers[t], model.config)
        groups.append(group)
    preds = output_head(group, record.task, model.heads)
    targets = np.stack([i.target for i in instances]).astype(np.float32)
    return groups, preds, targets


def reasoner_loss(model: Model, records: list[RolloutRecord], config: TrainConfig,
                  env: ReasoningEnv) -> Tensor:
    """Mean BCE of final predictions against oracle targets."""
    total = None
    for record in records:
        _, preds, targets = replay_states(model, record, config, env)
        loss = bce_loss(preds, targets, mask=_target_mask(record.task, targets))
        total = loss if total is None else total + loss
    return total * (1.0 / len(records))


def _detached_group(group):
    from .predicates import PredicateGroup

    return PredicateGroup([T.detach(t) for t in group.tensors], group.m)


def policy_ce_loss(logits: Tensor, candidates, visit_probs) -> Tensor:
    """Cross entropy between a stored visit distribution and the current
    policy's prior over the same candidate set (log-softmax of joint
    Bernoulli log-masses)."""
    logps = [T.reshape(bernoulli_log_prob(logits, np.array(bits, dtype=np.float32)), (1,))
             for bits in candidates]
    vec = T.concat(logps, axis=0)
    peak = T.reduce_max(vec, axis=0)
    lse = T.log(T.reduce_sum(T.exp(vec - peak))) + peak
    log_softmax = vec - lse
    weights = Tensor(np.asarray(visit_probs, dtype=np.float32))
    return -T.reduce_sum(weights * log_softmax)


def _returns_to_go(rewards, gamma: float) -> list[float]:
    out, acc = [], 0.0
    for r in reversed(rewards):
        acc = r + gamma * acc
        out.append(acc)
    return out[::-1]


def build_optimizers(model: Model, config: TrainConfig) -> dict[str, Optimizer]:
    opts = {
        "reasoner": Optimizer(reasoner_parameters(model), lr=config.lr_reasoner,
                              clip_norm=5.0),
        "policy": Optimizer(policy_parameters(model), lr=config.lr_policy,
                            clip_norm=5.0),
    }
    if config.lr_value is not None:
        opts["value"] = Optimizer(value_parameters(model), lr=config.lr_value,
                                  clip_norm=5.0)
    return opts


def _step_all(optimizers: dict[str, Optimizer]) -> None:
    for opt in optimizers.values():
        opt.step()
    for opt in optimizers.values():
        opt.zero_grad()


@dataclass
class TrainResult:
    model: Model
    config: TrainConfig
    metrics: MetricsLog
    optimizers: dict[str, Optimizer]
    buffer: ReplayBuffer | None
    step: int
    baseline: float | None = None
    history: list[dict] = field(default_factory=list)


# -- REINFORCE --------------------------------------------------------------------


def run_reinforce(config: TrainConfig, metrics: MetricsLog | None = None,
                  resume: str | None = None,
                  checkpoint_path: str | None = None,
                  stop_fn=None, stop_every: int = 500) -> TrainResult:
    """``stop_fn(model, step) -> bool`` is polled every ``stop_every``
    steps; returning True ends training early (checkpoint still saved)."""
    if config.algorithm != "reinforce":
        raise ValueError("config.algorithm must be 'reinforce'")
    model, optimizers, rng, step0, buffer, baseline = _init_run(config, resume)
    metrics = metrics or MetricsLog()
    envs = build_envs(model, config)
    guard = DivergenceGuard()
    baseline = 0.0 if baseline is None else baseline

    step = step0
    while step < config.training_steps:
        task = sample_task(rng, config.tasks, config.distribution)
        env = envs[task]
        records = [run_episode(model, env, task, config, rng,
                               use_search=False, temperature=1.0)
                   for _ in range(config.batch_size)]
        for r in records:
            buffer.append(r)

        with T.Tape() as tape:
            loss = None
            for record in records:
                groups, preds, targets = replay_states(model, record, config, env)
                term = bce_loss(preds, targets,
                                mask=_target_mask(record.task, targets))
                rtg = _returns_to_go(record.rewards, config.gamma)
                for t, bits in enumerate(record.footprints):
                    logits, _ = policy_forward(_detached_group(groups[t]),
                                               model.planner, model.config)
                    logp = bernoulli_log_prob(logits, np.array(bits, dtype=np.float32))
                    term = term - logp * float(rtg[t] - baseline)
                loss = term if loss is None else loss + term
            loss = loss * (1.0 / len(records))
        T.backward(tape, loss)
        _step_all(optimizers)

        mean_ret = float(np.mean([r.episode_return for r in records]))
        baseline = (config.baseline_momentum * baseline
                    + (1 - config.baseline_momentum) * mean_ret)
        step += 1
        _log_batch(metrics, step, task, records)
        guard.update(mean_ret)
        if stop_fn is not None and step % stop_every == 0 and stop_fn(model, step):
            break
    if checkpoint_path is not None:
        save_checkpoint(checkpoint_path, model, optimizers, config, step, rng,
                        buffer=buffer, baseline=baseline)
    return TrainResult(model=model, config=config, metrics=metrics,
                       optimizers=optimizers, buffer=buffer, step=step,
                       baseline=baseline)


# -- PPO ---------------------------------------------------------------------------


def _gae_advantages(rewards, values, gamma: float, lam: float):
    adv, acc, nxt = [], 0.0, 0.0
    for r, v in zip(reversed(rewards), reversed(values)):
        delta = r + gamma * nxt - v
        acc = delta + gamma * lam * acc
        adv.append(acc)
        nxt = v
    return adv[::-1]


def run_ppo(config: TrainConfig, metrics: MetricsLog | None = None,
            resume: str | None = None,
            checkpoint_path: str | None = None,
            stop_fn=None, stop_every: int = 500) -> TrainResult:
    if config.algorithm != "ppo":
        raise ValueError("config.algorithm must be 'ppo'")
    model, optimizers, rng, step0, buffer, _ = _init_run(config, resume)
    metrics = metrics or MetricsLog()
    envs = build_envs(model, config)
    guard = DivergenceGuard()

    step = step0
    last_check = step0
    while step < config.training_steps:
        task = sample_task(rng, config.tasks, config.distribution)
        env = envs[task]
        records = [run_episode(model, env, task, config, rng,
                               use_search=False, temperature=1.0)
                   for _ in range(config.batch_size)]
        for r in records:
            buffer.append(r)

        # frozen rollout statistics: states, old log-probs, value estimates
        batch = []
        for record in records:
            groups, _, _ = replay_states(model, record, config, env)
            det = [_detached_group(g) for g in groups[:-1]]
            old_logp, values = [], []
            for t, bits in enumerate(record.footprints):
                logits, value = policy_forward(det[t], model.planner, model.config)
                lp = bernoulli_log_prob(logits, np.array(bits, dtype=np.float32))
                old_logp.append(float(lp.data))
                values.append(float(value.data))
            rtg = _returns_to_go(record.rewards, config.gamma)
            adv = _gae_advantages(record.rewards, values, config.gamma,
                                  config.gae_lambda)
            batch.append((record, det, old_logp, rtg, adv))

        for epoch in range(config.ppo_epochs):
            if step >= config.training_steps:
                break
            with T.Tape() as tape:
                loss = None
                for record, det, old_logp, rtg, adv in batch:
                    for t, bits in enumerate(record.footprints):
                        logits, value = policy_forward(det[t], model.planner,
                                                       model.config)
                        logp = bernoulli_log_prob(
                            logits, np.array(bits, dtype=np.float32))
                        ratio = T.exp(logp - float(old_logp[t]))
                        if math.isinf(config.clip_ratio):
                            clipped = ratio * float(adv[t])
                        else:
                            lo, hi = (1.0 - config.clip_ratio,
                                      1.0 + config.clip_ratio)
                            clipped = T.minimum(ratio * float(adv[t]),
                                                T.maximum(T.minimum(ratio, Tensor(hi)),
                                                          Tensor(lo)) * float(adv[t]))
                        vloss = (value - float(rtg[t])) * (value - float(rtg[t]))
                        term = -clipped + vloss
                        loss = term if loss is None else loss + term
                loss = loss * (1.0 / len(batch))
                if epoch == 0:
                    loss = loss + reasoner_loss(model, records, config, env)
            T.backward(tape, loss)
            _step_all(optimizers)
            step += 1
            _log_batch(metrics, step, task, records)
        guard.update(float(np.mean([r.episode_return for r in records])))
        if stop_fn is not None and step - last_check >= stop_every:
            last_check = step
            if stop_fn(model, step):
                break
    if checkpoint_path is not None:
        save_checkpoint(checkpoint_path, model, optimizers, config, step, rng,
                        buffer=buffer)
    return TrainResult(model=model, config=config, metrics=metrics,
                       optimizers=optimizers, buffer=buffer, step=step)


# -- MuZero-style loop ---------------------------------------------------------------


def muzero_update(model: Model, records: list[RolloutRecord], config: TrainConfig,
                  envs: dict[TaskId, ReasoningEnv],
                  optimizers: dict[str, Optimizer]) -> float:
    """One learner step over sampled records; returns the scalar loss."""
    with T.Tape() as tape:
        total = None
        for record in records:
            env = envs[record.task]
            groups, preds, targets = replay_states(model, record, config, env)
            loss = bce_loss(preds, targets, mask=_target_mask(record.task, targets))
            rtg = _returns_to_go(record.rewards, config.gamma)
            for t in range(len(record.footprints)):
                logits, value = policy_forward(_detached_group(groups[t]),
                                               model.planner, model.config)
                loss = loss + policy_ce_loss(logits, record.candidates[t],
                                             record.visit_probs[t])
                loss = loss + (value - float(rtg[t])) * (value - float(rtg[t]))
            total = loss if total is None else total + loss
        total = total * (1.0 / len(records))
    T.backward(tape, total)
    _step_all(optimizers)
    return float(total.data)


def run_muzero(config: TrainConfig, metrics: MetricsLog | None = None,
               resume: str | None = None,
               checkpoint_path: str | None = None,
               stop_fn=None, stop_every: int = 500) -> TrainResult:
    if config.algorithm != "muzero":
        raise ValueError("config.algorithm must be 'muzero'")
    model, optimizers, rng, step0, buffer, _ = _init_run(config, resume)
    metrics = metrics or MetricsLog()
    envs = build_envs(model, config)
    guard = DivergenceGuard()

    if step0 == 0 and len(buffer) == 0:
        for _ in range(config.num_warmups):
            task = sample_task(rng, config.tasks, config.distribution)
            buffer.append(run_episode(model, envs[task], task, config, rng,
                                      use_search=False, temperature=1.0))

    step = step0
    while step < config.training_steps:
        if step % config.steps_per_rollout == 0 or len(buffer) < config.batch_size:
            task = sample_task(rng, config.tasks, config.distribution)
            record = run_episode(model, envs[task], task, config, rng,
                                 use_search=True,
                                 temperature=config.temperature_for(step))
            buffer.append(record)
            _log_batch(metrics, step, task, [record])
            guard.update(record.episode_return)
        while len(buffer) < config.batch_size:
            task = sample_task(rng, config.tasks, config.distribution)
            buffer.append(run_episode(model, envs[task], task, config, rng,
                                      use_search=False, temperature=1.0))
        records = buffer.sample(rng, config.batch_size)
        muzero_update(model, records, config, envs, optimizers)
        step += 1
        if stop_fn is not None and step % stop_every == 0 and stop_fn(model, step):
            break
    if checkpoint_path is not None:
        save_checkpoint(checkpoint_path, model, optimizers, config, step, rng,
                        buffer=buffer)
    return TrainResult(model=model, config=config, metrics=metrics,
                       optimizers=optimizers, buffer=buffer, step=step)


# -- supervised baseline (fully-activated reasoner, no planner) ----------------------


def run_supervised(config: TrainConfig, epochs: int = 200, epoch_size: int = 50,
                   val_instances: int = 200,
                   metrics: MetricsLog | None = None) -> TrainResult:
    """BCE training with every op active; the single-task reference setup."""
    if len(config.tasks) != 1:
        raise ValueError("supervised training is single-task")
    task = config.tasks[0]
    model, optimizers, rng, _, _, _ = _init_run(config, None)
    metrics = metrics or MetricsLog()
    env = build_envs(model, config)[task]
    all_on = OperatorFootprint.ones(config.breadth)
    history: list[dict] = []
    perfect_streak = 0

    val = [make_instance(task, TRAIN_M[task], spawn_instance_seed(rng),
                         edge_prob=config.edge_prob, red_prob=config.red_prob,
                         founder_prob=config.founder_prob)
           for _ in range(val_instances)]

    step = 0
    for epoch in range(epochs):
        for _ in range(epoch_size):
            instances, _ = _sample_instances(task, config, rng)
            state = env.reset(instances)
            with T.Tape() as tape:
                group = state.group
                for t in range(config.depth):
                    group, _ = layer_forward(group, all_on, model.layers[t],
                                             model.config)
                preds = output_head(group, task, model.heads)
                loss = bce_loss(preds, state.targets,
                                mask=_target_mask(task, state.targets))
            T.backward(tape, loss)
            optimizers["reasoner"].step()
            optimizers["reasoner"].zero_grad()
            step += 1
        acc = _validation_accuracy(model, env, val, config)
        history.append({"epoch": epoch, "accuracy": round(acc, 6)})
        metrics.log(step, task, acc, 0.0, model.config.num_ops * config.depth, 0)
        perfect_streak = perfect_streak + 1 if acc == 1.0 else 0
        if perfect_streak >= 5:
            break
    return TrainResult(model=model, config=config, metrics=metrics,
                       optimizers=optimizers, buffer=None, step=step,
                       history=history)


def _validation_accuracy(model: Model, env: ReasoningEnv, instances,
                         config: TrainConfig) -> float:
    from .env import accuracy

    all_on = OperatorFootprint.ones(config.breadth)
    hits = []
    for inst in instances:
        state = env.reset([inst])
        done = False
        while not done:
            state, _, done = env.step(state, all_on)
        hits.append(env.terminal_accuracy(state))
    return float(np.mean(hits))


# -- shared plumbing -------------------------------------------------------------------


def _log_batch(metrics: MetricsLog, step: int, task: TaskId,
               records: list[RolloutRecord]) -> None:
    acc = float(np.mean([r.final_accuracy for r in records]))
    ret = float(np.mean([r.episode_return for r in records]))
    active = int(np.mean([sum(sum(f) for f in r.footprints) for r in records]))
    flops = int(np.mean([sum(r.flops) for r in records]))
    metrics.log(step, task, acc, ret, active, flops)


def _init_run(config: TrainConfig, resume: str | None):
    if resume is not None:
        return load_checkpoint(resume, expected_config=config)
    rng = np.random.default_rng(config.seed)
    model = init_model(config, rng)
    optimizers = build_optimizers(model, config)
    buffer = ReplayBuffer(config.rb_size)
    return model, optimizers, rng, 0, buffer, None


RUNNERS = {"reinforce": run_reinforce, "ppo": run_ppo, "muzero": run_muzero}


def run_training(config: TrainConfig, **kwargs) -> TrainResult:
    return RUNNERS[config.algorithm](config, **kwargs)


# -- checkpoints -----------------------------------------------------------------------


def save_checkpoint(path, model: Model, optimizers: dict[str, Optimizer],
                    config: TrainConfig, step: int, rng: np.random.Generator,
                    buffer: ReplayBuffer | None = None,
                    baseline: float | None = None) -> None:
    arrays: dict[str, np.ndarray] = {"format": np.array(CHECKPOINT_FORMAT)}
    for name, tensor in named_parameters(model):
        arrays[f"param:{name}"] = tensor.data
    opt_meta = {}
    for oname, opt in optimizers.items():
        for aname, arr in opt.state_arrays().items():
            arrays[f"opt:{oname}:{aname}"] = arr
        opt_meta[oname] = {"step_count": opt.step_count, "skipped": opt.skipped}
    meta = {
        "config": config_to_text(config),
        "step": int(step),
        "rng_state": rng.bit_generator.state,
        "optimizers": opt_meta,
        "buffer": buffer.to_json() if buffer is not None else None,
        "baseline": baseline,
    }
    arrays["meta"] = np.frombuffer(json.dumps(meta).encode("utf-8"), dtype=np.uint8)
    tmp = str(path) + ".tmp"
    with open(tmp, "wb") as fh:
        np.savez(fh, **arrays)
    os.replace(tmp, str(path))


def load_checkpoint(path, expected_config: TrainConfig | None = None):
    """Returns (model, optimizers, rng, step, buffer, baseline)."""
    try:
        with np.load(path, allow_pickle=False) as data:
            if "format" not in data or int(data["format"]) != CHECKPOINT_FORMAT:
                found = int(data["format"]) if "format" in data else None
                raise CheckpointError(
                    f"{path}: format {found!r}, expected {CHECKPOINT_FORMAT}")
            arrays = {k: data[k] for k in data.files}
    except (OSError, ValueError, EOFError, zipfile.BadZipFile) as e:
        raise CheckpointError(f"{path}: cannot read checkpoint: {e}") from None
    meta = json.loads(bytes(arrays["meta"]).decode("utf-8"))
    config = parse_config_text(meta["config"], source=f"{path}:config")
    if expected_config is not None:
        # training_steps may grow on resume; everything else must match
        aligned = replace(config, training_steps=expected_config.training_steps)
        if aligned != expected_config:
            raise CheckpointError(f"{path}: checkpoint config differs from the "
                                  "requested config")
    rng = np.random.default_rng()
    rng.bit_generator.state = meta["rng_state"]
    model = init_model(config, np.random.default_rng(0))
    for name, tensor in named_parameters(model):
        key = f"param:{name}"
        if key not in arrays:
            raise CheckpointError(f"{path}: missing parameter {name}")
        if arrays[key].shape != tensor.data.shape:
            raise CheckpointError(f"{path}: shape mismatch for {name}")
        tensor.data = np.array(arrays[key], dtype=np.float32)
    optimizers = build_optimizers(model, config)
    for oname, opt in optimizers.items():
        state = {aname.split(":", 2)[2]: arr for aname, arr in arrays.items()
                 if aname.startswith(f"opt:{oname}:")}
        om = meta["optimizers"].get(oname, {"step_count": 0, "skipped": 0})
        opt.load_state_arrays(state, om["step_count"], om["skipped"])
    buffer = ReplayBuffer(config.rb_size)
    if meta.get("buffer"):
        buffer.load_json(meta["buffer"])
    return model, optimizers, rng, int(meta["step"]), buffer, meta.get("baseline")
