"""Footprint planner: base policy network and tree search.

The base policy runs one fully-activated gating layer over the current
predicate group, max-pools every arity over its constant axes (permutation
invariant), mean-pools over the batch, and maps the pooled features
through linear heads: a sigmoid head with one probability per footprint
bit and a linear value head.

Search is PUCT by default with the visit/value backup

    N <- N + 1,  V <- ((N - 1) V + v_hat) / N,  v_hat_t = r_t + gamma v_hat_{t+1}

driven by the value head at non-terminal leaves (terminal leaves score 0;
their reward already arrived on the incoming edge).
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .nn import MlpParams, forward_mlp, init_mlp
from .predicates import OperatorFootprint, PredicateGroup, ReasonerConfig
from .reasoner import LayerParams, init_layer_params, layer_forward
from .tensor import Tensor


@dataclass
class PlannerParams:
    layer: LayerParams
    op_head: MlpParams
    value_head: MlpParams


def pooled_width(config: ReasonerConfig) -> int:
    return sum(config.state_width(r) for r in range(config.breadth + 1))


def init_planner_params(config: ReasonerConfig, rng: np.random.Generator) -> PlannerParams:
    layer = init_layer_params(config, rng)
    w = pooled_width(config)
    op_head = init_mlp([w, config.num_ops], rng, output_activation="linear")
    value_head = init_mlp([w, 1], rng, output_activation="linear")
    return PlannerParams(layer=layer, op_head=op_head, value_head=value_head)


def policy_forward(group: PredicateGroup, params: PlannerParams,
                   config: ReasonerConfig) -> tuple[Tensor, Tensor]:
    """Differentiable path. Returns (logits [K], value scalar)."""
    gated, _ = layer_forward(group, OperatorFootprint.ones(config.breadth),
                             params.layer, config)
    feats = []
    for r in range(config.breadth + 1):
        t = gated[r]
        for _ in range(r):
            t = T.reduce_max(t, axis=1)
        feats.append(t)
    x = T.concat(feats, axis=1)  # [batch, pooled_width]
    x = T.mean(x, axis=0)
    logits = T.reshape(forward_mlp(params.op_head, x), (config.num_ops,))
    value = T.reshape(forward_mlp(params.value_head, x), ())
    return logits, value


@dataclass
class PolicyOutput:
    probs: np.ndarray  # [K] in (0, 1)
    value: float
    logits: np.ndarray


def base_policy(group: PredicateGroup, params: PlannerParams,
                config: ReasonerConfig) -> PolicyOutput:
    logits, value = policy_forward(group, params, config)
    probs = T.sigmoid(logits)
    return PolicyOutput(probs=np.array(probs.data, dtype=np.float64),
                        value=float(value.data), logits=np.array(logits.data))


def bernoulli_log_prob(logits: Tensor, bits: np.ndarray) -> Tensor:
    """Joint log-prob of a bit vector under factorized Bernoulli(sigmoid(z))."""
    sign = Tensor((1.0 - 2.0 * np.asarray(bits)).astype(np.float32))
    return -T.reduce_sum(T.softplus(sign * logits))


# -- candidate enumeration ---------------------------------------------------


def candidate_footprints(probs: np.ndarray, budget: int) -> list[OperatorFootprint]:
    """The ``budget`` highest-probability bit vectors of the factorized
    Bernoulli, plus the all-ones fallback.

    Exact best-first enumeration: start from the threshold configuration
    and flip bits in order of increasing |logit| cost (deterministic,
    ties by index).
    """
    p = np.clip(np.asarray(probs, dtype=np.float64), 1e-9, 1 - 1e-9)
    k = p.size
    base = (p >= 0.5).astype(np.int64)
    cost = np.abs(np.log(p) - np.log1p(-p))
    order = np.argsort(cost, kind="stable")
    sorted_cost = cost[order]

    found: list[tuple[int, ...]] = []
    seen: set[tuple[int, ...]] = set()

    def emit(flips: tuple[int, ...]) -> None:
        bits = base.copy()
        for j in flips:
            bits[order[j]] ^= 1
        key = tuple(int(b) for b in bits)
        if key not in seen:
            seen.add(key)
            found.append(key)

    emit(())
    # best-first over flip subsets: each heap entry is (cost, subset)
    heap: list[tuple[float, tuple[int, ...]]] = []
    if k:
        heapq.heappush(heap, (float(sorted_cost[0]), (0,)))
    while heap and len(found) < budget:
        c, subset = heapq.heappop(heap)
        emit(subset)
        last = subset[-1]
        if last + 1 < k:
            heapq.heappush(heap, (c + float(sorted_cost[last + 1]), subset + (last + 1,)))
            heapq.heappush(heap, (c - float(sorted_cost[last]) + float(sorted_cost[last + 1]),
                                  subset[:-1] + (last + 1,)))
    ones = tuple([1] * k)
    if ones not in seen:
        found.append(ones)
    return [OperatorFootprint(bits) for bits in found]


def candidate_priors(probs: np.ndarray, candidates: list[OperatorFootprint]) -> np.ndarray:
    """Factorized Bernoulli mass renormalized over the candidate set."""
    p = np.clip(np.asarray(probs, dtype=np.float64), 1e-9, 1 - 1e-9)
    logs = []
    for c in candidates:
        b = np.array(c.bits, dtype=np.float64)
        logs.append(float((b * np.log(p) + (1 - b) * np.log1p(-p)).sum()))
    logs = np.array(logs)
    logs -= logs.max()
    w = np.exp(logs)
    return w / w.sum()


# -- tree search ---------------------------------------------------------------


@dataclass
class SearchConfig:
    num_simulations: int = 1200
    c1: float = 30.0
    c2: float = 19652.0
    candidate_budget: int = 32
    tree_policy: str = "puct"  # or "uct"
    uct_beta: float = 1.0
    dirichlet_alpha: float = 0.3
    dirichlet_frac: float = 0.25

    def __post_init__(self):
        if self.tree_policy not in ("puct", "uct"):
            raise ValueError(f"unknown tree policy {self.tree_policy!r}")


class Edge:
    __slots__ = ("footprint", "prior", "visits", "q", "reward", "child")

    def __init__(self, footprint: OperatorFootprint, prior: float):
        self.footprint = footprint
        self.prior = prior
        self.visits = 0
        self.q = 0.0  # mean backed-up value through this edge; 0 while unvisited
        self.reward: float | None = None
        self.child: "SearchNode | None" = None


class SearchNode:
    __slots__ = ("state", "terminal", "visits", "value", "edges")

    def __init__(self, state, terminal: bool = False):
        self.state = state
        self.terminal = terminal
        self.visits = 0
        self.value = 0.0
        self.edges: list[Edge] | None = None  # None until expanded

    @property
    def expanded(self) -> bool:
        return self.edges is not None

    def edge_visit_total(self) -> int:
        return sum(e.visits for e in self.edges) if self.edges else 0


def puct_score(edge: Edge, total_visits: int, c1: float, c2: float) -> float:
    u = edge.prior * (math.sqrt(total_visits) / (1 + edge.visits)) * (
        c1 + math.log((total_visits + c2 + 1) / c2)
    )
    return edge.q + u


def uct_score(edge: Edge, parent_visits: int, beta: float) -> float:
    if edge.visits == 0 or edge.child is None:
        return math.inf
    return edge.child.value + beta * math.sqrt(2.0 * math.log(parent_visits) / edge.visits)


def _select_edge(node: SearchNode, cfg: SearchConfig) -> Edge:
    if cfg.tree_policy == "puct":
        total = node.edge_visit_total()
        scores = [puct_score(e, total, cfg.c1, cfg.c2) for e in node.edges]
    else:
        scores = [uct_score(e, node.visits, cfg.uct_beta) for e in node.edges]
    return node.edges[int(np.argmax(scores))]


def _expand(node: SearchNode, policy_output: PolicyOutput, cfg: SearchConfig) -> float:
    cands = candidate_footprints(policy_output.probs, cfg.candidate_budget)
    priors = candidate_priors(policy_output.probs, cands)
    node.edges = [Edge(fp, float(pr)) for fp, pr in zip(cands, priors)]
    node.visits = 1
    node.value = policy_output.value
    return policy_output.value


def add_root_noise(root: SearchNode, rng: np.random.Generator,
                   alpha: float, frac: float) -> None:
    noise = rng.dirichlet([alpha] * len(root.edges))
    for e, n in zip(root.edges, noise):
        e.prior = (1 - frac) * e.prior + frac * float(n)


def backup(path: list[tuple[SearchNode, Edge]], leaf_value: float, gamma: float) -> None:
    """Propagate a leaf evaluation up the selection path."""
    v = leaf_value
    for node, edge in reversed(path):
        v = edge.reward + gamma * v
        edge.visits += 1
        edge.q += (v - edge.q) / edge.visits
        node.visits += 1
        node.value += (v - node.value) / node.visits


@dataclass
class SearchResult:
    root: SearchNode
    footprints: list[OperatorFootprint]
    visit_counts: np.ndarray
    root_value: float

    def visit_distribution(self) -> np.ndarray:
        total = self.visit_counts.sum()
        if total <= 0:
            return np.full(len(self.footprints), 1.0 / len(self.footprints))
        return self.visit_counts / total


def mcts_search(env, state, policy_fn, cfg: SearchConfig,
                rng: np.random.Generator | None = None,
                train: bool = False) -> SearchResult:
    """Run ``cfg.num_simulations`` simulations from ``state``.

    ``env`` needs ``step(state, footprint) -> (state, reward, done)`` and a
    ``gamma`` attribute; ``policy_fn(state) -> PolicyOutput``.
    """
    gamma = env.gamma
    root = SearchNode(state)
    _expand(root, policy_fn(state), cfg)
    if train:
        if rng is None:
            raise ValueError("training search needs an rng for root noise")
        add_root_noise(root, rng, cfg.dirichlet_alpha, cfg.dirichlet_frac)
    for _ in range(cfg.num_simulations):
        node = root
        path: list[tuple[SearchNode, Edge]] = []
        while node.expanded and not node.terminal:
            edge = _select_edge(node, cfg)
            path.append((node, edge))
            if edge.child is None:
                nxt, reward, done = env.step(node.state, edge.footprint)
                edge.reward = reward
                edge.child = SearchNode(nxt, terminal=done)
            node = edge.child
        if node.terminal:
            value = 0.0
            node.visits += 1
        else:
            value = _expand(node, policy_fn(node.state), cfg)
        backup(path, value, gamma)
    counts = np.array([e.visits for e in root.edges], dtype=np.int64)
    return SearchResult(root=root, footprints=[e.footprint for e in root.edges],
                        visit_counts=counts, root_value=root.value)


# -- action selection -----------------------------------------------------------


def select_action(source, mode: str = "argmax", temperature: float = 1.0,
                  rng: np.random.Generator | None = None) -> OperatorFootprint:
    """Pick a footprint from a SearchResult (visit counts) or PolicyOutput.

    - SearchResult + argmax: most-visited root action (ties: lowest index).
    - SearchResult + sample: visits^(1/temperature) normalized.
    - PolicyOutput + argmax: per-bit threshold at 0.5.
    - PolicyOutput + sample: independent per-bit Bernoulli draw.
    """
    if isinstance(source, SearchResult):
        counts = source.visit_counts.astype(np.float64)
        if mode == "argmax" or temperature <= 0:
            return source.footprints[int(np.argmax(counts))]
        if rng is None:
            raise ValueError("sampling needs an rng")
        w = counts ** (1.0 / temperature)
        if w.sum() <= 0:
            w = np.ones_like(w)
        idx = int(rng.choice(len(w), p=w / w.sum()))
        return source.footprints[idx]
    if isinstance(source, PolicyOutput):
        if mode == "argmax":
            return OperatorFootprint(tuple(int(p >= 0.5) for p in source.probs))
        if rng is None:
            raise ValueError("sampling needs an rng")
        bits = (rng.random(source.probs.size) < source.probs).astype(int)
        return OperatorFootprint(tuple(int(b) for b in bits))
    raise TypeError(f"cannot select an action from {type(source).__name__}")
