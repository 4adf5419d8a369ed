"""Benchmark tasks: generators, exact oracles, sampling, dataset files.

Relation convention: a binary base matrix R has R[x, y] = 1 when y stands
in the named relation to x (IsFather[x, y]: y is x's father). Kinship
targets follow the same orientation. Graphs are undirected with a zero
diagonal.

Every task has two independent target routes: ``oracle_direct`` works from
the semantic definition (set lookups, BFS, degree counts) and
``oracle_rules`` evaluates the first-order rule composition with min/max
relational algebra. They must agree exactly on every instance.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import IntEnum

import numpy as np

from .errors import DatasetError


class TaskId(IntEnum):
    HAS_FATHER = 0
    HAS_SISTER = 1
    IS_GRANDPARENT = 2
    IS_UNCLE = 3
    IS_MG_UNCLE = 4
    ADJACENT_TO_RED = 5
    FOUR_CONNECTIVITY = 6
    ONE_OUTDEGREE = 7


TASK_NAMES: dict[TaskId, str] = {
    TaskId.HAS_FATHER: "has-father",
    TaskId.HAS_SISTER: "has-sister",
    TaskId.IS_GRANDPARENT: "is-grandparent",
    TaskId.IS_UNCLE: "is-uncle",
    TaskId.IS_MG_UNCLE: "is-mg-uncle",
    TaskId.ADJACENT_TO_RED: "adjacent-to-red",
    TaskId.FOUR_CONNECTIVITY: "4-connectivity",
    TaskId.ONE_OUTDEGREE: "1-outdegree",
}
TASK_BY_NAME = {name: tid for tid, name in TASK_NAMES.items()}

FAMILY_TASKS = (
    TaskId.HAS_FATHER,
    TaskId.HAS_SISTER,
    TaskId.IS_GRANDPARENT,
    TaskId.IS_UNCLE,
    TaskId.IS_MG_UNCLE,
)
GRAPH_TASKS = (TaskId.ADJACENT_TO_RED, TaskId.FOUR_CONNECTIVITY, TaskId.ONE_OUTDEGREE)

TARGET_ARITY: dict[TaskId, int] = {
    TaskId.HAS_FATHER: 1,
    TaskId.HAS_SISTER: 1,
    TaskId.IS_GRANDPARENT: 2,
    TaskId.IS_UNCLE: 2,
    TaskId.IS_MG_UNCLE: 2,
    TaskId.ADJACENT_TO_RED: 1,
    TaskId.FOUR_CONNECTIVITY: 2,
    TaskId.ONE_OUTDEGREE: 1,
}

# training / held-out evaluation sizes per task family
TRAIN_M = {tid: 20 for tid in FAMILY_TASKS} | {tid: 10 for tid in GRAPH_TASKS}
EVAL_M = {tid: (20, 100) for tid in FAMILY_TASKS} | {tid: (10, 50) for tid in GRAPH_TASKS}

# sampling weights for the multi-task curriculum, task id order
DEFAULT_DISTRIBUTION = (0.1, 0.12, 0.12, 0.1, 0.1, 0.13, 0.13, 0.2)

FAMILY_BASE_KEYS = ("is_father", "is_mother", "is_son", "is_daughter")


@dataclass
class TaskInstance:
    task: TaskId
    m: int
    seed: int
    base: dict[str, np.ndarray]  # int8, keys fixed per family
    target: np.ndarray  # int8, shape [m] or [m, m]


# -- generators -------------------------------------------------------------


def gen_graph(m: int, rng: np.random.Generator, edge_prob: float = 0.3,
              red_prob: float = 0.5) -> dict[str, np.ndarray]:
    """Undirected Erdos-Renyi graph plus independent node colors."""
    u = rng.random((m, m))
    upper = np.triu(u < edge_prob, k=1)
    edge = (upper | upper.T).astype(np.int8)
    red = (rng.random(m) < red_prob).astype(np.int8)
    return {"has_edge": edge, "is_red": red}


def gen_family_tree(m: int, rng: np.random.Generator,
                    founder_prob: float = 0.2) -> dict[str, np.ndarray]:
    """Sequential pedigree: each person is a founder or child of an existing
    uniformly chosen (male, female) pair. Sex is a fair coin."""
    sex = np.zeros(m, dtype=np.int8)  # 0 male, 1 female
    father = np.full(m, -1, dtype=np.int64)
    mother = np.full(m, -1, dtype=np.int64)
    males: list[int] = []
    females: list[int] = []
    for i in range(m):
        sex[i] = rng.integers(0, 2)
        if males and females and i > 0 and rng.random() >= founder_prob:
            father[i] = males[rng.integers(len(males))]
            mother[i] = females[rng.integers(len(females))]
        (females if sex[i] else males).append(i)
    F = np.zeros((m, m), dtype=np.int8)
    M = np.zeros((m, m), dtype=np.int8)
    S = np.zeros((m, m), dtype=np.int8)
    D = np.zeros((m, m), dtype=np.int8)
    for c in range(m):
        if father[c] < 0:
            continue
        F[c, father[c]] = 1
        M[c, mother[c]] = 1
        child_mat = D if sex[c] else S
        child_mat[father[c], c] = 1
        child_mat[mother[c], c] = 1
    return {"is_father": F, "is_mother": M, "is_son": S, "is_daughter": D}


# -- direct (semantic) oracle -------------------------------------------------


def _parents_of(base: dict[str, np.ndarray], x: int) -> set[int]:
    f = np.flatnonzero(base["is_father"][x])
    mo = np.flatnonzero(base["is_mother"][x])
    return set(int(i) for i in f) | set(int(i) for i in mo)


def _brothers_of(base: dict[str, np.ndarray], x: int, m: int) -> set[int]:
    # y is x's brother: y != x, y is someone's son, sharing >= 1 parent with x
    out: set[int] = set()
    for p in _parents_of(base, x):
        for y in np.flatnonzero(base["is_son"][p]):
            if int(y) != x:
                out.add(int(y))
    return out


def _bfs_distances(edge: np.ndarray, src: int) -> np.ndarray:
    m = edge.shape[0]
    dist = np.full(m, -1, dtype=np.int64)
    dist[src] = 0
    frontier = [src]
    d = 0
    while frontier:
        d += 1
        nxt = []
        for u in frontier:
            for v in np.flatnonzero(edge[u]):
                if dist[v] < 0:
                    dist[v] = d
                    nxt.append(int(v))
        frontier = nxt
    return dist


def oracle_direct(task: TaskId, base: dict[str, np.ndarray], m: int) -> np.ndarray:
    if task == TaskId.HAS_FATHER:
        out = np.zeros(m, dtype=np.int8)
        for x in range(m):
            out[x] = 1 if np.flatnonzero(base["is_father"][x]).size else 0
        return out
    if task == TaskId.HAS_SISTER:
        out = np.zeros(m, dtype=np.int8)
        for x in range(m):
            for p in _parents_of(base, x):
                for y in np.flatnonzero(base["is_daughter"][p]):
                    if int(y) != x:
                        out[x] = 1
        return out
    if task == TaskId.IS_GRANDPARENT:
        out = np.zeros((m, m), dtype=np.int8)
        for x in range(m):
            for z in _parents_of(base, x):
                for y in _parents_of(base, z):
                    out[x, y] = 1
        return out
    if task == TaskId.IS_UNCLE:
        out = np.zeros((m, m), dtype=np.int8)
        for x in range(m):
            for z in _parents_of(base, x):
                for y in _brothers_of(base, z, m):
                    out[x, y] = 1
        return out
    if task == TaskId.IS_MG_UNCLE:
        # brother of a parent of the mother
        out = np.zeros((m, m), dtype=np.int8)
        for x in range(m):
            for z in np.flatnonzero(base["is_mother"][x]):
                for p in _parents_of(base, int(z)):
                    for y in _brothers_of(base, int(p), m):
                        out[x, y] = 1
        return out
    if task == TaskId.ADJACENT_TO_RED:
        edge, red = base["has_edge"], base["is_red"]
        out = np.zeros(m, dtype=np.int8)
        for x in range(m):
            out[x] = 1 if any(red[v] for v in np.flatnonzero(edge[x])) else 0
        return out
    if task == TaskId.FOUR_CONNECTIVITY:
        edge = base["has_edge"]
        out = np.zeros((m, m), dtype=np.int8)
        for x in range(m):
            dist = _bfs_distances(edge, x)
            for y in range(m):
                if y != x and 0 < dist[y] <= 4:
                    out[x, y] = 1
        return out
    if task == TaskId.ONE_OUTDEGREE:
        edge = base["has_edge"]
        out = np.zeros(m, dtype=np.int8)
        for x in range(m):
            out[x] = 1 if int(edge[x].sum()) == 1 else 0
        return out
    raise ValueError(f"unknown task {task!r}")


# -- rule-composition oracle ---------------------------------------------------
# exact 0/1 relational algebra: compose = exists-z conjunction, min = and.


def _compose(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return ((a.astype(np.int64) @ b.astype(np.int64)) > 0).astype(np.int8)


def _offdiag(a: np.ndarray) -> np.ndarray:
    out = a.copy()
    np.fill_diagonal(out, 0)
    return out


def oracle_rules(task: TaskId, base: dict[str, np.ndarray], m: int) -> np.ndarray:
    if task in FAMILY_TASKS:
        parent = np.maximum(base["is_father"], base["is_mother"])
    if task == TaskId.HAS_FATHER:
        return base["is_father"].max(axis=1).astype(np.int8)
    if task == TaskId.HAS_SISTER:
        sister = _offdiag(_compose(parent, base["is_daughter"]))
        return sister.max(axis=1).astype(np.int8)
    if task == TaskId.IS_GRANDPARENT:
        return _compose(parent, parent)
    if task == TaskId.IS_UNCLE:
        brother = _offdiag(_compose(parent, base["is_son"]))
        return _compose(parent, brother)
    if task == TaskId.IS_MG_UNCLE:
        brother = _offdiag(_compose(parent, base["is_son"]))
        uncle = _compose(parent, brother)
        return _compose(base["is_mother"], uncle)
    if task == TaskId.ADJACENT_TO_RED:
        edge, red = base["has_edge"], base["is_red"]
        pred_red = np.broadcast_to(red[None, :], (m, m))  # expand: red on the new var
        return np.minimum(edge, pred_red).max(axis=1).astype(np.int8)
    if task == TaskId.FOUR_CONNECTIVITY:
        e = base["has_edge"]
        w2 = _compose(e, e)
        w3 = _compose(w2, e)
        w4 = _compose(w3, e)
        return _offdiag(np.maximum.reduce([e, w2, w3, w4]))
    if task == TaskId.ONE_OUTDEGREE:
        e = base["has_edge"]
        neq = (1 - np.eye(m, dtype=np.int8))
        has_any = e.max(axis=1)
        other = _compose(e, neq)  # other[x,y]: x has an edge to some z != y
        two_plus = np.minimum(e, other).max(axis=1)
        return (has_any & (1 - two_plus)).astype(np.int8)
    raise ValueError(f"unknown task {task!r}")


# -- instances ----------------------------------------------------------------


def make_instance(task: TaskId, m: int, seed: int, edge_prob: float = 0.3,
                  red_prob: float = 0.5, founder_prob: float = 0.2) -> TaskInstance:
    rng = np.random.default_rng(seed)
    if task in GRAPH_TASKS:
        base = gen_graph(m, rng, edge_prob=edge_prob, red_prob=red_prob)
        if task != TaskId.ADJACENT_TO_RED:
            base = {"has_edge": base["has_edge"]}
    else:
        base = gen_family_tree(m, rng, founder_prob=founder_prob)
    target = oracle_direct(task, base, m)
    return TaskInstance(task=task, m=m, seed=seed, base=base, target=target)


def sample_task(rng: np.random.Generator, tasks=tuple(TaskId),
                distribution=DEFAULT_DISTRIBUTION) -> TaskId:
    p = np.asarray([distribution[int(t)] for t in tasks], dtype=np.float64)
    p = p / p.sum()
    return tasks[int(rng.choice(len(tasks), p=p))]


def spawn_instance_seed(rng: np.random.Generator) -> int:
    return int(rng.integers(0, 2**63 - 1))


# -- dataset files -------------------------------------------------------------


def write_instances(path, instances) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for inst in instances:
            rec = {
                "task": TASK_NAMES[inst.task],
                "m": inst.m,
                "seed": inst.seed,
                "base": {k: v.tolist() for k, v in inst.base.items()},
                "target": inst.target.tolist(),
            }
            fh.write(json.dumps(rec, separators=(",", ":")) + "\n")


def read_instances(path) -> list[TaskInstance]:
    out: list[TaskInstance] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
                task = TASK_BY_NAME[rec["task"]]
                m = int(rec["m"])
                base = {k: np.asarray(v, dtype=np.int8) for k, v in rec["base"].items()}
                target = np.asarray(rec["target"], dtype=np.int8)
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
                raise DatasetError(f"{path}: line {lineno}: {e}") from e
            expected = (m,) * TARGET_ARITY[task]
            if target.shape != expected:
                raise DatasetError(
                    f"{path}: line {lineno}: target shape {target.shape} != {expected}"
                )
            out.append(TaskInstance(task=task, m=m, seed=int(rec["seed"]),
                                    base=base, target=target))
    return out
