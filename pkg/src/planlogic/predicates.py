"""Predicate groups, operator footprints, and the three relational operators.

Tensor convention: a batched arity-r predicate tensor has shape
``[batch, m, ..., m, channels]`` with r constant axes between the leading
batch axis and the trailing channel axis. All entries live in [0, 1].
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from itertools import permutations
from math import factorial

import numpy as np

from . import tensor as T
from .errors import ArityError, ShapeError
from .tensor import Tensor

QUANT_FORALL = "forall"
QUANT_EXISTS = "exists"

BRANCH_EXPAND = "expand"
BRANCH_DIRECT = "direct"
BRANCH_REDUCE = "reduce"

# fixed channel slots for the base (input) predicates
BASE_UNARY_SLOTS = ("is_red",)
BASE_BINARY_SLOTS = ("has_edge", "is_father", "is_mother", "is_son", "is_daughter")


@dataclass(frozen=True)
class ReasonerConfig:
    """Shape/width knobs shared by the reasoner and the planner trunk."""

    breadth: int = 3
    depth: int = 4
    channels: int = 8
    hidden: int = 16
    formulation: str = "sum"  # "sum": gated branch-sum; "concat": fused baseline
    residual: bool = False
    num_tasks: int = 8

    def __post_init__(self):
        if self.breadth < 1:
            raise ValueError("breadth must be >= 1")
        if self.depth < 1:
            raise ValueError("depth must be >= 1")
        if self.channels < 1:
            raise ValueError("channels must be >= 1")
        if self.formulation not in ("sum", "concat"):
            raise ValueError(f"unknown formulation {self.formulation!r}")

    def base_width(self, arity: int) -> int:
        if arity == 0:
            return self.num_tasks
        if arity == 1:
            return len(BASE_UNARY_SLOTS)
        if arity == 2:
            return len(BASE_BINARY_SLOTS)
        return 0

    def state_width(self, arity: int) -> int:
        """Channel width every state tensor carries at this arity.

        Layer outputs are zero-padded up to this width so states are
        shape-identical at every step and one planner covers them all.
        """
        return max(self.base_width(arity), self.channels)

    @property
    def num_ops(self) -> int:
        return 3 * self.breadth + 1


@lru_cache(maxsize=None)
def footprint_slots(breadth: int) -> tuple[tuple[int, str], ...]:
    """Fixed (arity, branch) layout of footprint bits.

    Arity 0 has no expand source; arity ``breadth`` has no reduce source;
    every other arity carries all three branches. Length is 3*breadth + 1.
    """
    slots: list[tuple[int, str]] = []
    for r in range(breadth + 1):
        if r > 0:
            slots.append((r, BRANCH_EXPAND))
        slots.append((r, BRANCH_DIRECT))
        if r < breadth:
            slots.append((r, BRANCH_REDUCE))
    return tuple(slots)


@lru_cache(maxsize=None)
def _slot_index(breadth: int) -> dict[tuple[int, str], int]:
    return {slot: i for i, slot in enumerate(footprint_slots(breadth))}


@dataclass(frozen=True)
class OperatorFootprint:
    """One bit per (arity, branch) slot; gates a single reasoner layer."""

    bits: tuple[int, ...]

    def __post_init__(self):
        n = len(self.bits)
        if n < 4 or (n - 1) % 3 != 0:
            raise ValueError(f"footprint length {n} is not 3*breadth+1")
        if any(b not in (0, 1) for b in self.bits):
            raise ValueError("footprint bits must be 0 or 1")

    @classmethod
    def from_bits(cls, bits) -> "OperatorFootprint":
        return cls(tuple(int(b) for b in bits))

    @classmethod
    def ones(cls, breadth: int) -> "OperatorFootprint":
        return cls(tuple([1] * (3 * breadth + 1)))

    @classmethod
    def zeros(cls, breadth: int) -> "OperatorFootprint":
        return cls(tuple([0] * (3 * breadth + 1)))

    @property
    def breadth(self) -> int:
        return (len(self.bits) - 1) // 3

    def active(self, arity: int, branch: str) -> bool:
        idx = _slot_index(self.breadth).get((arity, branch))
        if idx is None:
            raise ArityError(f"no {branch} branch at arity {arity} for breadth {self.breadth}")
        return self.bits[idx] == 1

    @property
    def num_active(self) -> int:
        return sum(self.bits)

    def as_array(self) -> np.ndarray:
        return np.array(self.bits, dtype=np.int64)


class PredicateGroup:
    """Batched grounding tensors for every arity 0..breadth."""

    __slots__ = ("tensors", "m")

    def __init__(self, tensors: list[Tensor], m: int):
        if not tensors:
            raise ShapeError("a predicate group needs at least the nullary tensor")
        batch = tensors[0].shape[0]
        for r, t in enumerate(tensors):
            if t.ndim != r + 2:
                raise ShapeError(
                    f"arity-{r} tensor must have ndim {r + 2}, got {t.ndim}"
                )
            if t.shape[0] != batch:
                raise ShapeError("inconsistent batch size across arities")
            if t.shape[1 : r + 1] != (m,) * r:
                raise ShapeError(
                    f"arity-{r} tensor constant dims {t.shape[1:r + 1]} != m={m}"
                )
        self.tensors = list(tensors)
        self.m = m

    def __getitem__(self, arity: int) -> Tensor:
        return self.tensors[arity]

    def __len__(self) -> int:
        return len(self.tensors)

    @property
    def breadth(self) -> int:
        return len(self.tensors) - 1

    @property
    def batch(self) -> int:
        return self.tensors[0].shape[0]

    @property
    def widths(self) -> tuple[int, ...]:
        return tuple(t.shape[-1] for t in self.tensors)

    def validate_unit_range(self, tol: float = 1e-5) -> None:
        for r, t in enumerate(self.tensors):
            d = t.data
            if d.size and (d.min() < -tol or d.max() > 1.0 + tol):
                raise ValueError(f"arity-{r} tensor leaves [0,1]")


def arity_of(t: Tensor) -> int:
    r = t.ndim - 2
    if r < 0:
        raise ShapeError(f"tensor ndim {t.ndim} below batched-nullary minimum of 2")
    return r


def expand(p: Tensor, m: int | None = None, max_arity: int | None = None) -> Tensor:
    """Tile a new last constant variable: arity r -> r+1.

    The new grounding ignores the added variable, so reducing it away with
    either quantifier restores ``p`` exactly.
    """
    r = arity_of(p)
    if max_arity is not None and r >= max_arity:
        raise ArityError(f"expand at arity {r} exceeds breadth {max_arity}")
    if r >= 1:
        inferred = p.shape[1]
        if m is not None and m != inferred:
            raise ShapeError(f"m={m} disagrees with tensor constant dim {inferred}")
        m = inferred
    elif m is None:
        raise ShapeError("expanding a nullary tensor needs an explicit m")
    return T.tile_new(p, r + 1, m)


def reduce(p: Tensor, quantifier: str) -> Tensor:
    """Quantify out the last constant variable: arity r -> r-1.

    ``forall`` is min over the axis, ``exists`` is max.
    """
    r = arity_of(p)
    if r < 1:
        raise ArityError("cannot reduce a nullary predicate")
    if quantifier == QUANT_FORALL:
        return T.reduce_min(p, axis=r)
    if quantifier == QUANT_EXISTS:
        return T.reduce_max(p, axis=r)
    raise ValueError(f"unknown quantifier {quantifier!r}")


@lru_cache(maxsize=None)
def _stack_axes(r: int, ndim: int) -> tuple[tuple[int, ...], ...]:
    # np.transpose axes (including batch/channel) for each block, in
    # lexicographic order of the argument permutations
    out = []
    for psi in permutations(range(r)):
        inv = [0] * r
        for j, pj in enumerate(psi):
            inv[pj] = j
        out.append((0,) + tuple(1 + a for a in inv) + (ndim - 1,))
    return tuple(out)


def permute_stack(p: Tensor) -> Tensor:
    """Concatenate all r! argument permutations of ``p`` along channels.

    Block for permutation psi holds p with arguments permuted:
    block[x_1..x_r] = p[x_psi(1)..x_psi(r)]. Identity block comes first
    (lexicographic order); arity <= 1 is returned unchanged.
    """
    r = arity_of(p)
    if r <= 1:
        return p
    blocks = [T.transpose(p, axes) for axes in _stack_axes(r, p.ndim)]
    return T.concat(blocks, axis=p.ndim - 1)


def stack_width(in_width: int, arity: int) -> int:
    return in_width * factorial(arity)
