"""MLP parameters, forward pass, loss helpers and optimizers."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import tensor as T
from .errors import ShapeError
from .tensor import Tensor

ACTIVATIONS = ("linear", "relu", "sigmoid")


@dataclass
class MlpParams:
    """Weights/biases for a dense stack. weights[i] has shape [fan_in, fan_out]."""

    weights: list[Tensor]
    biases: list[Tensor]
    hidden_activation: str = "relu"
    output_activation: str = "linear"

    @property
    def fan_in(self) -> int:
        return self.weights[0].shape[0]

    @property
    def fan_out(self) -> int:
        return self.weights[-1].shape[1]

    def tensors(self) -> list[Tensor]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out


def init_mlp(
    dims: Sequence[int],
    rng: np.random.Generator,
    hidden_activation: str = "relu",
    output_activation: str = "linear",
) -> MlpParams:
    """Xavier-uniform weights (+-sqrt(6/(fi+fo))), zero biases, float32."""
    if len(dims) < 2:
        raise ShapeError("an MLP needs at least [fan_in, fan_out] dims")
    if hidden_activation not in ACTIVATIONS or output_activation not in ACTIVATIONS:
        raise ValueError(f"activations must be one of {ACTIVATIONS}")
    weights, biases = [], []
    for fi, fo in zip(dims[:-1], dims[1:]):
        bound = np.sqrt(6.0 / (fi + fo))
        w = rng.uniform(-bound, bound, size=(fi, fo)).astype(np.float32)
        weights.append(Tensor(w, requires_grad=True))
        biases.append(Tensor(np.zeros(fo, dtype=np.float32), requires_grad=True))
    return MlpParams(weights, biases, hidden_activation, output_activation)


def _activate(h: Tensor, kind: str) -> Tensor:
    if kind == "relu":
        return T.relu(h)
    if kind == "sigmoid":
        return T.sigmoid(h)
    return h


def forward_mlp(params: MlpParams, x: Tensor) -> Tensor:
    """Apply the stack over the trailing feature axis of ``x``.

    Leading axes are flattened into one position axis and restored on the
    way out, so grounding tensors of any arity pass through unchanged.
    """
    lead = x.shape[:-1]
    positions = 1
    for s in lead:
        positions *= s
    h = T.reshape(x, (positions, x.shape[-1]))
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        if h.shape[-1] != w.shape[0]:
            raise ShapeError(
                f"mlp layer {i} expects fan-in {w.shape[0]}, got {h.shape[-1]}"
            )
        h = T.matmul(h, w) + b
        h = _activate(h, params.output_activation if i == last else params.hidden_activation)
    return T.reshape(h, lead + (params.fan_out,))


def bce_loss(pred: Tensor, target: np.ndarray, mask: np.ndarray | None = None) -> Tensor:
    """Mean binary cross entropy; ``mask`` weights elements (e.g. off-diagonal)."""
    if pred.shape != target.shape:
        raise ShapeError(f"pred {pred.shape} vs target {target.shape}")
    eps = 1e-7
    t = np.asarray(target, dtype=np.float32)
    pos = T.log(pred + eps) * Tensor(t)
    negt = T.log((1.0 - pred) + eps) * Tensor(1.0 - t)
    ll = pos + negt
    if mask is None:
        return -T.mean(ll)
    w = np.asarray(mask, dtype=np.float32)
    total = float(w.sum())
    if total <= 0:
        raise ShapeError("mask removes every element")
    return -(T.reduce_sum(ll * Tensor(w)) * (1.0 / total))


class Optimizer:
    """SGD or Adam over a fixed parameter list.

    The step counter advances even when a step is skipped for a non-finite
    gradient, so Adam bias correction stays aligned with call count.
    """

    def __init__(
        self,
        params: Sequence[Tensor],
        lr: float,
        algorithm: str = "adam",
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
        clip_norm: float | None = None,
    ):
        if algorithm not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer algorithm {algorithm!r}")
        self.params = list(params)
        self.lr = float(lr)
        self.algorithm = algorithm
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.clip_norm = clip_norm
        self.step_count = 0
        self.skipped = 0
        if algorithm == "adam":
            self._m = [np.zeros_like(p.data) for p in self.params]
            self._v = [np.zeros_like(p.data) for p in self.params]
        else:
            self._m = self._v = None

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> bool:
        """Apply one update. Returns False (and skips) on non-finite grads."""
        grads = [p.grad for p in self.params]
        self.step_count += 1
        for g in grads:
            if g is not None and not np.isfinite(g).all():
                self.skipped += 1
                return False
        if self.clip_norm is not None:
            sq = sum(float((g * g).sum()) for g in grads if g is not None)
            norm = math.sqrt(sq)
            if norm > self.clip_norm:
                # python-float scale keeps float32 grads (and the moments
                # derived from them) from promoting to float64
                scale = self.clip_norm / (norm + 1e-12)
                grads = [None if g is None else (g * scale).astype(np.float32)
                         for g in grads]
        t = self.step_count
        for i, (p, g) in enumerate(zip(self.params, grads)):
            if g is None:
                continue
            if self.algorithm == "sgd":
                p.data -= (self.lr * g).astype(np.float32)
            else:
                self._m[i] = self.beta1 * self._m[i] + (1 - self.beta1) * g
                self._v[i] = self.beta2 * self._v[i] + (1 - self.beta2) * (g * g)
                mhat = self._m[i] / (1 - self.beta1**t)
                vhat = self._v[i] / (1 - self.beta2**t)
                p.data -= (self.lr * mhat / (np.sqrt(vhat) + self.eps)).astype(np.float32)
            if not np.isfinite(p.data).all():
                raise FloatingPointError("parameter became non-finite after update")
        return True

    # -- checkpoint plumbing -------------------------------------------
    def state_arrays(self) -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {}
        if self.algorithm == "adam":
            for i, (m, v) in enumerate(zip(self._m, self._v)):
                out[f"m{i}"] = m
                out[f"v{i}"] = v
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray], step_count: int,
                          skipped: int = 0) -> None:
        self.step_count = int(step_count)
        self.skipped = int(skipped)
        if self.algorithm == "adam":
            for i in range(len(self.params)):
                self._m[i] = np.array(arrays[f"m{i}"], dtype=np.float32)
                self._v[i] = np.array(arrays[f"v{i}"], dtype=np.float32)
