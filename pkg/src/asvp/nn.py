"""Small shared pieces for the hand-rolled networks: init, softmax, SGD."""

from __future__ import annotations

import hashlib
from typing import Iterable, Iterator

import numpy as np


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss."""

    def __init__(self, epoch: int, context: str = "training"):
        super().__init__(f"{context} loss became non-finite at epoch {epoch}")
        self.epoch = epoch


def uniform_fan_in(rng: np.random.Generator, fan_in: int, shape: tuple[int, ...]) -> np.ndarray:
    """U(-1/sqrt(fan_in), 1/sqrt(fan_in)) init for weights and biases."""
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def cross_entropy(probs: np.ndarray, y: np.ndarray) -> float:
    """Mean negative log-likelihood; probs rows must already be normalized."""
    picked = probs[np.arange(len(y)), y]
    return float(-np.mean(np.log(np.maximum(picked, 1e-300))))


def onehot(y: np.ndarray, c: int) -> np.ndarray:
    out = np.zeros((len(y), c))
    out[np.arange(len(y)), y] = 1.0
    return out


class MomentumSGD:
    """Classic momentum SGD over a dict of named parameter arrays.

    v <- momentum * v + grad;  w <- w - lr * v.  Learning rates are
    per-parameter so heads and backbones can differ.
    """

    def __init__(self, params: dict[str, np.ndarray], lrs: dict[str, float], momentum: float,
                 weight_decay: float = 0.0):
        self.params = params
        self.lrs = lrs
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.velocity = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, grads: dict[str, np.ndarray]) -> None:
        for name, g in grads.items():
            if name not in self.lrs:
                continue
            if self.weight_decay:
                g = g + self.weight_decay * self.params[name]
            v = self.velocity[name]
            v *= self.momentum
            v += g
            self.params[name] -= self.lrs[name] * v


def minibatches(n: int, batch_size: int, rng: np.random.Generator) -> Iterator[np.ndarray]:
    """Seeded shuffle, then contiguous slices; the last batch may be short."""
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start : start + batch_size]


def params_hash(arrays: Iterable[np.ndarray]) -> str:
    """Stable content hash used to prove parameters were untouched."""
    h = hashlib.sha256()
    for a in arrays:
        h.update(np.ascontiguousarray(a, dtype=np.float64).tobytes())
    return h.hexdigest()
