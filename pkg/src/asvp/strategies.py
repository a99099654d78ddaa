"""Acquisition strategies: random, margin, confidence, and BADGE.

Strategy code is model-agnostic: it consumes a probability matrix and raw
features indexed over the whole pool universe and only ever selects from
the unlabeled set. Ties break toward the lower sample index everywhere.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .features import PoolState


class SelectionError(Exception):
    """Requested batch cannot be drawn from the unlabeled pool."""


@dataclass
class SelectionBatch:
    indices: list[int]
    scores: list[float]
    strategy: str
    uniform_fallback: bool = False

    def validate(self, pool: PoolState) -> None:
        if len(set(self.indices)) != len(self.indices):
            raise SelectionError("selection batch contains duplicates")
        unlabeled = set(pool.unlabeled)
        outside = [i for i in self.indices if i not in unlabeled]
        if outside:
            raise SelectionError(f"selected index {outside[0]} is not unlabeled")


def _check_k(pool: PoolState, k: int) -> None:
    if k < 0:
        raise SelectionError(f"k must be >= 0, got {k}")
    if k > len(pool.unlabeled):
        raise SelectionError(f"k={k} exceeds unlabeled pool size {len(pool.unlabeled)}")


def select_random(pool: PoolState, k: int, seed: int) -> SelectionBatch:
    """Uniform without replacement over the unlabeled pool."""
    _check_k(pool, k)
    rng = np.random.default_rng(seed)
    u = pool.unlabeled_array()
    chosen = rng.choice(len(u), size=k, replace=False)
    indices = [int(u[i]) for i in chosen]
    return SelectionBatch(indices=indices, scores=[0.0] * k, strategy="random")


def _ascending_pick(scores_u: np.ndarray, u: np.ndarray, k: int) -> tuple[list[int], list[float]]:
    order = np.lexsort((u, scores_u))[:k]
    return [int(u[i]) for i in order], [float(scores_u[i]) for i in order]


def margin_scores(probs: np.ndarray) -> np.ndarray:
    """Top-1 minus top-2 probability per row; smaller = more uncertain."""
    part = np.partition(probs, probs.shape[1] - 2, axis=1)
    return part[:, -1] - part[:, -2]


def select_margin(probs: np.ndarray, pool: PoolState, k: int) -> SelectionBatch:
    """Ascending top-1-minus-top-2 margin over unlabeled rows."""
    _check_k(pool, k)
    u = pool.unlabeled_array()
    indices, scores = _ascending_pick(margin_scores(probs[u]), u, k)
    return SelectionBatch(indices=indices, scores=scores, strategy="margin")


def select_confidence(probs: np.ndarray, pool: PoolState, k: int) -> SelectionBatch:
    """Ascending maximum predicted probability over unlabeled rows."""
    _check_k(pool, k)
    u = pool.unlabeled_array()
    indices, scores = _ascending_pick(probs[u].max(axis=1), u, k)
    return SelectionBatch(indices=indices, scores=scores, strategy="confidence")


def badge_grad_embed(probs: np.ndarray, feats: np.ndarray) -> np.ndarray:
    """Last-layer gradient embeddings g_i = (p_i - onehot(argmax p_i)) (x) f_i.

    Row-major outer product: block a of the output row is
    (p[a] - [a == argmax]) * f. np.argmax already resolves ties toward the
    lowest class index.
    """
    if probs.shape[0] != feats.shape[0]:
        raise ValueError(f"probs has {probs.shape[0]} rows, feats has {feats.shape[0]}")
    n, c = probs.shape
    d = feats.shape[1]
    residual = probs.astype(np.float64).copy()
    residual[np.arange(n), np.argmax(probs, axis=1)] -= 1.0
    return (residual[:, :, None] * feats[:, None, :].astype(np.float64)).reshape(n, c * d)


def kmeanspp_select(embeddings: np.ndarray, pool: PoolState, k: int, seed: int) -> SelectionBatch:
    """k-means++ seeding over unlabeled embeddings.

    Zero-embedding candidates (confident-correct samples have zero
    last-layer gradients and carry no signal) stay out of the candidate set
    while nonzero ones remain. The first center is uniform over eligible
    candidates; each later center is drawn with probability proportional to
    squared distance to the nearest chosen center. Whenever the remaining
    mass is zero (or only zero-embedding rows are left) the picks fall back
    to uniform and the batch is flagged.
    """
    _check_k(pool, k)
    u = pool.unlabeled_array()
    emb = np.asarray(embeddings, dtype=np.float64)[u]
    rng = np.random.default_rng(seed)
    if k == 0:
        return SelectionBatch(indices=[], scores=[], strategy="badge")

    fallback = False
    norms2 = np.einsum("ij,ij->i", emb, emb)
    remaining = np.ones(len(u), dtype=bool)
    chosen: list[int] = []
    scores: list[float] = []
    d2 = np.full(len(u), np.inf)
    while len(chosen) < k:
        informative = np.flatnonzero(remaining & (norms2 > 0.0))
        cand = informative if informative.size else np.flatnonzero(remaining)
        if not chosen:
            if not informative.size:
                fallback = True
            pick = int(cand[rng.integers(cand.size)])
            score = 0.0
        else:
            mass = d2[cand]
            total = mass.sum()
            if total > 0.0:
                pick = int(cand[rng.choice(cand.size, p=mass / total)])
            else:
                fallback = True
                pick = int(cand[rng.integers(cand.size)])
            score = float(d2[pick])
        if not informative.size and chosen:
            fallback = True
        chosen.append(pick)
        scores.append(score)
        remaining[pick] = False
        diff = emb - emb[pick]
        d2 = np.minimum(d2, np.einsum("ij,ij->i", diff, diff))
    indices = [int(u[i]) for i in chosen]
    return SelectionBatch(indices=indices, scores=scores, strategy="badge",
                          uniform_fallback=fallback)


def select(strategy: str, pool: PoolState, k: int, seed: int,
           probs: np.ndarray | None = None, feats: np.ndarray | None = None) -> SelectionBatch:
    """Dispatch by strategy name; probs/feats are required where used."""
    if strategy == "random":
        return select_random(pool, k, seed)
    if strategy == "margin":
        return select_margin(probs, pool, k)
    if strategy == "confidence":
        return select_confidence(probs, pool, k)
    if strategy == "badge":
        return kmeanspp_select(badge_grad_embed(probs, feats), pool, k, seed)
    raise SelectionError(f"unknown strategy {strategy!r}")
