"""The proxy classifier: Linear + BatchNorm + ReLU + Linear on stored features.

The hidden width always equals the input feature dimension. Training is
plain mini-batch SGD with momentum on mean cross-entropy; everything runs
in float64 so identical seeds give bit-identical nets.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .features import FeatureMatrix
from .nn import DivergenceError, MomentumSGD, cross_entropy, minibatches, onehot, softmax, uniform_fan_in

BN_EPS = 1e-5


@dataclass
class ProxyTrainConfig:
    lr: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 0.0
    epochs: int = 50
    train_batch: int = 2048
    eval_batch: int = 16384
    seed: int = 0

    def validate(self) -> None:
        if self.lr <= 0:
            raise ValueError("lr must be > 0")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.train_batch < 1 or self.eval_batch < 1:
            raise ValueError("batch sizes must be >= 1")


@dataclass
class ProxyNet:
    """2-layer MLP with batch normalization after the first linear layer."""

    W1: np.ndarray
    b1: np.ndarray
    gamma: np.ndarray
    beta: np.ndarray
    run_mean: np.ndarray
    run_var: np.ndarray
    W2: np.ndarray
    b2: np.ndarray
    bn_momentum: float = 0.1
    mode: str = "eval"

    @property
    def d(self) -> int:
        return self.W1.shape[0]

    @property
    def c(self) -> int:
        return self.W2.shape[1]

    def copy(self) -> "ProxyNet":
        return ProxyNet(
            W1=self.W1.copy(), b1=self.b1.copy(),
            gamma=self.gamma.copy(), beta=self.beta.copy(),
            run_mean=self.run_mean.copy(), run_var=self.run_var.copy(),
            W2=self.W2.copy(), b2=self.b2.copy(),
            bn_momentum=self.bn_momentum, mode=self.mode,
        )

    def eval_logits(self, X: np.ndarray) -> np.ndarray:
        """Forward pass with running batch-norm statistics."""
        z = X @ self.W1 + self.b1
        xhat = (z - self.run_mean) / np.sqrt(self.run_var + BN_EPS)
        h = np.maximum(self.gamma * xhat + self.beta, 0.0)
        return h @ self.W2 + self.b2


def init_proxy(d: int, c: int, seed: int) -> ProxyNet:
    """Seeded uniform fan-in init; batch-norm stats start at the identity."""
    if d < 1:
        raise ValueError(f"feature dimension must be >= 1, got {d}")
    if c < 2:
        raise ValueError(f"class count must be >= 2, got {c}")
    rng = np.random.default_rng(seed)
    return ProxyNet(
        W1=uniform_fan_in(rng, d, (d, d)),
        b1=uniform_fan_in(rng, d, (d,)),
        gamma=np.ones(d),
        beta=np.zeros(d),
        run_mean=np.zeros(d),
        run_var=np.ones(d),
        W2=uniform_fan_in(rng, d, (d, c)),
        b2=uniform_fan_in(rng, d, (c,)),
    )


def _forward_backward(net: ProxyNet, X: np.ndarray, y: np.ndarray) -> tuple[float, dict[str, np.ndarray]]:
    """One train-mode forward/backward pass returning (loss, grads).

    Batches of size 1 normalize with running stats (batch variance would be
    zero) and leave the running statistics untouched.
    """
    B = X.shape[0]
    z = X @ net.W1 + net.b1
    if B == 1:
        mean, var = net.run_mean, net.run_var
        inv_std = 1.0 / np.sqrt(var + BN_EPS)
        xhat = (z - mean) * inv_std
        batch_stats = False
    else:
        mean = z.mean(axis=0)
        var = z.var(axis=0)
        inv_std = 1.0 / np.sqrt(var + BN_EPS)
        xhat = (z - mean) * inv_std
        batch_stats = True
    a = net.gamma * xhat + net.beta
    h = np.maximum(a, 0.0)
    logits = h @ net.W2 + net.b2
    probs = softmax(logits)
    loss = cross_entropy(probs, y)

    dlogits = (probs - onehot(y, net.c)) / B
    gW2 = h.T @ dlogits
    gb2 = dlogits.sum(axis=0)
    dh = dlogits @ net.W2.T
    da = dh * (a > 0.0)
    ggamma = (da * xhat).sum(axis=0)
    gbeta = da.sum(axis=0)
    dxhat = da * net.gamma
    if batch_stats:
        dz = (inv_std / B) * (B * dxhat - dxhat.sum(axis=0) - xhat * (dxhat * xhat).sum(axis=0))
        # Running stats follow the usual (1 - m) * old + m * new rule with the
        # unbiased batch variance.
        net.run_mean = (1 - net.bn_momentum) * net.run_mean + net.bn_momentum * mean
        net.run_var = (1 - net.bn_momentum) * net.run_var + net.bn_momentum * var * B / (B - 1)
    else:
        dz = dxhat * inv_std
    gW1 = X.T @ dz
    gb1 = dz.sum(axis=0)
    grads = {"W1": gW1, "b1": gb1, "gamma": ggamma, "beta": gbeta, "W2": gW2, "b2": gb2}
    return loss, grads


def train_proxy(
    net: ProxyNet,
    features: FeatureMatrix | np.ndarray,
    y: np.ndarray,
    cfg: ProxyTrainConfig,
) -> tuple[ProxyNet, list[float]]:
    """Train a copy of the net on labeled features; returns (net, loss curve).

    The loss curve holds the per-epoch mean cross-entropy. The returned net
    is in eval mode with the running statistics accumulated during training.
    """
    cfg.validate()
    X = features.data if isinstance(features, FeatureMatrix) else features
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if X.shape[0] == 0:
        raise ValueError("cannot train the proxy on an empty labeled set")
    if X.shape[0] != y.shape[0]:
        raise ValueError(f"{X.shape[0]} feature rows but {y.shape[0]} labels")
    if y.min() < 0 or y.max() >= net.c:
        raise ValueError(f"label outside [0, {net.c})")

    out = net.copy()
    out.mode = "train"
    params = {"W1": out.W1, "b1": out.b1, "gamma": out.gamma, "beta": out.beta,
              "W2": out.W2, "b2": out.b2}
    lrs = {k: cfg.lr for k in params}
    opt = MomentumSGD(params, lrs, cfg.momentum, cfg.weight_decay)
    rng = np.random.default_rng(cfg.seed)

    losses: list[float] = []
    for epoch in range(cfg.epochs):
        total = 0.0
        count = 0
        for idx in minibatches(len(y), cfg.train_batch, rng):
            loss, grads = _forward_backward(out, X[idx], y[idx])
            opt.step(grads)
            total += loss * len(idx)
            count += len(idx)
        epoch_loss = total / count
        if not np.isfinite(epoch_loss):
            raise DivergenceError(epoch, "proxy")
        losses.append(epoch_loss)
    out.mode = "eval"
    return out, losses


def predict_proba(net: ProxyNet, features: FeatureMatrix | np.ndarray,
                  eval_batch: int = 16384) -> np.ndarray:
    """Softmax probabilities in eval mode; rows sum to 1 within 1e-6."""
    if net.mode != "eval":
        raise ValueError("predict_proba requires a net in eval mode")
    X = features.data if isinstance(features, FeatureMatrix) else features
    X = np.asarray(X, dtype=np.float64)
    if X.shape[1] != net.d:
        raise ValueError(f"feature dimension {X.shape[1]} does not match net d={net.d}")
    chunks = []
    for start in range(0, X.shape[0], eval_batch):
        chunks.append(softmax(net.eval_logits(X[start : start + eval_batch])))
    return np.vstack(chunks) if chunks else np.zeros((0, net.c))


def predict_classes(net: ProxyNet, features: FeatureMatrix | np.ndarray) -> np.ndarray:
    """Argmax prediction, ties broken toward the lowest class index."""
    return np.argmax(predict_proba(net, features), axis=1)


_PARAM_NAMES = ("W1", "b1", "gamma", "beta", "run_mean", "run_var", "W2", "b2")


def save_checkpoint(net: ProxyNet, prefix: str | Path) -> Path:
    """Debugging aid: one feature-format file per parameter plus a JSON index.

    1-D parameters are stored as single-row matrices; float64 values are
    truncated to the container's single precision.
    """
    import json

    from .features import save_features

    prefix = Path(prefix)
    index = {"params": {}, "bn_momentum": net.bn_momentum, "mode": net.mode}
    for name in _PARAM_NAMES:
        value = getattr(net, name)
        path = prefix.with_suffix(f".{name}.alfv1")
        save_features(FeatureMatrix(np.atleast_2d(value).astype(np.float32)), path)
        index["params"][name] = {"file": path.name, "shape": list(value.shape)}
    index_path = prefix.with_suffix(".index.json")
    index_path.write_text(json.dumps(index, indent=2))
    return index_path


def load_checkpoint(index_path: str | Path) -> ProxyNet:
    import json

    from .features import load_features

    index_path = Path(index_path)
    index = json.loads(index_path.read_text())
    arrays = {}
    for name, meta in index["params"].items():
        matrix = load_features(index_path.parent / meta["file"])
        arrays[name] = matrix.data.astype(np.float64).reshape(meta["shape"])
    return ProxyNet(**arrays, bn_momentum=index["bn_momentum"], mode=index["mode"])
