"""Desk-scale stand-in for the pre-trained backbone.

The encoder is a 2-layer MLP (input -> hidden -> feature, ReLU between)
with a linear head on top. "Pre-training" is supervised training on coarse
group labels of a synthetic benchmark: the resulting features separate
coarse structure well but conflate fine classes inside a group, which is
exactly the good-but-imperfect regime the selection engine needs.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .features import DegenerateVectorError, FeatureMatrix, l2_normalize_rows
from .nn import DivergenceError, MomentumSGD, cross_entropy, minibatches, onehot, params_hash, softmax, uniform_fan_in


@dataclass
class SynthSpec:
    """Synthetic benchmark: fine clusters paired inside coarse groups.

    Each coarse group owns one "hard" axis; the fine classes mapped to the
    group sit on opposite sides of the group center along that axis, spaced
    by fine_spread. Coarse structure is easy, fine structure is the part a
    model has to learn from labels.
    """

    n: int = 5000
    d_in: int = 32
    c_fine: int = 10
    c_coarse: int = 5
    separation: float = 6.0
    fine_spread: float = 3.0
    noise: float = 1.0
    seed: int = 0

    def validate(self) -> None:
        if self.n < self.c_fine:
            raise ValueError("need at least one sample per fine class")
        if self.c_coarse >= self.c_fine:
            raise ValueError("c_coarse must be < c_fine")
        if self.c_coarse < 2:
            raise ValueError("c_coarse must be >= 2")
        if self.separation <= 0:
            raise ValueError("separation must be > 0")
        if self.fine_spread <= 0:
            raise ValueError("fine_spread must be > 0")
        if self.noise < 0:
            raise ValueError("noise must be >= 0")


@dataclass
class PretrainConfig:
    epochs: int = 60
    lr: float = 0.05
    momentum: float = 0.9
    weight_decay: float = 1e-3
    batch_size: int = 256
    hidden: int = 64


@dataclass
class TrainSchedule:
    """Full-model training recipe: plain fine-tuning or LP then FT."""

    kind: str = "ft"  # "ft" | "lpft"
    ft_epochs: int = 30
    lp_epochs: int = 5
    lr_head: float = 0.1
    lr_backbone: float = 0.1
    lr_lp: float = 0.5
    weight_decay: float = 0.0
    momentum: float = 0.9
    batch_size: int = 128
    seed: int = 0

    def validate(self) -> None:
        if self.kind not in ("ft", "lpft"):
            raise ValueError(f"unknown schedule kind {self.kind!r}")
        if self.kind == "lpft" and self.lp_epochs < 1:
            raise ValueError("lpft requires lp_epochs >= 1")
        if min(self.lr_head, self.lr_backbone, self.lr_lp) <= 0:
            raise ValueError("all learning rates must be > 0")
        if self.ft_epochs < 0:
            raise ValueError("ft_epochs must be >= 0")


@dataclass
class Encoder:
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray

    @property
    def d_in(self) -> int:
        return self.W1.shape[0]

    @property
    def d_feat(self) -> int:
        return self.W2.shape[1]

    def copy(self) -> "Encoder":
        return Encoder(self.W1.copy(), self.b1.copy(), self.W2.copy(), self.b2.copy())

    def forward(self, X: np.ndarray) -> np.ndarray:
        h = np.maximum(X @ self.W1 + self.b1, 0.0)
        return h @ self.W2 + self.b2

    def content_hash(self) -> str:
        return params_hash([self.W1, self.b1, self.W2, self.b2])


@dataclass
class Head:
    W: np.ndarray
    b: np.ndarray

    def copy(self) -> "Head":
        return Head(self.W.copy(), self.b.copy())

    def forward(self, feats: np.ndarray) -> np.ndarray:
        return feats @ self.W + self.b


@dataclass
class BackboneNet:
    encoder: Encoder
    head: Head
    tag: str = ""

    @property
    def c(self) -> int:
        return self.head.W.shape[1]

    def copy(self) -> "BackboneNet":
        return BackboneNet(self.encoder.copy(), self.head.copy(), self.tag)

    def logits(self, X: np.ndarray) -> np.ndarray:
        return self.head.forward(self.encoder.forward(X))

    def accuracy(self, X: np.ndarray, y: np.ndarray) -> float:
        preds = np.argmax(self.logits(np.asarray(X, dtype=np.float64)), axis=1)
        return float(np.mean(preds == y))


@dataclass
class TrainReport:
    losses: list[float] = field(default_factory=list)
    encoder_hash_before_lp: str | None = None
    encoder_hash_after_lp: str | None = None


def gen_synth(spec: SynthSpec) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Generate (X, fine labels, coarse labels), balanced and seeded.

    Fine class i belongs to coarse group i mod c_coarse; group members sit
    at the group center offset along the group axis by alternating
    multiples of fine_spread / 2.
    """
    spec.validate()
    rng = np.random.default_rng(spec.seed)

    centers = rng.normal(size=(spec.c_coarse, spec.d_in))
    centers /= np.linalg.norm(centers, axis=1, keepdims=True)
    centers *= spec.separation
    axes = rng.normal(size=(spec.c_coarse, spec.d_in))
    axes /= np.linalg.norm(axes, axis=1, keepdims=True)

    fine_to_coarse = np.arange(spec.c_fine) % spec.c_coarse
    member = np.arange(spec.c_fine) // spec.c_coarse
    side = np.where(member % 2 == 0, 1.0, -1.0) * (member // 2 + 1)
    centroids = centers[fine_to_coarse] + side[:, None] * (spec.fine_spread / 2.0) * axes[fine_to_coarse]

    base, extra = divmod(spec.n, spec.c_fine)
    counts = np.full(spec.c_fine, base)
    counts[:extra] += 1
    y_fine = np.repeat(np.arange(spec.c_fine), counts)
    order = rng.permutation(spec.n)
    y_fine = y_fine[order]
    X = centroids[y_fine] + rng.normal(size=(spec.n, spec.d_in)) * spec.noise
    y_coarse = fine_to_coarse[y_fine]
    return X, y_fine.astype(np.int64), y_coarse.astype(np.int64)


def train_eval_split(n: int, seed: int, eval_fraction: float = 0.2) -> tuple[np.ndarray, np.ndarray]:
    """Seeded holdout split; eval rows never enter the selection pools."""
    rng = np.random.default_rng([seed, 20])
    perm = rng.permutation(n)
    n_eval = int(round(n * eval_fraction))
    return np.sort(perm[n_eval:]), np.sort(perm[:n_eval])


def _init_net(d_in: int, hidden: int, d_feat: int, c: int, seed: int) -> BackboneNet:
    rng = np.random.default_rng(seed)
    enc = Encoder(
        W1=uniform_fan_in(rng, d_in, (d_in, hidden)),
        b1=uniform_fan_in(rng, d_in, (hidden,)),
        W2=uniform_fan_in(rng, hidden, (hidden, d_feat)),
        b2=uniform_fan_in(rng, hidden, (d_feat,)),
    )
    head = Head(
        W=uniform_fan_in(rng, d_feat, (d_feat, c)),
        b=uniform_fan_in(rng, d_feat, (c,)),
    )
    return BackboneNet(encoder=enc, head=head)


def identity_backbone(d: int, c: int, seed: int) -> BackboneNet:
    """Backbone whose encoder is an exact identity (relu(x) - relu(-x)).

    Used when the dataset source is an exported feature file: the stored
    features double as inputs and the "pre-trained" encoder reproduces them
    exactly, so fine-tuning works in feature space.
    """
    eye = np.eye(d)
    enc = Encoder(
        W1=np.concatenate([eye, -eye], axis=1),
        b1=np.zeros(2 * d),
        W2=np.concatenate([eye, -eye], axis=0),
        b2=np.zeros(d),
    )
    rng = np.random.default_rng(seed)
    head = Head(W=uniform_fan_in(rng, d, (d, c)), b=uniform_fan_in(rng, d, (c,)))
    return BackboneNet(encoder=enc, head=head, tag="identity")


def _full_forward_backward(net: BackboneNet, X: np.ndarray, y: np.ndarray
                           ) -> tuple[float, dict[str, np.ndarray]]:
    B = X.shape[0]
    h_pre = X @ net.encoder.W1 + net.encoder.b1
    h = np.maximum(h_pre, 0.0)
    feats = h @ net.encoder.W2 + net.encoder.b2
    logits = net.head.forward(feats)
    probs = softmax(logits)
    loss = cross_entropy(probs, y)

    dlogits = (probs - onehot(y, net.c)) / B
    gHW = feats.T @ dlogits
    gHb = dlogits.sum(axis=0)
    dfeats = dlogits @ net.head.W.T
    gW2 = h.T @ dfeats
    gb2 = dfeats.sum(axis=0)
    dh = (dfeats @ net.encoder.W2.T) * (h_pre > 0.0)
    gW1 = X.T @ dh
    gb1 = dh.sum(axis=0)
    grads = {"enc.W1": gW1, "enc.b1": gb1, "enc.W2": gW2, "enc.b2": gb2,
             "head.W": gHW, "head.b": gHb}
    return loss, grads


def _run_phase(net: BackboneNet, X: np.ndarray, y: np.ndarray, epochs: int,
               lrs: dict[str, float], momentum: float, weight_decay: float,
               batch_size: int, rng: np.random.Generator, report: TrainReport,
               context: str) -> None:
    params = {"enc.W1": net.encoder.W1, "enc.b1": net.encoder.b1,
              "enc.W2": net.encoder.W2, "enc.b2": net.encoder.b2,
              "head.W": net.head.W, "head.b": net.head.b}
    opt = MomentumSGD(params, lrs, momentum, weight_decay)
    for epoch in range(epochs):
        total, count = 0.0, 0
        for idx in minibatches(len(y), batch_size, rng):
            loss, grads = _full_forward_backward(net, X[idx], y[idx])
            opt.step(grads)
            total += loss * len(idx)
            count += len(idx)
        epoch_loss = total / count
        if not np.isfinite(epoch_loss):
            raise DivergenceError(epoch, context)
        report.losses.append(epoch_loss)


def train(net: BackboneNet, X: np.ndarray, y: np.ndarray, schedule: TrainSchedule
          ) -> tuple[BackboneNet, TrainReport]:
    """Train a copy of the net under the FT or LP-FT schedule.

    LP-FT runs lp_epochs of head-only training with the encoder frozen
    (verified by content hash), then ft_epochs of joint training. Momentum
    buffers reset at the phase boundary.
    """
    schedule.validate()
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if len(y) == 0:
        raise ValueError("cannot train on an empty labeled set")
    out = net.copy()
    report = TrainReport()
    head_lrs = {"head.W": schedule.lr_head, "head.b": schedule.lr_head}
    joint_lrs = {"enc.W1": schedule.lr_backbone, "enc.b1": schedule.lr_backbone,
                 "enc.W2": schedule.lr_backbone, "enc.b2": schedule.lr_backbone,
                 **head_lrs}
    if schedule.kind == "lpft":
        lp_lrs = {"head.W": schedule.lr_lp, "head.b": schedule.lr_lp}
        report.encoder_hash_before_lp = out.encoder.content_hash()
        rng = np.random.default_rng([schedule.seed, 0])
        _run_phase(out, X, y, schedule.lp_epochs, lp_lrs, schedule.momentum,
                   schedule.weight_decay, schedule.batch_size, rng, report, "lp")
        report.encoder_hash_after_lp = out.encoder.content_hash()
        assert report.encoder_hash_after_lp == report.encoder_hash_before_lp
        rng = np.random.default_rng([schedule.seed, 1])
        _run_phase(out, X, y, schedule.ft_epochs, joint_lrs, schedule.momentum,
                   schedule.weight_decay, schedule.batch_size, rng, report, "ft")
    else:
        rng = np.random.default_rng([schedule.seed, 1])
        _run_phase(out, X, y, schedule.ft_epochs, joint_lrs, schedule.momentum,
                   schedule.weight_decay, schedule.batch_size, rng, report, "ft")
    out.tag = f"trained-{schedule.kind}"
    return out, report


def pretrain(spec: SynthSpec, seed: int, cfg: PretrainConfig | None = None) -> BackboneNet:
    """Train the encoder on coarse labels of the benchmark's train split.

    The coarse head used during pre-training is discarded; the returned net
    carries a fresh fine-class head so downstream fine-tuning starts from
    pre-trained encoder weights plus a virgin head.
    """
    cfg = cfg or PretrainConfig()
    X, _, y_coarse = gen_synth(spec)
    train_idx, _ = train_eval_split(spec.n, spec.seed)
    net = _init_net(spec.d_in, cfg.hidden, spec.d_in, spec.c_coarse, seed)
    schedule = TrainSchedule(kind="ft", ft_epochs=cfg.epochs, lr_head=cfg.lr,
                             lr_backbone=cfg.lr, weight_decay=cfg.weight_decay,
                             momentum=cfg.momentum, batch_size=cfg.batch_size, seed=seed)
    trained, _ = train(net, X[train_idx], y_coarse[train_idx], schedule)
    rng = np.random.default_rng([seed, 99])
    d_feat = trained.encoder.d_feat
    fine_head = Head(W=uniform_fan_in(rng, d_feat, (d_feat, spec.c_fine)),
                     b=uniform_fan_in(rng, d_feat, (spec.c_fine,)))
    out = BackboneNet(encoder=trained.encoder, head=fine_head)
    out.tag = f"pretrained-{out.encoder.content_hash()[:12]}"
    return out


def extract_features(net: BackboneNet, X: np.ndarray) -> FeatureMatrix:
    """Encoder outputs as unit-norm float32 rows; version bump is the caller's job."""
    feats = net.encoder.forward(np.asarray(X, dtype=np.float64))
    return l2_normalize_rows(FeatureMatrix(data=feats.astype(np.float32)))


def exchange_head_accuracy(pre_encoder: Encoder, ft_head: Head,
                           X: np.ndarray, y: np.ndarray) -> float:
    """Accuracy of the fine-tuned head mounted on the frozen pre-trained encoder."""
    if ft_head.W.shape[0] != pre_encoder.d_feat:
        raise ValueError(
            f"head expects {ft_head.W.shape[0]}-dim features, encoder yields {pre_encoder.d_feat}"
        )
    logits = ft_head.forward(pre_encoder.forward(np.asarray(X, dtype=np.float64)))
    preds = np.argmax(logits, axis=1)
    return float(np.mean(preds == y))
