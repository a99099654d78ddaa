"""Runs the pipelines: standard active learning, proxy selection (SVPp-style),
aligned proxy selection (ASVP), and the region-replacement experiments.

One run is sequential across iterations; everything is seeded through the
(pool, model, strategy) triple so ledgers are bit-reproducible.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import alignment as al
from . import backbone as bb
from . import strategies as st
from .features import (DatasetManifest, FeatureMatrix, PoolState, acquire_labels,
                       init_pools, l2_normalize_rows, label_indices, load_features)
from .metrics import BaselineCurve, RegionLabel, redundant_ratio, region_partition
from .nn import softmax
from .proxy import ProxyTrainConfig, init_proxy, predict_proba, train_proxy

MODES = ("standard", "svpp", "asvp")
STRATEGIES = ("random", "margin", "confidence", "badge")


class ConfigError(ValueError):
    pass


def derive_seed(*parts: int | str) -> int:
    """Deterministic child seed from mixed parts (stable across processes)."""
    ints = [int.from_bytes(hashlib.sha256(p.encode()).digest()[:4], "little")
            if isinstance(p, str) else int(p) for p in parts]
    return int(np.random.SeedSequence(ints).generate_state(1)[0])


@dataclass
class Seeds:
    pool: int = 0
    model: int = 0
    strategy: int = 0

    def as_dict(self) -> dict[str, int]:
        return {"pool": self.pool, "model": self.model, "strategy": self.strategy}


@dataclass
class RunConfig:
    mode: str = "asvp"
    strategy: str = "margin"
    standard_method: str = "ft"  # standard mode only: ft | lpft
    n_iters: int = 10
    batch_k: int = 100
    init_size: int = 100
    seeds: Seeds = field(default_factory=Seeds)
    synth: bb.SynthSpec | None = field(default_factory=bb.SynthSpec)
    manifest_path: str | None = None
    alignment: al.AlignmentConfig = field(default_factory=al.AlignmentConfig)
    # train_batch 2048 assumes tens of thousands of labeled rows per epoch;
    # desk-scale pools hold a few hundred, so the default run uses smaller
    # batches to keep the per-epoch step count meaningful.
    proxy: ProxyTrainConfig = field(default_factory=lambda: ProxyTrainConfig(train_batch=128))
    # Epoch budgets match (30 = 10 + 20) and the LP-FT backbone rate is one
    # order below FT's, mirroring the usual LP-FT recipe at desk scale. FT
    # stays at 0.05: 0.1 can diverge on margin-concentrated labeled sets.
    ft: bb.TrainSchedule = field(default_factory=lambda: bb.TrainSchedule(
        kind="ft", ft_epochs=30, lr_head=0.05, lr_backbone=0.05))
    lpft: bb.TrainSchedule = field(default_factory=lambda: bb.TrainSchedule(
        kind="lpft", lp_epochs=10, ft_epochs=20, lr_backbone=0.01))
    pretrain: bb.PretrainConfig = field(default_factory=bb.PretrainConfig)
    region_tau: float = 0.9
    track_regions: bool = True
    normalize_features: bool = True
    eval_fraction: float = 0.2

    def validate(self) -> None:
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"strategy must be one of {STRATEGIES}, got {self.strategy!r}")
        if self.standard_method not in ("ft", "lpft"):
            raise ConfigError(f"standard_method must be ft or lpft, got {self.standard_method!r}")
        if self.n_iters < 1:
            raise ConfigError("n_iters must be >= 1")
        if self.batch_k < 1:
            raise ConfigError("batch_k must be >= 1")
        if self.init_size < 1:
            raise ConfigError("init_size must be >= 1")
        if (self.synth is None) == (self.manifest_path is None):
            raise ConfigError("exactly one of synth or manifest_path must be set")
        if not 0.0 < self.eval_fraction < 1.0:
            raise ConfigError("eval_fraction must be in (0, 1)")


@dataclass
class DataBundle:
    """Engine-ready dataset: inputs, labels, split, backbone, features v0."""

    X: np.ndarray
    y: np.ndarray
    train_idx: np.ndarray
    eval_idx: np.ndarray
    pretrained: bb.BackboneNet
    features: FeatureMatrix
    num_classes: int


@dataclass
class IterationRecord:
    iteration: int
    labeled_count: int
    batch_indices: list[int]
    batch_scores: list[float]
    strategy: str
    accuracy_final: float
    accuracy_proxy: float | None
    training_method: str
    feature_version: int
    update_fired: bool
    ped_iters: int | None = None
    logme: float | None = None
    redundant_ratio: float | None = None
    replaced_indices: list[int] | None = None
    replacement_shortfall: int = 0
    uniform_fallback: bool = False


@dataclass
class RunLedger:
    mode: str
    strategy: str
    seeds: dict[str, int]
    records: list[IterationRecord]
    final_training_method: str
    final_accuracy: float
    init_accuracy: float | None
    n_pool: int
    feature_dim: int
    num_classes: int
    timings: dict[str, float] = field(default_factory=dict)

    def selection_sequence(self) -> list[list[int]]:
        return [list(rec.batch_indices) for rec in self.records]

    def to_json(self) -> str:
        payload = dataclasses.asdict(self)
        payload.pop("timings")  # wall-clock noise stays out of deterministic artifacts
        return json.dumps(payload, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "RunLedger":
        raw = json.loads(text)
        records = [IterationRecord(**rec) for rec in raw.pop("records")]
        raw.pop("timings", None)
        return cls(records=records, timings={}, **raw)

    def baseline_curve(self) -> BaselineCurve:
        points = []
        if self.init_accuracy is not None:
            init_labeled = self.records[0].labeled_count - len(self.records[0].batch_indices)
            points.append((float(init_labeled), self.init_accuracy))
        points.extend((float(r.labeled_count), r.accuracy_final) for r in self.records)
        return BaselineCurve.from_points(points)

    def validate(self, n_iters: int, batch_k: int, allow_multiple_updates: bool = False) -> None:
        assert len(self.records) == n_iters
        counts = [r.labeled_count for r in self.records]
        assert all(b - a == batch_k for a, b in zip(counts, counts[1:]))
        versions = [r.feature_version for r in self.records]
        assert all(b >= a for a, b in zip(versions, versions[1:]))
        if not allow_multiple_updates:
            assert versions[-1] <= 1
            assert sum(r.update_fired for r in self.records) <= 1
        seen: set[int] = set()
        for rec in self.records:
            batch = set(rec.batch_indices)
            assert not (batch & seen), "an index was selected twice across the run"
            seen |= batch


def assemble(config: RunConfig) -> DataBundle:
    """Materialize the dataset, split, pre-trained backbone, and features v0."""
    if config.synth is not None:
        spec = config.synth
        X, y_fine, _ = bb.gen_synth(spec)
        train_idx, eval_idx = bb.train_eval_split(spec.n, spec.seed, config.eval_fraction)
        pretrained = bb.pretrain(spec, spec.seed, config.pretrain)
        features = bb.extract_features(pretrained, X)
        return DataBundle(X=X, y=y_fine, train_idx=train_idx, eval_idx=eval_idx,
                          pretrained=pretrained, features=features, num_classes=spec.c_fine)

    manifest = DatasetManifest.load(config.manifest_path)
    if manifest.labels is None:
        raise ConfigError("manifest has no labels; the oracle needs them")
    feat_path = Path(config.manifest_path).parent / manifest.feature_path
    if not feat_path.exists():
        feat_path = Path(manifest.feature_path)
    features = load_features(feat_path, manifest)
    if config.normalize_features and not features.normalized:
        features = l2_normalize_rows(features)
    y = np.asarray(manifest.labels, dtype=np.int64)
    n = features.n
    train_idx, eval_idx = bb.train_eval_split(n, config.seeds.pool, config.eval_fraction)
    # Stored features double as backbone inputs; the identity encoder makes
    # "fine-tuning the pre-trained model" mean fitting an MLP in feature space.
    pretrained = bb.identity_backbone(features.d, manifest.num_classes, config.seeds.model)
    return DataBundle(X=features.data.astype(np.float64), y=y, train_idx=train_idx,
                      eval_idx=eval_idx, pretrained=pretrained, features=features,
                      num_classes=manifest.num_classes)


def _train_full(bundle: DataBundle, config: RunConfig, method: str,
                X_L: np.ndarray, y_L: np.ndarray, seed: int) -> bb.BackboneNet:
    schedule = replace(config.ft if method == "ft" else config.lpft, seed=seed)
    net, _ = bb.train(bundle.pretrained, X_L, y_L, schedule)
    return net


def _full_probs(net: bb.BackboneNet, X: np.ndarray) -> np.ndarray:
    return softmax(net.logits(np.asarray(X, dtype=np.float64)))


def _region_strategy(strategy: str) -> str:
    return "confidence" if strategy == "confidence" else "margin"


class _RunState:
    """Shared loop state for run() and run_replacement()."""

    def __init__(self, config: RunConfig):
        config.validate()
        self.config = config
        self.bundle = assemble(config)
        self.n_pool = len(self.bundle.train_idx)
        needed = config.init_size + config.batch_k * config.n_iters
        if needed > self.n_pool:
            raise ConfigError(
                f"init + k * n_iters = {needed} exceeds the {self.n_pool}-sample pool")
        self.X_pool = self.bundle.X[self.bundle.train_idx]
        self.X_eval = self.bundle.X[self.bundle.eval_idx]
        self.y_pool = self.bundle.y[self.bundle.train_idx]
        self.y_eval = self.bundle.y[self.bundle.eval_idx]
        self.feats_pool = self.bundle.features.data[self.bundle.train_idx]
        self.feats_eval = self.bundle.features.data[self.bundle.eval_idx]
        self.feature_version = 0
        pool = init_pools(self.n_pool, config.init_size, config.seeds.pool)
        self.pool = label_indices(pool, pool.labeled, self.oracle)
        self.history = al.AlignmentHistory()
        self.full_ref: bb.BackboneNet | None = None
        self.init_accuracy: float | None = None
        self.timings: dict = {"train_full": 0.0, "train_proxy": 0.0, "select": 0.0,
                              "iteration_seconds": []}

    def oracle(self, i: int) -> int:
        return int(self.y_pool[i])

    def labeled_data(self) -> tuple[np.ndarray, np.ndarray]:
        idx = self.pool.labeled_array()
        return self.X_pool[idx], self.pool.labels_array()

    def train_full(self, method: str, seed_parts: tuple) -> bb.BackboneNet:
        X_L, y_L = self.labeled_data()
        t0 = time.perf_counter()
        net = _train_full(self.bundle, self.config, method, X_L, y_L, derive_seed(*seed_parts))
        self.timings["train_full"] += time.perf_counter() - t0
        return net

    def ensure_full_ref(self, method: str) -> bb.BackboneNet:
        if self.full_ref is None:
            self.full_ref = self.train_full(method, (self.config.seeds.model, 0))
            self.init_accuracy = self.full_ref.accuracy(self.X_eval, self.y_eval)
        return self.full_ref

    def train_iteration_proxy(self, t: int) -> tuple[np.ndarray, float]:
        """Train the selection proxy on the current labeled features."""
        idx = self.pool.labeled_array()
        cfg = replace(self.config.proxy, seed=derive_seed(self.config.seeds.model, t, 1))
        net = init_proxy(self.feats_pool.shape[1], self.bundle.num_classes,
                         derive_seed(self.config.seeds.model, t, 2))
        t0 = time.perf_counter()
        trained, _ = train_proxy(net, self.feats_pool[idx], self.pool.labels_array(), cfg)
        self.timings["train_proxy"] += time.perf_counter() - t0
        probs = predict_proba(trained, self.feats_pool, self.config.proxy.eval_batch)
        eval_probs = predict_proba(trained, self.feats_eval, self.config.proxy.eval_batch)
        acc = float(np.mean(np.argmax(eval_probs, axis=1) == self.y_eval))
        return probs, acc

    def region_snapshot(self, proxy_probs: np.ndarray, proxy_sel: list[int],
                        method: str = "ft"
                        ) -> tuple[dict[int, RegionLabel], float, np.ndarray]:
        """Partition the unlabeled pool against the full reference model."""
        full = self.ensure_full_ref(method)
        full_probs = _full_probs(full, self.X_pool)
        k = len(proxy_sel)
        full_sel = st.select(_region_strategy(self.config.strategy), self.pool, k,
                             seed=0, probs=full_probs, feats=self.feats_pool)
        regions = region_partition(
            self.pool.unlabeled, proxy_probs, np.argmax(proxy_probs, axis=1),
            full_probs, np.argmax(full_probs, axis=1),
            proxy_sel, full_sel.indices, self.y_pool, self.config.region_tau)
        ratio = redundant_ratio(proxy_sel, regions) if proxy_sel else 0.0
        return regions, ratio, full_probs

    def apply_update(self, t: int) -> None:
        """Fine-tune the backbone on current labels and refresh all features."""
        X_L, y_L = self.labeled_data()
        schedule = replace(self.config.ft, seed=derive_seed(self.config.seeds.model, t, 3))
        t0 = time.perf_counter()
        tuned, _ = bb.train(self.bundle.pretrained, X_L, y_L, schedule)
        self.timings["train_full"] += time.perf_counter() - t0
        fresh = bb.extract_features(tuned, self.bundle.X)
        self.feats_pool = fresh.data[self.bundle.train_idx]
        self.feats_eval = fresh.data[self.bundle.eval_idx]
        self.feature_version += 1


def run(config: RunConfig) -> RunLedger:
    """Execute one active learning run and return its ledger.

    standard: train the full model each iteration and select through it.
    svpp: compute features once, select through a freshly trained proxy
    each iteration, final model trained with FT.
    asvp: like svpp, but after each acquisition the update rule may refresh
    the features from a fine-tuned backbone and switch the final method
    from LP-FT to FT.
    """
    state = _RunState(config)
    mode = config.mode
    final_method = {"standard": config.standard_method, "svpp": "ft", "asvp": "lpft"}[mode]
    records: list[IterationRecord] = []

    for t in range(1, config.n_iters + 1):
        iter_start = time.perf_counter()
        acc_proxy: float | None = None
        if mode == "standard":
            sel_model = state.ensure_full_ref(final_method)
            probs = _full_probs(sel_model, state.X_pool)
        else:
            probs, acc_proxy = state.train_iteration_proxy(t)

        t0 = time.perf_counter()
        batch = st.select(config.strategy, state.pool, config.batch_k,
                          seed=derive_seed(config.seeds.strategy, t),
                          probs=probs, feats=state.feats_pool)
        state.timings["select"] += time.perf_counter() - t0
        batch.validate(state.pool)

        red_ratio: float | None = None
        if mode != "standard" and config.track_regions:
            _, red_ratio, _ = state.region_snapshot(probs, batch.indices, final_method)

        state.pool = acquire_labels(state.pool, batch.indices, state.oracle)
        state.pool.validate()
        assert state.pool.fully_labeled

        signal = None
        update_fired = False
        if mode == "asvp":
            idx = state.pool.labeled_array()
            F_L = state.feats_pool[idx]
            y_L = state.pool.labels_array()
            ped = al.ped_converge_iters(F_L, y_L, config.alignment)
            signal = al.decide_update(ped, F_L, y_L, state.history, config.alignment,
                                      labeled_count=len(state.pool.labeled))
            if signal.decision == al.UPDATE_AND_SWITCH:
                state.apply_update(t)
                final_method = "ft"
                update_fired = True

        model = state.train_full(final_method, (config.seeds.model, t))
        acc_final = model.accuracy(state.X_eval, state.y_eval)
        state.full_ref = model
        state.timings["iteration_seconds"].append(time.perf_counter() - iter_start)

        records.append(IterationRecord(
            iteration=t,
            labeled_count=len(state.pool.labeled),
            batch_indices=list(batch.indices),
            batch_scores=list(batch.scores),
            strategy=config.strategy,
            accuracy_final=acc_final,
            accuracy_proxy=acc_proxy,
            training_method=final_method,
            feature_version=state.feature_version,
            update_fired=update_fired,
            ped_iters=None if signal is None else signal.ped_iters,
            logme=None if signal is None else signal.logme,
            redundant_ratio=red_ratio,
            uniform_fallback=batch.uniform_fallback,
        ))

    ledger = RunLedger(
        mode=mode, strategy=config.strategy, seeds=config.seeds.as_dict(),
        records=records, final_training_method=final_method,
        final_accuracy=records[-1].accuracy_final, init_accuracy=state.init_accuracy,
        n_pool=state.n_pool, feature_dim=state.feats_pool.shape[1],
        num_classes=state.bundle.num_classes, timings=dict(state.timings))
    ledger.validate(config.n_iters, config.batch_k, config.alignment.allow_multiple_updates)
    return ledger


def run_replacement(config: RunConfig, fraction: float = 0.2, source: str = "b2") -> RunLedger:
    """Proxy selection with the largest-margin share swapped out each iteration.

    The ceil(fraction * k) proxy picks with the largest proxy margins are
    replaced by unlabeled missing-region samples (source="b2", ranked by
    ascending full-model margin) or by the smallest-full-model-margin
    samples (source="least_margin_full"). This experiment deliberately
    trains the full model every iteration.
    """
    if not 0.0 <= fraction <= 1.0:
        raise ConfigError("fraction must be in [0, 1]")
    if source not in ("b2", "least_margin_full"):
        raise ConfigError(f"source must be b2 or least_margin_full, got {source!r}")
    config = replace(config, mode="svpp", strategy="margin", track_regions=True)
    state = _RunState(config)
    records: list[IterationRecord] = []

    for t in range(1, config.n_iters + 1):
        probs, acc_proxy = state.train_iteration_proxy(t)
        batch = st.select_margin(probs, state.pool, config.batch_k)
        regions, red_ratio, full_probs = state.region_snapshot(probs, batch.indices)

        m = math.ceil(fraction * config.batch_k)
        replaced: list[int] = []
        shortfall = 0
        if m > 0:
            # batch.indices are margin-ascending; the last m have the largest margins.
            kept = batch.indices[: config.batch_k - m]
            kept_set = set(kept)
            full_margin = st.margin_scores(full_probs)
            if source == "b2":
                cand = [i for i in state.pool.unlabeled
                        if regions[i] is RegionLabel.FT_ONLY_B2 and i not in kept_set]
            else:
                cand = [i for i in state.pool.unlabeled if i not in kept_set]
            cand.sort(key=lambda i: (full_margin[i], i))
            replaced = cand[:m]
            shortfall = m - len(replaced)
            if shortfall:
                # Not enough region samples: keep that many of the would-be
                # replaced picks (the least-large-margin ones first).
                spare = batch.indices[config.batch_k - m : config.batch_k - m + shortfall]
                kept = kept + spare
            batch = st.SelectionBatch(indices=kept + replaced,
                                      scores=[0.0] * len(kept + replaced),
                                      strategy="replacement")
            batch.validate(state.pool)

        state.pool = acquire_labels(state.pool, batch.indices, state.oracle)
        state.pool.validate()
        assert state.pool.fully_labeled
        model = state.train_full("ft", (config.seeds.model, t))
        acc_final = model.accuracy(state.X_eval, state.y_eval)
        state.full_ref = model

        records.append(IterationRecord(
            iteration=t,
            labeled_count=len(state.pool.labeled),
            batch_indices=list(batch.indices),
            batch_scores=list(batch.scores),
            strategy="replacement",
            accuracy_final=acc_final,
            accuracy_proxy=acc_proxy,
            training_method="ft",
            feature_version=state.feature_version,
            update_fired=False,
            redundant_ratio=red_ratio,
            replaced_indices=replaced,
            replacement_shortfall=shortfall,
        ))

    ledger = RunLedger(
        mode="svpp", strategy="replacement", seeds=config.seeds.as_dict(),
        records=records, final_training_method="ft",
        final_accuracy=records[-1].accuracy_final, init_accuracy=state.init_accuracy,
        n_pool=state.n_pool, feature_dim=state.feats_pool.shape[1],
        num_classes=state.bundle.num_classes, timings=dict(state.timings))
    return ledger


def run_random_baseline(config: RunConfig) -> tuple[RunLedger, BaselineCurve]:
    """Random-selection standard-FT run yielding the interpolation curve.

    Two extra anchor points below the initial pool size (init/4 and init/2
    random labels) are measured so early AL accuracies interpolate inside
    the curve instead of extrapolating off its shallow first segment.
    """
    base_cfg = replace(config, mode="standard", strategy="random",
                       standard_method="ft", track_regions=False)
    ledger = run(base_cfg)
    state = _RunState(base_cfg)
    anchors = []
    for frac in (4, 2):
        size = base_cfg.init_size // frac
        if size < 2 or size >= base_cfg.init_size:
            continue
        rng = np.random.default_rng([base_cfg.seeds.pool, frac])
        sub = rng.choice(state.n_pool, size=size, replace=False)
        net = _train_full(state.bundle, base_cfg, "ft", state.X_pool[sub],
                          state.y_pool[sub], derive_seed(base_cfg.seeds.model, "anchor", frac))
        anchors.append((float(size), net.accuracy(state.X_eval, state.y_eval)))
    points = sorted(anchors) + ledger.baseline_curve().points()
    return ledger, BaselineCurve.from_points(points)
