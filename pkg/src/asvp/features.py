"""Feature matrices, dataset manifests, and labeled/unlabeled pool state.

Features live in ALFV1 files: the 5 magic bytes ``ALFV1``, two unsigned
32-bit little-endian integers (rows, columns), then rows*columns IEEE-754
single-precision values, little-endian, row-major.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

MAGIC = b"ALFV1"
HEADER_SIZE = len(MAGIC) + 8
UNIT_NORM_TOL = 1e-5


class FeatureStoreError(Exception):
    """Base class for feature-store failures."""


class StorageError(FeatureStoreError):
    """Underlying file I/O failed."""


class FeatureFormatError(FeatureStoreError):
    """File does not start with the ALFV1 magic."""


class ShapeMismatchError(FeatureStoreError):
    """Header shape disagrees with the manifest."""


class TruncatedPayloadError(FeatureStoreError):
    """Payload size disagrees with the header."""


class ValidationError(FeatureStoreError):
    """A matrix or manifest violates its invariants."""


class DegenerateVectorError(FeatureStoreError):
    """A zero row cannot be normalized."""

    def __init__(self, row: int):
        super().__init__(f"row {row} has zero norm and cannot be normalized")
        self.row = row


class PoolError(Exception):
    """Illegal labeled/unlabeled pool transition."""


@dataclass
class FeatureMatrix:
    """Dense n x d single-precision feature store, one sample per row."""

    data: np.ndarray
    normalized: bool = False

    def __post_init__(self) -> None:
        self.data = np.ascontiguousarray(self.data, dtype=np.float32)
        if self.data.ndim != 2:
            raise ValidationError(f"feature data must be 2-D, got ndim={self.data.ndim}")

    @property
    def n(self) -> int:
        return self.data.shape[0]

    @property
    def d(self) -> int:
        return self.data.shape[1]

    def validate(self) -> None:
        if self.n < 1 or self.d < 1:
            raise ValidationError(f"feature matrix must be at least 1x1, got {self.n}x{self.d}")
        if not np.all(np.isfinite(self.data)):
            raise ValidationError("feature matrix contains NaN or Inf entries")
        if self.normalized:
            norms = np.linalg.norm(self.data.astype(np.float64), axis=1)
            worst = np.max(np.abs(norms - 1.0))
            if worst > UNIT_NORM_TOL:
                raise ValidationError(
                    f"normalized flag set but a row norm deviates from 1 by {worst:.3g}"
                )


@dataclass
class DatasetManifest:
    """Sidecar metadata for one ALFV1 feature file."""

    ids: list[str]
    labels: list[int] | None
    num_classes: int
    feature_path: str
    provenance: str = ""
    feature_version: int = 0

    def validate(self) -> None:
        if len(set(self.ids)) != len(self.ids):
            raise ValidationError("manifest ids are not unique")
        if self.num_classes < 1:
            raise ValidationError("num_classes must be >= 1")
        if self.labels is not None:
            if len(self.labels) != len(self.ids):
                raise ValidationError("labels length differs from ids length")
            bad = [v for v in self.labels if not (0 <= v < self.num_classes)]
            if bad:
                raise ValidationError(f"label value {bad[0]} outside [0, {self.num_classes})")
        if self.feature_version < 0:
            raise ValidationError("feature_version must be >= 0")

    def to_json(self) -> str:
        payload = {
            "ids": self.ids,
            "labels": self.labels,
            "num_classes": self.num_classes,
            "feature_path": self.feature_path,
            "provenance": self.provenance,
            "feature_version": self.feature_version,
        }
        return json.dumps(payload, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "DatasetManifest":
        raw = json.loads(text)
        manifest = cls(
            ids=list(raw["ids"]),
            labels=None if raw.get("labels") is None else [int(v) for v in raw["labels"]],
            num_classes=int(raw["num_classes"]),
            feature_path=str(raw["feature_path"]),
            provenance=str(raw.get("provenance", "")),
            feature_version=int(raw.get("feature_version", 0)),
        )
        manifest.validate()
        return manifest

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path: str | Path) -> "DatasetManifest":
        return cls.from_json(Path(path).read_text())


@dataclass
class PoolState:
    """Disjoint labeled/unlabeled index sets with acquired labels.

    Both sets iterate in insertion order so downstream ledgers are
    reproducible.
    """

    labeled: list[int]
    unlabeled: list[int]
    acquired_labels: dict[int, int] = field(default_factory=dict)

    @property
    def n(self) -> int:
        return len(self.labeled) + len(self.unlabeled)

    def validate(self) -> None:
        labeled = set(self.labeled)
        unlabeled = set(self.unlabeled)
        if len(labeled) != len(self.labeled) or len(unlabeled) != len(self.unlabeled):
            raise PoolError("duplicate index inside a pool")
        if labeled & unlabeled:
            raise PoolError(f"pools overlap on {sorted(labeled & unlabeled)[:5]}")
        if labeled | unlabeled != set(range(self.n)):
            raise PoolError("pools do not cover 0..n-1 exactly")
        if not set(self.acquired_labels) <= labeled:
            raise PoolError("acquired labels exist for unlabeled indices")

    @property
    def fully_labeled(self) -> bool:
        return set(self.acquired_labels) == set(self.labeled)

    def labeled_array(self) -> np.ndarray:
        return np.asarray(self.labeled, dtype=np.int64)

    def unlabeled_array(self) -> np.ndarray:
        return np.asarray(self.unlabeled, dtype=np.int64)

    def labels_array(self) -> np.ndarray:
        """Acquired labels aligned with the labeled-index order."""
        return np.asarray([self.acquired_labels[i] for i in self.labeled], dtype=np.int64)


def save_features(matrix: FeatureMatrix, path: str | Path) -> None:
    """Write a validated feature matrix to an ALFV1 file."""
    matrix.validate()
    header = MAGIC + struct.pack("<II", matrix.n, matrix.d)
    payload = matrix.data.astype("<f4", copy=False).tobytes(order="C")
    try:
        with open(path, "wb") as fh:
            fh.write(header)
            fh.write(payload)
    except OSError as exc:
        raise StorageError(f"cannot write {path}: {exc}") from exc


def load_features(path: str | Path, manifest: DatasetManifest | None = None) -> FeatureMatrix:
    """Read an ALFV1 file, verifying magic, dtype payload size, and manifest shape."""
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise StorageError(f"cannot read {path}: {exc}") from exc
    if len(blob) < HEADER_SIZE or blob[: len(MAGIC)] != MAGIC:
        raise FeatureFormatError(f"{path} does not start with the ALFV1 magic")
    n, d = struct.unpack("<II", blob[len(MAGIC) : HEADER_SIZE])
    expected = n * d * 4
    got = len(blob) - HEADER_SIZE
    if got != expected:
        raise TruncatedPayloadError(
            f"{path} header promises {expected} payload bytes, found {got}"
        )
    if manifest is not None and len(manifest.ids) != n:
        raise ShapeMismatchError(
            f"manifest lists {len(manifest.ids)} samples but file header says n={n}"
        )
    data = np.frombuffer(blob, dtype="<f4", offset=HEADER_SIZE).reshape(n, d)
    matrix = FeatureMatrix(data=data.copy(), normalized=False)
    norms = np.linalg.norm(matrix.data.astype(np.float64), axis=1)
    if norms.size and np.max(np.abs(norms - 1.0)) <= UNIT_NORM_TOL:
        matrix.normalized = True
    return matrix


def l2_normalize_rows(matrix: FeatureMatrix) -> FeatureMatrix:
    """Return a copy with every row scaled to unit L2 norm.

    Rows with exactly zero norm raise DegenerateVectorError naming the row:
    silent perturbation would hide upstream extraction bugs.
    """
    work = matrix.data.astype(np.float64)
    norms = np.linalg.norm(work, axis=1)
    zero_rows = np.flatnonzero(norms == 0.0)
    if zero_rows.size:
        raise DegenerateVectorError(int(zero_rows[0]))
    out = (work / norms[:, None]).astype(np.float32)
    return FeatureMatrix(data=out, normalized=True)


def init_pools(n: int, n_init: int, seed: int) -> PoolState:
    """Draw the initial labeled pool uniformly without replacement.

    The returned pool carries no acquired labels yet; callers label the
    initial pool through their oracle before the first iteration.
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    if not 1 <= n_init <= n:
        raise ValueError(f"n_init must be in [1, {n}], got {n_init}")
    rng = np.random.default_rng(seed)
    chosen = rng.choice(n, size=n_init, replace=False)
    labeled = [int(i) for i in chosen]
    chosen_set = set(labeled)
    unlabeled = [i for i in range(n) if i not in chosen_set]
    return PoolState(labeled=labeled, unlabeled=unlabeled)


def label_indices(pool: PoolState, indices: Sequence[int], oracle: Callable[[int], int]) -> PoolState:
    """Fill acquired labels for already-labeled indices (used for the init pool)."""
    missing = [i for i in indices if i not in set(pool.labeled)]
    if missing:
        raise PoolError(f"index {missing[0]} is not in the labeled pool")
    labels = dict(pool.acquired_labels)
    for i in indices:
        labels[int(i)] = int(oracle(int(i)))
    return PoolState(labeled=list(pool.labeled), unlabeled=list(pool.unlabeled), acquired_labels=labels)


def acquire_labels(
    pool: PoolState, indices: Iterable[int], oracle: Callable[[int], int]
) -> PoolState:
    """Move indices from the unlabeled to the labeled pool, querying the oracle."""
    batch = [int(i) for i in indices]
    if len(set(batch)) != len(batch):
        raise PoolError("acquisition batch contains duplicates")
    unlabeled_set = set(pool.unlabeled)
    for i in batch:
        if i in pool.acquired_labels or (i not in unlabeled_set and 0 <= i < pool.n):
            raise PoolError(f"index {i} is already labeled")
        if i not in unlabeled_set:
            raise PoolError(f"index {i} is out of range for this pool")
    batch_set = set(batch)
    labeled = list(pool.labeled) + batch
    unlabeled = [i for i in pool.unlabeled if i not in batch_set]
    labels = dict(pool.acquired_labels)
    for i in batch:
        labels[i] = int(oracle(i))
    out = PoolState(labeled=labeled, unlabeled=unlabeled, acquired_labels=labels)
    out.validate()
    return out
