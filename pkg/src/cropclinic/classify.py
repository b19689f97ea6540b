"""Disease classification head over precomputed image feature vectors.

Training uses a weighted cross-entropy where each category's weight is
the inverse frequency N/N_y capped at `cap` (default 10), so rare
categories are penalized harder without overcompensation. The visual
encoder is out of scope: features arrive through the binary feature
file below, keeping the frozen-encoder / trainable-head split testable.

Feature file (little-endian):
    magic "ADFV" | u16 version | u32 d | u32 count
    | per item: u32 label, d float32 features
Head file (little-endian):
    magic "ADCH" | u16 version | u32 C | u32 d
    | C*d float32 weights (row-major) | C float32 bias
    | per category: u16 name length, UTF-8 name bytes
Category-name table: UTF-8 lines `id<TAB>name`.
"""

from __future__ import annotations

import struct
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from .core import DataError, FormatError

_MAGIC_FEATURES = b"ADFV"
_MAGIC_HEAD = b"ADCH"
_VERSION = 1


@dataclass
class FeatureDataset:
    features: np.ndarray  # (N, d) float32
    labels: np.ndarray  # (N,) int64 in [0, C)
    n_categories: int

    def __post_init__(self):
        if self.features.ndim != 2:
            raise DataError("features must be a 2-d array")
        if self.labels.shape != (self.features.shape[0],):
            raise DataError("labels length must match feature count")
        if not np.isfinite(self.features).all():
            raise DataError("features must be finite")
        if self.labels.size and (self.labels.min() < 0
                                 or self.labels.max() >= self.n_categories):
            raise DataError("labels must be in [0, n_categories)")

    @property
    def dimension(self) -> int:
        return self.features.shape[1]

    @property
    def total(self) -> int:
        return self.features.shape[0]

    def category_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.n_categories)


@dataclass(frozen=True)
class ClassWeights:
    weights: np.ndarray  # (C,) float64
    cap: float = 10.0


def class_weights(counts: Sequence[int], cap: float = 10.0) -> ClassWeights:
    """Inverse-frequency weights min(N / N_y, cap) over per-category counts."""
    counts = np.asarray(counts, dtype=np.float64)
    if counts.size == 0:
        raise DataError("counts must be nonempty")
    if (counts <= 0).any():
        bad = int(np.argmax(counts <= 0))
        raise DataError(f"category {bad} has non-positive count {counts[bad]:g}")
    total = counts.sum()
    return ClassWeights(np.minimum(total / counts, cap), cap)


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=-1, keepdims=True)


def weighted_ce_loss(logits: Sequence[float], label: int, weights: ClassWeights) -> float:
    """-w_y * log softmax(logits)[y], computed via max-subtracted log-sum-exp."""
    logits = np.asarray(logits, dtype=np.float64)
    if not 0 <= label < logits.size:
        raise DataError(f"label {label} out of range for {logits.size} categories")
    if not np.isfinite(logits).all():
        raise DataError("logits must be finite")
    return float(-weights.weights[label] * _log_softmax(logits)[label])


def loss_gradient(logits: Sequence[float], label: int, weights: ClassWeights) -> np.ndarray:
    """Gradient of weighted_ce_loss w.r.t. the logits: w_y * (softmax - onehot)."""
    logits = np.asarray(logits, dtype=np.float64)
    if not 0 <= label < logits.size:
        raise DataError(f"label {label} out of range for {logits.size} categories")
    grad = _softmax(logits)
    grad[label] -= 1.0
    return weights.weights[label] * grad


@dataclass
class HeadTrainingMeta:
    seed: int
    epochs_run: int
    best_epoch: int
    val_accuracy: float
    train_losses: list[float]  # mean weighted CE over the full training split, per epoch


@dataclass
class LinearHead:
    weights: np.ndarray  # (C, d) float32
    bias: np.ndarray  # (C,) float32
    category_names: list[str]
    meta: Optional[HeadTrainingMeta] = None

    def __post_init__(self):
        if self.weights.ndim != 2 or self.weights.shape[0] < 2:
            raise DataError("head needs at least 2 categories")
        if len(self.category_names) != self.weights.shape[0]:
            raise DataError("category name count must match weight rows")
        if not (np.isfinite(self.weights).all() and np.isfinite(self.bias).all()):
            raise DataError("head weights must be finite")

    @property
    def n_categories(self) -> int:
        return self.weights.shape[0]

    @property
    def dimension(self) -> int:
        return self.weights.shape[1]


@dataclass(frozen=True)
class ClassPrediction:
    label: int
    name: str
    probabilities: tuple[float, ...]

    def top(self, k: int = 3) -> list[tuple[int, float]]:
        order = sorted(range(len(self.probabilities)),
                       key=lambda i: (-self.probabilities[i], i))
        return [(i, self.probabilities[i]) for i in order[:k]]


@dataclass(frozen=True)
class HeadTrainConfig:
    learning_rate: float = 1e-4
    batch_size: int = 128
    epochs: int = 15
    momentum: float = 0.9
    weight_cap: float = 10.0
    val_fraction: float = 0.1
    seed: int = 0
    use_class_weights: bool = True


def train_head(
    dataset: FeatureDataset,
    config: HeadTrainConfig = HeadTrainConfig(),
    category_names: Optional[Sequence[str]] = None,
) -> LinearHead:
    """Momentum SGD on mean weighted cross-entropy with best-validation
    checkpointing over a seeded 90/10 split. Deterministic given the seed."""
    if dataset.n_categories < 2:
        raise DataError("need at least 2 categories to train")
    if dataset.total == 0:
        raise DataError("dataset is empty")
    names = list(category_names) if category_names is not None else [
        str(i) for i in range(dataset.n_categories)
    ]
    if len(names) != dataset.n_categories:
        raise DataError("category name count must match n_categories")

    rng = np.random.default_rng(config.seed)
    n = dataset.total
    perm = rng.permutation(n)
    n_val = max(1, int(n * config.val_fraction)) if n > 1 else 0
    train_idx = perm[: n - n_val]
    val_idx = perm[n - n_val:]

    val_missing = np.setdiff1d(
        np.arange(dataset.n_categories), np.unique(dataset.labels[val_idx])
    )
    if val_missing.size:
        warnings.warn(
            f"validation split has no samples for categories {val_missing.tolist()}",
            stacklevel=2,
        )

    x = dataset.features.astype(np.float64)
    y = dataset.labels
    c, d = dataset.n_categories, dataset.dimension

    if config.use_class_weights:
        train_counts = np.bincount(y[train_idx], minlength=c)
        w_cat = np.ones(c, dtype=np.float64)
        present = train_counts > 0
        w_cat[present] = np.minimum(
            train_idx.size / train_counts[present], config.weight_cap
        )
    else:
        w_cat = np.ones(c, dtype=np.float64)

    w = np.zeros((c, d), dtype=np.float64)
    b = np.zeros(c, dtype=np.float64)
    vel_w = np.zeros_like(w)
    vel_b = np.zeros_like(b)

    best = (w.astype(np.float32), b.astype(np.float32))
    best_acc = -1.0
    best_epoch = 0
    losses: list[float] = []

    for epoch in range(1, config.epochs + 1):
        order = train_idx[rng.permutation(train_idx.size)]
        for start in range(0, order.size, config.batch_size):
            batch = order[start: start + config.batch_size]
            xb, yb = x[batch], y[batch]
            logits = xb @ w.T + b
            probs = _softmax(logits)
            grad = probs
            grad[np.arange(batch.size), yb] -= 1.0
            grad *= w_cat[yb][:, None] / batch.size

            grad_w = grad.T @ xb
            grad_b = grad.sum(axis=0)
            vel_w = config.momentum * vel_w - config.learning_rate * grad_w
            vel_b = config.momentum * vel_b - config.learning_rate * grad_b
            w += vel_w
            b += vel_b

        train_loss = _mean_weighted_ce(x[train_idx], y[train_idx], w, b, w_cat)
        if not np.isfinite(train_loss):
            raise DataError("non-finite training loss; lower the learning rate")
        losses.append(train_loss)

        if val_idx.size:
            val_logits = x[val_idx] @ w.T + b
            val_acc = float((val_logits.argmax(axis=1) == y[val_idx]).mean())
        else:
            val_acc = float(
                ((x[train_idx] @ w.T + b).argmax(axis=1) == y[train_idx]).mean()
            )
        if val_acc > best_acc:
            best_acc = val_acc
            best_epoch = epoch
            best = (w.astype(np.float32), b.astype(np.float32))

    head = LinearHead(best[0], best[1], names)
    head.meta = HeadTrainingMeta(config.seed, config.epochs, best_epoch, best_acc, losses)
    return head


def _mean_weighted_ce(x, y, w, b, w_cat) -> float:
    log_probs = _log_softmax(x @ w.T + b)
    picked = log_probs[np.arange(y.size), y]
    return float(-(w_cat[y] * picked).mean())


def predict(head: LinearHead, features: Sequence[float]) -> ClassPrediction:
    features = np.asarray(features, dtype=np.float64)
    if features.shape != (head.dimension,):
        raise DataError(
            f"feature dimension {features.shape} does not match head ({head.dimension},)"
        )
    probs = _softmax(head.weights.astype(np.float64) @ features + head.bias)
    label = int(np.argmax(probs))  # argmax takes the lowest id on ties
    return ClassPrediction(label, head.category_names[label], tuple(float(p) for p in probs))


def predict_batch(head: LinearHead, features: np.ndarray) -> list[ClassPrediction]:
    return [predict(head, row) for row in np.asarray(features, dtype=np.float64)]


def save_features(dataset: FeatureDataset, path: Union[str, Path]) -> None:
    with open(path, "wb") as fh:
        fh.write(_MAGIC_FEATURES)
        fh.write(struct.pack("<HII", _VERSION, dataset.dimension, dataset.total))
        for label, row in zip(dataset.labels, dataset.features):
            fh.write(struct.pack("<I", int(label)))
            fh.write(np.ascontiguousarray(row, dtype="<f4").tobytes())


def load_features(path: Union[str, Path], n_categories: Optional[int] = None) -> FeatureDataset:
    raw = Path(path).read_bytes()
    if raw[:4] != _MAGIC_FEATURES:
        raise FormatError(f"{path}: bad magic, not a feature file")
    version, dim, count = struct.unpack_from("<HII", raw, 4)
    if version != _VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    item_size = 4 + 4 * dim
    body = raw[14:]
    if len(body) != item_size * count:
        raise FormatError(f"{path}: truncated body ({len(body)} != {item_size * count} bytes)")
    labels = np.empty(count, dtype=np.int64)
    features = np.empty((count, dim), dtype=np.float32)
    for i in range(count):
        off = i * item_size
        (labels[i],) = struct.unpack_from("<I", body, off)
        features[i] = np.frombuffer(body, dtype="<f4", count=dim, offset=off + 4)
    if n_categories is None:
        n_categories = int(labels.max()) + 1 if count else 0
    return FeatureDataset(features, labels, n_categories)


def save_head(head: LinearHead, path: Union[str, Path]) -> None:
    with open(path, "wb") as fh:
        fh.write(_MAGIC_HEAD)
        fh.write(struct.pack("<HII", _VERSION, head.n_categories, head.dimension))
        fh.write(np.ascontiguousarray(head.weights, dtype="<f4").tobytes())
        fh.write(np.ascontiguousarray(head.bias, dtype="<f4").tobytes())
        for name in head.category_names:
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)


def load_head(path: Union[str, Path]) -> LinearHead:
    raw = Path(path).read_bytes()
    if raw[:4] != _MAGIC_HEAD:
        raise FormatError(f"{path}: bad magic, not a classifier head file")
    version, c, d = struct.unpack_from("<HII", raw, 4)
    if version != _VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    off = 14
    weights = np.frombuffer(raw, dtype="<f4", count=c * d, offset=off).reshape(c, d).copy()
    off += 4 * c * d
    bias = np.frombuffer(raw, dtype="<f4", count=c, offset=off).copy()
    off += 4 * c
    names = []
    for _ in range(c):
        (length,) = struct.unpack_from("<H", raw, off)
        off += 2
        names.append(raw[off: off + length].decode("utf-8"))
        off += length
    if off != len(raw):
        raise FormatError(f"{path}: trailing bytes after category names")
    return LinearHead(weights, bias, names)


def load_category_names(path: Union[str, Path]) -> list[str]:
    """UTF-8 lines `id<TAB>name`; ids must be 0..C-1 exactly once."""
    entries: dict[int, str] = {}
    for lineno, line in enumerate(
        Path(path).read_text(encoding="utf-8").splitlines(), start=1
    ):
        if not line.strip():
            continue
        head, sep, name = line.partition("\t")
        if not sep or not name:
            raise FormatError(f"{path}:{lineno}: expected `id<TAB>name`")
        try:
            idx = int(head)
        except ValueError:
            raise FormatError(f"{path}:{lineno}: non-numeric id {head!r}") from None
        if idx in entries:
            raise FormatError(f"{path}:{lineno}: duplicate id {idx}")
        entries[idx] = name
    if sorted(entries) != list(range(len(entries))):
        raise FormatError(f"{path}: ids must cover 0..{len(entries) - 1}")
    return [entries[i] for i in range(len(entries))]
