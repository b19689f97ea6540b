"""Query routing: language detection, intent classification, tool dispatch.

The intent classifier is a multinomial logistic regression over hashed
character n-gram features (n = 1..3, FNV-1a 64 buckets, L2-normalized
counts). One classifier per language; the embedder/classifier boundary
is pluggable so a transformer backend can replace it without touching
the routing contract.

Classifier persistence (little-endian):
    magic "ADRT" | u16 version | 2-byte language code | u32 dim
    | 3*dim float32 weights (row-major) | 3 float32 bias
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from . import _kernels
from .core import (
    TOOL_FOR_INTENT,
    DataError,
    EngineConfig,
    FormatError,
    Intent,
    IMAGE_REQUIRED_INTENTS,
    Language,
    Query,
    is_cjk,
)

N_INTENTS = 3

# ASCII letters plus Latin-1 supplement / Latin Extended-A/B letters.
_LATIN_RANGES = ((0x41, 0x5A), (0x61, 0x7A), (0xC0, 0xD6), (0xD8, 0xF6), (0xF8, 0x24F))


def _is_latin_letter(cp: int) -> bool:
    return any(lo <= cp <= hi for lo, hi in _LATIN_RANGES)


def detect_language(text: str, threshold: float = 0.30) -> Language:
    """zh iff CJK ideographs make up at least `threshold` of the CJK+Latin
    letters in the text. Empty or symbol-only text is en. Total function."""
    cjk = 0
    latin = 0
    for ch in text:
        if is_cjk(ch):
            cjk += 1
        elif _is_latin_letter(ord(ch)):
            latin += 1
    if cjk == 0:
        return Language.EN
    return Language.ZH if cjk / (cjk + latin) >= threshold else Language.EN


@dataclass(frozen=True)
class SparseFeatureVector:
    dimension: int
    indices: np.ndarray  # int64, strictly increasing
    weights: np.ndarray  # float64, L2-normalized
    norm: float  # post-normalization norm: 1.0, or 0.0 for the zero vector


def featurize(text: str, dimension: int) -> SparseFeatureVector:
    """Hashed character n-gram features (n = 1, 2, 3) of the lowercased
    text, L2-normalized. Deterministic across runs, platforms, and kernel
    backends. Empty text yields the zero vector."""
    if dimension < 1024 or dimension & (dimension - 1):
        raise ValueError(f"feature dimension must be a power of two >= 1024, got {dimension}")
    buckets = _kernels.char_ngram_buckets(text.lower(), dimension)
    if buckets.size == 0:
        return SparseFeatureVector(
            dimension,
            np.empty(0, dtype=np.int64),
            np.empty(0, dtype=np.float64),
            0.0,
        )
    indices, counts = np.unique(buckets, return_counts=True)
    counts = counts.astype(np.float64)
    norm = float(np.sqrt(np.sum(counts * counts)))
    return SparseFeatureVector(dimension, indices, counts / norm, 1.0)


@dataclass
class TrainingMeta:
    seed: int
    epochs: int
    train_accuracy: float
    heldout_accuracy: float


@dataclass
class IntentClassifier:
    language: Language
    weights: np.ndarray  # (3, dim) float32
    bias: np.ndarray  # (3,) float32
    dimension: int
    meta: Optional[TrainingMeta] = None

    def __post_init__(self):
        if self.weights.shape != (N_INTENTS, self.dimension):
            raise DataError(
                f"weight matrix must be {N_INTENTS}x{self.dimension}, got {self.weights.shape}"
            )
        if not (np.isfinite(self.weights).all() and np.isfinite(self.bias).all()):
            raise DataError("classifier weights must be finite")


@dataclass(frozen=True)
class IntentPrediction:
    intent: Intent
    probabilities: tuple[float, float, float]
    confidence: float


@dataclass(frozen=True)
class RoutingDecision:
    language: Language
    prediction: IntentPrediction
    target_tool: str
    missing_image: bool = False

    @property
    def intent(self) -> Intent:
        return self.prediction.intent


@dataclass(frozen=True)
class RouterTrainConfig:
    # lr 2.0 with 1/sqrt(step) decay: smaller rates demonstrably underfit
    # the n-gram/logreg pairing on corpora with cross-intent n-gram overlap
    dimension: int = 1 << 18
    batch_size: int = 64
    learning_rate: float = 2.0
    epochs: int = 5
    seed: int = 0
    heldout_fraction: float = 0.1


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=-1, keepdims=True)


def _sparse_logits(weights: np.ndarray, bias: np.ndarray,
                   vec: SparseFeatureVector) -> np.ndarray:
    if vec.indices.size == 0:
        return bias.astype(np.float64).copy()
    cols = weights[:, vec.indices].astype(np.float64)
    return cols @ vec.weights + bias.astype(np.float64)


def classify_intent(model: IntentClassifier, text: str) -> IntentPrediction:
    vec = featurize(text, model.dimension)
    probs = _softmax(_sparse_logits(model.weights, model.bias, vec))
    intent = Intent(int(np.argmax(probs)))  # argmax takes the lowest id on ties
    return IntentPrediction(
        intent=intent,
        probabilities=(float(probs[0]), float(probs[1]), float(probs[2])),
        confidence=float(probs.max()),
    )


def train_intent_classifier(
    corpus: Sequence[tuple[str, Intent]],
    language: Language,
    config: RouterTrainConfig = RouterTrainConfig(),
) -> IntentClassifier:
    """Mini-batch SGD on softmax cross-entropy. Deterministic given the
    seed; reports held-out accuracy on a seeded 90/10 split."""
    if not corpus:
        raise DataError("training corpus is empty")
    present = {intent for _, intent in corpus}
    missing = [i.wire_name for i in Intent if i not in present]
    if missing:
        raise DataError(f"corpus missing intent categories: {', '.join(missing)}")

    dim = config.dimension
    feats = [featurize(text, dim) for text, _ in corpus]
    labels = np.array([int(intent) for _, intent in corpus], dtype=np.int64)

    rng = np.random.default_rng(config.seed)
    n = len(corpus)
    perm = rng.permutation(n)
    n_held = max(1, int(n * config.heldout_fraction)) if n > 1 else 0
    train_idx = perm[: n - n_held]
    held_idx = perm[n - n_held:]

    wt = np.zeros((dim, N_INTENTS), dtype=np.float64)  # transposed for scatter updates
    bias = np.zeros(N_INTENTS, dtype=np.float64)

    step = 0
    for _ in range(config.epochs):
        order = train_idx[rng.permutation(train_idx.size)]
        for start in range(0, order.size, config.batch_size):
            batch = order[start: start + config.batch_size]
            step += 1
            lr = config.learning_rate / np.sqrt(step)

            cols = np.concatenate([feats[i].indices for i in batch])
            vals = np.concatenate([feats[i].weights for i in batch])
            rows = np.repeat(
                np.arange(batch.size), [feats[i].indices.size for i in batch]
            )
            logits = np.tile(bias, (batch.size, 1))
            np.add.at(logits, rows, wt[cols] * vals[:, None])

            probs = _softmax(logits)
            grad = probs
            grad[np.arange(batch.size), labels[batch]] -= 1.0
            grad /= batch.size

            loss = -np.log(
                np.clip(probs[np.arange(batch.size), labels[batch]], 1e-300, None)
            ).mean()
            if not np.isfinite(loss):
                raise DataError("non-finite training loss; lower the learning rate")

            np.add.at(wt, cols, -lr * grad[rows] * vals[:, None])
            bias -= lr * grad.sum(axis=0)

    weights32 = np.ascontiguousarray(wt.T, dtype=np.float32)
    bias32 = bias.astype(np.float32)
    model = IntentClassifier(language, weights32, bias32, dim)
    train_acc = _accuracy(model, feats, labels, train_idx)
    held_acc = _accuracy(model, feats, labels, held_idx) if held_idx.size else train_acc
    model.meta = TrainingMeta(config.seed, config.epochs, train_acc, held_acc)
    return model


def _accuracy(model: IntentClassifier, feats, labels, idx) -> float:
    if len(idx) == 0:
        return 0.0
    hits = 0
    for i in idx:
        probs = _softmax(_sparse_logits(model.weights, model.bias, feats[i]))
        if int(np.argmax(probs)) == labels[i]:
            hits += 1
    return hits / len(idx)


def route(
    query: Query,
    models: dict[Language, IntentClassifier],
    config: EngineConfig,
) -> RoutingDecision:
    language = detect_language(query.text, config.cjk_threshold)
    model = models.get(language)
    if model is None:
        raise DataError(f"no intent classifier loaded for language {language.value!r}")
    prediction = classify_intent(model, query.text)
    missing = prediction.intent in IMAGE_REQUIRED_INTENTS and query.image is None
    return RoutingDecision(
        language=language,
        prediction=prediction,
        target_tool=TOOL_FOR_INTENT[prediction.intent],
        missing_image=missing,
    )


_MAGIC = b"ADRT"
_VERSION = 1


def save_classifier(model: IntentClassifier, path: Union[str, Path]) -> None:
    path = Path(path)
    lang = model.language.value.encode("ascii")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<H", _VERSION))
        fh.write(lang)
        fh.write(struct.pack("<I", model.dimension))
        fh.write(np.ascontiguousarray(model.weights, dtype="<f4").tobytes())
        fh.write(np.ascontiguousarray(model.bias, dtype="<f4").tobytes())


def load_classifier(path: Union[str, Path]) -> IntentClassifier:
    path = Path(path)
    raw = path.read_bytes()
    if raw[:4] != _MAGIC:
        raise FormatError(f"{path}: bad magic, not a router classifier file")
    (version,) = struct.unpack_from("<H", raw, 4)
    if version != _VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    language = Language.from_code(raw[6:8].decode("ascii"))
    (dim,) = struct.unpack_from("<I", raw, 8)
    body = raw[12:]
    expected = (N_INTENTS * dim + N_INTENTS) * 4
    if len(body) != expected:
        raise FormatError(f"{path}: truncated body ({len(body)} != {expected} bytes)")
    floats = np.frombuffer(body, dtype="<f4")
    weights = floats[: N_INTENTS * dim].reshape(N_INTENTS, dim).copy()
    bias = floats[N_INTENTS * dim:].copy()
    return IntentClassifier(language, weights, bias, dim)


def load_corpus(path: Union[str, Path]) -> list[tuple[str, Intent]]:
    """UTF-8 lines `intent_id<TAB>text`."""
    out: list[tuple[str, Intent]] = []
    for lineno, line in enumerate(
        Path(path).read_text(encoding="utf-8").splitlines(), start=1
    ):
        if not line.strip():
            continue
        head, sep, text = line.partition("\t")
        if not sep:
            raise FormatError(f"{path}:{lineno}: expected `intent_id<TAB>text`")
        try:
            intent = Intent.from_id(int(head))
        except ValueError:
            raise FormatError(f"{path}:{lineno}: non-numeric intent id {head!r}") from None
        out.append((text, intent))
    return out
