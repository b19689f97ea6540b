"""Knowledge retrieval: keyword extraction, hashed mean-pooled embeddings,
and an exact flat L2 index over the knowledge base.

The reference embedder maps each token to a deterministic signed pattern
on 4 of d coordinates and mean-pools over tokens; it is pluggable for a
transformer-service client behind the same contract. Distances are
squared L2 (rank-equivalent to L2) and reported as such.

Knowledge base file: line-delimited JSON records with fields
id, language, name, sections[], tags[].
Index file (little-endian):
    magic "ADIX" | u16 version | u32 d | u32 n
    | n u32 ids | n*d float32 rows
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from . import _kernels
from .core import DataError, FormatError, Language, is_cjk

CANONICAL_SECTIONS = (
    "Introduction",
    "Symptoms",
    "Transmission",
    "Impact",
    "Control Measures",
)

EN_STOPWORDS = frozenset("""
a about an and any are as at be been by can could do does for from had has
have how i if in into is it its may might more most my of on or our shall
should that the their then there these this to under was we were what when
where which who whom why will with would you your
""".split())

# Function/question characters dropped from zh keyword bigrams.
ZH_STOPCHARS = frozenset(
    "的了着是在有没不很太也都就还又被把给对从向于为之其此该这那哪些"
    "什么怎样如何吗呢吧啊呀嘛我你您他她它们谁啥几多少和与或及请帮能可以要"
)


def tokenize(text: str, language: Language) -> list[str]:
    """en: lowercased alphanumeric runs. zh: character bigrams over each
    CJK run (a lone CJK character stands alone) plus lowercased
    alphanumeric runs for embedded Latin text."""
    if language is Language.EN:
        return _alnum_runs(text)
    tokens: list[str] = []
    cjk_run: list[str] = []
    other_run: list[str] = []

    def flush_cjk():
        if len(cjk_run) == 1:
            tokens.append(cjk_run[0])
        else:
            tokens.extend(
                cjk_run[i] + cjk_run[i + 1] for i in range(len(cjk_run) - 1)
            )
        cjk_run.clear()

    def flush_other():
        if other_run:
            tokens.append("".join(other_run).lower())
            other_run.clear()

    for ch in text:
        if is_cjk(ch):
            flush_other()
            cjk_run.append(ch)
        elif ch.isalnum():
            if cjk_run:
                flush_cjk()
            other_run.append(ch)
        else:
            if cjk_run:
                flush_cjk()
            flush_other()
    if cjk_run:
        flush_cjk()
    flush_other()
    return tokens


def _alnum_runs(text: str) -> list[str]:
    tokens = []
    run: list[str] = []
    for ch in text:
        if ch.isalnum():
            run.append(ch)
        elif run:
            tokens.append("".join(run).lower())
            run.clear()
    if run:
        tokens.append("".join(run).lower())
    return tokens


def extract_keywords(text: str, language: Language, max_k: int) -> list[str]:
    """Most frequent surviving tokens, ties by first occurrence."""
    if max_k < 0:
        raise DataError("max_k must be >= 0")
    tokens = tokenize(text, language)
    if language is Language.EN:
        tokens = [t for t in tokens if t not in EN_STOPWORDS]
    else:
        tokens = [t for t in tokens if not all(ch in ZH_STOPCHARS for ch in t)]
    stats: dict[str, list[int]] = {}
    for pos, tok in enumerate(tokens):
        entry = stats.setdefault(tok, [0, pos])
        entry[0] += 1
    ranked = sorted(stats.items(), key=lambda kv: (-kv[1][0], kv[1][1]))
    return [tok for tok, _ in ranked[:max_k]]


@dataclass(frozen=True)
class Embedder:
    """Deterministic hashed token embedder with mean pooling."""

    dimension: int = 256

    def __post_init__(self):
        if self.dimension < 2:
            raise DataError("embedder dimension must be >= 2")

    def embed(self, text: str, language: Language) -> np.ndarray:
        tokens = tokenize(text, language)
        out = np.zeros(self.dimension, dtype=np.float64)
        if not tokens:
            return out
        _kernels.add_token_patterns(tokens, self.dimension, out)
        out /= len(tokens)
        return out


def embed_text(embedder: Embedder, text: str, language: Language) -> np.ndarray:
    return embedder.embed(text, language)


@dataclass(frozen=True)
class KnowledgeEntry:
    id: int
    language: Language
    name: str
    sections: tuple[tuple[str, str], ...]
    tags: tuple[str, ...] = ()

    def __post_init__(self):
        if self.id < 0:
            raise DataError(f"entry id must be non-negative, got {self.id}")
        if not self.name:
            raise DataError("entry name must be non-empty")
        if not self.sections:
            raise DataError(f"entry {self.id}: needs at least one section")
        for title, body in self.sections:
            if title not in CANONICAL_SECTIONS:
                raise DataError(f"entry {self.id}: non-canonical section title {title!r}")
            if not body:
                raise DataError(f"entry {self.id}: empty body for section {title!r}")

    def full_text(self) -> str:
        return "\n".join([self.name] + [body for _, body in self.sections])

    def section(self, title: str) -> Optional[str]:
        for t, body in self.sections:
            if t == title:
                return body
        return None

    def as_record(self) -> dict:
        return {
            "id": self.id,
            "language": self.language.value,
            "name": self.name,
            "sections": [{"title": t, "body": b} for t, b in self.sections],
            "tags": list(self.tags),
        }

    @classmethod
    def from_record(cls, record: dict) -> "KnowledgeEntry":
        try:
            return cls(
                id=int(record["id"]),
                language=Language.from_code(record["language"]),
                name=record["name"],
                sections=tuple(
                    (s["title"], s["body"]) for s in record["sections"]
                ),
                tags=tuple(record.get("tags", ())),
            )
        except (KeyError, TypeError) as exc:
            raise FormatError(f"bad knowledge entry record: {exc}") from None


def load_kb(path: Union[str, Path]) -> list[KnowledgeEntry]:
    entries = []
    seen: set[int] = set()
    for lineno, line in enumerate(
        Path(path).read_text(encoding="utf-8").splitlines(), start=1
    ):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}:{lineno}: invalid JSON: {exc}") from None
        entry = KnowledgeEntry.from_record(record)
        if entry.id in seen:
            raise DataError(f"{path}:{lineno}: duplicate entry id {entry.id}")
        seen.add(entry.id)
        entries.append(entry)
    return entries


def save_kb(entries: Sequence[KnowledgeEntry], path: Union[str, Path]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for entry in entries:
            fh.write(json.dumps(entry.as_record(), ensure_ascii=False))
            fh.write("\n")


@dataclass
class FlatIndex:
    dimension: int
    ids: np.ndarray  # (n,) int64, strictly increasing
    matrix: np.ndarray  # (n, dimension) float32

    def __post_init__(self):
        if self.matrix.shape != (self.ids.size, self.dimension):
            raise DataError("index matrix shape does not match ids/dimension")
        if self.ids.size and np.unique(self.ids).size != self.ids.size:
            raise DataError("index id table has duplicates")
        if not np.isfinite(self.matrix).all():
            raise DataError("index rows must be finite")

    @property
    def count(self) -> int:
        return int(self.ids.size)


def build_index(entries: Sequence[KnowledgeEntry], embedder: Embedder) -> FlatIndex:
    """Embed name + section bodies per entry; rows stored in id order."""
    if not entries:
        raise DataError("cannot index an empty knowledge base")
    ordered = sorted(entries, key=lambda e: e.id)
    ids = np.array([e.id for e in ordered], dtype=np.int64)
    if np.unique(ids).size != ids.size:
        raise DataError("duplicate entry ids")
    matrix = np.empty((len(ordered), embedder.dimension), dtype=np.float32)
    for row, entry in enumerate(ordered):
        matrix[row] = embedder.embed(entry.full_text(), entry.language)
    return FlatIndex(embedder.dimension, ids, matrix)


def search(index: FlatIndex, query: np.ndarray, k: int) -> list[tuple[int, float]]:
    """Exact squared-L2 scan; ascending distance, ties by lower id;
    at most min(k, n) hits."""
    if k < 1:
        raise DataError("k must be >= 1")
    query = np.asarray(query, dtype=np.float64)
    if query.shape != (index.dimension,):
        raise DataError(
            f"query dimension {query.shape} does not match index ({index.dimension},)"
        )
    if index.count == 0:
        return []
    dists = _kernels.squared_l2_scan(index.matrix, query)
    order = np.argsort(dists, kind="stable")[: min(k, index.count)]
    return [(int(index.ids[i]), float(dists[i])) for i in order]


@dataclass(frozen=True)
class RetrievedContext:
    hits: tuple[tuple[int, float], ...]  # (entry id, squared L2), ascending
    entries: tuple[KnowledgeEntry, ...]  # resolved, in hit order
    keywords: tuple[str, ...]  # extracted from the query, for the trace


class KnowledgeBase:
    """Entries plus their flat index; immutable once built."""

    def __init__(self, entries: Sequence[KnowledgeEntry], embedder: Embedder,
                 index: Optional[FlatIndex] = None):
        if not entries:
            raise DataError("knowledge base is empty")
        self.entries = list(entries)
        self.by_id = {e.id: e for e in self.entries}
        if len(self.by_id) != len(self.entries):
            raise DataError("duplicate entry ids")
        self.embedder = embedder
        self.index = index if index is not None else build_index(entries, embedder)

    def get(self, entry_id: int) -> Optional[KnowledgeEntry]:
        return self.by_id.get(entry_id)


def retrieve(kb: KnowledgeBase, query_text: str, language: Language,
             k: int, max_keywords: int = 8) -> RetrievedContext:
    """Top-k nearest entries; keywords ride along for logging only. The
    entries are context for fusion, not an answer."""
    keywords = extract_keywords(query_text, language, max_keywords)
    vector = kb.embedder.embed(query_text, language)
    hits = search(kb.index, vector, k)
    resolved = tuple(kb.by_id[i] for i, _ in hits)
    return RetrievedContext(tuple(hits), resolved, tuple(keywords))


_MAGIC = b"ADIX"
_VERSION = 1


def save_index(index: FlatIndex, path: Union[str, Path]) -> None:
    if index.ids.size and (index.ids.min() < 0 or index.ids.max() > 0xFFFFFFFF):
        raise DataError("index ids must fit in u32 for persistence")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<HII", _VERSION, index.dimension, index.count))
        fh.write(np.ascontiguousarray(index.ids, dtype="<u4").tobytes())
        fh.write(np.ascontiguousarray(index.matrix, dtype="<f4").tobytes())


def load_index(path: Union[str, Path]) -> FlatIndex:
    raw = Path(path).read_bytes()
    if raw[:4] != _MAGIC:
        raise FormatError(f"{path}: bad magic, not an index file")
    version, dim, count = struct.unpack_from("<HII", raw, 4)
    if version != _VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    off = 14
    expected = off + 4 * count + 4 * dim * count
    if len(raw) != expected:
        raise FormatError(f"{path}: truncated body ({len(raw)} != {expected} bytes)")
    ids = np.frombuffer(raw, dtype="<u4", count=count, offset=off).astype(np.int64)
    off += 4 * count
    matrix = (
        np.frombuffer(raw, dtype="<f4", count=count * dim, offset=off)
        .reshape(count, dim)
        .copy()
    )
    return FlatIndex(dim, ids, matrix)
