"""Pure-Python/numpy kernels.

Reference semantics for the hot loops. The native Cython module mirrors
these exactly; integer-valued outputs (hash buckets, sign patterns) are
bit-identical across backends, float outputs agree to rounding order.

Hashes are fixed published functions so every artifact (classifier files,
index files) is stable across platforms and backends:

  - FNV-1a 64-bit over UTF-8 bytes
  - splitmix64 for deriving per-token coordinate patterns
"""

import numpy as np

MASK64 = 0xFFFFFFFFFFFFFFFF

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3


def fnv1a64(data: bytes) -> int:
    h = _FNV_OFFSET
    for b in data:
        h ^= b
        h = (h * _FNV_PRIME) & MASK64
    return h


def splitmix64(x: int) -> int:
    z = (x + 0x9E3779B97F4A7C15) & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def char_ngram_buckets(text: str, dim: int) -> np.ndarray:
    """Hash buckets for every character n-gram of text, n in {1, 2, 3}.

    One bucket per n-gram in scan order (position-major, then n). The
    caller aggregates counts; text is hashed as-is (no case folding here).
    """
    n_chars = len(text)
    buckets = []
    for i in range(n_chars):
        for n in (1, 2, 3):
            if i + n > n_chars:
                break
            h = fnv1a64(text[i:i + n].encode("utf-8"))
            buckets.append(h % dim)
    return np.asarray(buckets, dtype=np.int64)


def add_token_patterns(tokens, dim: int, out: np.ndarray) -> None:
    """Accumulate each token's signed 4-coordinate pattern into out (float64).

    Pattern of a token: seed = fnv1a64(utf-8 bytes); for j in 0..3,
    v = splitmix64(seed + j), coordinate v % dim gets +1 if the top bit
    of v is clear else -1. Coordinates may repeat; contributions add.
    """
    for tok in tokens:
        seed = fnv1a64(tok.encode("utf-8"))
        for j in range(4):
            v = splitmix64((seed + j) & MASK64)
            idx = v % dim
            out[idx] += 1.0 if (v >> 63) == 0 else -1.0


def squared_l2_scan(matrix: np.ndarray, query: np.ndarray) -> np.ndarray:
    """Squared L2 distance from query to every row of matrix, in float64."""
    diff = matrix.astype(np.float64, copy=False) - np.asarray(query, dtype=np.float64)
    return np.einsum("ij,ij->i", diff, diff)
