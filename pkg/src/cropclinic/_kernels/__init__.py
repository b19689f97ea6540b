"""Kernel backend selection.

The compiled extension (_native) is preferred when importable; otherwise
the pure-numpy implementation in .pure is used. Set CROPCLINIC_PURE=1 to
force the pure backend (used by the benchmark and parity tests).

Both backends expose:
    fnv1a64(bytes) -> int
    splitmix64(int) -> int
    char_ngram_buckets(text, dim) -> int64 ndarray
    add_token_patterns(tokens, dim, out) -> None
    squared_l2_scan(float32 matrix, float64 query) -> float64 ndarray
"""

import os

from . import pure

if os.environ.get("CROPCLINIC_PURE", "0") in ("", "0"):
    try:
        from . import _native as _impl
        BACKEND = "native"
    except ImportError:
        _impl = pure
        BACKEND = "pure"
else:
    _impl = pure
    BACKEND = "pure"

fnv1a64 = _impl.fnv1a64
splitmix64 = _impl.splitmix64
char_ngram_buckets = _impl.char_ngram_buckets
add_token_patterns = _impl.add_token_patterns
squared_l2_scan = _impl.squared_l2_scan

__all__ = [
    "BACKEND",
    "fnv1a64",
    "splitmix64",
    "char_ngram_buckets",
    "add_token_patterns",
    "squared_l2_scan",
    "pure",
]
