# cython: boundscheck=False, wraparound=False, cdivision=True
"""Native kernels: same semantics as cropclinic._kernels.pure.

Integer outputs (hash buckets, sign patterns) are bit-identical to the
pure backend; squared_l2_scan accumulates in double like the pure path.
"""

import numpy as np

cimport numpy as cnp
from libc.stdint cimport int64_t, uint8_t, uint64_t

cnp.import_array()

cdef uint64_t MASK64 = 0xFFFFFFFFFFFFFFFFULL
cdef uint64_t FNV_OFFSET = 0xCBF29CE484222325ULL
cdef uint64_t FNV_PRIME = 0x100000001B3ULL


cdef inline uint64_t fnv1a_range(const uint8_t *data, Py_ssize_t start, Py_ssize_t end) nogil:
    cdef uint64_t h = FNV_OFFSET
    cdef Py_ssize_t i
    for i in range(start, end):
        h ^= <uint64_t> data[i]
        h *= FNV_PRIME
    return h


cdef inline uint64_t splitmix64_c(uint64_t x) nogil:
    cdef uint64_t z = x + 0x9E3779B97F4A7C15ULL
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL
    return z ^ (z >> 31)


def fnv1a64(bytes data):
    cdef const uint8_t *raw = data
    return fnv1a_range(raw, 0, len(data))


def splitmix64(x):
    return splitmix64_c(<uint64_t> (x & MASK64))


def char_ngram_buckets(str text, int64_t dim):
    """Hash buckets for every character n-gram of text, n in {1, 2, 3}."""
    cdef bytes raw_b = text.encode("utf-8")
    cdef const uint8_t *raw = raw_b
    cdef Py_ssize_t n_chars = len(text)
    cdef Py_ssize_t n_bytes = len(raw_b)

    # byte offset of each character boundary in the utf-8 encoding
    cdef cnp.ndarray[cnp.int64_t, ndim=1] offs = np.empty(n_chars + 1, dtype=np.int64)
    cdef Py_ssize_t i, ci = 0
    for i in range(n_bytes):
        if (raw[i] & 0xC0) != 0x80:  # not a continuation byte
            offs[ci] = i
            ci += 1
    offs[n_chars] = n_bytes

    cdef Py_ssize_t total = 0
    if n_chars >= 1:
        total += n_chars
    if n_chars >= 2:
        total += n_chars - 1
    if n_chars >= 3:
        total += n_chars - 2
    cdef cnp.ndarray[cnp.int64_t, ndim=1] buckets = np.empty(total, dtype=np.int64)

    cdef Py_ssize_t pos = 0, n
    cdef uint64_t h
    with nogil:
        for ci in range(n_chars):
            for n in range(1, 4):
                if ci + n > n_chars:
                    break
                h = fnv1a_range(raw, offs[ci], offs[ci + n])
                buckets[pos] = <int64_t> (h % <uint64_t> dim)
                pos += 1
    return buckets


def add_token_patterns(tokens, int64_t dim, cnp.ndarray[cnp.float64_t, ndim=1] out):
    """Accumulate each token's signed 4-coordinate pattern into out."""
    cdef uint64_t seed, v
    cdef int64_t idx
    cdef int j
    cdef bytes raw_b
    cdef const uint8_t *raw
    for tok in tokens:
        raw_b = tok.encode("utf-8")
        raw = raw_b
        seed = fnv1a_range(raw, 0, len(raw_b))
        for j in range(4):
            v = splitmix64_c(seed + <uint64_t> j)
            idx = <int64_t> (v % <uint64_t> dim)
            out[idx] += 1.0 if (v >> 63) == 0 else -1.0


def squared_l2_scan(cnp.ndarray[cnp.float32_t, ndim=2] matrix,
                    cnp.ndarray[cnp.float64_t, ndim=1] query):
    """Squared L2 distance from query to every row of matrix, in float64."""
    cdef Py_ssize_t n = matrix.shape[0], d = matrix.shape[1]
    if query.shape[0] != d:
        raise ValueError(f"query dimension {query.shape[0]} != matrix dimension {d}")
    cdef cnp.ndarray[cnp.float64_t, ndim=1] dists = np.empty(n, dtype=np.float64)
    cdef Py_ssize_t i, j
    cdef double acc, diff
    with nogil:
        for i in range(n):
            acc = 0.0
            for j in range(d):
                diff = <double> matrix[i, j] - query[j]
                acc += diff * diff
            dists[i] = acc
    return dists
