#!/usr/bin/env python3
"""Benchmark the compiled kernels against the pure-numpy fallback.

Runs the two hot loops (character n-gram hashing and the flat L2 scan)
on representative workloads and prints a comparison table.

    python3 benchmarks/bench_kernels.py [--repeat 5]
"""

import argparse
import random
import time

import numpy as np

from cropclinic._kernels import pure

try:
    from cropclinic._kernels import _native
except ImportError:
    _native = None


def _sample_texts(n=2000, seed=0):
    rng = random.Random(seed)
    words = ["wheat", "rust", "leaf", "blast", "spot", "mildew", "field",
             "spray", "season", "spore", "小麦", "叶锈病", "防治", "病斑"]
    return [
        " ".join(rng.choice(words) for _ in range(rng.randint(4, 12)))
        for _ in range(n)
    ]


def _time(fn, repeat):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def bench_ngrams(impl, texts, repeat):
    def run():
        for text in texts:
            impl.char_ngram_buckets(text, 1 << 18)
    return _time(run, repeat)


def bench_token_patterns(impl, texts, repeat):
    token_lists = [t.split() for t in texts]

    def run():
        out = np.zeros(256)
        for tokens in token_lists:
            impl.add_token_patterns(tokens, 256, out)
    return _time(run, repeat)


def bench_l2_scan(impl, repeat, n=20000, d=256, queries=50):
    rng = np.random.default_rng(0)
    matrix = rng.standard_normal((n, d)).astype(np.float32)
    qs = rng.standard_normal((queries, d))

    def run():
        for q in qs:
            impl.squared_l2_scan(matrix, q)
    return _time(run, repeat)


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args()

    texts = _sample_texts()
    rows = [
        ("char n-gram hashing (2000 texts, dim 2^18)", bench_ngrams, (texts,)),
        ("token sign patterns (2000 texts, d=256)", bench_token_patterns, (texts,)),
        ("squared L2 scan (20000x256, 50 queries)", bench_l2_scan, ()),
    ]

    print(f"{'workload':<46} {'pure':>10} {'native':>10} {'speedup':>9}")
    for name, fn, extra in rows:
        pure_s = fn(pure, *extra, args.repeat)
        if _native is not None:
            native_s = fn(_native, *extra, args.repeat)
            print(f"{name:<46} {pure_s * 1e3:>8.1f}ms {native_s * 1e3:>8.1f}ms "
                  f"{pure_s / native_s:>8.1f}x")
        else:
            print(f"{name:<46} {pure_s * 1e3:>8.1f}ms {'n/a':>10} {'n/a':>9}")
    if _native is None:
        print("\nnative kernels not built; run `python3 setup.py build_ext --inplace`")


if __name__ == "__main__":
    main()
