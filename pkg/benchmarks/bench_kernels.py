"""Benchmark the numba kernels against their pure-numpy/python fallbacks.

Run:  python3 benchmarks/bench_kernels.py
The same fallback paths are selected at import time by setting
PUNCHGEN_NO_NUMBA=1.
"""

import time

import numpy as np

from punchgen import kernels

if not kernels.HAVE_NUMBA:
    raise SystemExit("numba is not available; nothing to compare")


def timeit(fn, *args, repeat=5):
    best = float("inf")
    for _ in range(repeat):
        start = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - start)
    return best


def bench_lcs():
    rng = np.random.default_rng(0)
    print("\n[LCS length: ROUGE-L dynamic program]")
    print(f"{'seq len':>10}{'python':>12}{'numba':>12}{'speedup':>10}")
    for n in (50, 200, 800):
        a = rng.integers(0, 30, size=n).astype(np.int64)
        b = rng.integers(0, 30, size=n).astype(np.int64)
        kernels._lcs_length_nb(a, b)  # compile outside the timer
        t_py = timeit(kernels._lcs_length_py, a, b, repeat=3)
        t_nb = timeit(kernels._lcs_length_nb, a, b)
        assert kernels._lcs_length_py(a, b) == kernels._lcs_length_nb(a, b)
        print(f"{n:>10}{t_py * 1e3:>10.2f}ms{t_nb * 1e3:>10.2f}ms{t_py / t_nb:>9.1f}x")


def bench_dedup():
    rng = np.random.default_rng(1)
    print("\n[de-duplication keep-first scan]")
    print(f"{'rows':>10}{'numpy':>12}{'numba':>12}{'speedup':>10}")
    for n in (200, 800, 2000):
        indptr = [0]
        tok, cnt = [], []
        for _ in range(n):
            k = int(rng.integers(5, 20))
            ids = np.sort(rng.choice(500, size=k, replace=False))
            tok.extend(ids.tolist())
            cnt.extend(rng.integers(1, 4, size=k).tolist())
            indptr.append(len(tok))
        indptr = np.asarray(indptr, dtype=np.int64)
        tok = np.asarray(tok, dtype=np.int64)
        cnt = np.asarray(cnt, dtype=np.float64)
        sumsq = np.array([(cnt[indptr[i]:indptr[i + 1]] ** 2).sum() for i in range(n)])
        kernels._dedup_scan_nb(indptr, tok, cnt, sumsq, 0.93)  # compile
        t_np = timeit(kernels._dedup_scan_np, indptr, tok, cnt, sumsq, 0.93, repeat=3)
        t_nb = timeit(kernels._dedup_scan_nb, indptr, tok, cnt, sumsq, 0.93)
        same = np.array_equal(
            kernels._dedup_scan_np(indptr, tok, cnt, sumsq, 0.93),
            np.asarray(kernels._dedup_scan_nb(indptr, tok, cnt, sumsq, 0.93)))
        assert same
        print(f"{n:>10}{t_np * 1e3:>10.2f}ms{t_nb * 1e3:>10.2f}ms{t_np / t_nb:>9.1f}x")


if __name__ == "__main__":
    print(f"numba active: {kernels.USE_NUMBA} (set PUNCHGEN_NO_NUMBA=1 to disable)")
    bench_lcs()
    bench_dedup()
