"""Compare the numba and pure-numpy kernels.

Runs itself once per backend in a subprocess (the backend is fixed at
import time by ``DEEPBOW_DISABLE_NUMBA``) and prints one JSON line per
backend plus the speedup::

    python3 benchmarks/bench_kernels.py --pairs 1000 --support 128
"""

import argparse
import json
import os
import subprocess
import sys
import time

import numpy as np


def measure(n_pairs: int, support: int, reps: int, seed: int) -> dict:
    from deepbow._accel import backend
    from deepbow.bow import SparseBoW
    from deepbow.scoring import score_batch
    from deepbow.store import BoWStore

    rng = np.random.default_rng(seed)

    def bow():
        n = int(rng.integers(1, support + 1))
        idx = np.sort(rng.choice(3000, n, replace=False))
        return SparseBoW(idx, rng.uniform(0.4, 1.0, n))

    qs = BoWStore.from_entries("query", [(f"q{i}", bow()) for i in range(200)])
    ps = BoWStore.from_entries("product", [(f"p{i}", bow()) for i in range(500)])
    qr, dr = rng.integers(0, len(qs), n_pairs), rng.integers(0, len(ps), n_pairs)
    args = (qs.indptr, qs.indices, qs.weights, ps.indptr, ps.indices, ps.weights, qr, dr, "q_synonym")

    def timed(fn):
        fn()  # warm-up (includes JIT compilation)
        t = []
        for _ in range(reps):
            t0 = time.perf_counter()
            fn()
            t.append(time.perf_counter() - t0)
        return float(np.min(t) * 1e3), float(np.median(t) * 1e3)

    score_min, score_med = timed(lambda: score_batch(*args))
    encode_min, encode_med = timed(qs.to_bytes)
    blob = ps.to_bytes()
    decode_min, decode_med = timed(lambda: BoWStore.from_bytes(blob))
    return {
        "backend": backend(), "pairs": n_pairs, "max_support": support,
        "score_ms_min": score_min, "score_ms_median": score_med,
        "store_encode_ms_min": encode_min, "store_encode_ms_median": encode_med,
        "store_decode_ms_min": decode_min, "store_decode_ms_median": decode_med,
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--pairs", type=int, default=1000)
    ap.add_argument("--support", type=int, default=128)
    ap.add_argument("--reps", type=int, default=30)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--child", action="store_true", help=argparse.SUPPRESS)
    args = ap.parse_args()
    if args.child:
        print(json.dumps(measure(args.pairs, args.support, args.reps, args.seed)))
        return
    results = {}
    for disabled in ("0", "1"):
        env = dict(os.environ, DEEPBOW_DISABLE_NUMBA=disabled)
        out = subprocess.run([sys.executable, __file__, "--child", "--pairs", str(args.pairs), "--support",
                              str(args.support), "--reps", str(args.reps), "--seed", str(args.seed)],
                             env=env, capture_output=True, text=True, check=True)
        rec = json.loads(out.stdout.strip().splitlines()[-1])
        results[rec["backend"]] = rec
        print(json.dumps(rec))
    if {"numba", "numpy"} <= results.keys():
        for key in ("score_ms_min", "store_encode_ms_min", "store_decode_ms_min"):
            ratio = results["numpy"][key] / max(results["numba"][key], 1e-9)
            print(f"{key}: numba is {ratio:.1f}x faster than numpy")


if __name__ == "__main__":
    main()
