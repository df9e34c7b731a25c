#!/usr/bin/env python3
"""Benchmark the compiled sparse kernels against the numpy fallback.

The workload mirrors a training forward pass at ML-100K scale: a
symmetric-normalized bipartite adjacency (about 2.5k nodes, 200k stored
entries after symmetrization) multiplied into a dense state matrix, plus
the per-edge scatter-add used by the attention aggregation. Run after an
editable install:

    python3 benchmarks/bench_kernels.py [--d 64] [--repeats 20]
"""

import argparse
import time

import numpy as np

from graphode.kernels import BACKEND, get_backend
from graphode.sparse import build_adjacency


def make_workload(rng, n_users=943, n_items=1682, n_edges=100_000, d=64):
    users = rng.integers(0, n_users, n_edges)
    items = n_users + rng.integers(0, n_items, n_edges)  # joint node ids
    adj = build_adjacency((users, items), n_users + n_items)
    h = rng.normal(size=(adj.n, d))
    # scatter workload: one message per directed edge copy
    idx = np.concatenate([users, items]).astype(np.int32)
    src = rng.normal(size=(idx.shape[0], d))
    return adj, h, idx, src


def time_call(fn, repeats):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--d", type=int, default=64, help="state width")
    parser.add_argument("--repeats", type=int, default=20,
                        help="timed repeats; best run is reported")
    args = parser.parse_args()

    rng = np.random.default_rng(0)
    adj, h, idx, src = make_workload(rng, d=args.d)
    print(f"default backend at import: {BACKEND}")
    print(f"adjacency: {adj.n} nodes, {adj.nnz} stored entries, d={args.d}")

    results = {}
    outputs = {}
    for name in ("compiled", "fallback"):
        try:
            matmul, scatter = get_backend(name)
        except (ImportError, ValueError) as exc:
            print(f"{name:>9}: unavailable ({exc})")
            continue
        out = np.zeros_like(h)

        def spmm():
            out[:] = 0.0
            matmul(adj.indptr, adj.indices, adj.data, h, out)

        out2 = np.zeros_like(h)

        def scat():
            out2[:] = 0.0
            scatter(src, idx, out2)

        t_mm = time_call(spmm, args.repeats)
        t_sc = time_call(scat, args.repeats)
        results[name] = (t_mm, t_sc)
        outputs[name] = (out.copy(), out2.copy())
        print(f"{name:>9}: spmm {t_mm * 1e3:8.2f} ms   scatter {t_sc * 1e3:8.2f} ms")

    if len(results) == 2:
        mm_speedup = results["fallback"][0] / results["compiled"][0]
        sc_speedup = results["fallback"][1] / results["compiled"][1]
        print(f" speedups: spmm {mm_speedup:.1f}x, scatter {sc_speedup:.1f}x "
              "(compiled over fallback)")
        mm_dev = float(np.max(np.abs(outputs["compiled"][0] - outputs["fallback"][0])))
        sc_dev = float(np.max(np.abs(outputs["compiled"][1] - outputs["fallback"][1])))
        print(f" agreement: spmm max dev {mm_dev:.2e}, scatter max dev {sc_dev:.2e}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
