"""Compare the compiled kernels with the numpy fallback on toy-scale decoding.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--mv 512] [--mt 32]

Both backends must produce identical tokens; the script checks that before
printing timings.
"""

import argparse
import statistics
import time

from sparse_to_dense import kernels
from sparse_to_dense.engine import generate
from sparse_to_dense.model import ModelConfig, build_model, decode_step_dense, decode_step_sparse, prefill
from sparse_to_dense.selection import build_selection
from sparse_to_dense.workload import WorkloadSpec, make_tokens


def _time(fn, repeat):
    samples = []
    for _ in range(repeat):
        start = time.perf_counter()
        fn()
        samples.append(time.perf_counter() - start)
    return statistics.median(samples)


def bench_backend(weights, seq, k, repeat):
    cache, record, first = prefill(weights, seq)
    selection = build_selection(record, weights.config, k)

    def dense_step():
        c = cache.copy()
        decode_step_dense(weights, c, first)

    def sparse_step():
        c = cache.copy()
        decode_step_sparse(weights, c, selection, first)

    def copy_only():
        cache.copy()

    copy_cost = _time(copy_only, repeat * 4)
    out, _ = generate(weights, seq, k, 5, 32, prefilled=(cache, record, first))
    return {
        "prefill": _time(lambda: prefill(weights, seq), repeat),
        "dense_step": _time(dense_step, repeat * 4) - copy_cost,
        "sparse_step": _time(sparse_step, repeat * 4) - copy_cost,
        "generate_32": _time(lambda: generate(weights, seq, k, 5, 32, prefilled=(cache, record, first)), repeat),
    }, out


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    parser.add_argument("--mv", type=int, default=512)
    parser.add_argument("--mt", type=int, default=32)
    parser.add_argument("--k", type=int, default=128)
    args = parser.parse_args()

    weights = build_model(ModelConfig())
    seq = make_tokens(WorkloadSpec(m_v=args.mv, m_t=args.mt))
    results, outputs = {}, {}
    for name in ("python", "cython"):
        try:
            kernels.get_backend(name)
        except ImportError:
            print(f"{name}: not available")
            continue
        with kernels.use_backend(name):
            results[name], outputs[name] = bench_backend(weights, seq, args.k, args.repeat)

    if len(set(map(tuple, outputs.values()))) > 1:
        raise SystemExit("backends disagree on generated tokens")

    print(f"m_v={args.mv} m_t={args.mt} k={args.k}, median of {args.repeat}+ runs")
    print(f"{'operation':<14}" + "".join(f"{n:>12}" for n in results) + "     speedup")
    for op in next(iter(results.values())):
        row = [results[n][op] for n in results]
        line = f"{op:<14}" + "".join(f"{v * 1e3:>10.2f}ms" for v in row)
        if len(row) == 2:
            line += f"  {row[0] / row[1]:>9.2f}x"
        print(line)


if __name__ == "__main__":
    main()
