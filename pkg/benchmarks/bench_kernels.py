"""Time both kernel backends on the shapes the package actually runs.

Per-kernel micro-benchmarks at desk-profile sizes, then one real
meta-training slice end to end per backend. Run:

    python benchmarks/bench_kernels.py
"""

import time

import numpy as np

from mslab import kernels
from mslab.meta import InnerConfig, OuterConfig, WeightSchedule, meta_train
from mslab.model import ModelConfig, init_params
from mslab.tasks import TaskSampler, make_cipher_loss


def timeit(fn, *args, repeat=2000):
    fn(*args)  # warm up
    start = time.perf_counter()
    for _ in range(repeat):
        fn(*args)
    return (time.perf_counter() - start) / repeat * 1e6  # us


def kernel_cases():
    rng = np.random.default_rng(0)
    c = np.ascontiguousarray
    a = c(rng.standard_normal((40, 32)))
    b = c(rng.standard_normal((32, 32)))
    q = c(rng.standard_normal((16, 10, 8)))
    k = c(rng.standard_normal((16, 10, 8)))
    scores = c(rng.standard_normal((160, 10)) * 3)
    soft = kernels.pykernels.softmax_rows(scores)
    logits = c(rng.standard_normal((44, 23)) * 2)
    labels = c(rng.integers(0, 23, 44).astype(np.int64))
    _, probs, kept, n_kept = kernels.pykernels.cross_entropy(logits, labels, 0)
    ref = c(rng.integers(0, 20, 12).astype(np.int64))
    hyp = c(rng.integers(0, 20, 14).astype(np.int64))
    return [
        ("matmul 40x32 @ 32x32", "matmul", (a, b), 2000),
        ("bmm 16 x (10x8 @ 8x10^T)", "bmm", (q, k, True), 2000),
        ("softmax_rows 160x10", "softmax_rows", (scores,), 2000),
        ("softmax_rows_grad", "softmax_rows_grad", (soft, scores), 2000),
        ("cross_entropy 44x23", "cross_entropy", (logits, labels, 0), 2000),
        ("cross_entropy_grad", "cross_entropy_grad", (probs, labels, kept, n_kept, 1.0), 2000),
        ("levenshtein len 12/14", "levenshtein", (ref, hyp), 2000),
    ]


def bench_micro(backends):
    rows = []
    for label, name, args, repeat in kernel_cases():
        row = {"case": label, "delegated": False}
        for backend in backends:
            kernels.use_backend(backend)
            if backend == "c":
                row["delegated"] = getattr(kernels, name) is getattr(
                    kernels.pykernels, name)
            row[backend] = timeit(getattr(kernels, name), *args, repeat=repeat)
        rows.append(row)
    return rows


def bench_meta_slice(backend, iters=30):
    kernels.use_backend(backend)
    sampler = TaskSampler("cipher", master_seed=7, k_support=4, k_target=4,
                          n_tasks=3, len_min=5, len_max=10, noise_rate=0.1)
    cfg = ModelConfig(src_vocab=23, tgt_vocab=23, max_len=12)
    theta = init_params(cfg, 0)
    ocfg = OuterConfig(meta_lr=2e-3, meta_batch_size=2, n_outer_iters=iters, mode="msl")
    start = time.perf_counter()
    meta_train(theta, sampler, InnerConfig(5, 0.05), ocfg,
               WeightSchedule.annealed(5, iters), make_cipher_loss(cfg))
    return (time.perf_counter() - start) / iters * 1e3  # ms per outer iteration


def main():
    backends = ["py"]
    if kernels.compiled_available():
        backends.append("c")
    else:
        print("compiled kernels not built; timing the numpy backend only\n")

    rows = bench_micro(backends)
    width = max(len(r["case"]) for r in rows)
    header = f"{'kernel':<{width}}  " + "  ".join(f"{b:>10}" for b in backends)
    if len(backends) == 2:
        header += f"  {'py/c':>8}"
    print(header)
    print("-" * len(header))
    for r in rows:
        line = f"{r['case']:<{width}}  " + "  ".join(f"{r[b]:>8.1f}us" for b in backends)
        if len(backends) == 2:
            line += f"  {r['py'] / r['c']:>7.1f}x"
            if r["delegated"]:
                line += "  (c delegates to BLAS/numpy)"
        print(line)

    print("\nmeta-training slice (msl, desk profile, ms per outer iteration):")
    for backend in backends:
        ms = bench_meta_slice(backend)
        print(f"  {backend}: {ms:.1f} ms/iter")
    kernels._select_initial()


if __name__ == "__main__":
    main()
