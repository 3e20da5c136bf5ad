#!/usr/bin/env python3
"""Benchmark the numba kernels against the pure-numpy fallback.

Shapes mirror a stage-4 training step at desk scale and one 10x larger.
Run directly: python benchmarks/bench_kernels.py [--repeats N]
"""

import argparse
import time

import numpy as np

from auxcl import backend, kernels


def make_case(rng, B, C, d, r):
    U = rng.standard_normal((B, d)).astype(np.float32)
    U /= np.linalg.norm(U, axis=1, keepdims=True)
    return {
        "U": U,
        "P": rng.standard_normal((C, d)).astype(np.float32),
        "y": rng.integers(0, C, size=B),
        "H": rng.standard_normal((B, d)).astype(np.float32),
        "gamma": np.ones(d, dtype=np.float32),
        "beta": np.zeros(d, dtype=np.float32),
        "A": (0.1 * rng.standard_normal((r, d))).astype(np.float32),
        "Bm": (0.1 * rng.standard_normal((d, r))).astype(np.float32),
        "old": U[: min(B, C)].copy(),
        "new": (U[: min(B, C)] + 0.01).astype(np.float32),
    }


def bench(fn, repeats):
    fn()  # warm up (JIT compile on the numba path)
    t0 = time.perf_counter()
    for _ in range(repeats):
        fn()
    return (time.perf_counter() - t0) / repeats


def run_suite(case, repeats):
    out = {}
    out["cos_ce"] = bench(
        lambda: kernels.cos_ce(case["U"], case["P"], case["y"], 100.0), repeats)
    out["linear_ce"] = bench(
        lambda: kernels.linear_ce(case["H"], case["P"].T.copy(), case["y"]), repeats)

    def tuner_step():
        U, zn, AH = kernels.tuner_forward(
            case["H"], case["gamma"], case["beta"], case["A"], case["Bm"])
        kernels.tuner_backward(case["H"], case["Bm"], U, zn, AH, U)

    out["tuner_fwd_bwd"] = bench(tuner_step, repeats)
    out["kd_rows"] = bench(
        lambda: kernels.kd_rows(case["old"], case["new"], 0.35), repeats)
    out["cosine_matrix"] = bench(
        lambda: kernels.cosine_matrix(case["H"], case["P"]), repeats)
    return out


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--repeats", type=int, default=50)
    args = parser.parse_args()

    shapes = {
        "desk (B=256, C=25, d=64, r=16)": (256, 25, 64, 16),
        "10x  (B=1024, C=100, d=512, r=16)": (1024, 100, 512, 16),
    }
    print(f"numba available: {backend.HAS_NUMBA}")
    for label, (B, C, d, r) in shapes.items():
        rng = np.random.default_rng(0)
        case = make_case(rng, B, C, d, r)
        results = {}
        for name in ("numpy", "numba") if backend.HAS_NUMBA else ("numpy",):
            backend.set_backend(name)
            results[name] = run_suite(case, args.repeats)
        print(f"\n{label}, {args.repeats} repeats")
        print(f"{'kernel':<16}" + "".join(f"{n:>12}" for n in results)
              + ("     speedup" if len(results) > 1 else ""))
        for kernel in next(iter(results.values())):
            cells = "".join(f"{results[n][kernel] * 1e3:>10.3f}ms" for n in results)
            if len(results) > 1:
                ratio = results["numpy"][kernel] / results["numba"][kernel]
                cells += f"{ratio:>11.2f}x"
            print(f"{kernel:<16}{cells}")


if __name__ == "__main__":
    main()
