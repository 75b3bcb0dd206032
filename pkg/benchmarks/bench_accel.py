"""Benchmark the jitted hot kernels against their pure-numpy fallbacks.

Usage:
    python benchmarks/bench_accel.py [--repeats 5] [--csv out.csv]

Covers the two kernels behind the heavy pipeline stages: the fused strong
Laplacian stencil (per-node tensor contractions) and the all-pairs embedding
distances behind the diffusion-distance matrix.  The first jitted call pays
compilation cost and is excluded by a warmup round.
"""

import argparse
from time import perf_counter

import numpy as np

from statlap import accel
from statlap.geometry import synthetic_manifold
from statlap.operators import apply_strong_laplacian
from statlap.spectral import eigendecompose, vdd_matrix
from statlap.operators import assemble_weak_laplacian, inner_product_data


def timeit(fn, repeats):
    times = []
    for _ in range(repeats):
        t0 = perf_counter()
        fn()
        times.append(perf_counter() - t0)
    return np.mean(times), np.std(times)


def bench_strong_apply(repeats):
    rows = []
    for n in (24, 48, 96):
        md = synthetic_manifold("curved2d", (n, n))
        rng = np.random.default_rng(0)
        X = rng.normal(size=(md.grid.n_nodes, 2))
        apply_strong_laplacian(md, X, check=False, use_numba=True)  # warmup/compile
        for flag, label in ((True, "numba"), (False, "numpy")):
            mean, std = timeit(
                lambda: apply_strong_laplacian(md, X, check=False, use_numba=flag),
                repeats)
            rows.append(("strong_apply", f"{n}x{n}", label, mean, std))
    return rows


def bench_vdd_matrix(repeats):
    rows = []
    md = synthetic_manifold("curved1d", 64)
    ipd = inner_product_data(md)
    L = assemble_weak_laplacian(md, ipd)
    dec = eigendecompose(L, ipd, 64)
    for k in (16, 32, 64):
        sub = type(dec)(eigenvalues=dec.eigenvalues[:k], fields=dec.fields[:k],
                        b_blocks=dec.b_blocks, full_dim=dec.full_dim,
                        bortho_residual=dec.bortho_residual,
                        eig_residual=dec.eig_residual)
        vdd_matrix(sub, md, 0.3, use_numba=True)  # warmup/compile
        for flag, label in ((True, "numba"), (False, "numpy")):
            mean, std = timeit(lambda: vdd_matrix(sub, md, 0.3, use_numba=flag),
                               repeats)
            rows.append(("vdd_matrix", f"N=64,k={k}", label, mean, std))
    return rows


def bench_pairwise_raw(repeats):
    rows = []
    rng = np.random.default_rng(1)
    for n, f in ((256, 256), (512, 1024), (1024, 2048)):
        phi = rng.normal(size=(n, f))
        accel.pairwise_sqdist(phi, use_numba=True)  # warmup/compile
        for flag, label in ((True, "numba"), (False, "numpy")):
            mean, std = timeit(lambda: accel.pairwise_sqdist(phi, use_numba=flag),
                               repeats)
            rows.append(("pairwise_sqdist", f"{n}x{f}", label, mean, std))
    return rows


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=5)
    parser.add_argument("--csv", default=None, help="also write results as CSV")
    args = parser.parse_args()

    if not accel.numba_active():
        print("note: numba path inactive (missing numba or STATLAP_NO_NUMBA set); "
              "both columns will run the numpy fallback")

    rows = []
    rows += bench_strong_apply(args.repeats)
    rows += bench_vdd_matrix(args.repeats)
    rows += bench_pairwise_raw(args.repeats)

    print(f"\n{'kernel':<16} {'size':<12} {'path':<6} {'mean [ms]':>10} {'std [ms]':>9}")
    speedups = {}
    for kernel, size, label, mean, std in rows:
        print(f"{kernel:<16} {size:<12} {label:<6} {mean * 1e3:>10.3f} {std * 1e3:>9.3f}")
        speedups.setdefault((kernel, size), {})[label] = mean
    print()
    for (kernel, size), d in speedups.items():
        if "numba" in d and "numpy" in d and d["numba"] > 0:
            print(f"{kernel:<16} {size:<12} numpy/numba speedup: "
                  f"{d['numpy'] / d['numba']:.2f}x")

    if args.csv:
        lines = ["kernel,size,path,mean_s,std_s"]
        for kernel, size, label, mean, std in rows:
            lines.append(f"{kernel},{size},{label},{mean!r},{std!r}")
        with open(args.csv, "w") as handle:
            handle.write("\n".join(lines) + "\n")
        print(f"\nwrote {args.csv}")


if __name__ == "__main__":
    main()
