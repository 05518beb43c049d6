"""Time the compiled kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--repeat 5] [--quick]

Each case runs on identical inputs in both backends; the table shows the best
wall time of ``--repeat`` runs, the speedup, and the largest absolute
difference between the two outputs.
"""

import argparse
import sys
import timeit

import numpy as np
import scipy.sparse as sp

from hybridnet import backend


def cases(quick):
    r = np.random.default_rng(0)
    scale = 0.25 if quick else 1.0

    a = r.normal(size=(49, 49))
    yield "jacobi_eigh 49x49", lambda k: k.jacobi_eigh(a + a.T, 1e-14, 100)[0]

    img = r.random((1, 28, 28))
    ker = r.normal(size=(8, 1, 7, 7))
    yield "correlate_valid 28x28, 8 filters 7x7", lambda k: k.correlate_valid(img, ker)

    resp = r.normal(size=(8, 22, 22))
    yield "hash_bits 8x22x22", lambda k: k.hash_bits(resp)

    hashed = r.integers(0, 256, size=(22, 22))
    yield "block_hist 22x22, 7x7 blocks", lambda k: k.block_hist(hashed, 256, 7, 7, 3, 3)

    n = int(2000 * scale)
    x = sp.random(n, 20000, density=0.01, format="csr", random_state=1, dtype=np.float32)
    indptr, indices = x.indptr.astype(np.int64), x.indices.astype(np.int32)
    y = np.where(r.random(n) < 0.5, 1.0, -1.0)
    q = np.asarray(x.multiply(x).sum(axis=1), dtype=np.float64).ravel() + 1.0
    order = r.permutation(n).astype(np.int64)

    def dcd(k):
        alpha, w, b = np.zeros(n), np.zeros(x.shape[1]), np.zeros(1)
        k.dcd_epoch(indptr, indices, x.data, order, y, alpha, w, b, q, 1.0, 1.0, 1.0)
        return w

    yield f"dcd_epoch {n}x20000, 1% dense", dcd


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeat", type=int, default=5)
    p.add_argument("--quick", action="store_true", help="smaller DCD problem")
    args = p.parse_args(argv)
    if "compiled" not in backend.available():
        print("compiled kernels are not built; run `python setup.py build_ext --inplace`", file=sys.stderr)
        return 1
    impls = {name: backend.get(name) for name in ("compiled", "python")}
    print(f"{'kernel':40s} {'compiled':>12s} {'python':>12s} {'speedup':>9s} {'max |diff|':>11s}")
    for label, fn in cases(args.quick):
        times, outs = {}, {}
        for name, k in impls.items():
            outs[name] = np.asarray(fn(k), dtype=np.float64)
            times[name] = min(timeit.repeat(lambda: fn(k), number=1, repeat=args.repeat))
        diff = float(np.max(np.abs(outs["compiled"] - outs["python"]), initial=0.0))
        print(f"{label:40s} {times['compiled'] * 1e3:10.3f}ms {times['python'] * 1e3:10.3f}ms "
              f"{times['python'] / times['compiled']:8.1f}x {diff:11.2e}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
