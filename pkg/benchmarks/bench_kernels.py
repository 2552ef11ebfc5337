"""Compiled vs NumPy kernels, plus end-to-end encoding time.

    python benchmarks/bench_kernels.py [--repeat 5]

Inputs are synthetic and sized like the MNIST setup (64 trees of depth 3,
784 features, 36-bit codes).  Each line reports the best of ``--repeat``
runs; the end-to-end rows swap the kernel module used by the encoder.
"""

import argparse
import time

import numpy as np

from foresthash import _pykernels, training
from foresthash.aggregation import BlockSelection
from foresthash.hashcore import pack_bits, to_words
from foresthash.training import Dataset, ForestConfig, encode_hash, train_forest

try:
    from foresthash import _ckernels
except ImportError:
    _ckernels = None


def best_of(fn, repeat):
    fn()
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def kernel_cases(rng):
    dec = rng.integers(0, 2, size=(20_000, 64 * 3), dtype=np.uint8)
    db = to_words(pack_bits(rng.integers(0, 2, size=(100_000, 36), dtype=np.uint8)))
    q = db[7].copy()
    leaves = rng.integers(0, 4, size=(5_000, 64))
    return {
        "traverse 20000x64 d=3": lambda k: k.traverse(dec, 3, 64),
        "hamming 1e5 x 36 bits": lambda k: k.hamming_distances(db, q),
        "radius_query r=2": lambda k: k.radius_query(db, q, 2),
        "pairwise counts 5000x64": lambda k: k.pairwise_joint_counts(leaves, 4),
    }


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args()

    rng = np.random.default_rng(0)
    backends = [("python", _pykernels)] + ([("cython", _ckernels)] if _ckernels else [])
    print(f"{'case':<28}" + "".join(f"{name:>12}" for name, _ in backends) + "  (ms)")
    for case, fn in kernel_cases(rng).items():
        cells = [best_of(lambda k=k: fn(k), args.repeat) * 1e3 for _, k in backends]
        print(f"{case:<28}" + "".join(f"{c:>12.2f}" for c in cells))

    y = np.repeat(np.arange(10), 100)
    data = Dataset(rng.random((1000, 784)) + 0.05 * y[:, None], y)
    forest = train_forest(data, ForestConfig(num_trees=64, depth=3), threads=0)
    x = rng.random((5000, 784))
    sel = BlockSelection(tuple(range(6)))
    original = training.kernels
    try:
        for name, k in backends:
            training.kernels = k
            us = best_of(lambda: encode_hash(forest, sel, x), args.repeat) / len(x) * 1e6
            print(f"{'encode M=64 d=3 D=784':<28}{name:>12}{us:>12.2f} us/sample")
    finally:
        training.kernels = original


if __name__ == "__main__":
    main()
