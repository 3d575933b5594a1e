"""Histogram matching: numba kernel vs pure numpy.

    python benchmarks/bench_kernels.py [--pixels 4096] [--channels 3] [--repeats 50]

Sizes default to one face region at 64x64; try ``--pixels 65536`` for a
256x256 whole-image match. Both paths are checked for bit-identical output
before timing.
"""

import argparse
import statistics
import time

import numpy as np

from gancompress import _kernels


def timeit(fn, repeats):
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return statistics.median(times), min(times)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--pixels", type=int, default=4096, help="source pixels per channel")
    ap.add_argument("--ref-pixels", type=int, help="reference pixels per channel (default: same)")
    ap.add_argument("--channels", type=int, default=3)
    ap.add_argument("--repeats", type=int, default=50)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    rng = np.random.default_rng(args.seed)
    src = rng.uniform(-1, 1, (args.channels, args.pixels))
    ref = rng.uniform(-1, 1, (args.channels, args.ref_pixels or args.pixels))

    paths = {"numpy": _kernels.match_histogram_numpy}
    if _kernels.HAVE_NUMBA:
        paths["numba"] = _kernels.match_histogram_numba
        paths["numba"](src, ref)  # compile (or load the cache) outside the timing
        assert np.array_equal(paths["numba"](src, ref), paths["numpy"](src, ref))
    else:
        print("numba unavailable or disabled; timing numpy only")

    print(f"{args.channels} x {args.pixels} pixels, {args.repeats} repeats")
    results = {}
    for name, fn in paths.items():
        med, best = timeit(lambda: fn(src, ref), args.repeats)
        results[name] = med
        print(f"  {name:6s} median {med * 1e3:8.3f} ms   best {best * 1e3:8.3f} ms")
    if len(results) == 2:
        print(f"  speedup {results['numpy'] / results['numba']:.2f}x")


if __name__ == "__main__":
    main()
