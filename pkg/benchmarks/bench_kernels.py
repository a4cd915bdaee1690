"""Time the scoring and phrase kernels: numba (if available) against numpy.

    python benchmarks/bench_kernels.py [--postings 200000] [--chunks 5000] [--repeat 5]

The numpy numbers are always reported; numba is skipped when it is not
installed or GS_DISABLE_NUMBA is set.
"""

import argparse
import time

import numpy as np

from groundsearch import _kernels


def scoring_inputs(rng, n_postings, n_chunks):
    rows = rng.integers(0, n_chunks, n_postings).astype(np.int64)
    tfs = rng.integers(1, 6, n_postings).astype(np.float64)
    dls = rng.integers(20, 600, n_postings).astype(np.float64)
    weights = rng.random(n_postings)
    return rows, tfs, dls, weights


def phrase_inputs(rng, n_chunks, k=3, per_term=12):
    # k sorted position lists per chunk, laid out chunk-major
    segs, starts, ends = [], [], []
    offset = 0
    for _ in range(n_chunks):
        for _ in range(k):
            pos = np.unique(rng.integers(0, 400, per_term))
            segs.append(pos)
            starts.append(offset)
            offset += pos.size
            ends.append(offset)
    return (np.concatenate(segs).astype(np.int64), np.array(starts, dtype=np.int64),
            np.array(ends, dtype=np.int64), np.arange(k, dtype=np.int64))


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--postings", type=int, default=200_000)
    ap.add_argument("--chunks", type=int, default=5_000)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()

    rng = np.random.default_rng(0)
    rows, tfs, dls, weights = scoring_inputs(rng, args.postings, args.chunks)
    positions, starts, ends, rel = phrase_inputs(rng, args.chunks)

    backends = {"numpy": _kernels.numpy_kernels}
    if _kernels.BACKEND == "numba":
        backends["numba"] = (_kernels.bm25_accumulate, _kernels.phrase_match)

    reference = None
    print(f"{'backend':8} {'bm25_accumulate':>16} {'phrase_match':>14}")
    for name, (bm25, phrase) in backends.items():
        def score():
            return bm25(rows, tfs, dls, weights, 1.2, 0.75, 300.0, np.zeros(args.chunks))

        def match():
            return phrase(positions, starts, ends, rel, args.chunks)

        out = (score(), match())  # warm-up, also triggers jit compilation
        if reference is None:
            reference = out
        else:
            assert np.allclose(out[0], reference[0], rtol=1e-12)
            assert np.array_equal(out[1], reference[1])
        print(f"{name:8} {best_of(score, args.repeat) * 1e3:13.2f} ms"
              f" {best_of(match, args.repeat) * 1e3:11.2f} ms")
    if "numba" not in backends:
        print("numba not active; only the numpy path was timed")


if __name__ == "__main__":
    main()
