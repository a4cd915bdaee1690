"""Numeric inner loops for scoring and phrase matching.

Each kernel has a numba ``@njit`` version and a pure-numpy version with the
same signature. Set ``GS_DISABLE_NUMBA=1`` (or run without numba installed)
to use the numpy path. ``BACKEND`` reports which one is active.
"""

from __future__ import annotations

import os

import numpy as np


def _numpy_bm25_accumulate(rows, tfs, dls, weights, k1, b, avgdl, out):
    norm = k1 * (1.0 - b + b * dls / avgdl)
    np.add.at(out, rows, weights * (tfs * (k1 + 1.0)) / (tfs + norm))
    return out


def _numpy_phrase_match(positions, starts, ends, rel, n_chunks):
    k = rel.shape[0]
    hit = np.zeros(n_chunks, dtype=np.bool_)
    for c in range(n_chunks):
        base = c * k
        anchors = positions[starts[base]:ends[base]] - rel[0]
        for i in range(1, k):
            if anchors.size == 0:
                break
            seg = positions[starts[base + i]:ends[base + i]] - rel[i]
            anchors = np.intersect1d(anchors, seg, assume_unique=True)
        hit[c] = anchors.size > 0
    return hit


def _numba_bm25_accumulate(rows, tfs, dls, weights, k1, b, avgdl, out):
    for j in range(rows.shape[0]):
        tf = tfs[j]
        norm = k1 * (1.0 - b + b * dls[j] / avgdl)
        out[rows[j]] += weights[j] * (tf * (k1 + 1.0)) / (tf + norm)
    return out


def _numba_phrase_match(positions, starts, ends, rel, n_chunks):
    k = rel.shape[0]
    hit = np.zeros(n_chunks, dtype=np.bool_)
    for c in range(n_chunks):
        base = c * k
        for a in range(starts[base], ends[base]):
            anchor = positions[a] - rel[0]
            ok = True
            for i in range(1, k):
                lo = starts[base + i]
                hi = ends[base + i]
                want = anchor + rel[i]
                j = lo + np.searchsorted(positions[lo:hi], want)
                if j >= hi or positions[j] != want:
                    ok = False
                    break
            if ok:
                hit[c] = True
                break
    return hit


def _select_backend():
    if os.environ.get("GS_DISABLE_NUMBA", "").strip().lower() in ("1", "true", "yes"):
        return "numpy", _numpy_bm25_accumulate, _numpy_phrase_match
    try:
        from numba import njit
    except ImportError:
        return "numpy", _numpy_bm25_accumulate, _numpy_phrase_match
    # fastmath off: scores are compared against a scalar oracle at 1e-9
    opts = dict(cache=True, nogil=True, fastmath=False)
    return "numba", njit(**opts)(_numba_bm25_accumulate), njit(**opts)(_numba_phrase_match)


BACKEND, bm25_accumulate, phrase_match = _select_backend()

numpy_kernels = (_numpy_bm25_accumulate, _numpy_phrase_match)
