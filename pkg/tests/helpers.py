"""Shared builders and finite-difference utilities for the test suite."""

import numpy as np

from corefkit.masking import IGNORE, MRPTarget, TrainingInstance


def random_instance(rng, vocab_size, n, n_mrp=2, n_mlm=3):
    """A hand-built instance of length ``n`` (including [CLS]/[SEP]).

    Words alternate between one and two subwords. ``n_mrp`` words become
    MRP targets with one or two uncorrupted referents each; another
    ``n_mlm`` words are MLM-only.
    """
    spans = []
    p = 1
    while p < n - 1:
        length = 2 if (len(spans) % 3 == 2 and p + 1 < n - 1) else 1
        spans.append((p, p + length - 1))
        p += length
    ids = [3] + rng.integers(5, vocab_size, size=n - 2).tolist() + [4]
    labels = [IGNORE] * n
    order = rng.permutation(len(spans)).tolist()
    targets = []
    masked = []
    for _ in range(n_mrp):
        w = order.pop()
        k = 1 + int(rng.integers(2))
        refs = [order.pop() for _ in range(k)]
        targets.append(MRPTarget(spans[w][0], spans[w][1], tuple(spans[r] for r in refs)))
        masked.append(w)
    masked += [order.pop() for _ in range(n_mlm)]
    for w in masked:
        for q in range(spans[w][0], spans[w][1] + 1):
            labels[q] = ids[q]
            ids[q] = 2
    return TrainingInstance(ids, labels, [int(l != IGNORE) for l in labels], spans, targets, 1)


def numeric_grad(f, arr, h=1e-5, index=None):
    """Central differences of scalar ``f()`` w.r.t. ``arr`` (modified in place)."""
    g = np.zeros_like(arr)
    it = np.ndindex(arr.shape) if index is None else index
    for ix in it:
        old = arr[ix]
        arr[ix] = old + h
        fp = f()
        arr[ix] = old - h
        fm = f()
        arr[ix] = old
        g[ix] = (fp - fm) / (2 * h)
    return g


def rel_error(analytic, numeric, floor=1e-8):
    """Norm-wise relative error; absolute error when both gradients are below ``floor``."""
    diff = float(np.linalg.norm(analytic - numeric))
    scale = max(float(np.linalg.norm(analytic)), float(np.linalg.norm(numeric)))
    return diff if scale < floor else diff / scale
