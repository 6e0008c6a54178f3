"""Independent reference implementations the tests compare against."""
from __future__ import annotations

import itertools
import math

import numpy as np

from perfembed.model import forward_batch, mae_loss


def brute_assignment(C) -> float:
    """Minimum total over all injective row->column maps; inf when none is finite."""
    C = np.asarray(C, dtype=float)
    n, m = C.shape
    best = math.inf
    for cols in itertools.permutations(range(m), n):
        total = sum(C[r, c] for r, c in enumerate(cols))
        best = min(best, total)
    return best


def fd_gradients(params, batch, targets, eps=1e-6) -> dict:
    """Central finite differences of the batch MAE for every parameter entry.

    Only the forward pass is used, so the backward code is not involved.
    """
    def f():
        return mae_loss(forward_batch(params, batch)[2], targets)

    out = {}
    for name, W in params.weights.items():
        g = np.zeros_like(W)
        for idx in np.ndindex(W.shape):
            old = W[idx]
            W[idx] = old + eps
            lp = f()
            W[idx] = old - eps
            lm = f()
            W[idx] = old
            g[idx] = (lp - lm) / (2 * eps)
        out[name] = g
    return out


def gradient_violations(analytic: dict, numeric: dict, rtol=1e-4, atol=1e-9) -> list:
    """Entries where ``|a - n| > rtol * max(|a|, |n|) + atol``."""
    bad = []
    for name, a in analytic.items():
        n = numeric[name]
        err = np.abs(a - n) > rtol * np.maximum(np.abs(a), np.abs(n)) + atol
        bad += [(name, idx) for idx in zip(*np.nonzero(err))]
    return bad


def matmul_space_count(tiles, width, max_length, extent=64) -> int:
    """Hand model of the ``C[i, j] += A[i, k] * B[k, j]`` search space.

    Loops are tokens ``(iterator, outer_of)``; the parallel loop always owns
    ``C`` here, so only tiling, interchange and one vectorize step matter.
    Rules: each original loop is tiled at most once, in increasing original
    order and before any interchange; an element loop must stay inside its
    tile loop; interchanged position pairs increase lexicographically; the
    final vectorize step needs ``j`` innermost.
    """
    tiles = sorted(s for s in tiles if 2 <= s < extent)
    start = (("i", None), ("j", None), ("k", None))

    def legal(loops):
        names = [x for x, _ in loops]
        return all(names.index(outer) < p for p, (_, outer) in enumerate(loops) if outer is not None)

    def count(loops, length, stage, last_tile, last_pair):
        total = 1
        if length == max_length:
            return total
        if stage == 0:
            names = [x for x, _ in loops]
            for o, base in enumerate("ijk"):
                if o <= last_tile:
                    continue
                p = names.index(base)
                for _s in tiles:
                    nxt = loops[:p] + ((base + "_o", None), (base, base + "_o")) + loops[p + 1:]
                    total += count(nxt, length + 1, 0, o, last_pair)
        if stage <= 1:
            n = len(loops)
            for a in range(n):
                for b in range(a + 1, n):
                    if (a, b) <= last_pair:
                        continue
                    sw = list(loops)
                    sw[a], sw[b] = sw[b], sw[a]
                    if legal(sw):
                        total += count(tuple(sw), length + 1, 1, last_tile, (a, b))
        if width > 1 and loops[-1][0] == "j":
            total += 1
        return total

    return count(start, 0, 0, -1, (-1, -1))
