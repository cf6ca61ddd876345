"""Compiled enumeration of king-connected polymers (fixed polyplets).

Redelmeier's algorithm over the eight-neighbour graph.  Every polymer of at
most ``n_max`` blocks is visited exactly once up to translation; for each
one the closure size at the next scale is maintained incrementally for all
``L^2`` positions of the polymer relative to the coarse grid.
"""

from __future__ import annotations

import numpy as np
from numba import njit

KING = np.array([(1, 0), (-1, 0), (0, 1), (0, -1), (1, 1), (1, -1), (-1, 1), (-1, -1)],
                dtype=np.int64)


@njit(cache=True)
def _enumerate(n_max, L, king):
    W = 2 * n_max + 1
    H = n_max + 1
    sh = L * ((n_max + L - 1) // L)  # shift keeping coarse alignment, >= n_max
    nc = (W + sh + L) // L + 2
    n_off = L * L
    # coarse index of each fine cell under each offset
    cidx = np.empty((W * H, n_off), dtype=np.int64)
    for y in range(H):
        for xs in range(W):
            c = y * W + xs
            for oy in range(L):
                for ox in range(L):
                    cx = (xs + ox) // L
                    cy = (y + oy + sh) // L
                    cidx[c, oy * L + ox] = cy * nc + cx
    cnt = np.zeros((n_off, nc * nc), dtype=np.int64)
    clo = np.zeros(n_off, dtype=np.int64)
    reached = np.zeros(W * H, dtype=np.bool_)
    origin = n_max  # (x=0, y=0) at column n_max

    # per-level untried segments in one flat buffer
    buf = np.empty(n_max * 8 * n_max + 16, dtype=np.int64)
    start = np.zeros(n_max + 2, dtype=np.int64)
    end = np.zeros(n_max + 2, dtype=np.int64)
    added_start = np.zeros(n_max + 2, dtype=np.int64)
    added = np.empty(8 * n_max + 8, dtype=np.int64)
    cell_at = np.empty(n_max + 1, dtype=np.int64)

    # outputs indexed by size: count, max closure, min (size - closure) etc.
    count = np.zeros(n_max + 1, dtype=np.int64)
    max_closure = np.zeros(n_max + 1, dtype=np.int64)
    hist = np.zeros((n_max + 1, n_max + 1), dtype=np.int64)  # [size, closure] incidence

    buf[0] = origin
    reached[origin] = True
    start[0] = 0
    end[0] = 1
    added_start[0] = 0
    n_added = 0
    depth = 0
    while depth >= 0:
        if end[depth] == start[depth]:
            # level exhausted: undo the cell placed at depth-1 and return
            depth -= 1
            if depth < 0:
                break
            c = cell_at[depth]
            for o in range(n_off):
                k = cidx[c, o]
                cnt[o, k] -= 1
                if cnt[o, k] == 0:
                    clo[o] -= 1
            for i in range(added_start[depth + 1], n_added):
                reached[added[i]] = False
            n_added = added_start[depth + 1]
            continue
        end[depth] -= 1
        c = buf[end[depth]]
        cell_at[depth] = c
        best = 0
        for o in range(n_off):
            k = cidx[c, o]
            if cnt[o, k] == 0:
                clo[o] += 1
            cnt[o, k] += 1
            if clo[o] > best:
                best = clo[o]
        size = depth + 1
        count[size] += 1
        if best > max_closure[size]:
            max_closure[size] = best
        for o in range(n_off):
            hist[size, clo[o]] += 1
        if size < n_max:
            # child untried = remaining parent untried + new neighbours
            ns = end[depth]
            s0 = start[depth]
            base = ns
            for i in range(s0, ns):
                buf[base + (i - s0)] = buf[i]
            top = base + (ns - s0)
            added_start[depth + 1] = n_added
            cy = c // W
            cx = c % W
            for d in range(8):
                x = cx + king[d, 0]
                y = cy + king[d, 1]
                if y < 0 or y >= H or x < 0 or x >= W:
                    continue
                if y == 0 and x < origin:
                    continue
                nb = y * W + x
                if not reached[nb]:
                    reached[nb] = True
                    added[n_added] = nb
                    n_added += 1
                    buf[top] = nb
                    top += 1
            depth += 1
            start[depth] = base
            end[depth] = top
        else:
            for o in range(n_off):
                k = cidx[c, o]
                cnt[o, k] -= 1
                if cnt[o, k] == 0:
                    clo[o] -= 1
    return count, max_closure, hist


def enumerate_closure_statistics(n_max: int, L: int):
    """Counts of polymers by size and the (size, closure size) incidence table.

    ``hist[n, c]`` counts pairs (polymer of ``n`` blocks up to translation,
    coarse-grid offset) whose closure has ``c`` blocks.
    """
    return _enumerate(int(n_max), int(L), KING)
