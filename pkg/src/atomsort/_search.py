"""Compiled breadth-first search over (site, heading, segments-used) states.

Directions are indexed 0..7 as E, NE, N, NW, W, SW, S, SE. A step onto a
site requires it to be empty; in strict mode a diagonal step also requires
both orthogonal sites flanking it to be empty. Changing heading opens a new
segment, capped at ``max_seg``.
"""
import numpy as np
from numba import njit

DCOL = np.array([1, 1, 0, -1, -1, -1, 0, 1], dtype=np.int64)
DROW = np.array([0, -1, -1, -1, 0, 1, 1, 1], dtype=np.int64)


@njit(cache=True)
def _step_ok(occ, r, c, d, strict, h, w):
    nr = r + DROW[d]
    nc = c + DCOL[d]
    if nr < 0 or nr >= h or nc < 0 or nc >= w:
        return False
    if strict and DROW[d] != 0 and DCOL[d] != 0:
        if occ[r, nc] != 0 or occ[nr, c] != 0:
            return False
    return True


@njit(cache=True)
def shortest_path(occ, sr, sc, tr, tc, dirs, max_seg, strict):
    """Step directions of the best path from (sr, sc) to (tr, tc).

    ``occ`` must already have the source cleared. Best means fewest steps,
    then fewest segments, then lexicographically smallest step sequence.
    Returns an empty array when no admissible path exists.
    """
    h, w = occ.shape
    ks = max_seg + 1
    n_states = h * w * 8 * ks
    seen = np.zeros(n_states, dtype=np.bool_)
    parent = np.full(n_states, -1, dtype=np.int64)
    queue = np.empty(n_states, dtype=np.int64)
    depth = np.empty(n_states, dtype=np.int64)
    head = 0
    tail = 0
    best = -1
    best_steps = -1
    best_k = ks + 1

    for i in range(dirs.shape[0]):
        d = dirs[i]
        if not _step_ok(occ, sr, sc, d, strict, h, w):
            continue
        nr = sr + DROW[d]
        nc = sc + DCOL[d]
        s = ((nr * w + nc) * 8 + d) * ks + 1
        if nr == tr and nc == tc:
            if best < 0 or 1 < best_k:
                best = s
                best_steps = 1
                best_k = 1
                parent[s] = -1
            continue
        if occ[nr, nc] != 0 or seen[s]:
            continue
        seen[s] = True
        parent[s] = -1
        queue[tail] = s
        depth[tail] = 1
        tail += 1

    while head < tail:
        s = queue[head]
        steps = depth[head]
        head += 1
        if best >= 0 and steps >= best_steps:
            break
        k = s % ks
        rest = s // ks
        d0 = rest % 8
        site = rest // 8
        r = site // w
        c = site % w
        for i in range(dirs.shape[0]):
            d = dirs[i]
            nk = k if d == d0 else k + 1
            if nk > max_seg:
                continue
            if not _step_ok(occ, r, c, d, strict, h, w):
                continue
            nr = r + DROW[d]
            nc = c + DCOL[d]
            ns = ((nr * w + nc) * 8 + d) * ks + nk
            if nr == tr and nc == tc:
                if best < 0 or nk < best_k:
                    best = ns
                    best_steps = steps + 1
                    best_k = nk
                    parent[ns] = s
                continue
            if occ[nr, nc] != 0 or seen[ns]:
                continue
            seen[ns] = True
            parent[ns] = s
            queue[tail] = ns
            depth[tail] = steps + 1
            tail += 1

    if best < 0:
        return np.empty(0, dtype=np.int64)
    out = np.empty(best_steps, dtype=np.int64)
    s = best
    i = best_steps - 1
    while s >= 0:
        out[i] = (s // ks) % 8
        s = parent[s]
        i -= 1
    return out


@njit(cache=True)
def reach_steps(occ, sr, sc, dirs, max_seg, strict):
    """Fewest steps from (sr, sc) to every site, -1 where unreachable.

    Empty sites are passed through; occupied sites are recorded as path
    endpoints but never expanded. By symmetry of the step rules this also
    gives, for each occupied site, the length of the best path that would
    carry its atom to (sr, sc).
    """
    h, w = occ.shape
    ks = max_seg + 1
    n_states = h * w * 8 * ks
    seen = np.zeros(n_states, dtype=np.bool_)
    queue = np.empty(n_states, dtype=np.int64)
    depth = np.empty(n_states, dtype=np.int64)
    dist = np.full((h, w), -1, dtype=np.int64)
    dist[sr, sc] = 0
    head = 0
    tail = 0

    for i in range(dirs.shape[0]):
        d = dirs[i]
        if not _step_ok(occ, sr, sc, d, strict, h, w):
            continue
        nr = sr + DROW[d]
        nc = sc + DCOL[d]
        if dist[nr, nc] < 0:
            dist[nr, nc] = 1
        if occ[nr, nc] != 0:
            continue
        s = ((nr * w + nc) * 8 + d) * ks + 1
        if seen[s]:
            continue
        seen[s] = True
        queue[tail] = s
        depth[tail] = 1
        tail += 1

    while head < tail:
        s = queue[head]
        steps = depth[head]
        head += 1
        k = s % ks
        rest = s // ks
        d0 = rest % 8
        site = rest // 8
        r = site // w
        c = site % w
        for i in range(dirs.shape[0]):
            d = dirs[i]
            nk = k if d == d0 else k + 1
            if nk > max_seg:
                continue
            if not _step_ok(occ, r, c, d, strict, h, w):
                continue
            nr = r + DROW[d]
            nc = c + DCOL[d]
            if dist[nr, nc] < 0:
                dist[nr, nc] = steps + 1
            if occ[nr, nc] != 0:
                continue
            ns = ((nr * w + nc) * 8 + d) * ks + nk
            if seen[ns]:
                continue
            seen[ns] = True
            queue[tail] = ns
            depth[tail] = steps + 1
            tail += 1
    return dist
