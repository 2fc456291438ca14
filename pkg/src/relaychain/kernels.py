"""Hot numeric kernels: Eikonal wavefront propagation and grid ray traversal.

Every function here is written in nopython-compatible style and compiled with
numba when available. Setting ``RELAYCHAIN_NUMBA=0`` selects the pure-Python
fallback (same code objects, uncompiled), which is used by the benchmark suite
and by environments without a working JIT. Both paths execute the identical
sequence of IEEE double operations, so results are bit-identical.
"""

import math
import os

import numpy as np

OCCUPIED = 1
FREE = 0

# Tie tolerance for lattice-corner crossings, relative to segment length in
# cell units. A near-corner crossing is treated as a corner (both side cells
# inspected), which only ever makes the traversal more conservative.
_CORNER_TOL = 1e-12


def _resolve_backend() -> bool:
    flag = os.environ.get("RELAYCHAIN_NUMBA", "").strip().lower()
    if flag in ("0", "false", "off", "no"):
        return False
    try:
        import numba  # noqa: F401
    except ImportError:
        if flag in ("1", "true", "on", "yes"):
            raise RuntimeError("RELAYCHAIN_NUMBA=1 but numba is not importable")
        return False
    return True


NUMBA_ENABLED = _resolve_backend()

if NUMBA_ENABLED:
    from numba import njit

    def _jit(fn):
        return njit(cache=True, fastmath=False)(fn)
else:
    def _jit(fn):
        return fn


@_jit
def _heap_push(keys, idxs, n, key, idx):
    keys[n] = key
    idxs[n] = idx
    i = n
    n += 1
    while i > 0:
        p = (i - 1) >> 1
        if keys[i] < keys[p] or (keys[i] == keys[p] and idxs[i] < idxs[p]):
            keys[i], keys[p] = keys[p], keys[i]
            idxs[i], idxs[p] = idxs[p], idxs[i]
            i = p
        else:
            break
    return n


@_jit
def _heap_pop(keys, idxs, n):
    key = keys[0]
    idx = idxs[0]
    n -= 1
    keys[0] = keys[n]
    idxs[0] = idxs[n]
    i = 0
    while True:
        left = 2 * i + 1
        right = left + 1
        m = i
        if left < n and (
            keys[left] < keys[m] or (keys[left] == keys[m] and idxs[left] < idxs[m])
        ):
            m = left
        if right < n and (
            keys[right] < keys[m] or (keys[right] == keys[m] and idxs[right] < idxs[m])
        ):
            m = right
        if m == i:
            break
        keys[i], keys[m] = keys[m], keys[i]
        idxs[i], idxs[m] = idxs[m], idxs[i]
        i = m
    return key, idx, n


@_jit
def _frozen_value(dist, frozen, h, w, x, y):
    if x < 0 or x >= w or y < 0 or y >= h:
        return np.inf
    idx = y * w + x
    if frozen[idx] == 0:
        return np.inf
    return dist[idx]


@_jit
def _relax_via(dist, frozen, h, w, nx, ny, dx, dy, res):
    """Upwind candidates for cell (nx, ny) that involve the newly frozen
    neighbor at offset (dx, dy).

    Candidates not involving the newest frozen cell were already proposed
    when their own participants froze, so restricting to these keeps the
    final solution identical while cutting the per-pop work.
    """
    res2 = res * res
    simplex_lim = res / math.sqrt(2.0)
    c = dist[(ny + dy) * w + (nx + dx)]
    if dx == 0 or dy == 0:
        # Axis neighbor: one-sided edge arrival, two axis-diagonal simplexes
        # (c as the axis member) and two axis-axis quadrant solves.
        best = c + res
        if dx == 0:
            d1 = _frozen_value(dist, frozen, h, w, nx + 1, ny + dy)
            d2 = _frozen_value(dist, frozen, h, w, nx - 1, ny + dy)
            p1 = _frozen_value(dist, frozen, h, w, nx + 1, ny)
            p2 = _frozen_value(dist, frozen, h, w, nx - 1, ny)
        else:
            d1 = _frozen_value(dist, frozen, h, w, nx + dx, ny + 1)
            d2 = _frozen_value(dist, frozen, h, w, nx + dx, ny - 1)
            p1 = _frozen_value(dist, frozen, h, w, nx, ny + 1)
            p2 = _frozen_value(dist, frozen, h, w, nx, ny - 1)
        for d in (d1, d2):
            diff = c - d
            if 0.0 <= diff <= simplex_lim:
                t = c + math.sqrt(res2 - diff * diff)
                if t < best:
                    best = t
        for p in (p1, p2):
            if p < np.inf:
                diff = c - p
                if diff < 0.0:
                    diff = -diff
                if diff <= res:
                    t = 0.5 * (c + p + math.sqrt(2.0 * res2 - diff * diff))
                    if t < best:
                        best = t
        return best
    # Diagonal neighbor: one-sided diagonal arrival and the two adjacent
    # axis-diagonal simplexes (c as the diagonal member).
    best = c + res * math.sqrt(2.0)
    a1 = _frozen_value(dist, frozen, h, w, nx + dx, ny)
    a2 = _frozen_value(dist, frozen, h, w, nx, ny + dy)
    for a in (a1, a2):
        diff = a - c
        if 0.0 <= diff <= simplex_lim and a < np.inf:
            t = a + math.sqrt(res2 - diff * diff)
            if t < best:
                best = t
    return best


@_jit
def fmm_propagate(occ, h, w, src_idx, res):
    """Geodesic distance (meters) from the source cell over free space.

    occ is the flattened occupancy grid; occupied and unreachable cells come
    back as inf. Heap ties break on flat cell index, so the accept order and
    hence the output are fully deterministic.
    """
    size = h * w
    dist = np.full(size, np.inf)
    frozen = np.zeros(size, np.uint8)
    if occ[src_idx] != FREE:
        return dist
    cap = 12 * size
    keys = np.empty(cap, np.float64)
    idxs = np.empty(cap, np.int64)
    n = 0
    dist[src_idx] = 0.0
    n = _heap_push(keys, idxs, n, 0.0, src_idx)
    while n > 0:
        key, idx, n = _heap_pop(keys, idxs, n)
        if frozen[idx] != 0:
            continue
        if key != dist[idx]:
            continue
        frozen[idx] = 1
        cy = idx // w
        cx = idx - cy * w
        for dy in range(-1, 2):
            for dx in range(-1, 2):
                if dx == 0 and dy == 0:
                    continue
                nx = cx + dx
                ny = cy + dy
                if nx < 0 or nx >= w or ny < 0 or ny >= h:
                    continue
                nidx = ny * w + nx
                if occ[nidx] != FREE or frozen[nidx] != 0:
                    continue
                cand = _relax_via(dist, frozen, h, w, nx, ny, -dx, -dy, res)
                if cand < dist[nidx]:
                    dist[nidx] = cand
                    n = _heap_push(keys, idxs, n, cand, nidx)
    return dist


@_jit
def _ray_occluded(occ, h, w, x0, y0, x1, y1, res, exempt_last):
    """Conservative cell traversal along the segment.

    Returns True when an occupied cell blocks the segment: every cell the
    segment passes through must be free, and a lattice-corner crossing is
    blocked when both side cells are occupied (no corner-cutting through
    diagonal gaps). With exempt_last the destination cell itself is allowed
    to be occupied (sensing an obstacle surface).
    """
    u0 = x0 / res
    v0 = y0 / res
    u1 = x1 / res
    v1 = y1 / res
    cx = int(math.floor(u0))
    cy = int(math.floor(v0))
    tx = int(math.floor(u1))
    ty = int(math.floor(v1))
    if cx < 0 or cx >= w or cy < 0 or cy >= h or tx < 0 or tx >= w or ty < 0 or ty >= h:
        return True
    at_target = cx == tx and cy == ty
    if occ[cy * w + cx] != FREE and not (exempt_last and at_target):
        return True
    if at_target:
        return False
    du = u1 - u0
    dv = v1 - v0
    sx = 0
    sy = 0
    t_max_x = np.inf
    t_max_y = np.inf
    t_delta_x = np.inf
    t_delta_y = np.inf
    if du > 0.0:
        sx = 1
        t_max_x = (cx + 1.0 - u0) / du
        t_delta_x = 1.0 / du
    elif du < 0.0:
        sx = -1
        t_max_x = (cx - u0) / du
        t_delta_x = -1.0 / du
    if dv > 0.0:
        sy = 1
        t_max_y = (cy + 1.0 - v0) / dv
        t_delta_y = 1.0 / dv
    elif dv < 0.0:
        sy = -1
        t_max_y = (cy - v0) / dv
        t_delta_y = -1.0 / dv
    max_steps = abs(tx - cx) + abs(ty - cy) + 4
    for _ in range(max_steps):
        if sx != 0 and sy != 0 and abs(t_max_x - t_max_y) <= _CORNER_TOL:
            # Lattice-corner crossing: blocked only when pinched between two
            # occupied side cells; grazing a single wall corner passes.
            pinched = 0
            for k in range(2):
                ox = cx + sx if k == 0 else cx
                oy = cy if k == 0 else cy + sy
                if not (0 <= ox < w and 0 <= oy < h):
                    pinched += 1
                elif occ[oy * w + ox] != FREE and not (
                    exempt_last and ox == tx and oy == ty
                ):
                    pinched += 1
            if pinched == 2:
                return True
            cx += sx
            cy += sy
            t_max_x += t_delta_x
            t_max_y += t_delta_y
        elif t_max_x < t_max_y:
            cx += sx
            t_max_x += t_delta_x
        else:
            cy += sy
            t_max_y += t_delta_y
        if cx < 0 or cx >= w or cy < 0 or cy >= h:
            return True
        if cx == tx and cy == ty:
            if exempt_last:
                return False
            return occ[cy * w + cx] != FREE
        if occ[cy * w + cx] != FREE:
            return True
    return True


@_jit
def segment_clear(occ, h, w, x0, y0, x1, y1, res):
    """True iff the segment crosses only free cells (endpoints included).

    Endpoints are ordered canonically so the result is exactly symmetric.
    """
    if x0 > x1 or (x0 == x1 and y0 > y1):
        x0, y0, x1, y1 = x1, y1, x0, y0
    return not _ray_occluded(occ, h, w, x0, y0, x1, y1, res, False)


@_jit
def visible_cells(occ, h, w, ox, oy, cand, out, v_range, res, occlusion):
    """Mark which candidate cells an observer at (ox, oy) can sense.

    A cell is sensed when its center lies within v_range and, with occlusion
    on, the ray from the observer reaches it crossing only free cells (the
    candidate cell itself may be occupied).
    """
    r2 = v_range * v_range
    for i in range(cand.shape[0]):
        idx = cand[i]
        cy = idx // w
        cx = idx - cy * w
        tx = (cx + 0.5) * res
        ty = (cy + 0.5) * res
        dx = tx - ox
        dy = ty - oy
        if dx * dx + dy * dy > r2:
            out[i] = False
        elif not occlusion:
            out[i] = True
        else:
            out[i] = not _ray_occluded(occ, h, w, ox, oy, tx, ty, res, True)


def warmup():
    """Force JIT compilation of all kernels (used before forking workers)."""
    occ = np.zeros(9, np.uint8)
    occ[4] = OCCUPIED
    fmm_propagate(occ, 3, 3, 0, 1.0)
    segment_clear(occ, 3, 3, 0.5, 0.5, 2.5, 2.5, 1.0)
    cand = np.array([8], np.int64)
    out = np.zeros(1, np.bool_)
    visible_cells(occ, 3, 3, 0.5, 0.5, cand, out, 10.0, 1.0, True)
