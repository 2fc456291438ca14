"""Independent oracles used to validate the production implementations.

Each oracle deliberately uses a different algorithm from the code it checks:
supersampled rays vs cell traversal, Dijkstra vs fast marching, exhaustive
enumeration vs the Hungarian solver, union-find vs BFS components.
"""

import heapq
import itertools
import math

import numpy as np

SQRT2 = math.sqrt(2.0)


def supersampled_los(grid, p, q, samples_per_cell: float = 64.0) -> bool:
    """Dense sampling along the segment; endpoint cells checked exactly.

    A sample blocks only when it lies strictly inside an occupied cell:
    grazing a wall corner or edge (boundary contact of measure zero) is
    sight-preserving.
    """
    if not grid.is_free(p) or not grid.is_free(q):
        return False
    res = grid.resolution
    eps = 1e-9 * res
    length = math.hypot(q[0] - p[0], q[1] - p[1])
    n = max(2, int(length / res * samples_per_cell))
    for i in range(n + 1):
        t = i / n
        x = p[0] + t * (q[0] - p[0])
        y = p[1] + t * (q[1] - p[1])
        cx, cy = grid.cell_of((x, y))
        if grid.cells[cy, cx] == 0:
            continue
        border = min(x - cx * res, (cx + 1) * res - x,
                     y - cy * res, (cy + 1) * res - y)
        if border > eps:
            return False
    return True


def per_cell_observe(truth, belief, observer, v_range, occlusion=True):
    """Reference observe(): apply the range+LOS predicate to every cell."""
    out = belief.cells.copy()
    res = truth.resolution
    for y in range(truth.height):
        for x in range(truth.width):
            cx, cy = truth.cell_center(x, y)
            if math.hypot(cx - observer[0], cy - observer[1]) > v_range:
                continue
            if occlusion and not _ray_to_cell(truth, observer, (cx, cy)):
                continue
            out[y, x] = truth.cells[y, x]
    return out


def _ray_to_cell(grid, p, center, samples_per_cell: float = 64.0) -> bool:
    """Supersampled visibility: all samples strictly before the target cell
    must be free."""
    tx, ty = grid.cell_of(center)
    length = math.hypot(center[0] - p[0], center[1] - p[1])
    if length == 0.0:
        return True
    n = max(2, int(length / grid.resolution * samples_per_cell))
    for i in range(n + 1):
        t = i / n
        x = p[0] + t * (center[0] - p[0])
        y = p[1] + t * (center[1] - p[1])
        cx, cy = grid.cell_of((x, y))
        if (cx, cy) == (tx, ty):
            return True
        if grid.cells[cy, cx] != 0:
            return False
    return True


class UnionFind:
    def __init__(self, n):
        self.parent = list(range(n))

    def find(self, a):
        while self.parent[a] != a:
            self.parent[a] = self.parent[self.parent[a]]
            a = self.parent[a]
        return a

    def union(self, a, b):
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            self.parent[rb] = ra


def union_find_partition(agents, grid, c_range, los_fn):
    """Brute-force partition over the pairwise connectivity predicate."""
    n = len(agents)
    uf = UnionFind(n)
    for i in range(n):
        for j in range(i + 1, n):
            pi, pj = agents[i].position, agents[j].position
            d = math.hypot(pi[0] - pj[0], pi[1] - pj[1])
            if d <= c_range and los_fn(grid, pi, pj):
                uf.union(i, j)
    comps = {}
    for i, agent in enumerate(agents):
        comps.setdefault(uf.find(i), []).append(agent.id)
    return sorted(tuple(sorted(c)) for c in comps.values())


def dijkstra8(grid, source):
    """8-connected Dijkstra with chamfer weights (1, sqrt(2)) * resolution."""
    h, w = grid.height, grid.width
    occ = grid.cells
    res = grid.resolution
    sx, sy = grid.cell_of(source)
    dist = np.full((h, w), np.inf)
    if occ[sy, sx] != 0:
        return dist
    dist[sy, sx] = 0.0
    pq = [(0.0, sy, sx)]
    while pq:
        d, y, x = heapq.heappop(pq)
        if d > dist[y, x]:
            continue
        for dy in (-1, 0, 1):
            for dx in (-1, 0, 1):
                if dx == 0 and dy == 0:
                    continue
                ny, nx = y + dy, x + dx
                if 0 <= ny < h and 0 <= nx < w and occ[ny, nx] == 0:
                    nd = d + (SQRT2 if dx * dy != 0 else 1.0) * res
                    if nd < dist[ny, nx]:
                        dist[ny, nx] = nd
                        heapq.heappush(pq, (nd, ny, nx))
    return dist


def brute_force_assignment(costs):
    """Exhaustive optimum over all injective goal->agent maps.

    Returns (best_total, matching) with matching as a sorted tuple of
    (agent, goal) pairs; ties resolved to the lexicographically smallest
    matching, mirroring the production tie-break rule.
    """
    n_agents, n_goals = costs.shape
    best_total = math.inf
    best_match = None
    for agents in itertools.permutations(range(n_agents), n_goals):
        total = 0.0
        for goal, agent in enumerate(agents):
            total += costs[agent, goal]
        match = tuple(sorted((agent, goal) for goal, agent in enumerate(agents)))
        if total < best_total - 1e-12 or (
            abs(total - best_total) <= 1e-12
            and (best_match is None or match < best_match)
        ):
            best_total = total
            best_match = match
    return best_total, best_match
