"""Fast Marching Method distance fields and gradient-descent path extraction.

One propagation from a source yields the geodesic cost to every free cell,
which then serves every query against that map (costs to all goals, path
extraction) without re-propagating.
"""

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import kernels
from .world import GridMap

# Fixed neighbor ordering for descent tie-breaks: E, N, W, S, NE, NW, SW, SE.
_NEIGHBORS = ((1, 0), (0, 1), (-1, 0), (0, -1), (1, 1), (-1, 1), (-1, -1), (1, -1))


class UnreachableError(ValueError):
    """No path exists: the queried cell is not reachable from the source."""

    reason = "unreachable"


@dataclass(frozen=True)
class DistanceField:
    """Geodesic cost (meters) from ``source`` over one map's free space."""

    source: tuple[float, float]
    values: np.ndarray  # (H, W) float64, inf on occupied/unreachable cells
    map_stamp: int  # uid of the GridMap the field was computed on
    resolution: float
    source_cell: tuple[int, int] = field(default=(0, 0))

    def value_at(self, p) -> float:
        x = int(math.floor(p[0] / self.resolution))
        y = int(math.floor(p[1] / self.resolution))
        h, w = self.values.shape
        if not (0 <= x < w and 0 <= y < h):
            return math.inf
        return float(self.values[y, x])

    def reachable(self, p) -> bool:
        return math.isfinite(self.value_at(p))


def propagate(grid: GridMap, source) -> DistanceField:
    """Solve the unit-speed Eikonal equation from the source cell.

    First-order upwind updates over the 8-neighborhood with a deterministic
    min-priority frontier; occupied cells stay infinite.
    """
    sx, sy = grid.cell_of(source)
    if not (0 <= sx < grid.width and 0 <= sy < grid.height):
        raise ValueError(f"source {source} outside grid bounds")
    if grid.cells[sy, sx] != kernels.FREE:
        raise ValueError(f"source {source} lies on an occupied cell")
    dist = kernels.fmm_propagate(
        grid.flat(), grid.height, grid.width, sy * grid.width + sx, grid.resolution
    )
    return DistanceField(
        source=(float(source[0]), float(source[1])),
        values=dist.reshape(grid.height, grid.width),
        map_stamp=grid.uid,
        resolution=grid.resolution,
        source_cell=(sx, sy),
    )


def extract_path(dfield: DistanceField, start) -> list[tuple[float, float]]:
    """Descend the field from ``start`` to the source.

    Returns waypoints from start to source; field values strictly decrease
    along the way and consecutive waypoints are at most one cell diagonal
    apart. Raises UnreachableError when start has no finite value.
    """
    res = dfield.resolution
    values = dfield.values
    h, w = values.shape
    x = int(math.floor(start[0] / res))
    y = int(math.floor(start[1] / res))
    if not (0 <= x < w and 0 <= y < h) or not math.isfinite(values[y, x]):
        raise UnreachableError(f"cell of {start} unreachable from {dfield.source}")
    sx, sy = dfield.source_cell
    cells = [(x, y)]
    while (x, y) != (sx, sy):
        best = values[y, x]
        bx, by = x, y
        for dx, dy in _NEIGHBORS:
            nx, ny = x + dx, y + dy
            if 0 <= nx < w and 0 <= ny < h and values[ny, nx] < best:
                best = values[ny, nx]
                bx, by = nx, ny
        if (bx, by) == (x, y):  # cannot happen on a consistent field
            raise UnreachableError(f"descent stuck at cell {(x, y)}")
        x, y = bx, by
        cells.append((x, y))
    start_pt = (float(start[0]), float(start[1]))
    if len(cells) == 1:
        if start_pt == dfield.source:
            return [start_pt]
        return [start_pt, dfield.source]
    pts = [start_pt]
    for cx, cy in cells[1:-1]:
        pts.append(((cx + 0.5) * res, (cy + 0.5) * res))
    pts.append(dfield.source)
    return pts


def path_cost(path) -> float:
    """Sum of Euclidean segment lengths along the waypoint list."""
    if len(path) == 0:
        raise ValueError("empty path")
    total = 0.0
    for (x0, y0), (x1, y1) in zip(path, path[1:]):
        dx = x1 - x0
        dy = y1 - y0
        total += math.sqrt(dx * dx + dy * dy)
    return total


def dump_field_csv(dfield: DistanceField, path):
    """Debug dump: row-major CSV matrix, 'inf' for unreachable cells."""
    with open(path, "w", encoding="utf-8") as fh:
        for row in dfield.values:
            fh.write(",".join("inf" if not math.isfinite(v) else repr(v) for v in row))
            fh.write("\n")


class FieldCache:
    """Per-trial memo of propagations keyed by (map uid, source cell).

    GridMaps are immutable, so a uid fully identifies cell contents and a
    cached field never goes stale.
    """

    def __init__(self, max_entries: int = 4096):
        self._store: dict[tuple[int, int, int], DistanceField] = {}
        self._max = max_entries
        self.hits = 0
        self.misses = 0

    def field(self, grid: GridMap, source) -> DistanceField:
        sx, sy = grid.cell_of(source)
        key = (grid.uid, sx, sy)
        cached = self._store.get(key)
        if cached is None:
            self.misses += 1
            cached = propagate(grid, source)
            if len(self._store) >= self._max:
                self._store.clear()
            self._store[key] = cached
        else:
            self.hits += 1
        src = (float(source[0]), float(source[1]))
        if cached.source != src:
            # Same cell, different exact point: values are shared, but path
            # extraction must terminate at the exact query coordinate.
            cached = replace(cached, source=src)
        return cached
