"""Occupancy-grid world model.

Holds the ground-truth map and the per-group believed maps (same type), plus
the operations every planner builds on: map mutation, line of sight, sensing
updates, the communication graph and group partitioning.

Grid convention: cell (x, y) covers the square [x*res, (x+1)*res) meters;
scenario coordinates name cells, and the simulator places points at cell
centers. Map text files list row y=0 first.
"""

import itertools
from dataclasses import dataclass

import numpy as np

from . import kernels
from .kernels import FREE, OCCUPIED

_uids = itertools.count(1)


class MapFormatError(ValueError):
    """Raised on malformed map or scenario input."""


@dataclass(frozen=True, order=True)
class Rect:
    """Inclusive cell rectangle [x0..x1] x [y0..y1]."""

    x0: int
    y0: int
    x1: int
    y1: int

    def __post_init__(self):
        if self.x1 < self.x0 or self.y1 < self.y0:
            raise ValueError(f"degenerate rect {self}")

    def contains_cell(self, x: int, y: int) -> bool:
        return self.x0 <= x <= self.x1 and self.y0 <= y <= self.y1

    def cells(self):
        for y in range(self.y0, self.y1 + 1):
            for x in range(self.x0, self.x1 + 1):
                yield x, y


@dataclass(frozen=True)
class Door:
    id: str
    region: Rect
    open: bool


@dataclass(frozen=True)
class ScenarioChange:
    """A timed environment event: door toggle or obstacle appearance."""

    kind: str  # door_close | door_open | obstacle_add
    target: "str | Rect"
    trigger_time: float

    KINDS = ("door_close", "door_open", "obstacle_add")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ValueError(f"unknown change kind {self.kind!r}")
        if self.kind == "obstacle_add" and not isinstance(self.target, Rect):
            raise ValueError("obstacle_add target must be a Rect")
        if self.kind != "obstacle_add" and not isinstance(self.target, str):
            raise ValueError("door change target must be a door id")


class GridMap:
    """Immutable occupancy grid with named door regions and added obstacles.

    A cell is occupied iff it is a static wall, inside a closed door region
    or inside an added obstacle region. Mutating operations return new maps;
    ``uid`` identifies the cell contents, so planners can cache by it.
    """

    __slots__ = ("width", "height", "resolution", "walls", "doors", "obstacles",
                 "cells", "uid")

    def __init__(self, walls, doors=(), obstacles=(), resolution=1.0, _cells=None):
        walls = np.ascontiguousarray(walls, dtype=np.uint8)
        if walls.ndim != 2:
            raise ValueError("walls must be a 2-D array")
        self.height, self.width = walls.shape
        self.resolution = float(resolution)
        walls.setflags(write=False)
        self.walls = walls
        self.doors = tuple(doors)
        self.obstacles = tuple(obstacles)
        seen = set()
        for door in self.doors:
            if door.id in seen:
                raise MapFormatError(f"duplicate door id {door.id!r}")
            seen.add(door.id)
            self._check_region(door.region, f"door {door.id}")
        for rect in self.obstacles:
            self._check_region(rect, "obstacle")
        if _cells is None:
            _cells = self._recompute_cells()
        _cells.setflags(write=False)
        self.cells = _cells
        self.uid = next(_uids)

    def __getstate__(self):
        return (self.walls, self.doors, self.obstacles, self.resolution, self.cells)

    def __setstate__(self, state):
        walls, doors, obstacles, resolution, cells = state
        # uid is only unique within a process: unpickled copies take a fresh
        # one so planner caches in worker processes can never collide
        self.__init__(walls, doors, obstacles, resolution, _cells=cells.copy())

    def _check_region(self, rect: Rect, what: str):
        if not (0 <= rect.x0 and rect.x1 < self.width
                and 0 <= rect.y0 and rect.y1 < self.height):
            raise MapFormatError(f"{what} region {rect} outside grid bounds")

    def _recompute_cells(self):
        cells = self.walls.copy()
        for door in self.doors:
            if not door.open:
                cells[door.region.y0:door.region.y1 + 1,
                      door.region.x0:door.region.x1 + 1] = OCCUPIED
        for rect in self.obstacles:
            cells[rect.y0:rect.y1 + 1, rect.x0:rect.x1 + 1] = OCCUPIED
        return cells

    # -- coordinate helpers -------------------------------------------------

    def cell_of(self, p) -> tuple[int, int]:
        x = int(np.floor(p[0] / self.resolution))
        y = int(np.floor(p[1] / self.resolution))
        return x, y

    def cell_center(self, x: int, y: int) -> tuple[float, float]:
        return (x + 0.5) * self.resolution, (y + 0.5) * self.resolution

    def in_bounds(self, p) -> bool:
        x, y = self.cell_of(p)
        return 0 <= x < self.width and 0 <= y < self.height

    def is_free(self, p) -> bool:
        x, y = self.cell_of(p)
        if not (0 <= x < self.width and 0 <= y < self.height):
            return False
        return self.cells[y, x] == FREE

    def flat(self):
        return self.cells.reshape(-1)

    def free_cell_indices(self):
        return np.flatnonzero(self.flat() == FREE)

    # -- functional updates -------------------------------------------------

    def door(self, door_id: str) -> Door:
        for door in self.doors:
            if door.id == door_id:
                return door
        raise KeyError(f"unknown door id {door_id!r}")

    def with_door_state(self, door_id: str, open_: bool) -> "GridMap":
        current = self.door(door_id)
        if current.open == open_:
            return self
        doors = tuple(
            Door(d.id, d.region, open_) if d.id == door_id else d for d in self.doors
        )
        return GridMap(self.walls, doors, self.obstacles, self.resolution)

    def with_obstacle(self, rect: Rect) -> "GridMap":
        return GridMap(self.walls, self.doors, self.obstacles + (rect,),
                       self.resolution)

    def with_cells(self, cells) -> "GridMap":
        """Belief-map update: replace the occupancy overlay only.

        The door/obstacle source lists keep describing the map this belief
        was forked from; occupancy recomputability holds for source-derived
        maps (ground truth), not for sensed beliefs.
        """
        cells = np.ascontiguousarray(cells, dtype=np.uint8)
        if cells.shape != self.cells.shape:
            raise ValueError("cell array shape mismatch")
        return GridMap(self.walls, self.doors, self.obstacles, self.resolution,
                       _cells=cells)

    def same_cells(self, other: "GridMap") -> bool:
        return self.cells.shape == other.cells.shape and bool(
            np.array_equal(self.cells, other.cells)
        )


@dataclass
class AgentState:
    """One robot: continuous position, current group and behavioural mode."""

    id: int
    position: tuple[float, float]
    group_id: int = 0
    mode: str = "deploying"  # deploying|intercepting|trapped_explore|waiting|done


@dataclass
class Group:
    """A maximal set of mutually connected agents.

    ``believed_map`` and ``attributed_maps`` are attached by the coordination
    layer; partitioning alone only fixes identity and membership.
    """

    id: int
    members: tuple[int, ...]
    believed_map: "GridMap | None" = None
    attributed_maps: dict | None = None
    chain_rank: "int | None" = None


# -- operations --------------------------------------------------------------


def line_of_sight(grid: GridMap, p, q) -> bool:
    """True iff the straight segment p->q crosses no occupied cell.

    Conservative traversal over every cell the segment passes through; a
    lattice-corner crossing pinched between two occupied cells blocks sight
    (no corner-cutting through diagonal gaps). Symmetric in p and q.
    """
    if not (grid.in_bounds(p) and grid.in_bounds(q)):
        raise ValueError(f"line_of_sight endpoint outside grid: {p}, {q}")
    return bool(
        kernels.segment_clear(
            grid.flat(), grid.height, grid.width,
            float(p[0]), float(p[1]), float(q[0]), float(q[1]), grid.resolution,
        )
    )


def apply_change(grid: GridMap, change: ScenarioChange) -> GridMap:
    """Return the map with one scenario change applied."""
    if change.kind == "door_close":
        return grid.with_door_state(change.target, False)
    if change.kind == "door_open":
        return grid.with_door_state(change.target, True)
    return grid.with_obstacle(change.target)


def observed_cells(truth: GridMap, belief: GridMap, observer, v_range: float,
                   occlusion: bool = True) -> np.ndarray:
    """Flat indices of cells the observer would newly learn from truth.

    Only cells whose value differs between truth and belief can change, so
    the ray casting is restricted to that (small) set.
    """
    diff = np.flatnonzero(truth.flat() != belief.flat())
    if diff.size == 0:
        return diff
    w = truth.width
    res = truth.resolution
    cx = (diff % w + 0.5) * res
    cy = (diff // w + 0.5) * res
    dx = cx - observer[0]
    dy = cy - observer[1]
    near = diff[dx * dx + dy * dy <= v_range * v_range]
    if near.size == 0:
        return near
    out = np.zeros(near.size, np.bool_)
    kernels.visible_cells(
        truth.flat(), truth.height, truth.width,
        float(observer[0]), float(observer[1]),
        near.astype(np.int64), out, float(v_range), res, occlusion,
    )
    return near[out]


def observe(truth: GridMap, belief: GridMap, observer, v_range: float,
            occlusion: bool = True) -> tuple[GridMap, bool]:
    """Copy every sensed cell from truth into belief.

    A cell is sensed when its center is within v_range of the observer and,
    with occlusion on, there is line of sight to it through truth's free
    space (the sensed cell itself may be occupied). Returns the updated
    belief and whether any cell changed.
    """
    if not truth.is_free(observer):
        raise ValueError(f"observer {observer} not on a free cell of truth")
    learned = observed_cells(truth, belief, observer, v_range, occlusion)
    if learned.size == 0:
        return belief, False
    cells = belief.cells.copy().reshape(-1)
    cells[learned] = truth.flat()[learned]
    return belief.with_cells(cells.reshape(belief.cells.shape)), True


def comm_graph(positions, grid: GridMap, c_range: float) -> np.ndarray:
    """Undirected adjacency over the given nodes (agents and base alike).

    Edge iff Euclidean distance <= c_range and line of sight on the map.
    """
    n = len(positions)
    adj = np.zeros((n, n), np.bool_)
    for i in range(n):
        for j in range(i + 1, n):
            dx = positions[i][0] - positions[j][0]
            dy = positions[i][1] - positions[j][1]
            if dx * dx + dy * dy <= c_range * c_range and line_of_sight(
                grid, positions[i], positions[j]
            ):
                adj[i, j] = adj[j, i] = True
    return adj


def connected_components(adj: np.ndarray) -> list[list[int]]:
    """Components of an adjacency matrix, each sorted, ordered by least node."""
    n = adj.shape[0]
    seen = [False] * n
    comps = []
    for start in range(n):
        if seen[start]:
            continue
        stack = [start]
        seen[start] = True
        comp = []
        while stack:
            u = stack.pop()
            comp.append(u)
            for v in np.flatnonzero(adj[u]):
                if not seen[v]:
                    seen[v] = True
                    stack.append(int(v))
        comps.append(sorted(comp))
    comps.sort(key=lambda c: c[0])
    return comps


def connected_groups(agents, grid: GridMap, c_range: float) -> list[Group]:
    """Partition agents into groups via the agent-only communication graph.

    The base station never enters membership. Group id is the lowest member
    agent id, which makes the partition deterministic.
    """
    positions = [a.position for a in agents]
    ids = [a.id for a in agents]
    adj = comm_graph(positions, grid, c_range)
    groups = []
    for comp in connected_components(adj):
        members = tuple(sorted(ids[i] for i in comp))
        groups.append(Group(id=members[0], members=members))
    groups.sort(key=lambda g: g.id)
    return groups


# -- map text format ---------------------------------------------------------


def parse_map(text: str) -> GridMap:
    """Parse the map text format.

    Header ``width height resolution``; then ``height`` rows of ``.``/``#``
    (row y=0 first); then lines ``door <id> <x0> <y0> <x1> <y1> <open|closed>``.
    Door regions must not overlap static walls.
    """
    lines = [ln.rstrip("\n") for ln in text.splitlines()]
    if not lines:
        raise MapFormatError("empty map file")
    header = lines[0].split()
    if len(header) != 3:
        raise MapFormatError(f"line 1: expected 'width height resolution', got {lines[0]!r}")
    try:
        width, height = int(header[0]), int(header[1])
        resolution = float(header[2])
    except ValueError as exc:
        raise MapFormatError(f"line 1: {exc}") from None
    if len(lines) < 1 + height:
        raise MapFormatError(f"expected {height} grid rows, found {len(lines) - 1}")
    walls = np.zeros((height, width), np.uint8)
    for y in range(height):
        row = lines[1 + y]
        if len(row) != width:
            raise MapFormatError(f"line {2 + y}: row has {len(row)} cells, expected {width}")
        for x, ch in enumerate(row):
            if ch == "#":
                walls[y, x] = OCCUPIED
            elif ch != ".":
                raise MapFormatError(f"line {2 + y}: bad cell char {ch!r}")
    doors = []
    for i, ln in enumerate(lines[1 + height:], start=2 + height):
        if not ln.strip():
            continue
        parts = ln.split()
        if parts[0] != "door" or len(parts) != 7:
            raise MapFormatError(f"line {i}: expected 'door id x0 y0 x1 y1 state'")
        try:
            rect = Rect(int(parts[2]), int(parts[3]), int(parts[4]), int(parts[5]))
        except ValueError as exc:
            raise MapFormatError(f"line {i}: {exc}") from None
        state = parts[6]
        if state not in ("open", "closed"):
            raise MapFormatError(f"line {i}: bad door state {state!r}")
        doors.append(Door(parts[1], rect, state == "open"))
    grid = GridMap(walls, doors, resolution=resolution)
    for door in doors:
        region = door.region
        if np.any(grid.walls[region.y0:region.y1 + 1, region.x0:region.x1 + 1]):
            raise MapFormatError(f"door {door.id} overlaps a static wall")
    return grid


def format_map(grid: GridMap) -> str:
    """Inverse of parse_map (static walls and door declarations only)."""
    out = [f"{grid.width} {grid.height} {grid.resolution:g}"]
    for y in range(grid.height):
        out.append("".join("#" if grid.walls[y, x] else "." for x in range(grid.width)))
    for door in grid.doors:
        r = door.region
        state = "open" if door.open else "closed"
        out.append(f"door {door.id} {r.x0} {r.y0} {r.x1} {r.y1} {state}")
    return "\n".join(out) + "\n"


def load_map(path) -> GridMap:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_map(fh.read())


def save_map(grid: GridMap, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(format_map(grid))
