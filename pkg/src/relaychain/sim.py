"""Deterministic discrete-time trial engine and batch harness.

One trial runs a team of point robots on a ground-truth map that mutates at
a scripted change time, under one of three strategies:

* full   - omniscient baseline: replan on the true map whenever it changes.
* search - a searcher group collects the waiting groups one by one, then the
           unified team forms the chain.
* pred   - the prediction-based distributed planner (coordination module).

Everything is a pure function of (map, scenario, config): identical inputs
give byte-identical traces.
"""

import csv
import json
import math
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import chain as chain_mod
from . import coordination as coord
from . import fmm, kernels, world
from .assignment import InfeasibleAssignmentError, bottleneck_assignment
from .coordination import AgentDirective, Belief, GroupView, PathWalker
from .world import AgentState, GridMap, Rect, ScenarioChange

OUTCOME_CHAIN_FORMED = "chain_formed"
OUTCOME_INFEASIBLE = "infeasible"
OUTCOME_TIMEOUT = "timeout"
OUTCOME_CYCLE = "cycle_detected"

STRATEGIES = ("full", "search", "pred")


@dataclass(frozen=True)
class SimConfig:
    """All trial parameters. Coordinates are grid cells (the engine places
    points at cell centers)."""

    v_range: float = 30.0
    c_range: float = 30.0
    speed: float = 2.0
    dt: float = 0.25
    x_base: tuple = (5, 5)
    x_goal: tuple = (80, 80)
    n_agents: int = 7
    timeout: float = 600.0
    seed: int = 0
    strategy: str = "pred"
    sense_occlusion: bool = True
    cycle_fix: bool = False
    relay_safety: float = chain_mod.DEFAULT_RELAY_SAFETY
    replan_interval: float = 1.0
    cycle_window: int = 3
    # scenario generator knobs
    n_door_close: int = 3
    n_door_open: int = 5
    n_obstacles: int = 5
    obstacle_side: tuple = (2, 8)
    change_window: tuple = (20.0, 60.0)

    def __post_init__(self):
        if min(self.v_range, self.c_range, self.speed, self.dt) <= 0:
            raise ValueError("ranges, speed and dt must be positive")
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}")

    def validate_against(self, grid: GridMap):
        diag = grid.resolution * math.sqrt(2.0)
        if self.dt * self.speed >= diag:
            raise ValueError(
                f"dt*speed = {self.dt * self.speed} must stay below one cell "
                f"diagonal ({diag}) to rule out tunneling"
            )


@dataclass
class Scenario:
    x_base: tuple
    x_goal: tuple
    agent_starts: list
    changes: list

    @property
    def change_time(self) -> float:
        if not self.changes:
            return 0.0
        return min(c.trigger_time for c in self.changes)

    def to_json(self) -> dict:
        out = {
            "x_base": list(self.x_base),
            "x_goal": list(self.x_goal),
            "agents": [list(p) for p in self.agent_starts],
            "changes": [],
        }
        for c in self.changes:
            rec = {"kind": c.kind, "time": c.trigger_time}
            if c.kind == "obstacle_add":
                rec["region"] = [c.target.x0, c.target.y0, c.target.x1, c.target.y1]
            else:
                rec["door"] = c.target
            out["changes"].append(rec)
        return out

    @classmethod
    def from_json(cls, data: dict) -> "Scenario":
        changes = []
        for rec in data.get("changes", []):
            if rec["kind"] == "obstacle_add":
                r = rec["region"]
                target = Rect(int(r[0]), int(r[1]), int(r[2]), int(r[3]))
            else:
                target = rec["door"]
            changes.append(ScenarioChange(rec["kind"], target, float(rec["time"])))
        return cls(
            x_base=tuple(data["x_base"]),
            x_goal=tuple(data["x_goal"]),
            agent_starts=[tuple(p) for p in data["agents"]],
            changes=changes,
        )


def load_scenario(path) -> Scenario:
    with open(path, "r", encoding="utf-8") as fh:
        return Scenario.from_json(json.load(fh))


def save_scenario(scenario: Scenario, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(scenario.to_json(), fh, indent=2)
        fh.write("\n")


def generate_scenario(rng: np.random.Generator, grid: GridMap,
                      config: SimConfig) -> Scenario:
    """Random trial: agent starts plus one wave of door/obstacle changes.

    Draw order is fixed, so one seed reproduces one scenario exactly.
    """
    open_doors = [d.id for d in grid.doors if d.open]
    closed_doors = [d.id for d in grid.doors if not d.open]
    if len(open_doors) < config.n_door_close:
        raise ValueError(
            f"map has {len(open_doors)} closable doors, need {config.n_door_close}"
        )
    if len(closed_doors) < config.n_door_open:
        raise ValueError(
            f"map has {len(closed_doors)} openable doors, need {config.n_door_open}"
        )
    free = grid.free_cell_indices()
    starts_idx = rng.choice(free, size=config.n_agents, replace=False)
    starts = [(int(i % grid.width), int(i // grid.width)) for i in starts_idx]

    lo, hi = config.change_window
    change_time = float(lo + (hi - lo) * rng.random())
    change_time = round(change_time / config.dt) * config.dt

    changes = []
    for door_id in rng.choice(open_doors, size=config.n_door_close, replace=False):
        changes.append(ScenarioChange("door_close", str(door_id), change_time))
    base_cell = tuple(config.x_base)
    goal_cell = tuple(config.x_goal)
    lo_s, hi_s = config.obstacle_side
    added = 0
    while added < config.n_obstacles:
        wx = int(rng.integers(lo_s, hi_s + 1))
        wy = int(rng.integers(lo_s, hi_s + 1))
        x0 = int(rng.integers(1, grid.width - wx - 1))
        y0 = int(rng.integers(1, grid.height - wy - 1))
        rect = Rect(x0, y0, x0 + wx - 1, y0 + wy - 1)
        if rect.contains_cell(*base_cell) or rect.contains_cell(*goal_cell):
            continue
        changes.append(ScenarioChange("obstacle_add", rect, change_time))
        added += 1
    for door_id in rng.choice(closed_doors, size=config.n_door_open, replace=False):
        changes.append(ScenarioChange("door_open", str(door_id), change_time))
    return Scenario(base_cell, goal_cell, starts, changes)


@dataclass
class TickSnapshot:
    t: float
    positions: list
    modes: list
    groups: list
    events: list


@dataclass
class TrialRecord:
    seed: int
    strategy: str
    change_time: float
    ticks: list = field(default_factory=list)
    outcome: str = OUTCOME_TIMEOUT
    outcome_reason: str = ""
    reconnect_time: "float | None" = None
    mission_time: "float | None" = None
    total_distance: float = 0.0
    initial_groups: "int | None" = None
    max_groups: "int | None" = None
    final_groups: "int | None" = None

    def metrics(self) -> dict:
        return {
            "reconnect_time": self.reconnect_time,
            "mission_time": self.mission_time,
            "total_distance": self.total_distance,
            "initial_groups": self.initial_groups,
            "max_groups": self.max_groups,
            "final_groups": self.final_groups,
        }


def compute_metrics(record: TrialRecord) -> dict:
    """Recompute the trial metrics from the recorded tick history.

    Times count from the change time; metrics that never happened (for
    example mission time of an infeasible trial) stay None, never zero.
    """
    change_time = record.change_time
    reconnect = None
    mission = None
    distance = 0.0
    initial = None
    max_groups = None
    final = None
    prev = None
    for snap in record.ticks:
        if prev is not None:
            for (x0, y0), (x1, y1) in zip(prev, snap.positions):
                distance += math.hypot(x1 - x0, y1 - y0)
        prev = snap.positions
        if snap.t >= change_time:
            n = len(snap.groups)
            if initial is None:
                initial = n
            max_groups = n if max_groups is None else max(max_groups, n)
            final = n
            if reconnect is None and n == 1:
                reconnect = snap.t - change_time
            if mission is None and "chain_formed" in snap.events:
                mission = snap.t - change_time
    return {
        "reconnect_time": reconnect,
        "mission_time": mission,
        "total_distance": distance,
        "initial_groups": initial,
        "max_groups": max_groups,
        "final_groups": final,
    }


class CycleDetector:
    """Repetition detector over (quantized positions, partition) states.

    Reports a cycle when the state sequence since the last belief change
    repeats with minimal period >= 2 for cycle_window consecutive periods.
    Constant states (period 1) are waiting, not cycling.
    """

    def __init__(self, window: int):
        self.window = window
        self.history: list = []
        self.index: dict = {}

    def reset(self):
        self.history.clear()
        self.index.clear()

    def push(self, state) -> "int | None":
        self.history.append(state)
        t = len(self.history) - 1
        prior = self.index.setdefault(state, [])
        period = self._detect(t, prior)
        prior.append(t)
        return period

    def _detect(self, t, prior) -> "int | None":
        for p_idx in reversed(prior):  # smallest periods first
            p = t - p_idx
            if p < 1:
                continue
            span = self.window * p
            if t + 1 < span + p:
                continue
            ok = True
            for i in range(span):
                if self.history[t - i] != self.history[t - i - p]:
                    ok = False
                    break
            if ok:
                return p
        return None


def detect_cycle(record: TrialRecord, window: int = 3) -> bool:
    """Offline cycle check over a finished trial's tick history."""
    detector = CycleDetector(window)
    for snap in record.ticks:
        if "belief_changed" in snap.events or "map_changed" in snap.events:
            detector.reset()
        state = (
            tuple((int(math.floor(x)), int(math.floor(y))) for x, y in snap.positions),
            tuple(tuple(g) for g in snap.groups),
        )
        period = detector.push(state)
        if period is not None and period >= 2:
            return True
    return False


def _nearest_free_cell(grid: GridMap, cell):
    """Closest free cell by squared Euclidean distance, ties by flat index."""
    free = grid.free_cell_indices()
    w = grid.width
    cx = free % w
    cy = free // w
    d2 = (cx - cell[0]) ** 2 + (cy - cell[1]) ** 2
    order = np.lexsort((free, d2))
    idx = free[order[0]]
    return int(idx % w), int(idx // w)


def _region_crc(grid: GridMap, seed_cell) -> int:
    """Checksum of the free-space component containing seed_cell plus its
    wall boundary; used to decide whether a believed-sealed region changed."""
    h, w = grid.height, grid.width
    cells = grid.cells
    sx, sy = seed_cell
    if cells[sy, sx] != 0:
        return zlib.crc32(cells.tobytes()) & 0xFFFFFFFF
    seen = np.zeros((h, w), np.bool_)
    stack = [(sx, sy)]
    seen[sy, sx] = True
    xs_min = xs_max = sx
    ys_min = ys_max = sy
    while stack:
        x, y = stack.pop()
        xs_min, xs_max = min(xs_min, x), max(xs_max, x)
        ys_min, ys_max = min(ys_min, y), max(ys_max, y)
        for dx in (-1, 0, 1):
            for dy in (-1, 0, 1):
                nx, ny = x + dx, y + dy
                if 0 <= nx < w and 0 <= ny < h and not seen[ny, nx] \
                        and cells[ny, nx] == 0:
                    seen[ny, nx] = True
                    stack.append((nx, ny))
    x0, x1 = max(0, xs_min - 1), min(w - 1, xs_max + 1)
    y0, y1 = max(0, ys_min - 1), min(h - 1, ys_max + 1)
    block = np.ascontiguousarray(cells[y0:y1 + 1, x0:x1 + 1])
    return zlib.crc32(block.tobytes()) & 0xFFFFFFFF


@dataclass
class Exploration:
    """A member walking the boundary circuit of a believed-sealed region."""

    agent_id: int
    seed_cell: tuple
    directive: AgentDirective
    crc: int


@dataclass
class Verification:
    """A member traveling to look at a door whose believed state may be
    stale; the group only accepts an infeasibility verdict once every such
    door has been seen with current eyes."""

    agent_id: int
    door_id: str
    directive: AgentDirective


class _StrategyBase:
    """Shared machinery: belief upkeep, view reconciliation, movement,
    trapped-region exploration."""

    REPLAN_ON_MEMBERSHIP = False

    def __init__(self, sim: "Simulation"):
        self.sim = sim
        self.views: dict[int, GroupView] = {}
        self.pending_replan: set[int] = set()
        self.last_replan: dict[int, float] = {}
        self.explorations: dict[int, Exploration] = {}
        self.verifying: dict[int, Verification] = {}
        self.frozen_groups: set[int] = set()

    # -- view lifecycle ------------------------------------------------------

    def init_views(self, partition):
        sim = self.sim
        initial = Belief.initial(sim.initial_grid)
        for members in partition:
            view = GroupView(
                group=world.Group(id=members[0], members=members),
                belief=initial.copy(),
                attributed={
                    a.id: initial.copy()
                    for a in sim.agents if a.id not in members
                },
                believed_positions={a.id: a.position for a in sim.agents},
            )
            self.views[members[0]] = view
            self.pending_replan.add(members[0])

    def reconcile(self, partition):
        """Rebuild views after the real communication partition changed.

        Every new group is assembled from per-member fragments of the old
        views (split first, merge second). Merges of divergent information
        or of mispredicted member positions schedule a replan; splits keep
        executing the shared plan.
        """
        sim = self.sim
        old = self.views
        changed = False
        new_views = {}
        for members in partition:
            parents = []
            for view in old.values():
                inter = tuple(m for m in view.members if m in members)
                if inter:
                    parents.append((view, inter))
            parents.sort(key=lambda pv: pv[1][0])
            if len(parents) == 1 and parents[0][0].members == members:
                new_views[members[0]] = parents[0][0]
                continue
            changed = True
            fragments = []
            for view, inter in parents:
                frag = view if view.members == inter else coord.split_view(view, inter)
                fragments.append(frag)
            merged = fragments[0]
            base_plan = fragments[0].own_plan
            consistent = base_plan is not None and base_plan.feasible
            for frag in fragments[1:]:
                if not merged.belief.grid.same_cells(frag.belief.grid):
                    self.pending_replan.add(members[0])
                if consistent and not (
                    frag.own_plan is not None and frag.own_plan.equivalent(base_plan)
                ):
                    consistent = False
                merged = coord.merge_groups(merged, frag)
            if len(fragments) > 1:
                # snap members to their true positions; a mispredicted
                # teammate position is new information too. Contact is also
                # a fresh fix on everyone met, so none of them needs an
                # immediate presence check after the next split.
                for agent in sim.agents:
                    if agent.id in members:
                        prev = merged.believed_positions.get(agent.id)
                        if prev != agent.position:
                            self.pending_replan.add(members[0])
                        merged.ground_position(agent.id, agent.position, sim.t)
                        merged.mark_swept(agent.id, sim.t)
                if consistent:
                    # both sides were executing the same team plan already
                    merged.own_plan = base_plan
                else:
                    self.pending_replan.add(members[0])
            merged.group = world.Group(id=members[0], members=members)
            new_views[members[0]] = merged
            if self.REPLAN_ON_MEMBERSHIP:
                self.pending_replan.add(members[0])
        if changed:
            live = set(new_views)
            self.explorations = {g: e for g, e in self.explorations.items() if g in live}
            self.verifying = {g: v for g, v in self.verifying.items() if g in live}
            self.last_replan = {g: t for g, t in self.last_replan.items() if g in live}
            self.frozen_groups &= live
            self.pending_replan &= live | {m[0] for m in partition}
        self.views = new_views

    def sense(self) -> bool:
        """Update every view's belief from its member sensors."""
        sim = self.sim
        any_changed = False
        for gid in sorted(self.views):
            view = self.views[gid]
            observers = [sim.agent_by_id[m].position for m in view.members]
            for m in view.members:  # members share positions instantly
                view.ground_position(m, sim.agent_by_id[m].position, sim.t)
            changed = coord.update_information(
                view.belief, sim.truth, observers,
                sim.config.v_range, sim.config.sense_occlusion,
            )
            if changed:
                self.pending_replan.add(gid)
                any_changed = True
        return any_changed

    def may_replan(self, gid) -> bool:
        last = self.last_replan.get(gid)
        if last is None:
            return True
        return self.sim.t - last >= self.sim.config.replan_interval - 1e-9

    def move_members(self):
        """Advance every agent along its directive on the true map."""
        sim = self.sim
        substep = 0.25 * sim.truth.grid.resolution
        step = sim.config.speed * sim.config.dt
        for gid in sorted(self.views):
            view = self.views[gid]
            for aid in view.members:
                agent = sim.agent_by_id[aid]
                directive = view.directives.get(aid)
                if directive is None:
                    agent.mode = "waiting"
                    continue
                if directive.finished:
                    continue
                blocked, completed = directive.advance(step, sim.truth.grid,
                                                       substep, sim.t)
                if directive.walker is not None:
                    agent.position = directive.walker.pos
                elif directive.position is not None:
                    agent.position = directive.position
                if blocked:
                    self.pending_replan.add(gid)
                    sim.events.append(f"collision:{aid}")
                for kind in completed:
                    if kind in (coord.SEG_INTERCEPT_PARENT,
                                coord.SEG_INTERCEPT_DESCENDANT):
                        sim.events.append(f"intercept_over:{aid}")
                    elif kind == "sweep":
                        target = getattr(directive, "sweep_target", None)
                        if target is not None:
                            view.mark_swept(target, sim.t)
                            if isinstance(self, PredController):
                                self.verify_absence_at(gid, view, target)
                kind = directive.current_kind
                if kind in (coord.SEG_INTERCEPT_PARENT,
                            coord.SEG_INTERCEPT_DESCENDANT, "sweep"):
                    agent.mode = "intercepting"
                elif kind in ("trapped_explore", "verify_door"):
                    agent.mode = "trapped_explore"
                elif kind == coord.SEG_OWN_GOAL:
                    agent.mode = "deploying"
                elif directive.finished:
                    agent.mode = "done"

    # -- trapped-region exploration -------------------------------------------

    def _nearest_member(self, view: GroupView, target):
        best = None
        best_d = math.inf
        for aid in view.members:
            pos = self.sim.agent_by_id[aid].position
            d = math.hypot(pos[0] - target[0], pos[1] - target[1])
            if d < best_d:
                best_d = d
                best = aid
        return best

    @staticmethod
    def _blocked_access(grid: GridMap, target, from_pos):
        """Occupied cell on the blocked component's boundary nearest to the
        exploring agent."""
        h, w = grid.height, grid.width
        cells = grid.cells
        tx, ty = grid.cell_of(target)
        if cells[ty, tx] != 0:
            return grid.cell_center(tx, ty)
        seen = np.zeros((h, w), np.bool_)
        stack = [(tx, ty)]
        seen[ty, tx] = True
        boundary = set()
        while stack:
            x, y = stack.pop()
            for dx in (-1, 0, 1):
                for dy in (-1, 0, 1):
                    nx, ny = x + dx, y + dy
                    if not (0 <= nx < w and 0 <= ny < h) or seen[ny, nx]:
                        continue
                    if cells[ny, nx] == 0:
                        seen[ny, nx] = True
                        stack.append((nx, ny))
                    else:
                        boundary.add((nx, ny))
        if not boundary:
            return None
        fx, fy = grid.cell_of(from_pos)
        ordered = sorted(boundary,
                         key=lambda c: ((c[0] - fx) ** 2 + (c[1] - fy) ** 2, c[1], c[0]))
        return grid.cell_center(*ordered[0])

    def _start_exploration(self, gid, view: GroupView, target, seed, crc) -> bool:
        sim = self.sim
        grid = view.belief.grid
        explorer = self._nearest_member(view, target)
        if explorer is None:
            return False
        explorer_pos = sim.agent_by_id[explorer].position
        access = self._blocked_access(grid, target, explorer_pos)
        if access is None:
            return False
        try:
            circuit = coord.trapped_routine(explorer_pos, grid, access)
        except ValueError:
            return False
        if len(circuit) < 2:
            return False
        segments = []
        start = circuit[0]
        if grid.cell_of(explorer_pos) != grid.cell_of(start):
            try:
                dfield = sim.cache.field(grid, start)
                approach = fmm.extract_path(dfield, explorer_pos)
            except (ValueError, fmm.UnreachableError):
                return False
            segments.append(("trapped_explore", approach))
        segments.append(("trapped_explore", list(circuit)))
        directive = AgentDirective(agent_id=explorer, segments=segments)
        view.directives[explorer] = directive
        sim.agent_by_id[explorer].mode = "trapped_explore"
        sim.events.append(f"trapped_explore:{explorer}")
        self.explorations[gid] = Exploration(explorer, seed, directive, crc)
        return True

    # -- stale-door verification ------------------------------------------------

    def _suspect_doors(self, view: GroupView):
        """Doors believed closed whose cells were last seen before the
        group's newest information: their true state may have changed."""
        belief = view.belief
        newest = float(belief.obs_time.max())
        if newest <= 0.0:
            return []  # no changes witnessed at all: nothing is stale
        out = []
        for door in self.sim.initial_grid.doors:
            r = door.region
            region = belief.grid.cells[r.y0:r.y1 + 1, r.x0:r.x1 + 1]
            if not region.any():
                continue  # believed open: not limiting feasibility
            seen = float(belief.obs_time[r.y0:r.y1 + 1, r.x0:r.x1 + 1].max())
            if seen < newest:
                out.append(door)
        return out

    def _start_verification(self, gid, view: GroupView, door) -> bool:
        sim = self.sim
        r = door.region
        center = ((r.x0 + r.x1 + 1) / 2.0 * view.belief.grid.resolution,
                  (r.y0 + r.y1 + 1) / 2.0 * view.belief.grid.resolution)
        member = self._nearest_member(view, center)
        if member is None:
            return False
        try:
            seg = coord.intercept([center], sim.agent_by_id[member].position,
                                  view.belief.grid, sim.cache)
        except ValueError:
            return False
        directive = AgentDirective(agent_id=member,
                                   segments=[("verify_door", seg)])
        view.directives[member] = directive
        sim.agent_by_id[member].mode = "trapped_explore"
        sim.events.append(f"verify_door:{door.id}:{member}")
        self.verifying[gid] = Verification(member, door.id, directive)
        return True

    def _continue_verification(self, gid, view: GroupView) -> bool:
        """Stamp the door region once seen; finish when seen or unreachable."""
        ver = self.verifying.get(gid)
        if ver is None:
            return False
        sim = self.sim
        door = next(d for d in sim.initial_grid.doors if d.id == ver.door_id)
        r = door.region
        grid = view.belief.grid
        w = grid.width
        cells_idx = np.array(
            [y * w + x for x, y in door.region.cells()], np.int64
        )
        pos = sim.agent_by_id[ver.agent_id].position
        out = np.zeros(cells_idx.size, np.bool_)
        kernels.visible_cells(
            sim.truth.grid.flat(), grid.height, w,
            float(pos[0]), float(pos[1]), cells_idx, out,
            sim.config.v_range, grid.resolution, sim.config.sense_occlusion,
        )
        if out.any():
            # the member sees the door as it is now: its state is current
            flat_times = view.belief.obs_time.reshape(-1)
            flat_times[cells_idx[out]] = sim.t
            self.verifying.pop(gid, None)
            self.pending_replan.add(gid)
            sim.events.append(f"door_verified:{door.id}")
            return False
        if ver.directive.finished:
            # went as close as the map allows and still cannot see it:
            # treat the believed state as confirmed
            flat_times = view.belief.obs_time.reshape(-1)
            flat_times[cells_idx] = sim.t
            self.verifying.pop(gid, None)
            self.pending_replan.add(gid)
            sim.events.append(f"door_unverifiable:{door.id}")
            return False
        view.directives[ver.agent_id] = ver.directive
        sim.agent_by_id[ver.agent_id].mode = "trapped_explore"
        return True

    def _blocked_targets(self, view: GroupView):
        """Coordinates whose unreachability makes the plan infeasible."""
        targets = []
        if view.own_plan is None:
            return targets
        reason = view.own_plan.infeasibility_reason
        if reason == chain_mod.REASON_NO_CHAIN_PATH:
            targets.append(self.sim.goal_pt)
        elif reason == chain_mod.REASON_TOO_FEW_AGENTS:
            probe = self.sim.cache.field(
                view.belief.grid,
                view.believed_positions[view.members[0]],
            )
            for aid in sorted(view.believed_positions):
                if aid in view.members:
                    continue
                pos = view.believed_positions[aid]
                if not probe.reachable(pos):
                    targets.append(pos)
        return targets

    def _maintain_exploration(self, gid, view: GroupView) -> bool:
        """Keep a live exploration's directive installed across replans.

        Returns True while the exploration is still running (conclusion is
        deferred until the circuit finishes or the region changes).
        """
        ex = self.explorations.get(gid)
        if ex is None:
            return False
        crc_now = _region_crc(view.belief.grid, ex.seed_cell)
        if crc_now != ex.crc:
            # region changed under our senses: abandon, normal replanning
            self.explorations.pop(gid, None)
            self.pending_replan.add(gid)
            return False
        if ex.directive.finished:
            # full circuit, no opening: region confirmed sealed
            view.sealed_regions[ex.seed_cell] = crc_now
            self.explorations.pop(gid, None)
            self.pending_replan.add(gid)
            self.sim.events.append(f"region_sealed:{gid}")
            return False
        view.directives[ex.agent_id] = ex.directive
        self.sim.agent_by_id[ex.agent_id].mode = "trapped_explore"
        return True

    def _handle_infeasible(self, gid, view: GroupView):
        """Explore and verify before accepting an infeasibility verdict:
        first the boundary of any believed-sealed region, then every door
        whose believed state predates the group's newest information."""
        if self._maintain_exploration(gid, view):
            view.conclusion = None
            return
        for target in self._blocked_targets(view):
            seed = view.belief.grid.cell_of(target)
            crc = _region_crc(view.belief.grid, seed)
            if view.sealed_regions.get(seed) == crc:
                continue  # already confirmed sealed, nothing changed there
            if self._start_exploration(gid, view, target, seed, crc):
                view.conclusion = None
                return
        if self._continue_verification(gid, view):
            view.conclusion = None
            return
        suspects = self._suspect_doors(view)
        if suspects:
            anchor = self.sim.agent_by_id[view.members[0]].position
            suspects.sort(key=lambda d: (
                (d.region.x0 - anchor[0]) ** 2 + (d.region.y0 - anchor[1]) ** 2,
                d.id,
            ))
            if self._start_verification(gid, view, suspects[0]):
                view.conclusion = None
                return
        # nothing left to explore or verify: the conclusion stands

    # -- interface -------------------------------------------------------------

    def concluded_reason(self) -> "str | None":
        raise NotImplementedError

    def step(self):
        raise NotImplementedError

    def on_cycle(self, period_states):
        pass


class PredController(_StrategyBase):
    """Alg. 2/3 driven groups with trapped-region exploration and a
    presence sweep that reacts to neighbors failing to show up."""

    def step(self):
        sim = self.sim
        for gid in sorted(self.views):
            view = self.views[gid]
            if gid in self.frozen_groups:
                continue
            if gid in self.pending_replan and self.may_replan(gid):
                self.pending_replan.discard(gid)
                self.last_replan[gid] = sim.t
                view.intercepts_issued = 0
                sweeps = {}
                for aid, d in view.directives.items():
                    if d.current_kind != "sweep" or d.finished:
                        continue
                    target = getattr(d, "sweep_target", None)
                    if target in view.members:
                        # contact made: the fetch succeeded, note it so the
                        # next disconnection does not re-fetch immediately
                        view.mark_swept(target, sim.t)
                    else:
                        sweeps[aid] = d
                coord.group_plan(view, sim.base_pt, sim.goal_pt, sim.config,
                                 sim.cache, now=sim.t)
                # a sweep keeps running until it completes or its target has
                # actually been found
                view.directives.update(sweeps)
                sim.events.append(f"replan:{gid}")
                if view.intercepts_issued:
                    sim.events.append(f"intercept_issued:{gid}")
                if view.own_plan.feasible:
                    self.explorations.pop(gid, None)
                    self.verifying.pop(gid, None)
                else:
                    self._handle_infeasible(gid, view)
            else:
                if self._maintain_exploration(gid, view) or \
                        self._continue_verification(gid, view):
                    view.conclusion = None
                else:
                    self._presence_sweep(gid, view)
        # dead-reckon other groups' agents along predicted paths
        substep = 0.25 * sim.truth.grid.resolution
        step = sim.config.speed * sim.config.dt
        for gid in sorted(self.views):
            coord.advance_predictions(self.views[gid], step, substep)
        self.move_members()

    def verify_absence_at(self, gid, view: GroupView, aid):
        """A member stands at aid's believed spot and hears nothing: the
        belief is false. Fall back to the last grounded fix; if that is the
        spot just checked, the teammate is written off as lost."""
        sim = self.sim
        if aid is None or aid in view.members:
            return
        pos = view.believed_positions[aid]
        grounded = view.grounded_positions.get(aid, pos)
        if math.dist(grounded, pos) > 1.5 * sim.truth.grid.resolution:
            view.believed_positions[aid] = grounded
            view.predicted_paths.pop(aid, None)
            view.swept_marks.pop(aid, None)
            view.mark_pinned(aid)
            self.pending_replan.add(gid)
            sim.events.append(f"phantom_reverted:{aid}")
        else:
            view.mark_lost(aid)
            self.pending_replan.add(gid)
            sim.events.append(f"agent_lost:{aid}")

    def _presence_sweep(self, gid, view: GroupView):
        """All segments executed, all predictions arrived, yet the group is
        not linked to the base: a predicted neighbor is not where it should
        be. Send one member to the nearest absent teammate's believed spot;
        exhausting those, head for the base itself."""
        sim = self.sim
        if gid in self.pending_replan or not self.may_replan(gid):
            return
        if view.own_plan is None or not view.own_plan.feasible:
            return
        if any(not d.finished for d in view.directives.values()):
            return
        if any(not w.done and not w.blocked for w in view.predicted_paths.values()):
            return
        if len(view.members) == len(sim.agents):
            return  # whole team together: nothing to look for
        slots = {aid: i for i, aid in enumerate(sorted(view.believed_positions))}
        if all(view.own_plan.goal_of(slots[m]) is None for m in view.members):
            return  # every member excluded from the chain: hold position
        nodes = [sim.agent_by_id[m].position for m in sorted(view.members)]
        nodes.append(sim.base_pt)
        adj = world.comm_graph(nodes, sim.truth.grid, sim.config.c_range)
        comps = world.connected_components(adj)
        base_idx = len(nodes) - 1
        if any(base_idx in comp and len(comp) > 1 for comp in comps):
            return  # linked to the base: wait for the others to arrive
        base_field = sim.cache.field(view.belief.grid, sim.base_pt)
        absent = [aid for aid in sorted(view.believed_positions)
                  if aid not in view.members and not view.swept_valid(aid)
                  and not view.lost_valid(aid)]
        absent.sort(key=lambda aid: (
            base_field.value_at(view.believed_positions[aid]), aid,
        ))
        sweeper = None
        target_pos = None
        target_aid = None
        for aid in absent:
            pos = view.believed_positions[aid]
            member = self._nearest_member(view, pos)
            mpos = sim.agent_by_id[member].position
            if math.dist(mpos, pos) <= 3.0 * sim.truth.grid.resolution and \
                    world.line_of_sight(sim.truth.grid, mpos, pos):
                # someone is practically standing there: verified absent
                view.mark_swept(aid, sim.t)
                self.verify_absence_at(gid, view, aid)
                continue
            sweeper, target_pos, target_aid = member, pos, aid
            break
        if sweeper is None:
            sweeper = self._nearest_member(view, sim.base_pt)
            target_pos = sim.base_pt
        try:
            seg = coord.intercept([target_pos], sim.agent_by_id[sweeper].position,
                                  view.belief.grid, sim.cache)
        except ValueError:
            return
        if len(seg) < 2:
            return
        segments = [("sweep", seg)]
        own_goal = view.own_plan.goal_of(slots[sweeper])
        if target_aid is not None and own_goal is not None \
                and tuple(seg[-1]) != tuple(own_goal):
            # resume the chain post after the detour; the walk to the base
            # itself ends there (arriving restores the base link)
            try:
                gfield = sim.cache.field(view.belief.grid, own_goal)
                back = fmm.extract_path(gfield, seg[-1])
                segments.append((coord.SEG_OWN_GOAL, back))
            except (ValueError, fmm.UnreachableError):
                pass
        directive = AgentDirective(agent_id=sweeper, segments=segments)
        directive.sweep_target = target_aid  # marked once the walk completes
        view.directives[sweeper] = directive
        sim.agent_by_id[sweeper].mode = "intercepting"
        self.last_replan[gid] = sim.t
        sim.events.append(f"presence_sweep:{sweeper}")

    def concluded_reason(self) -> "str | None":
        reasons = []
        for gid in sorted(self.views):
            view = self.views[gid]
            if gid in self.explorations or gid in self.verifying:
                return None
            if view.conclusion is None:
                return None
            reasons.append(view.conclusion)
        return reasons[0] if reasons else None

    def on_cycle(self, period_states):
        """cycle_fix remedy: freeze the plan of the lowest-ranked moving
        group, force the others to chase its members."""
        moving = self._moving_groups(period_states)
        if len(moving) < 2:
            return
        sim = self.sim
        ranked = sorted(moving, key=lambda g: (self._base_distance(self.views[g]), g))
        frozen = ranked[0]
        self.frozen_groups.add(frozen)
        sim.events.append(f"cycle_fix_freeze:{frozen}")
        frozen_view = self.views[frozen]
        for gid in ranked[1:]:
            view = self.views[gid]
            for aid in view.members:
                me = sim.agent_by_id[aid].position
                targets = [frozen_view.believed_positions[m]
                           for m in frozen_view.members]
                nearest = min(
                    targets,
                    key=lambda p: (p[0] - me[0]) ** 2 + (p[1] - me[1]) ** 2,
                )
                try:
                    seg = coord.intercept([nearest], me, view.belief.grid,
                                          sim.cache)
                except ValueError:
                    continue
                view.directives[aid] = AgentDirective(
                    agent_id=aid, segments=[(coord.SEG_INTERCEPT_PARENT, seg)]
                )
            self.last_replan[gid] = sim.t
            self.pending_replan.discard(gid)

    def _moving_groups(self, period_states):
        moved = set()
        first = period_states[0][0]
        for positions, _ in period_states[1:]:
            for i, cell in enumerate(positions):
                if cell != first[i]:
                    moved.add(i + 1)  # agent ids are 1-based
        out = set()
        for gid, view in self.views.items():
            if moved & set(view.members):
                out.add(gid)
        return out

    def _base_distance(self, view: GroupView) -> float:
        f = self.sim.cache.field(view.belief.grid, self.sim.base_pt)
        vals = [f.value_at(view.believed_positions[m]) for m in view.members]
        best = min(vals)
        return best if math.isfinite(best) else 1e18


class FullController(_StrategyBase):
    """Omniscient baseline: plans on the true map, refreshed on change.

    On a map change it keeps the plan in progress whenever that plan still
    works in the changed world and would finish no later than a fresh
    minimum-distance plan; full knowledge should never finish later for
    having replanned.
    """

    def __init__(self, sim):
        super().__init__(sim)
        self.plan: "chain_mod.TeamPlan | None" = None
        self.directives: dict[int, AgentDirective] = {}
        self.needs_plan = True
        self.reason: "str | None" = None

    def init_views(self, partition):
        pass

    def sense(self) -> bool:
        return False

    def reconcile(self, partition):
        pass

    def on_map_change(self):
        self.needs_plan = True

    def _current_plan_valid(self) -> bool:
        """Current chain and remaining routes still work on the new truth."""
        if self.plan is None or not self.plan.feasible or not self.directives:
            return False
        grid = self.sim.truth.grid
        nodes = [self.sim.base_pt] + [tuple(g) for g in self.plan.local_goals]
        eff = self.sim.config.c_range * self.sim.config.relay_safety
        for a, b in zip(nodes, nodes[1:]):
            if math.dist(a, b) > eff + 1e-9 or not world.line_of_sight(grid, a, b):
                return False
        for directive in self.directives.values():
            pts = directive.remaining_waypoints()
            for p in pts:
                if not grid.is_free(p):
                    return False
        return True

    def _mission_eta(self, paths) -> float:
        """Exact first-connectivity time of a candidate: roll the waypoint
        lists forward on the known truth and test the chain predicate."""
        sim = self.sim
        walkers = []
        for i, agent in enumerate(sim.agents):
            pts = paths.get(agent.id) or [agent.position]
            walkers.append(PathWalker(list(pts), pos=agent.position))
        step = sim.config.speed * sim.config.dt
        substep = 0.25 * sim.truth.grid.resolution
        grid = sim.truth.grid
        horizon = int((sim.config.timeout - sim.t) / sim.config.dt) + 1
        positions = [w.pos for w in walkers]
        if sim.chain_formed_at(positions):
            return 0.0
        for k in range(1, horizon + 1):
            moved = False
            for w in walkers:
                if not w.done:
                    w.advance(step, grid, substep)
                    moved = True
            positions = [w.pos for w in walkers]
            if sim.chain_formed_at(positions):
                return k * sim.config.dt
            if not moved:
                return math.inf
        return math.inf

    def _bottleneck_variant(self, fresh, positions):
        """Same relay goals as the fresh plan, but allocated to minimize the
        slowest robot's travel instead of the summed travel."""
        sim = self.sim
        grid = sim.truth.grid
        fields = [sim.cache.field(grid, g) for g in fresh.local_goals]
        costs = np.full((len(positions), len(fields)), np.inf)
        for i, pos in enumerate(positions):
            for k, gf in enumerate(fields):
                costs[i, k] = gf.value_at(pos)
        try:
            alloc = bottleneck_assignment(costs)
        except InfeasibleAssignmentError:
            return None
        plan = chain_mod.TeamPlan(
            chain_path=fresh.chain_path,
            local_goals=list(fresh.local_goals),
            allocation=alloc,
            paths=[[] for _ in positions],
            feasible=True,
        )
        for slot, goal_idx in alloc.items():
            plan.paths[slot] = fmm.extract_path(fields[goal_idx], positions[slot])
        return plan

    def _adopt(self, plan):
        sim = self.sim
        self.plan = plan
        self.directives = {}
        self.reason = None
        for i, agent in enumerate(sim.agents):
            path = plan.paths[i]
            segments = [(coord.SEG_OWN_GOAL, path if path else [agent.position])]
            self.directives[agent.id] = AgentDirective(agent.id, segments)

    def step(self):
        sim = self.sim
        if self.needs_plan:
            self.needs_plan = False
            positions = [a.position for a in sim.agents]
            fresh = chain_mod.plan_chain(
                positions, sim.base_pt, sim.goal_pt, sim.truth.grid,
                sim.config.c_range, sim.config.relay_safety, sim.cache,
            )
            if not fresh.feasible:
                if self._current_plan_valid():
                    pass  # standing chain still works; keep running it
                else:
                    sim.events.append("replan:full")
                    self.plan = fresh
                    self.directives = {}
                    self.reason = fresh.infeasibility_reason
            else:
                best_eta = math.inf
                best = None
                if self._current_plan_valid():
                    best_eta = self._mission_eta({
                        aid: d.remaining_waypoints()
                        for aid, d in self.directives.items()
                    })
                    best = "keep"
                # candidate plans: conservative and exact-range relay
                # placement, each with summed-travel and slowest-robot
                # allocations; judged by true simulated completion time
                candidates = [fresh]
                wide = chain_mod.plan_chain(
                    positions, sim.base_pt, sim.goal_pt, sim.truth.grid,
                    sim.config.c_range, 1.0, sim.cache,
                )
                if wide.feasible:
                    candidates.append(wide)
                for base_cand in list(candidates):
                    quick = self._bottleneck_variant(base_cand, positions)
                    if quick is not None:
                        candidates.append(quick)
                for cand in candidates:
                    eta = self._mission_eta({
                        a.id: cand.paths[i] for i, a in enumerate(sim.agents)
                    })
                    if eta < best_eta - 1e-9:
                        best_eta = eta
                        best = cand
                if best is not None and best != "keep":
                    sim.events.append("replan:full")
                    self._adopt(best)
        substep = 0.25 * sim.truth.grid.resolution
        step_len = sim.config.speed * sim.config.dt
        for agent in sim.agents:
            directive = self.directives.get(agent.id)
            if directive is None:
                agent.mode = "waiting"
                continue
            if directive.finished:
                agent.mode = "done" if self.plan and self.plan.feasible else "waiting"
                continue
            directive.advance(step_len, sim.truth.grid, substep, sim.t)
            if directive.walker is not None:
                agent.position = directive.walker.pos
            elif directive.position is not None:
                agent.position = directive.position
            agent.mode = "deploying"

    def concluded_reason(self):
        return self.reason


class SearchController(_StrategyBase):
    """Searcher-group policy: waiters hold, the searcher collects them one
    by one, then the unified team forms the chain."""

    REPLAN_ON_MEMBERSHIP = True

    def __init__(self, sim):
        super().__init__(sim)
        self.skip_agents: set[int] = set()  # confirmed sealed, unreachable

    def step(self):
        if len(self.views) == 1:
            gid = next(iter(self.views))
            self._unified_step(gid, self.views[gid])
        else:
            self._search_step()
        self.move_members()

    # -- unified mode ----------------------------------------------------------

    def _unified_step(self, gid, view: GroupView):
        sim = self.sim
        if gid in self.pending_replan and self.may_replan(gid):
            self.pending_replan.discard(gid)
            self.last_replan[gid] = sim.t
            positions = [view.believed_positions[a.id] for a in sim.agents]
            plan = chain_mod.plan_chain(
                positions, sim.base_pt, sim.goal_pt, view.belief.grid,
                sim.config.c_range, sim.config.relay_safety, sim.cache,
            )
            view.own_plan = plan
            sim.events.append(f"replan:{gid}")
            view.directives = {}
            if plan.feasible:
                view.conclusion = None
                self.explorations.pop(gid, None)
                for i, agent in enumerate(sim.agents):
                    if agent.id not in view.members:
                        continue
                    path = plan.paths[i]
                    view.directives[agent.id] = AgentDirective(
                        agent.id,
                        [(coord.SEG_OWN_GOAL, path if path else [agent.position])],
                    )
            else:
                view.conclusion = plan.infeasibility_reason
                self._handle_infeasible(gid, view)
        else:
            if self._maintain_exploration(gid, view) or \
                    self._continue_verification(gid, view):
                view.conclusion = None

    # -- searching mode ----------------------------------------------------------

    def _searcher_gid(self):
        """Closest not-trapped group to the base, by each group's own map."""
        sim = self.sim
        best = None
        best_key = None
        for gid in sorted(self.views):
            view = self.views[gid]
            f = sim.cache.field(view.belief.grid, sim.base_pt)
            vals = [f.value_at(sim.agent_by_id[m].position) for m in view.members]
            d = min(vals)
            if not math.isfinite(d):
                continue  # trapped group cannot search
            key = (d, gid)
            if best_key is None or key < best_key:
                best_key = key
                best = gid
        return best

    def _search_step(self):
        sim = self.sim
        searcher = self._searcher_gid()
        for gid in sorted(self.views):
            view = self.views[gid]
            if gid != searcher:
                if view.directives:
                    view.directives = {}
                for aid in view.members:
                    sim.agent_by_id[aid].mode = "waiting"
                continue
            if self._maintain_exploration(gid, view) or \
                    self._continue_verification(gid, view):
                view.conclusion = None
                continue
            if (gid in self.pending_replan or not view.directives) \
                    and self.may_replan(gid):
                self.pending_replan.discard(gid)
                self.last_replan[gid] = sim.t
                self._plan_search_leg(gid, view)

    def _plan_search_leg(self, gid, view: GroupView):
        """Pick leader and target, route the caterpillar toward it."""
        sim = self.sim
        sim.events.append(f"replan:{gid}")
        waiting = [
            a for a in sim.agents
            if a.id not in view.members and a.id not in self.skip_agents
        ]
        if not waiting:
            # nothing left to collect: try to form the chain with who we have
            positions = [view.believed_positions[a.id] for a in sim.agents]
            plan = chain_mod.plan_chain(
                positions, sim.base_pt, sim.goal_pt, view.belief.grid,
                sim.config.c_range, sim.config.relay_safety, sim.cache,
            )
            view.own_plan = plan
            view.directives = {}
            if plan.feasible:
                for i, agent in enumerate(sim.agents):
                    if agent.id in view.members:
                        path = plan.paths[i]
                        view.directives[agent.id] = AgentDirective(
                            agent.id,
                            [(coord.SEG_OWN_GOAL, path if path else [agent.position])],
                        )
                view.conclusion = None
            else:
                view.conclusion = plan.infeasibility_reason
                self._handle_infeasible(gid, view)
            return
        # leader and target: the member-agent / waiting-agent pair with the
        # least FMM distance on the searcher's map
        best = None
        for aid in sorted(view.members):
            pos = sim.agent_by_id[aid].position
            f = sim.cache.field(view.belief.grid, pos)
            for agent in waiting:
                d = f.value_at(agent.position)
                if not math.isfinite(d):
                    continue
                key = (d, aid, agent.id)
                if best is None or key < best[0]:
                    best = (key, aid, agent.id, f)
        if best is None:
            self._explore_waiting_region(gid, view, waiting)
            return
        _, leader, target_id, dfield = best
        target = sim.agent_by_id[target_id]
        try:
            leg = list(reversed(fmm.extract_path(dfield, target.position)))
        except fmm.UnreachableError:
            return
        view.directives = {}
        view.directives[leader] = AgentDirective(
            leader, [(coord.SEG_OWN_GOAL, leg)]
        )
        sim.agent_by_id[leader].mode = "deploying"
        # followers trail their predecessor single file along the same route
        spacing = 0.5 * sim.config.c_range
        others = [m for m in sorted(view.members) if m != leader]
        prev = leader
        for aid in others:
            me = sim.agent_by_id[aid].position
            f2 = sim.cache.field(view.belief.grid, leg[0])
            try:
                join = list(reversed(fmm.extract_path(f2, me)))
            except fmm.UnreachableError:
                join = [me]
            follow = AgentDirective(aid, [("follow", join + leg[1:])])
            follow.spacing = spacing
            follow.ahead = prev
            view.directives[aid] = follow
            sim.agent_by_id[aid].mode = "deploying"
            prev = aid

    def _explore_waiting_region(self, gid, view: GroupView, waiting):
        """Every waiting agent is unreachable on our map: explore around the
        nearest one before declaring it lost."""
        sim = self.sim
        anchor = sim.agent_by_id[sorted(view.members)[0]].position
        target = min(
            waiting,
            key=lambda a: (math.dist(a.position, anchor), a.id),
        )
        seed = view.belief.grid.cell_of(target.position)
        crc = _region_crc(view.belief.grid, seed)
        if view.sealed_regions.get(seed) == crc:
            self.skip_agents.add(target.id)
            sim.events.append(f"unreachable_agent:{target.id}")
            self.pending_replan.add(gid)
            return
        if self._start_exploration(gid, view, target.position, seed, crc):
            view.conclusion = None

    def move_members(self):
        """Like the base mover, but followers keep their spacing."""
        sim = self.sim
        substep = 0.25 * sim.truth.grid.resolution
        step = sim.config.speed * sim.config.dt
        for gid in sorted(self.views):
            view = self.views[gid]
            for aid in sorted(view.members):
                agent = sim.agent_by_id[aid]
                directive = view.directives.get(aid)
                if directive is None or directive.finished:
                    continue
                ahead = getattr(directive, "ahead", None)
                if ahead is not None:
                    lead_pos = sim.agent_by_id[ahead].position
                    gap = math.dist(agent.position, lead_pos)
                    if gap < getattr(directive, "spacing", 0.0):
                        continue  # close enough, hold
                blocked, _ = directive.advance(step, sim.truth.grid, substep, sim.t)
                if directive.walker is not None:
                    agent.position = directive.walker.pos
                elif directive.position is not None:
                    agent.position = directive.position
                if blocked:
                    self.pending_replan.add(gid)
                    sim.events.append(f"collision:{aid}")
                if directive.current_kind == "trapped_explore":
                    agent.mode = "trapped_explore"

    def concluded_reason(self):
        for gid in sorted(self.views):
            view = self.views[gid]
            if gid in self.explorations or gid in self.verifying:
                return None
            if view.conclusion:
                return view.conclusion
        return None


class Simulation:
    """One deterministic trial."""

    def __init__(self, grid: GridMap, scenario: Scenario, config: SimConfig):
        config.validate_against(grid)
        self.config = config
        self.scenario = scenario
        self.initial_grid = grid
        self.truth = Belief.initial(grid)
        self.base_pt = grid.cell_center(*scenario.x_base)
        self.goal_pt = grid.cell_center(*scenario.x_goal)
        self.t = 0.0
        self.tick = 0
        self.cache = fmm.FieldCache(max_entries=512)
        self.events: list = []
        self.agents = [
            AgentState(i + 1, grid.cell_center(*cell))
            for i, cell in enumerate(scenario.agent_starts)
        ]
        for agent in self.agents:
            if not grid.is_free(agent.position):
                raise ValueError(f"agent {agent.id} starts on an occupied cell")
        if not grid.is_free(self.base_pt) or not grid.is_free(self.goal_pt):
            raise ValueError("base or goal cell is occupied on the initial map")
        self.agent_by_id = {a.id: a for a in self.agents}
        self.pending = sorted(scenario.changes,
                              key=lambda c: (c.trigger_time, c.kind, str(c.target)))
        self.record = TrialRecord(
            seed=config.seed, strategy=config.strategy,
            change_time=scenario.change_time,
        )
        self.detector = CycleDetector(config.cycle_window)
        self.cycle_handled = False
        if config.strategy == "full":
            self.controller: _StrategyBase = FullController(self)
        elif config.strategy == "search":
            self.controller = SearchController(self)
        else:
            self.controller = PredController(self)
        partition = self._partition()
        self.controller.init_views(tuple(g.members for g in partition))
        self.record.ticks.append(TickSnapshot(
            t=0.0,
            positions=[a.position for a in self.agents],
            modes=[a.mode for a in self.agents],
            groups=[list(g.members) for g in partition],
            events=[],
        ))

    # -- helpers -----------------------------------------------------------------

    def _partition(self):
        return world.connected_groups(self.agents, self.truth.grid,
                                      self.config.c_range)

    def _apply_due_changes(self) -> bool:
        applied = False
        while self.pending and self.pending[0].trigger_time <= self.t + 1e-9:
            change = self.pending.pop(0)
            before = self.truth.grid
            new_grid = world.apply_change(before, change)
            if new_grid is not before:
                delta = np.flatnonzero(new_grid.flat() != before.flat())
                self.truth.grid = new_grid
                self.truth.obs_time.reshape(-1)[delta] = change.trigger_time
            applied = True
            self.events.append(f"change:{change.kind}")
            # push any agent standing inside newly occupied space out to the
            # nearest free cell
            for agent in self.agents:
                if not self.truth.grid.is_free(agent.position):
                    cell = self.truth.grid.cell_of(agent.position)
                    nx, ny = _nearest_free_cell(self.truth.grid, cell)
                    agent.position = self.truth.grid.cell_center(nx, ny)
                    self.events.append(f"displaced:{agent.id}")
        if applied:
            self.events.append("map_changed")
            if isinstance(self.controller, FullController):
                self.controller.on_map_change()
        return applied

    def chain_formed_at(self, positions) -> bool:
        """Mission predicate: some agent sits in the goal cell and reaches
        the base through the communication graph over these positions."""
        goal_cell = self.truth.grid.cell_of(self.goal_pt)
        at_goal = [
            i for i, p in enumerate(positions)
            if self.truth.grid.cell_of(p) == goal_cell
        ]
        if not at_goal:
            return False
        nodes = list(positions) + [self.base_pt]
        adj = world.comm_graph(nodes, self.truth.grid, self.config.c_range)
        comps = world.connected_components(adj)
        base_idx = len(nodes) - 1
        for comp in comps:
            if base_idx in comp:
                return any(i in comp for i in at_goal)
        return False

    def _chain_formed(self) -> bool:
        return self.chain_formed_at([a.position for a in self.agents])

    # -- main loop -----------------------------------------------------------------

    def step(self) -> TickSnapshot:
        self.tick += 1
        self.t = self.tick * self.config.dt
        self.events = []
        self._apply_due_changes()
        if self.controller.sense():
            self.events.append("belief_changed")
        partition = self._partition()
        self.controller.reconcile(tuple(g.members for g in partition))
        self.controller.step()
        partition_after = self._partition()
        if self._chain_formed():
            self.events.append("chain_formed")
        snap = TickSnapshot(
            t=self.t,
            positions=[a.position for a in self.agents],
            modes=[a.mode for a in self.agents],
            groups=[list(g.members) for g in partition_after],
            events=list(self.events),
        )
        self.record.ticks.append(snap)
        return snap

    def run(self) -> TrialRecord:
        cfg = self.config
        outcome = None
        reason = ""
        while True:
            snap = self.step()
            if "chain_formed" in snap.events and not self.pending:
                # a chain standing before the scripted changes fire does not
                # end the mission; it must stand in the changed world
                outcome = OUTCOME_CHAIN_FORMED
                break
            concluded = self.controller.concluded_reason()
            if concluded:
                outcome = OUTCOME_INFEASIBLE
                reason = concluded
                break
            if "belief_changed" in snap.events or "map_changed" in snap.events:
                self.detector.reset()
            state = (
                tuple(self.truth.grid.cell_of(p) for p in snap.positions),
                tuple(tuple(g) for g in snap.groups),
            )
            period = self.detector.push(state)
            if period is not None and period >= 2:
                if cfg.cycle_fix:
                    if not self.cycle_handled:
                        self.cycle_handled = True
                        self.controller.on_cycle(self.detector.history[-period:])
                    self.detector.reset()
                else:
                    outcome = OUTCOME_CYCLE
                    break
            if self.t >= cfg.timeout:
                outcome = OUTCOME_TIMEOUT
                break
        self.record.outcome = outcome
        self.record.outcome_reason = reason
        metrics = compute_metrics(self.record)
        self.record.reconnect_time = metrics["reconnect_time"]
        self.record.mission_time = metrics["mission_time"]
        self.record.total_distance = metrics["total_distance"]
        self.record.initial_groups = metrics["initial_groups"]
        self.record.max_groups = metrics["max_groups"]
        self.record.final_groups = metrics["final_groups"]
        return self.record


def run_trial(grid: GridMap, scenario: Scenario, config: SimConfig) -> TrialRecord:
    return Simulation(grid, scenario, config).run()


# -- trace serialization ---------------------------------------------------------


def write_trace(record: TrialRecord, config: SimConfig, path):
    """One JSON object per line: header, ticks, outcome."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps({
            "type": "header",
            "seed": record.seed,
            "strategy": record.strategy,
            "change_time": record.change_time,
            "config": {
                "v_range": config.v_range,
                "c_range": config.c_range,
                "speed": config.speed,
                "dt": config.dt,
                "timeout": config.timeout,
                "sense_occlusion": config.sense_occlusion,
                "cycle_fix": config.cycle_fix,
                "relay_safety": config.relay_safety,
            },
        }, sort_keys=True) + "\n")
        for snap in record.ticks:
            fh.write(json.dumps({
                "t": snap.t,
                "pos": [[p[0], p[1]] for p in snap.positions],
                "mode": snap.modes,
                "groups": snap.groups,
                "events": snap.events,
            }) + "\n")
        fh.write(json.dumps({
            "type": "outcome",
            "outcome": record.outcome,
            "reason": record.outcome_reason,
            "metrics": record.metrics(),
        }, sort_keys=True) + "\n")


# -- batch harness ---------------------------------------------------------------

PER_TRIAL_FIELDS = (
    "trial", "seed", "strategy", "outcome", "reason", "solvable",
    "reconnect_time", "mission_time", "total_distance",
    "initial_groups", "max_groups", "final_groups",
)

METRIC_COLUMNS = (
    "reconnect_time", "mission_time", "total_distance",
    "initial_groups", "max_groups", "final_groups",
)


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def run_batch(grid: GridMap, config: SimConfig, trials: int,
              strategies=("full", "search", "pred"), jobs: int = 1,
              trace_dir=None):
    """Run seeded trials for every strategy on identical scenarios.

    The scenario of trial i derives from seed config.seed + i for every
    strategy alike; solvability is decided by the full strategy's outcome,
    which is always executed. Returns (per_trial_rows, aggregate_rows).
    """
    strategies = list(dict.fromkeys(strategies))
    run_order = list(strategies)
    if "full" not in run_order:
        run_order.insert(0, "full")
    args = [(grid, config, trial, run_order, trace_dir) for trial in range(trials)]
    if jobs > 1 and trials > 1:
        kernels.warmup()
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_batch_worker, args))
    else:
        results = [_batch_worker(a) for a in args]
    rows = []
    emit = strategies if "full" in strategies else run_order
    for trial_rows in results:
        solvable = trial_rows["full"].outcome == OUTCOME_CHAIN_FORMED
        for strategy in emit:
            rec = trial_rows[strategy]
            rows.append({
                "trial": trial_rows["trial"],
                "seed": rec.seed,
                "strategy": strategy,
                "outcome": rec.outcome,
                "reason": rec.outcome_reason,
                "solvable": solvable,
                **rec.metrics(),
            })
    return rows, aggregate_rows(rows)


def _batch_worker(args):
    grid, config, trial, run_order, trace_dir = args
    seed = config.seed + trial
    rng = np.random.default_rng(seed)
    scenario = generate_scenario(rng, grid, config)
    out = {"trial": trial}
    for strategy in run_order:
        cfg = replace(config, seed=seed, strategy=strategy)
        record = run_trial(grid, scenario, cfg)
        out[strategy] = record
        if trace_dir is not None:
            write_trace(record, cfg, f"{trace_dir}/trial{trial:04d}_{strategy}.jsonl")
    return out


def aggregate_rows(rows):
    """min/mean/max per (strategy, solvability class, metric) over the rows
    where the metric is defined; means sum in row order so the analysis side
    can reproduce them bit-exactly."""
    out = []
    strategies = list(dict.fromkeys(r["strategy"] for r in rows))
    for strategy in strategies:
        for solvable in (True, False):
            subset = [r for r in rows
                      if r["strategy"] == strategy and r["solvable"] == solvable]
            for metric in METRIC_COLUMNS:
                values = [r[metric] for r in subset if r[metric] is not None]
                if values:
                    total = 0.0
                    for v in values:
                        total += float(v)
                    out.append({
                        "strategy": strategy, "solvable": solvable,
                        "metric": metric, "count": len(values),
                        "min": float(min(values)), "mean": total / len(values),
                        "max": float(max(values)),
                    })
                else:
                    out.append({
                        "strategy": strategy, "solvable": solvable,
                        "metric": metric, "count": 0,
                        "min": None, "mean": None, "max": None,
                    })
    return out


def write_per_trial_csv(rows, path):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(PER_TRIAL_FIELDS)
        for row in rows:
            writer.writerow([_fmt(row[k]) for k in PER_TRIAL_FIELDS])


def write_aggregate_csv(aggregates, path):
    fields = ("strategy", "solvable", "metric", "count", "min", "mean", "max")
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(fields)
        for row in aggregates:
            writer.writerow([_fmt(row[k]) for k in fields])
