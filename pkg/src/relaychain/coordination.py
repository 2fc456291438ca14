"""Prediction-based distributed replanning (the Pred strategy core).

Each group plans for the whole team on its own believed map, predicts what
chain-adjacent groups will do using the information it attributes to them,
intercepts mis-informed neighbors whose allocated goals disagree, and runs a
wall-following exploration when a needed region seems sealed.

Information model: a group's belief is a timestamped occupancy grid fed only
by its members' sensors and by merges. What the group attributes to others
(the basis of prediction) is tracked per agent: cells of the group's own
belief that the other agent, dead-reckoned along its predicted path, would
have been able to see. Attributions never contain information the attributing
group does not itself possess.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from . import fmm, world
from .chain import TeamPlan, plan_chain
from .motion import PathWalker
from .world import GridMap

SEG_INTERCEPT_PARENT = "intercept_parent"
SEG_INTERCEPT_DESCENDANT = "intercept_descendant"
SEG_OWN_GOAL = "own_goal"


@dataclass
class Belief:
    """Occupancy belief with a per-cell last-observation timestamp."""

    grid: GridMap
    obs_time: np.ndarray

    @classmethod
    def initial(cls, grid: GridMap) -> "Belief":
        return cls(grid=grid, obs_time=np.zeros((grid.height, grid.width)))

    def copy(self) -> "Belief":
        return Belief(self.grid, self.obs_time.copy())

    def absorb(self, source_cells, flat_idx, stamps) -> bool:
        """Copy the given flat cells from source into this belief."""
        if flat_idx.size == 0:
            return False
        cells = self.grid.cells.reshape(-1).copy()
        cells[flat_idx] = source_cells.reshape(-1)[flat_idx]
        self.grid = self.grid.with_cells(cells.reshape(self.grid.cells.shape))
        self.obs_time.reshape(-1)[flat_idx] = stamps
        return True

    def merge(self, other: "Belief") -> "Belief":
        """Cell-wise most-recent information of the two beliefs."""
        take = other.obs_time > self.obs_time
        cells = np.where(take, other.grid.cells, self.grid.cells).astype(np.uint8)
        times = np.where(take, other.obs_time, self.obs_time)
        if np.array_equal(cells, self.grid.cells):
            grid = self.grid  # preserve uid for planner caches
        else:
            grid = self.grid.with_cells(cells)
        return Belief(grid, times)


def update_information(belief: Belief, source: Belief, observers, v_range: float,
                       occlusion: bool = True) -> bool:
    """Sense from every observer position: copy the source cells that are in
    range and line of sight into the belief, carrying the source's stamps.

    For a group's own belief the source is ground truth; for an attributed
    belief the source is the group's own belief (a group can only attribute
    what it knows).
    """
    changed = False
    for pos in observers:
        learned = world.observed_cells(source.grid, belief.grid, pos, v_range,
                                       occlusion)
        if learned.size:
            stamps = source.obs_time.reshape(-1)[learned]
            changed |= belief.absorb(source.grid.cells, learned, stamps)
    return changed


@dataclass
class AgentDirective:
    """Ordered motion segments for one agent: optional parent/descendant
    interceptions (with a wait at each rendezvous) then the path to its own
    chain goal. ``holds`` maps a segment index to the simulation time until
    which the agent stands at that segment's end waiting for contact."""

    agent_id: int
    segments: list  # list of (kind, waypoints)
    active_segment: int = 0
    walker: "PathWalker | None" = None
    holds: dict = field(default_factory=dict)

    def __post_init__(self):
        self._bind_walker()

    def _bind_walker(self):
        while self.active_segment < len(self.segments):
            kind, pts = self.segments[self.active_segment]
            if len(pts) > 1 or (len(pts) == 1 and self.walker is None):
                self.walker = PathWalker(list(pts))
                return
            self.active_segment += 1
        self.walker = None

    @property
    def finished(self) -> bool:
        return self.active_segment >= len(self.segments)

    @property
    def current_kind(self) -> "str | None":
        if self.finished:
            return None
        return self.segments[self.active_segment][0]

    @property
    def holding(self) -> bool:
        return self.active_segment in self.holds

    def advance(self, distance: float, grid, substep: float, now: float = math.inf):
        """Returns (blocked, completed_segment_kinds)."""
        completed = []
        if self.finished or self.walker is None:
            return False, completed
        blocked = False
        if not self.walker.done:
            blocked = self.walker.advance(distance, grid, substep)
        while self.walker is not None and self.walker.done:
            hold_until = self.holds.get(self.active_segment)
            if hold_until is not None and now < hold_until:
                return blocked, completed  # wait for the rendezvous
            completed.append(self.segments[self.active_segment][0])
            pos = self.walker.pos
            self.active_segment += 1
            self.walker = None
            self._bind_walker()
            if self.walker is not None:
                self.walker.pos = pos
        return blocked, completed

    @property
    def position(self):
        if self.walker is not None:
            return self.walker.pos
        if self.segments:
            return tuple(self.segments[-1][1][-1])
        return None

    def remaining_waypoints(self) -> list:
        """Waypoints still ahead, flattened across segments."""
        if self.finished:
            pos = self.position
            return [pos] if pos is not None else []
        out = [self.walker.pos]
        out.extend(self.walker.waypoints[self.walker.next_idx:])
        for kind, pts in self.segments[self.active_segment + 1:]:
            out.extend(pts[1:] if len(pts) > 1 else pts)
        return out

    def remaining_length(self) -> float:
        pts = self.remaining_waypoints()
        total = 0.0
        for (x0, y0), (x1, y1) in zip(pts, pts[1:]):
            total += math.sqrt((x1 - x0) ** 2 + (y1 - y0) ** 2)
        return total


@dataclass
class GroupView:
    """Everything one group knows: its belief, what it attributes to every
    other agent, where it believes everyone is, and its current plans."""

    group: world.Group
    belief: Belief
    attributed: dict  # agent_id -> Belief (non-members only)
    believed_positions: dict  # agent_id -> (x, y)
    predicted_paths: dict = field(default_factory=dict)  # agent_id -> PathWalker
    own_plan: "TeamPlan | None" = None
    predicted_plans: dict = field(default_factory=dict)  # group key -> TeamPlan
    chain_order: list = field(default_factory=list)
    directives: dict = field(default_factory=dict)  # member id -> AgentDirective
    conclusion: "str | None" = None  # infeasibility reason once concluded
    sealed_regions: dict = field(default_factory=dict)  # seed cell -> grid uid
    grounded_positions: dict = field(default_factory=dict)  # aid -> last real fix
    position_stamps: dict = field(default_factory=dict)  # aid -> fix time
    swept_marks: dict = field(default_factory=dict)  # aid -> time marked absent
    lost_marks: dict = field(default_factory=dict)  # aid -> fix stamp when lost
    pinned_marks: dict = field(default_factory=dict)  # aid -> fix stamp when pinned
    prediction_count: int = 0
    intercepts_issued: int = 0

    @property
    def members(self):
        return self.group.members

    def ground_position(self, aid, pos, now: float):
        """Record a position actually known at `now` (own member or merge)."""
        self.believed_positions[aid] = pos
        self.grounded_positions[aid] = pos
        self.position_stamps[aid] = now

    def position_stamp(self, aid) -> float:
        return self.position_stamps.get(aid, 0.0)

    def swept_valid(self, aid) -> bool:
        """A verified-absent mark holds until the agent's position belief is
        re-grounded after the mark."""
        mark = self.swept_marks.get(aid)
        return mark is not None and mark >= self.position_stamp(aid)

    def mark_swept(self, aid, now: float):
        self.swept_marks[aid] = now

    def lost_valid(self, aid) -> bool:
        """Lost means: absent both from its predicted spot and from its last
        grounded fix; cleared by any newer grounding."""
        return self.lost_marks.get(aid) == self.position_stamp(aid)

    def mark_lost(self, aid):
        self.lost_marks[aid] = self.position_stamp(aid)

    def pinned_valid(self, aid) -> bool:
        """Pinned means: its predicted motion was falsified in the field, so
        it is modeled at its grounded fix until a real contact regrounds it."""
        return self.pinned_marks.get(aid) == self.position_stamp(aid)

    def mark_pinned(self, aid):
        self.pinned_marks[aid] = self.position_stamp(aid)


def _agent_slots(agent_ids):
    return {aid: i for i, aid in enumerate(sorted(agent_ids))}


def believed_partition(view: GroupView, c_range: float):
    """Connected groups as this view believes them (l.2 of the group planner).

    Components are computed from believed positions on the believed map; the
    view's own members are forced into one component because they provably
    communicate right now, whatever the stale map says.
    """
    agents = [
        world.AgentState(aid, pos)
        for aid, pos in sorted(view.believed_positions.items())
    ]
    groups = world.connected_groups(agents, view.belief.grid, c_range)
    merged = []
    own = set()
    for g in groups:
        if any(m in view.members for m in g.members):
            own.update(g.members)
        else:
            merged.append(list(g.members))
    own.update(view.members)
    merged.append(sorted(own))
    merged.sort()
    return [tuple(m) for m in merged]


def sort_groups_by_base(groups, view: GroupView, x_base, cache: fmm.FieldCache):
    """Chain order of believed groups: ascending FMM distance of the closest
    member to the base station (l.3), unreachable groups last, ties by id."""
    base_field = cache.field(view.belief.grid, x_base)

    def group_key(members):
        dists = [base_field.value_at(view.believed_positions[m]) for m in members]
        best = min(dists)
        return (0 if math.isfinite(best) else 1, best if math.isfinite(best) else 0.0,
                members[0])

    ordered = sorted(groups, key=group_key)
    return ordered, base_field


def intercept(target_path, x, grid: GridMap,
              cache: "fmm.FieldCache | None" = None):
    """Path from x to the geodesically closest point of the target path.

    One propagation from x prices every waypoint. When no waypoint is
    reachable the agent aims for the reachable cell nearest to the path's
    final waypoint (the target will end up there).
    """
    if len(target_path) == 0:
        raise ValueError("empty target path")
    if not grid.is_free(x):
        raise ValueError(f"intercept start {x} is occupied")
    dfield = cache.field(grid, x) if cache else fmm.propagate(grid, x)
    best_idx = None
    best_cost = math.inf
    for i, wp in enumerate(target_path):
        cost = dfield.value_at(wp)
        if cost < best_cost - 1e-12:
            best_cost = cost
            best_idx = i
    if best_idx is not None and math.isfinite(best_cost):
        return list(reversed(fmm.extract_path(dfield, target_path[best_idx])))
    # every waypoint unreachable: head for the reachable cell nearest the end
    end = target_path[-1]
    values = dfield.values
    h, w = values.shape
    finite = np.isfinite(values.reshape(-1))
    idx = np.flatnonzero(finite)
    res = grid.resolution
    cx = (idx % w + 0.5) * res
    cy = (idx // w + 0.5) * res
    d2 = (cx - end[0]) ** 2 + (cy - end[1]) ** 2
    target = idx[int(np.argmin(d2))]
    tx, ty = (target % w + 0.5) * res, (target // w + 0.5) * res
    return list(reversed(fmm.extract_path(dfield, (tx, ty))))


def _goal_cell(plan: "TeamPlan | None", slot: int, resolution: float):
    if plan is None or not plan.feasible:
        return None
    return plan.goal_cell_of(slot, resolution)


def plan_rendezvous(target_path, x, grid: GridMap, speed: float,
                    cache: "fmm.FieldCache | None" = None):
    """Timed interception of an agent walking target_path at common speed.

    Picks the geodesically closest waypoint the interceptor reaches no later
    than the target does; failing that, the path's end, where the target
    will stand. Returns (segment, expected contact delay) or (None, None)
    when no waypoint is reachable at all.
    """
    if not grid.is_free(x):
        raise ValueError(f"intercept start {x} is occupied")
    dfield = cache.field(grid, x) if cache else fmm.propagate(grid, x)
    arc = [0.0]
    for a, b in zip(target_path, target_path[1:]):
        arc.append(arc[-1] + math.dist(a, b))
    best = None
    best_cost = math.inf
    for j, wp in enumerate(target_path):
        cost = dfield.value_at(wp)
        if not math.isfinite(cost):
            continue
        catchable = cost <= arc[j] + 1e-9 or j == len(target_path) - 1
        if catchable and cost < best_cost - 1e-12:
            best_cost = cost
            best = j
    if best is None:
        return None, None
    seg = list(reversed(fmm.extract_path(dfield, target_path[best])))
    return seg, arc[best] / speed


def predict_agent_paths(view: GroupView, group_of: dict, plans: dict,
                        chain_order, x_base, x_goal, params,
                        cache: "fmm.FieldCache | None" = None,
                        now: float = 0.0) -> dict:
    """Alg. 3: directives for this view's member agents.

    For member a_n in chain order, when its chain parent (resp. descendant)
    belongs to another believed group and that agent's allocated goal under
    the neighbor group's attributed information differs from its goal under
    our own information, prepend a timed interception of the neighbor's
    predicted path with a wait at the rendezvous; finish with the path to
    the member's own chain goal. Goal comparison is cell-exact.
    """
    res = view.belief.grid.resolution
    slots = _agent_slots(view.believed_positions.keys())
    own_key = group_of[view.members[0]]
    directives: dict[int, AgentDirective] = {}
    ranked = {aid: n for n, aid in enumerate(chain_order)}
    speed = getattr(params, "speed", 2.0)
    hold_margin = 2.0 * getattr(params, "replan_interval", 1.0)
    for aid in view.members:
        n = ranked[aid]
        pos = view.believed_positions[aid]
        segments = []
        holds = {}
        cursor = (float(pos[0]), float(pos[1]))
        for offset, seg_kind in ((-1, SEG_INTERCEPT_PARENT),
                                 (+1, SEG_INTERCEPT_DESCENDANT)):
            m = n + offset
            if not (0 <= m < len(chain_order)):
                continue
            other = chain_order[m]
            other_key = group_of[other]
            if other_key == own_key:
                continue
            other_plan = plans.get(other_key)
            if other_plan is None:
                continue
            slot = slots[other]
            goal_theirs = _goal_cell(other_plan, slot, res)
            goal_ours = _goal_cell(view.own_plan, slot, res)
            if goal_theirs == goal_ours:
                continue
            target_path = []
            if other_plan.feasible and other_plan.paths[slot]:
                target_path = other_plan.paths[slot]
            if not target_path:
                target_path = [view.believed_positions[other]]
            seg, delay = plan_rendezvous(target_path, cursor, view.belief.grid,
                                         speed, cache)
            if seg is None:
                seg = intercept(target_path, cursor, view.belief.grid, cache)
                delay = None
            if len(seg) > 1 or delay is not None:
                segments.append((seg_kind, seg))
                if delay is not None:
                    holds[len(segments) - 1] = now + delay + hold_margin
                cursor = tuple(seg[-1])
                view.intercepts_issued += 1
        own_goal = None
        if view.own_plan is not None and view.own_plan.feasible:
            own_goal = view.own_plan.goal_of(slots[aid])
        if own_goal is not None:
            start_cell = view.belief.grid.cell_of(cursor)
            goal_cell = view.belief.grid.cell_of(own_goal)
            if start_cell == goal_cell and tuple(cursor) == tuple(own_goal):
                segments.append((SEG_OWN_GOAL, [cursor]))
            else:
                gfield = (cache.field(view.belief.grid, own_goal) if cache
                          else fmm.propagate(view.belief.grid, own_goal))
                try:
                    seg = fmm.extract_path(gfield, cursor)
                except fmm.UnreachableError:
                    seg = None
                if seg is not None:
                    segments.append((SEG_OWN_GOAL, seg))
        if not segments:
            segments.append((SEG_OWN_GOAL, [cursor]))
        directives[aid] = AgentDirective(agent_id=aid, segments=segments,
                                         holds=holds)
    return directives


def group_plan(view: GroupView, x_base, x_goal, params,
               cache: "fmm.FieldCache | None" = None,
               now: float = 0.0) -> GroupView:
    """Alg. 2: refresh this group's plans and member directives.

    The view's own belief is assumed already updated from member sensors
    this tick (the engine calls update_information every tick). Steps here:
    believed partition, base-proximity sort, attributed-map updates and a
    chain plan per adjacent group, own chain plan, then Alg. 3 directives.
    """
    if cache is None:
        cache = fmm.FieldCache()
    c_range = params.c_range
    groups = believed_partition(view, c_range)
    ordered, base_field = sort_groups_by_base(groups, view, x_base, cache)
    group_of = {}
    for members in ordered:
        for m in members:
            group_of[m] = members
    own_key = group_of[view.members[0]]
    own_index = ordered.index(own_key)

    slots = _agent_slots(view.believed_positions.keys())
    all_positions = [pos for _, pos in sorted(view.believed_positions.items())]
    lost_slots = frozenset(
        slots[aid] for aid in view.believed_positions if view.lost_valid(aid)
    )

    # Own plan on the group's own information; lost teammates are not
    # counted on.
    view.own_plan = plan_chain(all_positions, x_base, x_goal, view.belief.grid,
                               c_range, params.relay_safety, cache,
                               unavailable=lost_slots)
    view.prediction_count = 1

    # One chain-plan prediction per other believed group (at most M-1), on
    # the information attributed to that group's agents.
    plans: dict[tuple, TeamPlan] = {own_key: view.own_plan}
    for index, members in enumerate(ordered):
        if index == own_index:
            continue
        # l.5: attribute to that group's agents whatever of our own belief
        # their predicted positions would have let them see.
        for m in members:
            update_information(view.attributed[m], view.belief,
                               [view.believed_positions[m]],
                               params.v_range, params.sense_occlusion)
        attributed = view.attributed[members[0]]
        for m in members[1:]:
            attributed = attributed.merge(view.attributed[m])
        plans[members] = plan_chain(all_positions, x_base, x_goal,
                                    attributed.grid, c_range,
                                    params.relay_safety, cache)
        view.prediction_count += 1
    view.predicted_plans = plans

    # Chain order of the agents: group blocks in chain order, members within
    # a block by base proximity (ties by id).
    chain_order = []
    for members in ordered:
        chain_order.extend(sorted(
            members,
            key=lambda m: (base_field.value_at(view.believed_positions[m]), m),
        ))
    view.chain_order = chain_order

    view.directives = predict_agent_paths(view, group_of, plans, chain_order,
                                          x_base, x_goal, params, cache, now)

    # Dead-reckoning model for everyone outside the group: each agent walks
    # the path its own group's predicted plan gives it.
    view.predicted_paths = {}
    for aid, pos in view.believed_positions.items():
        if aid in view.members:
            continue
        if view.lost_valid(aid) or view.pinned_valid(aid):
            continue  # modeled stationary at the grounded fix
        plan = plans.get(group_of[aid], view.own_plan)
        path = plan.paths[slots[aid]] if plan is not None and plan.feasible else []
        if path:
            walker = PathWalker(list(path))
            walker.pos = (float(pos[0]), float(pos[1]))
            view.predicted_paths[aid] = walker
    if view.own_plan.feasible:
        view.conclusion = None
    else:
        view.conclusion = view.own_plan.infeasibility_reason
    return view


def advance_predictions(view: GroupView, distance: float, substep: float):
    """Dead-reckon non-member agents along their predicted paths."""
    for aid, walker in view.predicted_paths.items():
        if not walker.done:
            walker.advance(distance, view.belief.grid, substep)
        view.believed_positions[aid] = walker.pos


def merge_groups(a: GroupView, b: GroupView) -> GroupView:
    """Fuse two views after their members reconnect.

    Believed maps merge cell-wise by most-recent stamp; attributions for
    still-absent agents merge the same way; member positions come from each
    agent's own former view, and for absent agents the side whose belief was
    grounded more recently wins.
    """
    if a.group.id == b.group.id:
        return a
    lo, hi = (a, b) if a.group.id < b.group.id else (b, a)
    members = tuple(sorted(set(a.members) | set(b.members)))
    belief = lo.belief.merge(hi.belief)
    attributed = {}
    positions = {}
    stamps = {}
    predicted = {}
    grounded = {}
    lost = {}
    pinned = {}
    for aid in lo.believed_positions:
        if aid in members:
            src = lo if aid in lo.members else hi
            positions[aid] = src.believed_positions[aid]
            grounded[aid] = src.grounded_positions.get(aid, positions[aid])
            stamps[aid] = src.position_stamp(aid)
            continue
        attributed[aid] = lo.attributed[aid].merge(hi.attributed[aid])
        src = hi if hi.position_stamp(aid) > lo.position_stamp(aid) else lo
        positions[aid] = src.believed_positions[aid]
        grounded[aid] = src.grounded_positions.get(aid, positions[aid])
        stamps[aid] = src.position_stamp(aid)
        if aid in src.lost_marks:
            lost[aid] = src.lost_marks[aid]
        if aid in src.pinned_marks:
            pinned[aid] = src.pinned_marks[aid]
        if aid in src.predicted_paths:
            predicted[aid] = src.predicted_paths[aid]
    group = world.Group(id=members[0], members=members)
    merged = GroupView(
        group=group,
        belief=belief,
        attributed=attributed,
        believed_positions=positions,
        predicted_paths=predicted,
    )
    merged.grounded_positions = grounded
    merged.position_stamps = stamps
    merged.lost_marks = lost
    merged.pinned_marks = pinned
    merged.directives = {**lo.directives, **hi.directives}
    merged.sealed_regions = {**hi.sealed_regions, **lo.sealed_regions}
    marks = dict(hi.swept_marks)
    for aid, t in lo.swept_marks.items():
        if marks.get(aid, -1.0) < t:
            marks[aid] = t
    merged.swept_marks = marks
    return merged


def split_view(view: GroupView, members: tuple) -> GroupView:
    """Fork a view for a subset of members that separated from the group.

    The fork attributes the full shared belief to its former teammates and
    dead-reckons them along the directives they were executing at the split,
    which it knows exactly.
    """
    positions = dict(view.believed_positions)
    attributed = {}
    predicted = {}
    for aid in view.believed_positions:
        if aid in members:
            continue
        if aid in view.members:
            attributed[aid] = view.belief.copy()
            directive = view.directives.get(aid)
            if directive is not None:
                rest = directive.remaining_waypoints()
                if rest:
                    predicted[aid] = PathWalker(list(rest))
        else:
            attributed[aid] = view.attributed[aid].copy()
            if aid in view.predicted_paths:
                w = view.predicted_paths[aid]
                predicted[aid] = PathWalker(list(w.waypoints), pos=w.pos,
                                            next_idx=w.next_idx)
    fork = GroupView(
        group=world.Group(id=members[0], members=members),
        belief=view.belief.copy(),
        attributed=attributed,
        believed_positions=positions,
        predicted_paths=predicted,
    )
    fork.own_plan = view.own_plan  # the shared plan both sides keep executing
    fork.directives = {aid: d for aid, d in view.directives.items() if aid in members}
    fork.sealed_regions = dict(view.sealed_regions)
    fork.grounded_positions = dict(view.grounded_positions)
    fork.position_stamps = dict(view.position_stamps)
    fork.swept_marks = dict(view.swept_marks)
    fork.lost_marks = dict(view.lost_marks)
    fork.pinned_marks = dict(view.pinned_marks)
    return fork


# -- trapped-room exploration -------------------------------------------------

_HEADINGS = ((1, 0), (0, 1), (-1, 0), (0, -1))  # E, N, W, S


def _left(h):
    return (-h[1], h[0])


def _right(h):
    return (h[1], -h[0])


def trapped_routine(agent_pos, grid: GridMap, blocked_access) -> list:
    """Wall-following circuit around the wall complex sealing a region.

    Left-hand walk along the free cells bordering the occupied component
    that contains blocked_access, starting from the reachable free cell
    nearest to it. The circuit ends back at its start; the caller aborts it
    early if sensing reveals an opening, and declares the region unreachable
    when the full circuit completes without one.
    """
    ax, ay = grid.cell_of(agent_pos)
    bx, by = grid.cell_of(blocked_access)
    h, w = grid.height, grid.width
    cells = grid.cells
    if cells[by, bx] == 0:
        raise ValueError("blocked_access must be an occupied cell")

    # Free cells reachable from the agent (4/8-connectivity as in planning).
    reach = np.zeros((h, w), np.bool_)
    stack = [(ax, ay)]
    reach[ay, ax] = True
    while stack:
        x, y = stack.pop()
        for dx in (-1, 0, 1):
            for dy in (-1, 0, 1):
                nx, ny = x + dx, y + dy
                if 0 <= nx < w and 0 <= ny < h and not reach[ny, nx] \
                        and cells[ny, nx] == 0:
                    reach[ny, nx] = True
                    stack.append((nx, ny))

    # Start: reachable free cell nearest the blocked access.
    ys, xs = np.nonzero(reach)
    if ys.size == 0:
        return []
    d2 = (xs - bx) ** 2 + (ys - by) ** 2
    order = np.lexsort((xs, ys, d2))
    sx, sy = int(xs[order[0]]), int(ys[order[0]])

    def free(x, y):
        return 0 <= x < w and 0 <= y < h and cells[y, x] == 0 and reach[y, x]

    # Initial heading with a wall on the left.
    heading = None
    for cand in _HEADINGS:
        lx, ly = sx + _left(cand)[0], sy + _left(cand)[1]
        if not free(lx, ly):
            heading = cand
            break
    if heading is None:
        heading = _HEADINGS[0]

    circuit = [grid.cell_center(sx, sy)]
    x, y = sx, sy
    start_state = (sx, sy, heading)
    cap = 8 * int(reach.sum()) + 8
    for _ in range(cap):
        moved = False
        for nh in (_left(heading), heading, _right(heading),
                   (-heading[0], -heading[1])):
            nx, ny = x + nh[0], y + nh[1]
            if free(nx, ny):
                x, y, heading = nx, ny, nh
                circuit.append(grid.cell_center(x, y))
                moved = True
                break
        if not moved:  # isolated cell
            break
        if (x, y, heading) == start_state:
            break
    return circuit
