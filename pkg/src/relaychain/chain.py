"""Relay-chain planning on one believed map.

Pipeline: shortest base-to-goal path, greedy relay-goal placement along it,
optimal goal allocation, then a path per assigned agent. Failures surface as
an infeasible TeamPlan carrying one of the three reasons: no_chain_path
(base and goal disconnected), too_few_agents (more relay slots than robots)
or los_blocked (relays cannot keep line of sight along the path).
"""

import math
from dataclasses import dataclass, field

import numpy as np

from . import fmm, world
from .assignment import InfeasibleAssignmentError, hungarian

REASON_NONE = "none"
REASON_NO_CHAIN_PATH = "no_chain_path"
REASON_TOO_FEW_AGENTS = "too_few_agents"
REASON_LOS_BLOCKED = "los_blocked"

DEFAULT_RELAY_SAFETY = 0.95


class NoChainPathError(Exception):
    reason = REASON_NO_CHAIN_PATH


class LosBlockedError(Exception):
    reason = REASON_LOS_BLOCKED

    def __init__(self, stuck_node):
        self.stuck_node = stuck_node
        super().__init__(f"no visible path point within range of {stuck_node}")


@dataclass
class TeamPlan:
    """Full-team chain plan: relay goals, allocation and per-agent paths.

    paths[i] is agent slot i's waypoint list (empty when excluded from the
    chain); allocation maps agent slot -> index into local_goals, whose last
    entry is the team goal itself.
    """

    chain_path: list = field(default_factory=list)
    local_goals: list = field(default_factory=list)
    allocation: dict = field(default_factory=dict)
    paths: list = field(default_factory=list)
    feasible: bool = False
    infeasibility_reason: str = REASON_NONE

    def goal_of(self, slot: int):
        """Allocated goal coordinate for an agent slot, or None if excluded."""
        idx = self.allocation.get(slot)
        return None if idx is None else self.local_goals[idx]

    def equivalent(self, other: "TeamPlan | None") -> bool:
        """Same decisions: goals, allocation and feasibility agree in value.

        Two plans computed deterministically from equal maps and positions
        compare equal here, which certifies that groups executing them are
        already coordinated.
        """
        if other is None:
            return False
        return (
            self.feasible == other.feasible
            and self.infeasibility_reason == other.infeasibility_reason
            and self.local_goals == other.local_goals
            and self.allocation == other.allocation
        )

    def goal_cell_of(self, slot: int, resolution: float):
        goal = self.goal_of(slot)
        if goal is None:
            return None
        return (
            int(math.floor(goal[0] / resolution)),
            int(math.floor(goal[1] / resolution)),
        )


def compute_chain_path(x_base, x_goal, grid: world.GridMap,
                       cache: "fmm.FieldCache | None" = None):
    """Shortest path base -> goal on the believed map.

    Raises NoChainPathError when the goal is unreachable or either endpoint
    lies on an occupied cell of the believed map.
    """
    if not grid.is_free(x_base) or not grid.is_free(x_goal):
        raise NoChainPathError("base/goal occupied on the planning map")
    dfield = cache.field(grid, x_base) if cache else fmm.propagate(grid, x_base)
    try:
        descending = fmm.extract_path(dfield, x_goal)
    except fmm.UnreachableError:
        raise NoChainPathError(f"no path from {x_base} to {x_goal}") from None
    return list(reversed(descending))


def compute_local_goals(chain_path, grid: world.GridMap, c_range: float,
                        safety: float = DEFAULT_RELAY_SAFETY):
    """Greedy farthest-point relay placement along the chain path.

    Walking from the base node, each relay is the farthest path point that
    stays within safety*c_range and in line of sight of the previous chain
    node; the final goal closes the chain. Raises LosBlockedError when no
    forward point satisfies both constraints.
    """
    if len(chain_path) == 0:
        raise ValueError("empty chain path")
    eff = c_range * safety
    goals = []
    node = chain_path[0]
    node_idx = 0
    last = len(chain_path) - 1
    while True:
        chosen = None
        for j in range(last, node_idx, -1):
            pt = chain_path[j]
            dx = pt[0] - node[0]
            dy = pt[1] - node[1]
            if dx * dx + dy * dy > eff * eff:
                continue
            if world.line_of_sight(grid, node, pt):
                chosen = j
                break
        if chosen is None:
            if node_idx == last:  # zero-length chain: base sees the goal
                goals.append(chain_path[last])
                return goals
            raise LosBlockedError(node)
        goals.append(chain_path[chosen])
        if chosen == last:
            return goals
        node = chain_path[chosen]
        node_idx = chosen


def plan_chain(agent_positions, x_base, x_goal, grid: world.GridMap,
               c_range: float, safety: float = DEFAULT_RELAY_SAFETY,
               cache: "fmm.FieldCache | None" = None,
               unavailable=frozenset()) -> TeamPlan:
    """Compose the full chain plan for the team on one believed map.

    One propagation serves the chain path and one per relay goal serves all
    agent costs and paths; excluded agents keep their position with an empty
    path. Slots in `unavailable` (teammates considered lost) never receive
    a goal and do not count toward the available force.
    """
    n = len(agent_positions)
    plan = TeamPlan(paths=[[] for _ in range(n)])
    try:
        plan.chain_path = compute_chain_path(x_base, x_goal, grid, cache)
    except NoChainPathError:
        plan.infeasibility_reason = REASON_NO_CHAIN_PATH
        return plan
    try:
        plan.local_goals = compute_local_goals(plan.chain_path, grid, c_range, safety)
    except LosBlockedError:
        plan.infeasibility_reason = REASON_LOS_BLOCKED
        return plan
    if len(plan.local_goals) > n - len(unavailable):
        plan.infeasibility_reason = REASON_TOO_FEW_AGENTS
        return plan

    # Goal-side propagation: one field per relay goal prices every agent and
    # extracts every assigned path (geodesic costs are symmetric).
    goal_fields = []
    for goal in plan.local_goals:
        goal_fields.append(cache.field(grid, goal) if cache else fmm.propagate(grid, goal))
    costs = np.full((n, len(plan.local_goals)), np.inf)
    for i, pos in enumerate(agent_positions):
        if i in unavailable or not grid.is_free(pos):
            continue  # lost teammate, or a cell this map believes occupied
        for k, gf in enumerate(goal_fields):
            costs[i, k] = gf.value_at(pos)
    try:
        plan.allocation = hungarian(costs)
    except InfeasibleAssignmentError:
        # some relay goal is unreachable by every (believed) agent: the
        # chain cannot be manned
        plan.infeasibility_reason = REASON_TOO_FEW_AGENTS
        return plan

    for slot, goal_idx in plan.allocation.items():
        plan.paths[slot] = fmm.extract_path(goal_fields[goal_idx], agent_positions[slot])
    plan.feasible = True
    return plan
