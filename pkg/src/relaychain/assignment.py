"""Optimal agent-to-goal allocation (rectangular assignment problem).

scipy's Jonker-Volgenant solver provides the optimum; a reduction pass on top
picks the lexicographically smallest optimal matching so equal-cost plans are
reproducible across runs. Unreachable pairs enter as a big-M cost with a
post-check that no assigned pair actually uses one.
"""

import math

import numpy as np
from scipy.optimize import linear_sum_assignment

_TIE_EPS = 1e-9


class InfeasibleAssignmentError(ValueError):
    def __init__(self, goal: int):
        self.goal = goal
        super().__init__(f"goal {goal} has no agent with finite cost")


def _big_m(costs: np.ndarray) -> float:
    finite = costs[np.isfinite(costs)]
    top = float(finite.max()) if finite.size else 1.0
    return (top + 1.0) * (costs.shape[1] + 1)


def _optimal_total(costs: np.ndarray) -> float:
    rows, cols = linear_sum_assignment(costs)
    return float(costs[rows, cols].sum())


def hungarian(costs) -> dict[int, int]:
    """Minimum-total-cost matching of every goal to a distinct agent.

    costs is (n_agents, n_goals) with n_goals <= n_agents; inf marks an
    unreachable pair. Returns {agent_index: goal_index}; agents missing from
    the dict are excluded from the chain. Ties between optimal matchings are
    broken toward the lexicographically smallest (agent, goal) pair list.
    """
    costs = np.asarray(costs, dtype=np.float64)
    if costs.ndim != 2:
        raise ValueError("cost matrix must be 2-D")
    n_agents, n_goals = costs.shape
    if n_goals > n_agents:
        raise ValueError(f"more goals ({n_goals}) than agents ({n_agents})")
    if np.any(costs < 0):
        raise ValueError("costs must be nonnegative")
    for goal in range(n_goals):
        if not np.any(np.isfinite(costs[:, goal])):
            raise InfeasibleAssignmentError(goal)

    big = _big_m(costs)
    work = np.where(np.isfinite(costs), costs, big)
    best = _optimal_total(work)

    # Fix pairs greedily in lexicographic order; a pair is kept when an
    # optimal completion through it still reaches the global optimum.
    matching: dict[int, int] = {}
    open_goals = list(range(n_goals))
    open_agents = list(range(n_agents))
    remaining_best = best
    for agent in range(n_agents):
        if not open_goals:
            break
        sub_agents = [a for a in open_agents if a != agent]
        chosen = None
        for goal in open_goals:
            sub_goals = [g for g in open_goals if g != goal]
            if len(sub_goals) > len(sub_agents):
                continue
            if sub_goals:
                rest = _optimal_total(work[np.ix_(sub_agents, sub_goals)])
            else:
                rest = 0.0
            if work[agent, goal] + rest <= remaining_best + _TIE_EPS:
                chosen = goal
                remaining_best = rest
                break
        if chosen is not None:
            matching[agent] = chosen
            open_goals.remove(chosen)
            open_agents.remove(agent)
        else:
            # agent excluded; the optimum must still be reachable without it
            sub = work[np.ix_(sub_agents, open_goals)]
            remaining_best = _optimal_total(sub)
            open_agents.remove(agent)

    for agent, goal in matching.items():
        if not math.isfinite(costs[agent, goal]):
            raise InfeasibleAssignmentError(goal)
    return matching


def matching_total(costs, matching: dict[int, int]) -> float:
    costs = np.asarray(costs, dtype=np.float64)
    return float(sum(costs[a, g] for a, g in matching.items()))


def bottleneck_assignment(costs) -> dict[int, int]:
    """Matching minimizing the largest assigned cost, then total cost.

    Same contract as hungarian(); used by planners that care about the time
    the slowest robot needs rather than the team's summed travel.
    """
    costs = np.asarray(costs, dtype=np.float64)
    values = sorted(set(costs[np.isfinite(costs)].tolist()))
    if not values:
        raise InfeasibleAssignmentError(0)

    def feasible(threshold):
        masked = np.where(costs <= threshold, costs, np.inf)
        try:
            return hungarian(masked)
        except InfeasibleAssignmentError:
            return None

    lo, hi = 0, len(values) - 1
    if feasible(values[hi]) is None:
        # fall through to hungarian for its precise error
        return hungarian(costs)
    while lo < hi:
        mid = (lo + hi) // 2
        if feasible(values[mid]) is not None:
            hi = mid
        else:
            lo = mid + 1
    return feasible(values[lo])
