import math
from types import SimpleNamespace

import numpy as np
import pytest

from relaychain import coordination as coord
from relaychain import fmm, world
from relaychain.coordination import (
    AgentDirective,
    Belief,
    GroupView,
    group_plan,
    intercept,
    merge_groups,
    split_view,
    trapped_routine,
    update_information,
)
from relaychain.world import AgentState, GridMap, Group, Rect, ScenarioChange, apply_change

import oracles
from conftest import bordered


PARAMS = SimpleNamespace(c_range=30.0, v_range=30.0, relay_safety=0.95,
                         sense_occlusion=True)


def make_view(grid, members, positions, others=()):
    """GroupView over agents members+others; everyone starts with the same map."""
    belief = Belief.initial(grid)
    attributed = {aid: Belief.initial(grid) for aid, _ in others}
    believed = {aid: pos for aid, pos in list(positions.items())}
    for aid, pos in others:
        believed[aid] = pos
    return GroupView(
        group=Group(id=min(members), members=tuple(sorted(members))),
        belief=belief,
        attributed=attributed,
        believed_positions=believed,
    )


class TestBelief:
    def test_merge_newer_wins(self, empty10):
        a = Belief.initial(empty10)
        b = Belief.initial(empty10)
        closed = apply_change(empty10, ScenarioChange("obstacle_add", Rect(4, 4, 5, 5), 0.0))
        idx = np.flatnonzero(closed.flat() != empty10.flat())
        b.absorb(closed.cells, idx, np.full(idx.size, 7.0))
        merged = a.merge(b)
        assert merged.grid.cells[4, 4] == 1
        assert merged.obs_time[4, 4] == 7.0
        # conflicting older info loses
        c = Belief.initial(empty10)
        c.absorb(empty10.cells, idx, np.full(idx.size, 3.0))
        merged2 = b.merge(c)
        assert merged2.grid.cells[4, 4] == 1

    def test_merge_disjoint_commutes(self, empty10):
        base = Belief.initial(empty10)
        m1 = apply_change(empty10, ScenarioChange("obstacle_add", Rect(2, 2, 3, 3), 0.0))
        m2 = apply_change(empty10, ScenarioChange("obstacle_add", Rect(6, 6, 7, 7), 0.0))
        a = base.copy()
        idx1 = np.flatnonzero(m1.flat() != empty10.flat())
        a.absorb(m1.cells, idx1, np.full(idx1.size, 2.0))
        b = base.copy()
        idx2 = np.flatnonzero(m2.flat() != empty10.flat())
        b.absorb(m2.cells, idx2, np.full(idx2.size, 5.0))
        ab = a.merge(b)
        ba = b.merge(a)
        assert np.array_equal(ab.grid.cells, ba.grid.cells)
        assert np.array_equal(ab.obs_time, ba.obs_time)
        assert ab.grid.cells[2, 2] == 1 and ab.grid.cells[6, 6] == 1

    def test_update_information_carries_source_stamps(self):
        truth_grid = bordered(30, 30)
        changed = apply_change(
            truth_grid, ScenarioChange("obstacle_add", Rect(10, 10, 11, 11), 0.0)
        )
        truth = Belief(changed, np.zeros((30, 30)))
        truth.obs_time[10:12, 10:12] = 42.0
        belief = Belief.initial(truth_grid)
        changed_flag = update_information(belief, truth, [(5.5, 5.5)], 30.0)
        assert changed_flag
        assert belief.grid.cells[10, 10] == 1
        assert belief.obs_time[10, 10] == 42.0


class TestIntercept:
    def test_already_on_path_zero_length(self, empty100):
        path = [(10.5 + i, 40.5) for i in range(20)]
        got = intercept(path, (15.5, 40.5), empty100)
        assert fmm.path_cost(got) == 0.0

    def test_perpendicular_foot(self, empty100):
        # straight path 5 m north of x: interception at the closest waypoint
        path = [(10.5 + i, 45.5) for i in range(40)]
        got = intercept(path, (30.5, 40.5), empty100)
        assert fmm.path_cost(got) == pytest.approx(5.0, rel=0.02)
        assert got[0] == (30.5, 40.5)
        assert got[-1] == (30.5, 45.5)

    def test_wall_forces_far_side_and_matches_waypoint_argmin(self):
        grid = bordered(40, 40)
        walls = grid.walls.copy()
        walls[10:31, 20] = 1  # vertical wall, gap at the top only
        grid = GridMap(walls)
        path = [(25.5, 10.5 + i) for i in range(25)]  # runs along far side
        x = (15.5, 20.5)
        got = intercept(path, x, grid)
        # brute force: evaluate the field at every waypoint
        dfield = fmm.propagate(grid, x)
        costs = [dfield.value_at(wp) for wp in path]
        best = min(c for c in costs if math.isfinite(c))
        assert got[-1] == path[costs.index(best)]
        # extracted grid path stays close to the geodesic value
        assert best <= fmm.path_cost(got) <= best * 1.05

    def test_unreachable_path_heads_to_nearest_reachable(self):
        grid = bordered(40, 40)
        walls = grid.walls.copy()
        walls[18:27, 18] = 1
        walls[18:27, 26] = 1
        walls[18, 18:27] = 1
        walls[26, 18:27] = 1
        grid = GridMap(walls)  # sealed box with interior
        path = [(20.5 + i, 22.5) for i in range(4)]  # entirely inside the box
        got = intercept(path, (5.5, 5.5), grid)
        # ends adjacent to the box, as близко as the walls allow
        end = got[-1]
        assert math.dist(end, path[-1]) <= math.dist((5.5, 5.5), path[-1])
        assert grid.is_free(end)

    def test_empty_target_rejected(self, empty10):
        with pytest.raises(ValueError):
            intercept([], (2.5, 2.5), empty10)


class TestTrappedRoutine:
    def _room(self, door_open_second=False):
        grid = bordered(30, 30)
        walls = grid.walls.copy()
        # room [10..20]x[10..20] with a door gap at (15,10) and optionally
        # a second gap at (20,15)
        walls[10, 10:21] = 1
        walls[20, 10:21] = 1
        walls[10:21, 10] = 1
        walls[10:21, 20] = 1
        walls[10, 15] = 0  # south access
        if door_open_second:
            walls[15, 20] = 0  # east access
        return GridMap(walls)

    def test_sealed_room_full_circuit_returns_to_start(self):
        grid = self._room()
        # seal the only access
        sealed = apply_change(
            grid, ScenarioChange("obstacle_add", Rect(15, 10, 15, 10), 0.0)
        )
        circuit = trapped_routine((15.5, 5.5), sealed, (15.5, 10.5))
        assert len(circuit) > 10
        assert circuit[0] == circuit[-1]
        # circuit stays outside the room
        for x, y in circuit:
            cx, cy = sealed.cell_of((x, y))
            assert not (10 < cx < 20 and 10 < cy < 20)

    def test_room_with_second_door_circuit_passes_it(self):
        grid = self._room(door_open_second=True)
        sealed = apply_change(
            grid, ScenarioChange("obstacle_add", Rect(15, 10, 15, 10), 0.0)
        )
        circuit = trapped_routine((15.5, 5.5), sealed, (15.5, 10.5))
        # flood fill confirms the room is still reachable via the east door;
        # the circuit passes next to that opening
        dfield = fmm.propagate(sealed, (15.5, 5.5))
        assert dfield.reachable((15.5, 15.5))
        near_opening = [
            p for p in circuit if math.dist(p, (21.5, 15.5)) <= math.sqrt(2) + 1e-6
        ]
        assert near_opening

    def test_agent_inside_sealed_room_walks_inner_walls(self):
        grid = self._room()
        sealed = apply_change(
            grid, ScenarioChange("obstacle_add", Rect(15, 10, 15, 10), 0.0)
        )
        circuit = trapped_routine((15.5, 15.5), sealed, (15.5, 10.5))
        assert circuit[0] == circuit[-1]
        for x, y in circuit:
            cx, cy = sealed.cell_of((x, y))
            assert 10 < cx < 20 and 10 < cy < 20

    def test_free_access_rejected(self):
        grid = self._room()
        with pytest.raises(ValueError):
            trapped_routine((15.5, 5.5), grid, (15.5, 5.5))


class TestGroupPlanConsensus:
    def test_single_group_reduces_to_plan_chain(self, empty100):
        positions = {1: (10.5, 10.5), 2: (12.5, 10.5), 3: (14.5, 10.5)}
        view = make_view(empty100, [1, 2, 3], positions)
        group_plan(view, (5.5, 5.5), (60.5, 60.5), PARAMS)
        assert view.prediction_count == 1
        assert view.own_plan.feasible
        assert view.intercepts_issued == 0
        for directive in view.directives.values():
            kinds = [k for k, _ in directive.segments]
            assert kinds == [coord.SEG_OWN_GOAL]

    def test_identical_beliefs_no_intercepts(self, empty100):
        # two groups, same information: predictions match, nobody intercepts
        g1_pos = {1: (10.5, 10.5)}
        g2_pos = {2: (70.5, 70.5)}
        v1 = make_view(empty100, [1], g1_pos, others=[(2, (70.5, 70.5))])
        v2 = make_view(empty100, [2], g2_pos, others=[(1, (10.5, 10.5))])
        group_plan(v1, (5.5, 5.5), (80.5, 80.5), PARAMS)
        group_plan(v2, (5.5, 5.5), (80.5, 80.5), PARAMS)
        assert v1.prediction_count == 2  # own plan + the other group
        assert v2.prediction_count == 2
        assert v1.intercepts_issued == 0
        assert v2.intercepts_issued == 0


class TestFig2Mismatch:
    """Two groups, an obstacle only one of them has seen: the informed group
    detects the goal mismatch of its chain parent and intercepts it.

    v_range is kept short so the informed group cannot credit the stale
    group's agent with having seen the obstacle from its position.
    """

    PARAMS = SimpleNamespace(c_range=30.0, v_range=12.0, relay_safety=0.95,
                             sense_occlusion=True)

    def _setup(self):
        truth0 = bordered(100, 100)
        base, goal = (5.5, 5.5), (45.5, 45.5)
        obstacle = ScenarioChange("obstacle_add", Rect(22, 22, 28, 28), 0.0)
        truth = apply_change(truth0, obstacle)
        a1 = (5.5, 20.5)   # group 1, closer to base, has not seen it
        a2 = (45.5, 12.5)  # group 2, has seen the obstacle
        a3 = (47.5, 14.5)  # group 2 teammate
        v1 = make_view(truth0, [1], {1: a1}, others=[(2, a2), (3, a3)])
        v2 = make_view(truth0, [2, 3], {2: a2, 3: a3}, others=[(1, a1)])
        # group 2 knows the obstacle (stamped later than the initial map)
        idx = np.flatnonzero(truth.flat() != truth0.flat())
        v2.belief.absorb(truth.cells, idx, np.full(idx.size, 1.0))
        return truth0, base, goal, v1, v2

    def test_informed_group_intercepts_parent(self):
        _, base, goal, v1, v2 = self._setup()
        group_plan(v1, base, goal, self.PARAMS)
        group_plan(v2, base, goal, self.PARAMS)
        # group 1 sees no divergence: its prediction of group 2 matches its
        # own plan, so no intercept
        assert v1.intercepts_issued == 0
        assert v1.own_plan.feasible
        # group 2 predicts group 1 on stale info: parent goal differs
        assert v2.own_plan.feasible
        assert v2.intercepts_issued == 1
        kinds = [k for k, _ in v2.directives[2].segments]
        assert kinds[0] == coord.SEG_INTERCEPT_PARENT
        # agent 3's parent is agent 2, same group: no intercept for it
        kinds3 = [k for k, _ in v2.directives[3].segments]
        assert coord.SEG_INTERCEPT_PARENT not in kinds3
        # the plans disagree on agent 1's goal cell
        own_goal = v2.own_plan.goal_cell_of(0, 1.0)
        predicted = None
        for key, plan in v2.predicted_plans.items():
            if 1 in key:
                predicted = plan.goal_cell_of(0, 1.0)
        assert predicted is not None and predicted != own_goal

    def test_intercept_targets_parents_predicted_path(self):
        _, base, goal, v1, v2 = self._setup()
        group_plan(v2, base, goal, self.PARAMS)
        seg_kind, seg = v2.directives[2].segments[0]
        predicted_path = None
        for key, plan in v2.predicted_plans.items():
            if 1 in key:
                predicted_path = plan.paths[0]
        costs_field = fmm.propagate(v2.belief.grid, (45.5, 12.5))
        costs = [costs_field.value_at(wp) for wp in predicted_path]
        best = min(c for c in costs if math.isfinite(c))
        assert seg[-1] == predicted_path[costs.index(best)]
        # grid path cost within 5% of the grid-path oracle to that waypoint
        oracle = oracles.dijkstra8(v2.belief.grid, (45.5, 12.5))
        wx, wy = v2.belief.grid.cell_of(seg[-1])
        assert best <= fmm.path_cost(seg) <= oracle[wy, wx] * 1.05 + 1e-9


class TestMergeAndSplit:
    def test_merge_identity(self, empty100):
        view = make_view(empty100, [1], {1: (10.5, 10.5)}, others=[(2, (50.5, 50.5))])
        assert merge_groups(view, view) is view

    def test_merge_unions_information(self, empty100):
        m1 = apply_change(empty100, ScenarioChange("obstacle_add", Rect(20, 20, 22, 22), 0.0))
        m2 = apply_change(empty100, ScenarioChange("door_open", "none", 0.0)) \
            if False else apply_change(empty100, ScenarioChange("obstacle_add", Rect(60, 60, 62, 62), 0.0))
        v1 = make_view(empty100, [1], {1: (10.5, 10.5)},
                       others=[(2, (50.5, 50.5)), (3, (90.5, 90.5))])
        v2 = make_view(empty100, [2], {2: (50.5, 50.5)},
                       others=[(1, (10.5, 10.5)), (3, (90.5, 90.5))])
        idx1 = np.flatnonzero(m1.flat() != empty100.flat())
        v1.belief.absorb(m1.cells, idx1, np.full(idx1.size, 2.0))
        idx2 = np.flatnonzero(m2.flat() != empty100.flat())
        v2.belief.absorb(m2.cells, idx2, np.full(idx2.size, 3.0))
        merged = merge_groups(v1, v2)
        assert merged.group.members == (1, 2)
        assert merged.belief.grid.cells[21, 21] == 1
        assert merged.belief.grid.cells[61, 61] == 1
        assert set(merged.attributed) == {3}
        # member positions come from each agent's own former view
        assert merged.believed_positions[1] == (10.5, 10.5)
        assert merged.believed_positions[2] == (50.5, 50.5)

    def test_merge_commutes_on_disjoint_updates(self, empty100):
        m1 = apply_change(empty100, ScenarioChange("obstacle_add", Rect(20, 20, 22, 22), 0.0))
        m2 = apply_change(empty100, ScenarioChange("obstacle_add", Rect(60, 60, 62, 62), 0.0))
        def build():
            v1 = make_view(empty100, [1], {1: (10.5, 10.5)}, others=[(2, (50.5, 50.5))])
            v2 = make_view(empty100, [2], {2: (50.5, 50.5)}, others=[(1, (10.5, 10.5))])
            idx1 = np.flatnonzero(m1.flat() != empty100.flat())
            v1.belief.absorb(m1.cells, idx1, np.full(idx1.size, 2.0))
            idx2 = np.flatnonzero(m2.flat() != empty100.flat())
            v2.belief.absorb(m2.cells, idx2, np.full(idx2.size, 3.0))
            return v1, v2
        v1, v2 = build()
        ab = merge_groups(v1, v2)
        v1, v2 = build()
        ba = merge_groups(v2, v1)
        assert np.array_equal(ab.belief.grid.cells, ba.belief.grid.cells)
        assert np.array_equal(ab.belief.obs_time, ba.belief.obs_time)

    def test_split_forks_attribution_from_shared_belief(self, empty100):
        view = make_view(empty100, [1, 2], {1: (10.5, 10.5), 2: (12.5, 10.5)},
                         others=[(3, (90.5, 90.5))])
        m1 = apply_change(empty100, ScenarioChange("obstacle_add", Rect(30, 30, 31, 31), 0.0))
        idx = np.flatnonzero(m1.flat() != empty100.flat())
        view.belief.absorb(m1.cells, idx, np.full(idx.size, 4.0))
        fork = split_view(view, (2,))
        assert fork.group.members == (2,)
        # the departed teammate is attributed everything the group knew
        assert fork.attributed[1].grid.cells[30, 30] == 1
        assert fork.attributed[3].grid.cells[30, 30] == 0
        assert fork.belief.grid.cells[30, 30] == 1
