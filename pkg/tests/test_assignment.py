import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from relaychain.assignment import (
    InfeasibleAssignmentError,
    hungarian,
    matching_total,
)

import oracles


class TestHungarian:
    def test_single_entry(self):
        assert hungarian([[5.0]]) == {0: 0}

    def test_unique_diagonal_optimum(self):
        match = hungarian([[1.0, 10.0], [10.0, 1.0]])
        assert match == {0: 0, 1: 1}
        assert matching_total([[1.0, 10.0], [10.0, 1.0]], match) == 2.0

    def test_rectangular_excludes_extra_agents(self):
        costs = np.array([[1.0, 2.0], [3.0, 4.0], [0.5, 0.5]])
        match = hungarian(costs)
        assert len(match) == 2
        assert len(set(match.values())) == 2
        # 3 agents, 2 goals: exactly one agent excluded
        assert len(set(range(3)) - set(match)) == 1

    def test_matches_brute_force_on_random_rectangular(self):
        rng = np.random.default_rng(42)
        for _ in range(300):
            costs = rng.uniform(0.0, 100.0, size=(7, 5))
            match = hungarian(costs)
            total = matching_total(costs, match)
            want_total, want_match = oracles.brute_force_assignment(costs)
            assert total == pytest.approx(want_total, abs=1e-9)
            assert tuple(sorted(match.items())) == want_match

    def test_lexicographic_tie_break(self):
        # every matching costs 2: the smallest pair list is (0,0),(1,1)
        costs = np.ones((2, 2))
        assert hungarian(costs) == {0: 0, 1: 1}
        # 3 agents, 1 goal, all equal: agent 0 wins
        assert hungarian(np.ones((3, 1))) == {0: 0}

    def test_unreachable_entries_avoided(self):
        costs = np.array([[np.inf, 1.0], [2.0, np.inf]])
        assert hungarian(costs) == {0: 1, 1: 0}

    def test_goal_without_finite_agent_raises(self):
        costs = np.array([[np.inf, 1.0], [np.inf, 2.0]])
        with pytest.raises(InfeasibleAssignmentError) as exc:
            hungarian(costs)
        assert exc.value.goal == 0

    def test_conflicting_finite_entries_infeasible(self):
        # only agent 0 can reach either goal; no injective assignment exists
        costs = np.array([[1.0, 1.0], [np.inf, np.inf]])
        with pytest.raises(InfeasibleAssignmentError):
            hungarian(costs)

    def test_more_goals_than_agents_rejected(self):
        with pytest.raises(ValueError, match="more goals"):
            hungarian(np.ones((2, 3)))

    @settings(max_examples=100, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_row_permutation_equivariance(self, seed):
        rng = np.random.default_rng(seed)
        costs = rng.uniform(0.0, 50.0, size=(6, 4))
        match = hungarian(costs)
        perm = rng.permutation(6)
        permuted = costs[perm]
        match_p = hungarian(permuted)
        # agent i of the permuted problem is agent perm[i] of the original
        assert {int(perm[a]): g for a, g in match_p.items()} == match

    @settings(max_examples=100, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_row_constant_shift_invariance(self, seed):
        rng = np.random.default_rng(seed)
        costs = rng.uniform(0.0, 50.0, size=(5, 5))
        match = hungarian(costs)
        shifted = costs.copy()
        shifted[2] += 17.0
        assert hungarian(shifted) == match
