import math

import numpy as np
import pytest

from relaychain import fmm
from relaychain.world import GridMap, Rect, ScenarioChange, apply_change

import oracles
from conftest import bordered, random_map


class TestPropagate:
    def test_straight_line_values(self, empty100):
        field = fmm.propagate(empty100, (5.5, 50.5))
        for k in (1, 5, 20, 60):
            assert field.value_at((5.5 + k, 50.5)) == pytest.approx(float(k), abs=1e-9)

    def test_source_value_zero_and_occupied_inf(self, empty100):
        field = fmm.propagate(empty100, (5.5, 50.5))
        assert field.value_at((5.5, 50.5)) == 0.0
        assert math.isinf(field.value_at((0.5, 0.5)))  # border wall

    def test_sealed_room_unreachable(self):
        grid = bordered(20, 20)
        walls = grid.walls.copy()
        walls[10:15, 10] = 1
        walls[10:15, 14] = 1
        walls[10, 10:15] = 1
        walls[14, 10:15] = 1
        grid = GridMap(walls)
        field = fmm.propagate(grid, (3.5, 3.5))
        assert math.isinf(field.value_at((12.5, 12.5)))

    def test_source_on_occupied_cell_raises(self, empty10):
        with pytest.raises(ValueError, match="occupied"):
            fmm.propagate(empty10, (0.5, 0.5))

    def test_deterministic_bit_identical(self):
        rng = np.random.default_rng(5)
        grid = random_map(rng, 50, 50, density=0.3, keep_free=[(5, 5)])
        f1 = fmm.propagate(grid, (5.5, 5.5))
        f2 = fmm.propagate(grid, (5.5, 5.5))
        assert np.array_equal(f1.values, f2.values)

    def test_sandwich_on_random_maps(self):
        # euclid <= fmm <= dijkstra8 on every free cell, 5 seeds here; the
        # acceptance suite runs the full 20-map version.
        rng = np.random.default_rng(17)
        for _ in range(5):
            grid = random_map(rng, 60, 60, density=0.3, keep_free=[(7, 9)])
            src = (7.5, 9.5)
            field = fmm.propagate(grid, src)
            oracle = oracles.dijkstra8(grid, src)
            cy, cx = np.mgrid[0 : grid.height, 0 : grid.width]
            euclid = np.sqrt(((cx + 0.5) - src[0]) ** 2 + ((cy + 0.5) - src[1]) ** 2)
            free = grid.cells == 0
            reach = np.isfinite(field.values) & free
            assert np.array_equal(np.isfinite(field.values) & free, np.isfinite(oracle) & free)
            assert np.all(field.values[reach] <= oracle[reach] + 1e-9)
            assert np.all(field.values[reach] >= euclid[reach] - 1e-9)


class TestExtractPath:
    def test_from_source_single_point(self, empty100):
        field = fmm.propagate(empty100, (5.5, 50.5))
        assert fmm.extract_path(field, (5.5, 50.5)) == [(5.5, 50.5)]

    def test_straight_descent_length(self, empty100):
        field = fmm.propagate(empty100, (5.5, 50.5))
        path = fmm.extract_path(field, (15.5, 50.5))
        assert path[0] == (15.5, 50.5)
        assert path[-1] == (5.5, 50.5)
        assert fmm.path_cost(path) == pytest.approx(10.0, rel=0.01)

    def test_values_strictly_decrease(self, empty100):
        field = fmm.propagate(empty100, (5.5, 5.5))
        path = fmm.extract_path(field, (80.5, 30.5))
        vals = [field.value_at(p) for p in path]
        assert all(a > b for a, b in zip(vals, vals[1:]))

    def test_waypoints_adjacent_and_free(self):
        rng = np.random.default_rng(23)
        grid = random_map(rng, 60, 60, density=0.25, keep_free=[(5, 5), (50, 50)])
        field = fmm.propagate(grid, (5.5, 5.5))
        if not field.reachable((50.5, 50.5)):
            pytest.skip("random map disconnected")
        path = fmm.extract_path(field, (50.5, 50.5))
        diag = grid.resolution * math.sqrt(2.0) + 1e-9
        for (x0, y0), (x1, y1) in zip(path, path[1:]):
            assert math.hypot(x1 - x0, y1 - y0) <= diag
        for p in path:
            assert grid.is_free(p)

    def test_l_corridor_cost_near_dijkstra(self):
        grid = bordered(40, 40)
        walls = grid.walls.copy()
        walls[1:30, 20] = 1  # L around this wall
        grid = GridMap(walls)
        src = (5.5, 5.5)
        dst = (35.5, 5.5)
        field = fmm.propagate(grid, src)
        path = fmm.extract_path(field, dst)
        oracle = oracles.dijkstra8(grid, src)
        dy, dx = grid.cell_of(dst)[1], grid.cell_of(dst)[0]
        assert fmm.path_cost(path) <= oracle[dy, dx] * 1.05 + 1e-9

    def test_unreachable_raises_with_reason(self):
        grid = bordered(20, 20)
        walls = grid.walls.copy()
        walls[8:13, 8] = 1
        walls[8:13, 12] = 1
        walls[8, 8:13] = 1
        walls[12, 8:13] = 1
        grid = GridMap(walls)
        field = fmm.propagate(grid, (3.5, 3.5))
        with pytest.raises(fmm.UnreachableError) as exc:
            fmm.extract_path(field, (10.5, 10.5))
        assert exc.value.reason == "unreachable"


class TestPathCost:
    def test_single_point_zero(self):
        assert fmm.path_cost([(1.0, 1.0)]) == 0.0

    def test_two_points(self):
        assert fmm.path_cost([(0.0, 0.0), (3.0, 0.0)]) == 3.0

    def test_square_perimeter(self):
        square = [(0.0, 0.0), (5.0, 0.0), (5.0, 5.0), (0.0, 5.0), (0.0, 0.0)]
        assert fmm.path_cost(square) == 20.0

    def test_empty_raises(self):
        with pytest.raises(ValueError):
            fmm.path_cost([])


class TestFieldCache:
    def test_cache_hit_on_same_map_and_cell(self, empty100):
        cache = fmm.FieldCache()
        f1 = cache.field(empty100, (5.5, 5.5))
        f2 = cache.field(empty100, (5.5, 5.5))
        assert cache.hits == 1
        assert f1.values is f2.values

    def test_rebinds_exact_source_within_cell(self, empty100):
        cache = fmm.FieldCache()
        cache.field(empty100, (5.5, 5.5))
        f2 = cache.field(empty100, (5.2, 5.9))
        assert f2.source == (5.2, 5.9)
        assert cache.hits == 1

    def test_map_change_busts_cache(self, empty100):
        cache = fmm.FieldCache()
        cache.field(empty100, (5.5, 5.5))
        other = apply_change(
            empty100, ScenarioChange("obstacle_add", Rect(50, 50, 52, 52), 0.0)
        )
        cache.field(other, (5.5, 5.5))
        assert cache.misses == 2
