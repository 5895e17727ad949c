"""
Geometry primitives: spatial index, steering, collision checks, ray casting
and world file parsing.
"""
import math

import numpy as np
import pytest
from scipy import stats

from app.core.exceptions import CollisionError, DatasetError, EmptyIndexError, NoFreeSpaceError
from app.core.geometry import (GridWorld, Point2, SeededRng, SpatialIndex, near, nearest, no_collision,
                               ray_cast, sample_uniform, steer, traverse_segment)
from app.utils.world_parser import WorldFileParser


def test_point_rejects_non_finite():
    with pytest.raises(ValueError):
        Point2(math.nan, 0.0)


def test_seeded_rng_is_reproducible():
    a, b = SeededRng(7), SeededRng(7)
    assert [a.uniform() for _ in range(5)] == [b.uniform() for _ in range(5)]
    assert a.spawn().seed == b.spawn().seed


def test_spatial_index_matches_brute_force():
    rng = np.random.default_rng(1)
    points = [Point2(x, y) for x, y in rng.uniform(0, 20, size=(400, 2))]
    index = SpatialIndex()
    for p in points:
        index.add(p)
    for q in (Point2(x, y) for x, y in rng.uniform(0, 20, size=(50, 2))):
        distances = [q.distance_to(p) for p in points]
        assert index.nearest_index(q) == int(np.argmin(distances))
        expected = [i for i, d in enumerate(distances) if d <= 1.5]
        assert index.near_indices(q, 1.5) == expected


def test_nearest_ties_go_to_first_inserted():
    index = SpatialIndex([Point2(1, 1), Point2(1, 1), Point2(3, 3)])
    assert index.nearest_index(Point2(1, 1)) == 0
    assert nearest(index, Point2(2.9, 2.9)) == Point2(3, 3)
    assert near(index, Point2(1, 1), 0.5) == [Point2(1, 1), Point2(1, 1)]


def test_spatial_index_keys():
    index = SpatialIndex()
    index.add(Point2(0, 0), key=10)
    index.add(Point2(5, 5), key=20)
    assert index.key(index.nearest_index(Point2(4, 4))) == 20


def test_empty_index_and_bad_radius():
    with pytest.raises(EmptyIndexError):
        SpatialIndex().nearest_index(Point2(0, 0))
    with pytest.raises(ValueError):
        SpatialIndex([Point2(0, 0)]).near_indices(Point2(0, 0), 0.0)


def test_steer():
    assert steer(Point2(0, 0), Point2(0.5, 0), 1.0) == Point2(0.5, 0)
    stepped = steer(Point2(0, 0), Point2(3, 4), 1.0)
    assert stepped.x == pytest.approx(0.6)
    assert stepped.y == pytest.approx(0.8)
    with pytest.raises(ValueError):
        steer(Point2(0, 0), Point2(1, 1), 0.0)


def test_steer_through_an_intermediate_point_matches_the_direct_step():
    rng = np.random.default_rng(17)
    for _ in range(500):
        a, c = (Point2(*xy) for xy in rng.uniform(-10, 10, size=(2, 2)))
        d1, d2 = rng.uniform(0.01, 5.0, size=2)
        direct = steer(a, c, d1 + d2)
        via = steer(steer(a, c, d1), c, d2)
        assert abs(via.x - direct.x) <= 1e-12
        assert abs(via.y - direct.y) <= 1e-12
        assert a.distance_to(steer(a, c, d1)) <= d1 + 1e-12


def test_sample_uniform_returns_free_points(open_world):
    rng = SeededRng(3)
    for _ in range(200):
        p = sample_uniform(open_world, rng)
        assert open_world.is_free_point(p)


def test_sample_uniform_without_free_space():
    with pytest.raises(NoFreeSpaceError):
        sample_uniform(GridWorld(np.ones((4, 4), dtype=bool), 1.0), SeededRng(0))


def test_sample_uniform_is_uniform_over_free_cells():
    world = GridWorld(np.zeros((10, 10), dtype=bool), 1.0)
    rng = SeededRng(11)
    counts = np.zeros(world.n_cells)
    n = 10_000
    for _ in range(n):
        p = sample_uniform(world, rng)
        counts[world.flat_index(*world.cell_of(p))] += 1
    statistic = stats.chisquare(counts).statistic
    dof = world.n_cells - 1
    # chi-square with k dof has mean k and variance 2k
    assert abs(statistic - dof) <= 4.0 * math.sqrt(2.0 * dof)


def test_no_collision(open_world):
    a, b = Point2(2, 2), Point2(8, 7)
    assert no_collision(a, b, open_world)
    assert no_collision(b, a, open_world)
    # the border wall occupies x in [9.8, 10)
    assert not no_collision(a, Point2(9.9, 2), open_world)
    assert not no_collision(a, Point2(12, 2), open_world)


def test_collision_is_symmetric_through_a_wall():
    cells = np.zeros((20, 20), dtype=bool)
    cells[:, 10] = True
    world = GridWorld(cells, 0.5)
    a, b = Point2(1.0, 3.3), Point2(9.0, 6.1)
    assert not no_collision(a, b, world)
    assert not no_collision(b, a, world)


def test_traverse_segment_includes_endpoints(open_world):
    cells = traverse_segment(open_world, Point2(1.05, 1.05), Point2(2.05, 1.05))
    assert cells[0] == (5, 5)
    assert cells[-1] == (10, 5)
    assert len(cells) == 6


def test_ray_cast_hits_wall(open_world):
    beam = ray_cast(open_world, Point2(5.0, 5.0), 0.0, 10.0)
    assert beam.range == pytest.approx(4.8)
    assert beam.hit_cell == open_world.flat_index(49, 25)
    assert len(beam.cells) == 24
    assert beam.perception_cells[-1] == beam.hit_cell
    assert beam.distances[0] == 0.0


def test_ray_cast_stops_at_max_range(open_world):
    beam = ray_cast(open_world, Point2(5.0, 5.0), math.pi / 2, 2.0)
    assert beam.range == 2.0
    assert beam.hit_cell is None
    assert beam.perception_cells == beam.cells


def test_ray_cast_leaving_the_grid_ends_the_beam():
    world = GridWorld(np.zeros((10, 10), dtype=bool), 1.0)
    beam = ray_cast(world, Point2(5.5, 5.5), 0.0, 20.0)
    assert beam.range == pytest.approx(4.5)
    assert beam.hit_cell is None


def test_ray_cast_from_obstacle(open_world):
    with pytest.raises(CollisionError):
        ray_cast(open_world, Point2(0.1, 0.1), 0.0, 5.0)
    with pytest.raises(ValueError):
        ray_cast(open_world, Point2(5, 5), 0.0, 0.0)


def test_ray_cast_range_shrinks_as_obstacles_are_added():
    rng = np.random.default_rng(23)
    cells = np.zeros((20, 20), dtype=bool)
    origin = Point2(5.1, 5.3)
    angles = np.linspace(-math.pi, math.pi, 16, endpoint=False)
    previous = [ray_cast(GridWorld(cells.copy(), 0.5), origin, a, 8.0).range for a in angles]
    for _ in range(40):
        ix, iy = rng.integers(0, 20, size=2)
        if (ix, iy) == (10, 10):
            continue
        cells[iy, ix] = True
        world = GridWorld(cells.copy(), 0.5)
        ranges = [ray_cast(world, origin, a, 8.0).range for a in angles]
        assert all(r <= p for r, p in zip(ranges, previous))
        previous = ranges


def test_world_parser_orientation():
    world = WorldFileParser.parse_world_string("3 2 0.5\n#..\n...\n")
    assert world.width == 3 and world.height == 2
    # first text row is the top of the map
    assert world.is_occupied(0, 1)
    assert not world.is_occupied(0, 0)
    assert WorldFileParser.format_world(world) == "3 2 0.5\n#..\n...\n"


@pytest.mark.parametrize("text", ["", "3 2\n...\n...\n", "3 2 0.5\n...\n", "2 1 1.0\n.x\n"])
def test_world_parser_rejects_bad_files(text):
    with pytest.raises(DatasetError):
        WorldFileParser.parse_world_string(text)


def test_missing_world_file_names_the_path(tmp_path):
    missing = tmp_path / "nowhere.txt"
    with pytest.raises(FileNotFoundError, match="nowhere.txt"):
        WorldFileParser.parse_world(missing)


def test_desk_world(desk_world):
    assert desk_world.cells.shape == (100, 100)
    assert desk_world.resolution == 0.2
    assert desk_world.is_free_point(Point2(10.0, 2.0))
