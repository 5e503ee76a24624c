import math
import random

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from telesim.mapping import (FREE_CELL, OBSTACLE, UNKNOWN, LandmarkGrid,
                             OccupancyMap, inverse_spatial_transform,
                             object_to_point, spatial_transform,
                             update_landmarks, update_occupancy)
from telesim.perception import Detection
from telesim.simulator import Action, Simulator
from telesim.world import Point, Pose, generate_layout

finite = {"allow_nan": False, "allow_infinity": False}


@settings(max_examples=200, deadline=None)
@given(x=st.floats(min_value=-50, max_value=50, **finite),
       y=st.floats(min_value=-50, max_value=50, **finite),
       px=st.floats(min_value=-50, max_value=50, **finite),
       py=st.floats(min_value=-50, max_value=50, **finite),
       theta=st.floats(min_value=-720, max_value=720, **finite))
def test_transform_round_trip(x, y, px, py, theta):
    pose = Pose(px, py, theta)
    world = spatial_transform([Point(x, y)], pose)[0]
    back = inverse_spatial_transform([world], pose)[0]
    assert math.isclose(back.x, x, abs_tol=1e-9)
    assert math.isclose(back.y, y, abs_tol=1e-9)


def test_transform_known_values():
    # robot at origin facing +y: ego +x (ahead) becomes world +y
    pose = Pose(0.0, 0.0, 90.0)
    w = spatial_transform([Point(1.0, 0.0)], pose)[0]
    assert w.x == pytest.approx(0.0, abs=1e-12)
    assert w.y == pytest.approx(1.0)
    # ego +y (left of heading) becomes world -x
    w = spatial_transform([Point(0.0, 1.0)], pose)[0]
    assert w.x == pytest.approx(-1.0)
    assert w.y == pytest.approx(0.0, abs=1e-12)


def test_transform_translation_only():
    pose = Pose(3.0, 4.0, 0.0)
    w = spatial_transform([Point(1.0, 2.0)], pose)[0]
    assert (w.x, w.y) == pytest.approx((4.0, 6.0))


def test_occupancy_free_ray_and_obstacle_endpoint():
    lay = generate_layout(seed=2)
    occ = OccupancyMap.for_layout(lay)
    sim = Simulator(lay, start=0, seed=0)
    obs = sim.observe()
    update_occupancy(occ, obs)
    pc, pr = occ.cell_of(obs.pose.point)
    assert occ.state(pc, pr) == FREE_CELL
    assert (occ.grid == OBSTACLE).sum() > 0
    assert (occ.grid == UNKNOWN).sum() > 0   # fog remains elsewhere


def test_occupancy_never_marks_walls_free():
    lay = generate_layout(seed=5)
    occ = OccupancyMap.for_layout(lay)
    sim = Simulator(lay, start=0, seed=1)
    rng = random.Random(7)
    moves = [Action.FORWARD, Action.TURN_LEFT, Action.TURN_RIGHT]
    for _ in range(40):
        obs = sim.observe()
        update_occupancy(occ, obs)
        sim.act(rng.choice(moves))
        sim.step_world()
    rows, cols = np.nonzero(occ.grid == FREE_CELL)
    for r, c in zip(rows, cols):
        assert lay.is_free_cell(c, r), f"wall cell ({c},{r}) marked free"


def test_obstacle_is_sticky():
    occ = OccupancyMap(4, 4, 0.25)
    occ.mark(1, 1, OBSTACLE)
    occ.mark(1, 1, FREE_CELL)
    assert occ.state(1, 1) == OBSTACLE
    occ.mark(2, 2, FREE_CELL)
    occ.mark(2, 2, UNKNOWN)
    assert occ.state(2, 2) == FREE_CELL  # free never fades back to fog


def test_version_bumps_on_change_only():
    occ = OccupancyMap(4, 4, 0.25)
    v0 = occ.version
    occ.mark(0, 0, FREE_CELL)
    assert occ.version == v0 + 1
    occ.mark(0, 0, FREE_CELL)
    assert occ.version == v0 + 1


def test_drain_dirty_reports_each_change_once():
    occ = OccupancyMap(4, 4, 0.25)
    occ.mark(0, 0, FREE_CELL)
    occ.mark(1, 0, OBSTACLE)
    patch = occ.drain_dirty()
    assert sorted(patch) == [(0, 0, FREE_CELL), (1, 0, OBSTACLE)]
    assert occ.drain_dirty() == []


def test_object_to_point_standoff_toward_robot():
    occ = OccupancyMap(40, 40, 0.25)
    occ.grid[:, :] = FREE_CELL
    pose = Pose(1.0, 5.0, 0.0)
    det = Detection("cup", 0.9, bearing=0.0, angular_width=5.0, range=3.0)
    goal = object_to_point(det, pose, occ)
    world = Point(4.0, 5.0)
    assert goal.dist(world) == pytest.approx(0.5, abs=0.2)
    assert goal.x < world.x   # pulled back toward the robot


def test_object_to_point_unreachable_raises():
    occ = OccupancyMap(40, 40, 0.25)   # all unknown
    pose = Pose(1.0, 5.0, 0.0)
    det = Detection("cup", 0.9, bearing=0.0, angular_width=5.0, range=3.0)
    with pytest.raises(ValueError):
        object_to_point(det, pose, occ)


def test_landmark_grid_marks_explored_and_branches():
    lay = generate_layout(seed=3)
    sim = Simulator(lay, start=0, seed=0)
    obs = sim.observe()
    grid = LandmarkGrid(obs.pose.point, n=30)
    update_landmarks(grid, obs, openings=[])
    idx = grid.index_of(obs.pose.point)
    cell = grid.cell(idx)
    assert cell.explored
    assert cell.sector_mask != 0
    assert len(cell.observation_points) == 1
    assert not cell.branch
    update_landmarks(grid, obs, openings=[], passed_unentered_opening=True)
    assert cell.branch


def test_landmark_index_round_trip():
    grid = LandmarkGrid(Point(5.0, 5.0), n=10, cell_m=1.0)
    idx = grid.index_of(Point(5.2, 5.2))
    center = grid.center_of(idx)
    assert grid.index_of(center) == idx
