"""Geocentric occupancy map, spatial transform, landmark grid, object mapper."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .world import Layout, Point, Pose

UNKNOWN = 0
FREE_CELL = 1
OBSTACLE = 2

FULL_SECTOR_MASK = (1 << 12) - 1  # twelve 30-degree view sectors


def spatial_transform_array(ex, ey, pose: Pose):
    """Array form of the ego-to-world transform; ex/ey are numpy arrays."""
    th = math.radians(pose.theta)
    c, s = math.cos(th), math.sin(th)
    return pose.x + c * ex - s * ey, pose.y + s * ex + c * ey


def spatial_transform(ego_points, pose: Pose):
    """Egocentric points to world frame: world = pos + Rot(theta) * ego."""
    th = math.radians(pose.theta)
    c, s = math.cos(th), math.sin(th)
    return [Point(pose.x + c * p.x - s * p.y, pose.y + s * p.x + c * p.y)
            for p in ego_points]


def inverse_spatial_transform(world_points, pose: Pose):
    th = math.radians(pose.theta)
    c, s = math.cos(th), math.sin(th)
    out = []
    for p in world_points:
        dx, dy = p.x - pose.x, p.y - pose.y
        out.append(Point(c * dx + s * dy, -s * dx + c * dy))
    return out


class OccupancyMap:
    """Geocentric grid of Unknown/Free/Obstacle at the layout's resolution."""

    def __init__(self, width: int, height: int, cell_size: float):
        self.width = width
        self.height = height
        self.cell_size = cell_size
        self.grid = np.zeros((height, width), dtype=np.uint8)
        self.version = 0  # bumped on every write; planners cache against it
        self._dirty = set()

    @classmethod
    def for_layout(cls, layout: Layout) -> "OccupancyMap":
        return cls(layout.width, layout.height, layout.cell_size)

    def cell_of(self, p: Point):
        return (int(p.x // self.cell_size), int(p.y // self.cell_size))

    def cell_center(self, col: int, row: int) -> Point:
        return Point((col + 0.5) * self.cell_size, (row + 0.5) * self.cell_size)

    def in_bounds(self, col: int, row: int) -> bool:
        return 0 <= col < self.width and 0 <= row < self.height

    def state(self, col: int, row: int) -> int:
        return int(self.grid[row, col]) if self.in_bounds(col, row) else OBSTACLE

    def mark(self, col: int, row: int, state: int):
        """Unknown may become anything; Free may upgrade to Obstacle (mirror
        corrections); Obstacle is sticky."""
        if not self.in_bounds(col, row):
            return
        cur = self.grid[row, col]
        if cur == state or cur == OBSTACLE:
            return
        if cur == FREE_CELL and state == UNKNOWN:
            return
        self.grid[row, col] = state
        self.version += 1
        self._dirty.add((col, row))

    def drain_dirty(self):
        """Cells changed since the last drain, for state-stream patches."""
        out = sorted(self._dirty)
        self._dirty.clear()
        return [(c, r, int(self.grid[r, c])) for c, r in out]

    def explored_fraction(self) -> float:
        return float(np.count_nonzero(self.grid) / self.grid.size)


def update_occupancy(occ: OccupancyMap, obs) -> OccupancyMap:
    """Mark ray-traversed cells Free and ray terminals Obstacle.

    Terminal cells are skipped for rays that escaped at max_depth. All geometry
    goes through the ego-to-world spatial transform. Transition rules match
    OccupancyMap.mark: Unknown upgrades freely, Free may become Obstacle when a
    mirror lied earlier, Obstacle is sticky.
    """
    pose = obs.pose
    max_depth = getattr(obs, "max_depth", 0.0) or float(np.max(obs.depth))
    depth = np.asarray(obs.depth, dtype=np.float64)
    bearings = np.asarray(obs.bearings, dtype=np.float64)
    fresh = getattr(obs, "fresh", None)
    if fresh is not None:
        # stale rays re-trace the same origin and angle; their cells are
        # already integrated
        if not fresh.any():
            return occ
        depth = depth[fresh]
        bearings = bearings[fresh]
    rad = np.radians(bearings)
    ux, uy = np.cos(rad), np.sin(rad)
    cs = occ.cell_size
    step = cs / 2.0

    # free samples strictly inside each ray
    kmax = int(max_depth / step) + 1
    ts = np.arange(kmax) * step
    valid = ts[None, :] < depth[:, None] - 1e-9
    ex = (ux[:, None] * ts[None, :])[valid]
    ey = (uy[:, None] * ts[None, :])[valid]
    wx, wy = spatial_transform_array(ex, ey, pose)
    cols = np.floor(wx / cs).astype(np.int64)
    rows = np.floor(wy / cs).astype(np.int64)
    inb = (cols >= 0) & (cols < occ.width) & (rows >= 0) & (rows < occ.height)
    flat = np.unique(rows[inb] * occ.width + cols[inb])
    grid = occ.grid.ravel()
    upgrade = flat[grid[flat] == UNKNOWN]
    if upgrade.size:
        grid[upgrade] = FREE_CELL
        occ.version += 1
        occ._dirty.update((int(f % occ.width), int(f // occ.width)) for f in upgrade)

    # terminal obstacle cells for rays that actually hit something
    hit = depth < max_depth - 1e-9
    if hit.any():
        t_hit = depth[hit] + 1e-6
        hx, hy = spatial_transform_array(ux[hit] * t_hit, uy[hit] * t_hit, pose)
        cols = np.floor(hx / cs).astype(np.int64)
        rows = np.floor(hy / cs).astype(np.int64)
        inb = (cols >= 0) & (cols < occ.width) & (rows >= 0) & (rows < occ.height)
        flat = np.unique(rows[inb] * occ.width + cols[inb])
        upgrade = flat[grid[flat] != OBSTACLE]
        if upgrade.size:
            grid[upgrade] = OBSTACLE
            occ.version += 1
            occ._dirty.update((int(f % occ.width), int(f // occ.width)) for f in upgrade)
    return occ


# ---------------------------------------------------------------------------
# Landmark grid

@dataclass
class ObservationPoint:
    pose: Pose
    view_angles: set          # sector indices 0..11 (30-degree buckets)
    objects_seen: set


@dataclass
class LandmarkCell:
    explored: bool = False
    branch: bool = False
    observation_points: list = field(default_factory=list)
    sector_mask: int = 0
    openings_seen: set = field(default_factory=set)      # sector indices
    openings_entered: set = field(default_factory=set)

    @property
    def exhausted(self) -> bool:
        if self.openings_seen - self.openings_entered:
            return False
        return self.sector_mask == FULL_SECTOR_MASK


class LandmarkGrid:
    """N x N bookkeeping grid of 1 m cells centered on the episode start.

    `bounds` (xmin, ymin, xmax, ymax) optionally restricts the playable
    area: cells outside never count as unexplored and the fairness corners
    snap to the bounded rectangle instead of the raw grid extent."""

    CORNER_ORDER = ("NW", "NE", "SW", "SE")

    def __init__(self, center: Point, n: int = 30, cell_m: float = 1.0,
                 bounds=None):
        self.n = n
        self.cell_m = cell_m
        half = n * cell_m / 2.0
        self.origin = Point(center.x - half, center.y - half)
        self.cells = {}
        self.bounds = bounds
        if bounds is not None:
            x0, y0, x1, y1 = bounds
        else:
            x0, y0 = self.origin.x, self.origin.y
            x1, y1 = x0 + n * cell_m, y0 + n * cell_m
        self.corners = {
            "NW": Point(x0, y1), "NE": Point(x1, y1),
            "SW": Point(x0, y0), "SE": Point(x1, y0),
        }
        self.access_count = {k: 0 for k in self.CORNER_ORDER}

    def index_of(self, p: Point):
        i = int((p.x - self.origin.x) // self.cell_m)
        j = int((p.y - self.origin.y) // self.cell_m)
        return (min(max(i, 0), self.n - 1), min(max(j, 0), self.n - 1))

    def center_of(self, idx) -> Point:
        return Point(self.origin.x + (idx[0] + 0.5) * self.cell_m,
                     self.origin.y + (idx[1] + 0.5) * self.cell_m)

    def in_play(self, idx) -> bool:
        if self.bounds is None:
            return True
        x0, y0, x1, y1 = self.bounds
        c = self.center_of(idx)
        return x0 <= c.x <= x1 and y0 <= c.y <= y1

    def cell(self, idx) -> LandmarkCell:
        if idx not in self.cells:
            self.cells[idx] = LandmarkCell()
        return self.cells[idx]

    def explored_count(self) -> int:
        return sum(1 for c in self.cells.values() if c.explored)


def _sectors_covered(theta: float, fov: float):
    lo = theta - fov / 2.0
    hi = theta + fov / 2.0
    first = math.floor(lo / 30.0)
    last = math.floor((hi - 1e-9) / 30.0)
    return {int(s % 12) for s in range(first, last + 1)}


def update_landmarks(grid: LandmarkGrid, obs, openings,
                     passed_unentered_opening: bool = False) -> LandmarkGrid:
    """Mark the current cell explored; record the view; flag branch points."""
    idx = grid.index_of(obs.pose.point)
    cell = grid.cell(idx)
    cell.explored = True
    fov = float(obs.bearings[-1] - obs.bearings[0]) if len(obs.bearings) > 1 else 30.0
    sectors = _sectors_covered(obs.pose.theta, fov)
    cell.observation_points.append(ObservationPoint(
        obs.pose, sectors, {d.cls for d in obs.detections}))
    for s in sectors:
        cell.sector_mask |= 1 << s
    for op in openings:
        world_bearing = (obs.pose.theta + op.bearing) % 360.0
        cell.openings_seen.add(int(world_bearing // 30.0) % 12)
    if len(openings) >= 2 or passed_unentered_opening:
        cell.branch = True
    return grid


def nearest_unexplored_landmark(grid: LandmarkGrid, pose: Pose,
                                distance_fn=None):
    """Branch cell with view sectors still uncovered, nearest by path distance."""
    if distance_fn is None:
        distance_fn = lambda p: pose.point.dist(p)
    best = None
    best_key = None
    for idx in sorted(grid.cells):
        cell = grid.cells[idx]
        if not cell.branch or cell.exhausted:
            continue
        center = grid.center_of(idx)
        d = distance_fn(center)
        if d < grid.cell_m / 2.0 or not math.isfinite(d):
            continue
        key = (d, idx)
        if best_key is None or key < best_key:
            best_key = key
            best = center
    return best


def external_fair_point(grid: LandmarkGrid, pose: Pose,
                        fair_radius: float | None = None) -> Point:
    """Unexplored point near the least-visited corner; ties go to the corner
    nearest the robot, so the sweep radiates outward instead of zigzagging."""
    unexplored = [idx for idx in ((i, j) for i in range(grid.n) for j in range(grid.n))
                  if grid.in_play(idx) and not grid.cell(idx).explored]
    if not unexplored:
        raise ValueError("grid exhausted")
    corner_name = min(grid.CORNER_ORDER,
                      key=lambda k: (grid.access_count[k],
                                     pose.point.dist(grid.corners[k])))
    corner = grid.corners[corner_name]

    def detour(idx):
        # robot->cell + cell->corner: heads for the corner but clears
        # whatever unexplored space lies on the way there first
        c = grid.center_of(idx)
        return pose.point.dist(c) + c.dist(corner)

    scored = sorted(unexplored, key=lambda idx: (detour(idx), idx))
    pick = scored[0]
    if fair_radius is not None and grid.center_of(pick).dist(corner) > fair_radius:
        pick = scored[0]  # nearest available still wins when none lie inside
    grid.access_count[corner_name] += 1
    return grid.center_of(pick)


def object_to_point(det, pose: Pose, occ: OccupancyMap,
                    standoff: float = 0.5, search_radius: float = 1.0) -> Point:
    """Navigable point at standoff distance from a detection, toward the robot."""
    b = math.radians(det.bearing)
    ego = Point(det.range * math.cos(b), det.range * math.sin(b))
    world = spatial_transform([ego], pose)[0]
    d = max(det.range, 1e-9)
    ux, uy = (world.x - pose.x) / d, (world.y - pose.y) / d
    target = Point(world.x - ux * standoff, world.y - uy * standoff)
    cs = occ.cell_size
    r_cells = int(math.ceil(search_radius / cs))
    wc, wr = occ.cell_of(world)
    best = None
    best_key = None
    for dr in range(-r_cells, r_cells + 1):
        for dc in range(-r_cells, r_cells + 1):
            col, row = wc + dc, wr + dr
            if not occ.in_bounds(col, row) or occ.state(col, row) != FREE_CELL:
                continue
            center = occ.cell_center(col, row)
            if center.dist(world) > search_radius + 1e-9:
                continue
            key = (center.dist(target), (row, col))
            if best_key is None or key < best_key:
                best_key = key
                best = center
    if best is None:
        raise ValueError("unreachable object: no free cell near projection")
    return best
