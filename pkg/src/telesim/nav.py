"""Point-goal navigation: inflated costmap planner, local steering, episode runner."""
from __future__ import annotations

import heapq
import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import dijkstra

from .mapping import FREE_CELL, OBSTACLE, UNKNOWN, OccupancyMap, update_occupancy
from .simulator import Action, EpisodeResult, STEP_METERS, Simulator
from .world import SQRT2, Point, Pose, shortest_path_length

_MOVES = (
    (1, 0, 1.0), (-1, 0, 1.0), (0, 1, 1.0), (0, -1, 1.0),
    (1, 1, SQRT2), (1, -1, SQRT2), (-1, 1, SQRT2), (-1, -1, SQRT2),
)


@dataclass
class PointGoalConfig:
    success_radius: float = 0.36      # 2 x robot radius
    step_budget: int = 500
    inflation_radius: int = 2         # cells
    inflation_penalty: float = 5.0
    unknown_cost: float = 2.2  # mapped detours beat straight lines through fog
    heading_tol: float = 15.5         # degrees; past half the turn step, else
                                      # a waypoint bisecting two headings
                                      # ping-pongs on float noise
    lookahead: float = 0.3            # meters of waypoint pruning
    gate_margin: float = 0.32         # refuse Forward when a central ray is closer
    replan_every: int = 1


def wrap180(a: float) -> float:
    return (a + 180.0) % 360.0 - 180.0


def _cost_multipliers(occ: OccupancyMap, cfg: PointGoalConfig) -> np.ndarray:
    grid = occ.grid
    mult = np.ones(grid.shape, dtype=np.float64)
    mult[grid == UNKNOWN] = cfg.unknown_cost
    obst = grid == OBSTACLE
    if cfg.inflation_radius > 0 and obst.any():
        size = 2 * cfg.inflation_radius + 1
        near = ndimage.binary_dilation(obst, structure=np.ones((size, size), bool))
        mult[near & ~obst] *= cfg.inflation_penalty
    mult[obst] = np.inf
    return mult


def _grid_graph(occ: OccupancyMap, mult: np.ndarray) -> csr_matrix:
    """8-connected CSR adjacency of the costmap.

    Edge weight into a cell is base_factor * cell_size * mult[cell]; diagonal
    moves are dropped when either orthogonal neighbour is impassable so paths
    cannot cut corners through walls.
    """
    h, w = mult.shape
    pas = np.isfinite(mult).ravel()
    stepc = (occ.cell_size * mult).ravel()
    idx = np.arange(h * w).reshape(h, w)
    rows, cols, data = [], [], []
    for dc, dr, base in _MOVES:
        src = idx[max(0, -dr):h - max(0, dr), max(0, -dc):w - max(0, dc)].ravel()
        dst = src + dr * w + dc
        ok = pas[src] & pas[dst]
        if dc and dr:
            ok &= pas[src + dc] & pas[src + dr * w]
        src, dst = src[ok], dst[ok]
        rows.append(src)
        cols.append(dst)
        data.append(base * stepc[dst])
    return csr_matrix(
        (np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))),
        shape=(h * w, h * w))


def plan_global(occ: OccupancyMap, start: Point, goal: Point,
                cfg: PointGoalConfig | None = None):
    """Octile-heuristic A* over Free+Unknown cells (Unknown costs extra, cells
    near Obstacles penalized). Returns waypoints ending at the exact goal, or
    None when unreachable.

    A C Dijkstra (plan_dijkstra) solves the same field a little faster, but
    its tie-breaking yields staircase paths that cost real steering turns;
    the octile heuristic's long straight runs win the step budget back.
    """
    cfg = cfg or PointGoalConfig()
    mult = _cost_multipliers(occ, cfg)
    h, w = mult.shape
    cs = occ.cell_size
    sc, sr = occ.cell_of(start)
    gc, gr = occ.cell_of(goal)
    if not occ.in_bounds(sc, sr) or not occ.in_bounds(gc, gr):
        return None
    if not math.isfinite(mult[gr, gc]):
        return None
    mult[sr, sc] = min(mult[sr, sc], 1.0)
    ncells = h * w
    # plain lists in the expansion loop: indexing numpy arrays element by
    # element boxes a scalar per access and swamps the actual search
    pas = np.isfinite(mult).ravel().tolist()
    step_cost = (cs * mult).ravel().tolist()
    dist = [math.inf] * ncells
    came = [-1] * ncells
    closed = bytearray(ncells)
    start_i = sr * w + sc
    goal_i = gr * w + gc
    diag = cs * (SQRT2 - 1.0)
    moves = [(dr * w + dc, dc, dr, base) for dc, dr, base in _MOVES]

    # octile heuristic for every cell up front; the expansion loop then only
    # pays an array lookup
    cols_g = np.abs(np.arange(ncells) % w - gc)
    rows_g = np.abs(np.arange(ncells) // w - gr)
    heur = (cs * np.maximum(cols_g, rows_g) + diag * np.minimum(cols_g, rows_g)).tolist()

    dist[start_i] = 0.0
    counter = 0
    pq = [(heur[start_i], 0, start_i)]
    while pq:
        _, _, cur = heapq.heappop(pq)
        if closed[cur]:
            continue
        if cur == goal_i:
            break
        closed[cur] = True
        c = cur % w
        r = cur // w
        d0 = dist[cur]
        for di, dc, dr, base in moves:
            nc, nr = c + dc, r + dr
            if not (0 <= nc < w and 0 <= nr < h):
                continue
            ni = cur + di
            if not pas[ni]:
                continue
            if dc and dr and not (pas[cur + dc] and pas[cur + dr * w]):
                continue
            nd = d0 + base * step_cost[ni]
            if nd < dist[ni] - 1e-12:
                dist[ni] = nd
                came[ni] = cur
                counter += 1
                heapq.heappush(pq, (nd + heur[ni], counter, ni))
    if not math.isfinite(dist[goal_i]):
        return None
    cells = [goal_i]
    while cells[-1] != start_i:
        cells.append(came[cells[-1]])
    cells.reverse()
    pts = [occ.cell_center(i % w, i // w) for i in cells]
    pts[-1] = goal
    return pts


def plan_dijkstra(occ: OccupancyMap, start: Point, goal: Point,
                  cfg: PointGoalConfig | None = None):
    """Single-source Dijkstra in C over the same costmap as plan_global.

    Exact-optimality oracle: plan_global must match its path cost on any map.
    """
    cfg = cfg or PointGoalConfig()
    mult = _cost_multipliers(occ, cfg)
    h, w = mult.shape
    sc, sr = occ.cell_of(start)
    gc, gr = occ.cell_of(goal)
    if not occ.in_bounds(sc, sr) or not occ.in_bounds(gc, gr):
        return None
    if not math.isfinite(mult[gr, gc]):
        return None
    mult[sr, sc] = min(mult[sr, sc], 1.0)  # the robot stands here
    start_i = sr * w + sc
    goal_i = gr * w + gc
    dist, pred = dijkstra(_grid_graph(occ, mult), directed=True,
                          indices=start_i, return_predecessors=True)
    if not np.isfinite(dist[goal_i]):
        return None
    cells = [goal_i]
    while cells[-1] != start_i:
        p = int(pred[cells[-1]])
        if p < 0:
            return None
        cells.append(p)
    cells.reverse()
    pts = [occ.cell_center(i % w, i // w) for i in cells]
    pts[-1] = goal
    return pts


def path_cost(occ: OccupancyMap, path, cfg: PointGoalConfig | None = None) -> float:
    """Cost of a cell-center path under the planner's own metric."""
    cfg = cfg or PointGoalConfig()
    mult = _cost_multipliers(occ, cfg)
    cs = occ.cell_size
    total = 0.0
    cells = [occ.cell_of(p) for p in path]
    for (c0, r0), (c1, r1) in zip(cells, cells[1:]):
        if (c0, r0) == (c1, r1):
            continue
        base = SQRT2 if (c0 != c1 and r0 != r1) else 1.0
        total += base * cs * mult[r1, c1]
    return total


def gate_blocked(obs, margin: float, half_width: float = 0.16) -> bool:
    """Depth gate: refuse Forward when a ray hit lands inside the step
    corridor, i.e. closer ahead than the margin and laterally within the
    body half width.  A door jamb brushing past at 30 degrees off axis
    must not veto a pass through the doorway."""
    rad = np.radians(obs.bearings)
    ahead = obs.depth * np.cos(rad)
    lateral = np.abs(obs.depth * np.sin(rad))
    # rays that ran to full range hit nothing
    hit = obs.depth < obs.max_depth - 1e-9
    sel = hit & (ahead > 0.0) & (ahead < margin) & (lateral < half_width)
    return bool(sel.any())


def step_cells_blocked(occ: OccupancyMap, pose: Pose) -> bool:
    """Map-exact gate: True when the midpoint or landing cell of a forward
    step is a known obstacle.  Unknown cells pass; a wrong guess costs one
    refused step and the cells get marked."""
    th = math.radians(pose.theta)
    for f in (0.5, 1.0):
        p = Point(pose.x + STEP_METERS * f * math.cos(th),
                  pose.y + STEP_METERS * f * math.sin(th))
        c, r = occ.cell_of(p)
        if occ.state(c, r) == OBSTACLE:
            return True
    return False


def local_policy(pose: Pose, path, cfg: PointGoalConfig,
                 goal: Point | None = None) -> Action:
    """Steer along the path: Stop inside the success radius, turn until the
    heading error is inside tolerance (ties break left), else Forward."""
    if goal is not None and pose.point.dist(goal) <= cfg.success_radius:
        return Action.STOP
    target = path[-1]
    for wp in path:
        if pose.point.dist(wp) > cfg.lookahead:
            target = wp
            break
    err = wrap180(math.degrees(math.atan2(target.y - pose.y, target.x - pose.x))
                  - pose.theta)
    if abs(err) <= cfg.heading_tol:
        return Action.FORWARD
    if err <= -180.0 + 1e-9:
        return Action.TURN_LEFT
    return Action.TURN_LEFT if err > 0 else Action.TURN_RIGHT


class PointGoalController:
    """Plans on a shared occupancy map and emits one action per decision."""

    def __init__(self, occ: OccupancyMap, goal: Point,
                 cfg: PointGoalConfig | None = None):
        self.occ = occ
        self.goal = goal
        self.cfg = cfg or PointGoalConfig()
        self.path = None
        self._since_plan = 0
        self._force = False
        self._turn_pref = 1
        self._gated = False
        self._path_flat = None
        self._seen_version = -1

    def _path_stale(self) -> bool:
        """True when map updates since planning put an obstacle on the path."""
        if self._path_flat is None or self.occ.version == self._seen_version:
            return False
        if (self.occ.grid.ravel()[self._path_flat] == OBSTACLE).any():
            return True
        # map grew but the route survived; skip the array scan until it
        # changes again
        self._seen_version = self.occ.version
        return False

    def notify_blocked(self, pose: Pose):
        """A Forward was physically refused: the map lied (mirror corruption or
        unseen corner); mark the offending cells and replan."""
        th = math.radians(pose.theta)
        for f in (0.5, 1.0):
            p = Point(pose.x + STEP_METERS * f * math.cos(th),
                      pose.y + STEP_METERS * f * math.sin(th))
            c, r = self.occ.cell_of(p)
            if self.occ.state(c, r) != FREE_CELL or f == 1.0:
                self.occ.mark(c, r, OBSTACLE)
        self._force = True

    def decide(self, obs) -> Action | None:
        pose = obs.pose
        if pose.point.dist(self.goal) <= self.cfg.success_radius:
            return Action.STOP
        if (self.path is None or self._force
                or self._since_plan >= self.cfg.replan_every
                or self._path_stale()):
            self.path = plan_global(self.occ, pose.point, self.goal, self.cfg)
            self._since_plan = 0
            self._force = False
            if self.path is None:
                self._path_flat = None
            else:
                w = self.occ.width
                self._path_flat = np.array(
                    [r * w + c for c, r in (self.occ.cell_of(p) for p in self.path)],
                    dtype=np.int64)
            self._seen_version = self.occ.version
        if self.path is None:
            return None
        while len(self.path) > 1 and pose.point.dist(self.path[0]) <= self.cfg.lookahead:
            self.path.pop(0)
        action = local_policy(pose, self.path, self.cfg, self.goal)
        self._since_plan += 1
        if action == Action.FORWARD and step_cells_blocked(self.occ, pose):
            self._force = True
            if not self._gated:
                # latch a direction on first contact, hold it until the
                # gate releases so steering cannot undo the escape turn
                left = np.mean(obs.depth[obs.bearings > 15.0]) if (obs.bearings > 15.0).any() else 0.0
                right = np.mean(obs.depth[obs.bearings < -15.0]) if (obs.bearings < -15.0).any() else 0.0
                self._turn_pref = 1 if left >= right else -1
            self._gated = True
            return Action.TURN_LEFT if self._turn_pref > 0 else Action.TURN_RIGHT
        self._gated = False
        return action


def run_pointgoal(sim: Simulator, goal: Point,
                  cfg: PointGoalConfig | None = None) -> EpisodeResult:
    """Drive the simulator to a metric goal; replans every step by default."""
    cfg = cfg or PointGoalConfig()
    layout = sim.layout
    start = sim.pose.point
    shortest = shortest_path_length(layout, start, goal)
    occ = OccupancyMap.for_layout(layout)
    ctrl = PointGoalController(occ, goal, cfg)
    success = False
    reason = "budget"
    while True:
        obs = sim.observe()
        update_occupancy(occ, obs)
        if obs.pose.point.dist(goal) <= cfg.success_radius:
            success, reason = True, "success"
            break
        if sim.steps >= cfg.step_budget:
            break
        action = ctrl.decide(obs)
        if action is None:
            reason = "no_path"
            break
        if action == Action.STOP:
            success, reason = True, "success"
            break
        ok = sim.act(action)
        if not ok:
            ctrl.notify_blocked(sim.pose)
        sim.step_world()
    try:
        d = shortest_path_length(layout, sim.pose.point, goal)
        if not math.isfinite(d):
            d = sim.pose.point.dist(goal)
    except ValueError:
        d = sim.pose.point.dist(goal)
    return EpisodeResult(
        success=success, steps=sim.steps, path_length=sim.path_length,
        shortest_length=shortest, final_distance=d, reason=reason,
        policy="pointgoal", trajectory=list(sim.trajectory))
