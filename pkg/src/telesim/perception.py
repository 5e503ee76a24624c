"""Simulated egocentric sensing: ray-cast depth, detections, openings, mirrors."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .world import FREE, MIRROR, WALL, Layout, Point, Pose


@dataclass
class SensorConfig:
    fov_degrees: float = 90.0
    ray_count: int = 64
    max_depth: float = 2.5
    detect_prob: object = 0.9          # float, or dict class -> probability
    confidence_noise: float = 0.0
    detect_range: float | None = None  # defaults to max_depth
    object_radius: float = 0.2
    person_radius: float = 0.3
    opening_far: float | None = None   # defaults to max_depth
    opening_near: float = 1.2
    min_opening_rays: int = 3

    def __post_init__(self):
        if not 0 < self.fov_degrees <= 360:
            raise ValueError("fov_degrees must be in (0, 360]")
        if self.max_depth <= 0:
            raise ValueError("max_depth must be positive")
        if self.detect_range is None:
            self.detect_range = self.max_depth
        if self.opening_far is None:
            self.opening_far = self.max_depth
        self.bearings = np.linspace(-self.fov_degrees / 2.0,
                                    self.fov_degrees / 2.0, self.ray_count)
        self.bearings.setflags(write=False)  # shared across every Observation

    def prob_for(self, cls: str) -> float:
        if isinstance(self.detect_prob, dict):
            return float(self.detect_prob.get(cls, 0.9))
        return float(self.detect_prob)


@dataclass
class Detection:
    cls: str
    confidence: float
    bearing: float         # degrees relative to heading, +left
    angular_width: float   # degrees
    range: float           # meters
    entity_id: str = ""    # hidden ground truth, for test oracles only
    features: tuple | None = None


@dataclass
class Observation:
    pose: Pose
    bearings: np.ndarray   # (ray_count,) degrees relative to heading
    depth: np.ndarray      # (ray_count,) meters, in (0, max_depth]
    detections: list
    tick: int = 0
    max_depth: float = 0.0
    hit_kinds: np.ndarray | None = field(default=None, repr=False)  # oracle channel
    # rays first returned from this position this frame; None = all of them.
    # Map integration may skip stale rays: same origin, same angle, same hit.
    fresh: np.ndarray | None = field(default=None, repr=False)


@dataclass
class DetectedOpening:
    bearing: float       # degrees relative to heading (interval center)
    width: float         # degrees
    ray_span: tuple = ()  # (first_ray, last_ray) inclusive


_EPS = 1e-12


def _trace(layout: Layout, origin, dirs, max_depth: float):
    """Exact grid traversal for a batch of rays; Wall and Mirror cells block.

    Returns (depth, kind, hit_axis) arrays; kind 0 = escaped at max_depth,
    else the blocking cell value. hit_axis: 0 = crossed an x-plane, 1 = y-plane.
    """
    n = dirs.shape[0]
    cs = layout.cell_size
    x0, y0 = origin
    grid = layout.grid

    # crossings of x- and y-planes share one preallocated matrix: [x | y]
    spans = []
    for axis in (0, 1):
        o = x0 if axis == 0 else y0
        d = dirs[:, axis]
        span = d * max_depth
        lo = np.minimum(o, o + span) / cs
        hi = np.maximum(o, o + span) / cs
        k_first = np.ceil(lo + _EPS)
        count = np.maximum(0, np.floor(hi - _EPS) - k_first + 1).astype(int)
        kmax = int(count.max()) if n else 0
        spans.append((o, d, k_first, count, kmax))
    total = spans[0][4] + spans[1][4]
    if total == 0:
        t_all = np.full((n, 1), np.inf)
        ax_all = np.zeros((n, 1))
    else:
        t_all = np.full((n, total), np.inf)
        ax_all = np.empty((n, total))
        col = 0
        for axis in (0, 1):
            o, d, k_first, count, kmax = spans[axis]
            if kmax == 0:
                continue
            ks = k_first[:, None] + np.arange(kmax)[None, :]
            valid = np.arange(kmax)[None, :] < count[:, None]
            with np.errstate(divide="ignore", invalid="ignore"):
                ts = (ks * cs - o) / d[:, None]
            block = t_all[:, col:col + kmax]
            np.copyto(block, ts, where=valid & (ts > _EPS))
            ax_all[:, col:col + kmax] = axis
            col += kmax
    order = np.argsort(t_all, axis=1)
    t_sorted = np.take_along_axis(t_all, order, axis=1)
    ax_sorted = np.take_along_axis(ax_all, order, axis=1)

    t_clamped = np.minimum(t_sorted, max_depth)
    t_next = np.concatenate([t_clamped[:, 1:], np.full((n, 1), max_depth)], axis=1)
    mids = (t_clamped + t_next) / 2.0
    px = x0 + dirs[:, 0:1] * mids
    py = y0 + dirs[:, 1:2] * mids
    cols = np.floor(px / cs).astype(int)
    rows = np.floor(py / cs).astype(int)
    inb = (cols >= 0) & (cols < layout.width) & (rows >= 0) & (rows < layout.height)
    vals = np.full(cols.shape, WALL, dtype=np.int16)
    vals[inb] = grid[rows[inb], cols[inb]]
    blocking = (vals == WALL) | (vals == MIRROR)
    blocking &= t_sorted <= max_depth  # segments entered past range never block

    depth = np.full(n, max_depth)
    kind = np.zeros(n, dtype=np.int16)
    hit_axis = np.zeros(n, dtype=np.int16)
    any_block = blocking.any(axis=1)
    first = np.argmax(blocking, axis=1)
    ray_idx = np.nonzero(any_block)[0]
    depth[ray_idx] = t_sorted[ray_idx, first[ray_idx]]
    kind[ray_idx] = vals[ray_idx, first[ray_idx]]
    hit_axis[ray_idx] = ax_sorted[ray_idx, first[ray_idx]].astype(np.int16)
    return depth, kind, hit_axis


def cast_rays_abs(layout: Layout, origin, abs_angles_deg: np.ndarray,
                  max_depth: float):
    """Depths for rays at absolute world angles from a point. Mirror cells
    reflect the ray once across the entry face; the reported depth is the
    total path length of the continuation, capped at max_depth (the
    straight-line belief)."""
    angles = np.radians(abs_angles_deg)
    dirs = np.stack([np.cos(angles), np.sin(angles)], axis=1)
    depth, kind, hit_axis = _trace(layout, origin, dirs, max_depth)
    mirror_rays = np.nonzero(kind == MIRROR)[0]
    true_kind = kind.copy()
    for i in mirror_rays:
        t_hit = depth[i]
        remaining = max_depth - t_hit
        if remaining <= 1e-9:
            continue
        hx = origin[0] + dirs[i, 0] * t_hit
        hy = origin[1] + dirs[i, 1] * t_hit
        rdir = dirs[i].copy()
        rdir[int(hit_axis[i])] = -rdir[int(hit_axis[i])]
        d2, _, _ = _trace(layout, (hx + rdir[0] * 1e-9, hy + rdir[1] * 1e-9),
                          rdir[None, :], remaining)
        depth[i] = t_hit + float(d2[0])
    return depth, true_kind


def cast_rays(layout: Layout, pose: Pose, bearings_deg: np.ndarray,
              max_depth: float):
    """cast_rays_abs with angles relative to the pose heading."""
    return cast_rays_abs(layout, (pose.x, pose.y), pose.theta + bearings_deg,
                         max_depth)


class RayField:
    """Per-position cache of the full ray circle at sensor resolution.

    Turning in place re-reads cached slots instead of re-tracing geometry;
    only sectors never faced from the current position cost ray casts. Works
    when the turn step and the full circle are both whole multiples of the
    angular ray spacing, which holds for the stock sensor (90 deg / 64 rays,
    30 deg turns); anything else falls back to a plain cast per call.
    """

    def __init__(self, layout: Layout, cfg: SensorConfig):
        self.layout = layout
        self.cfg = cfg
        self.spacing = cfg.fov_degrees / (cfg.ray_count - 1)
        slots = 360.0 / self.spacing
        self.slots = int(round(slots))
        self.usable = abs(slots - self.slots) < 1e-9
        self.anchor = None   # world angle of slot 0, set by the first sample
        self.pos = None
        self._depth = None
        self._kind = None
        self._served = None
        self._los_pos = None
        self._los = {}

    def sample(self, pose: Pose, bearings_deg: np.ndarray):
        """(depth, kinds, fresh) for the pose; fresh flags rays not handed out
        from this position before, or None when that cannot be tracked."""
        if not self.usable:
            d, k = cast_rays(self.layout, pose, bearings_deg, self.cfg.max_depth)
            return d, k, None
        if self.anchor is None:
            self.anchor = pose.theta + float(bearings_deg[0])
        rel = (pose.theta + bearings_deg - self.anchor) / self.spacing
        sl = np.round(rel)
        if np.max(np.abs(rel - sl)) > 1e-6:
            # pose heading off the angular grid (hand-built scenario poses)
            d, k = cast_rays(self.layout, pose, bearings_deg, self.cfg.max_depth)
            return d, k, None
        sl = sl.astype(np.int64) % self.slots
        here = (pose.x, pose.y)
        if here != self.pos:
            self.pos = here
            self._depth = np.full(self.slots, np.nan)
            self._kind = np.zeros(self.slots, dtype=np.int16)
            self._served = np.zeros(self.slots, dtype=bool)
        need = sl[np.isnan(self._depth[sl])]
        if need.size:
            need = np.unique(need)
            angles = self.anchor + need * self.spacing
            d, k = cast_rays_abs(self.layout, here, angles, self.cfg.max_depth)
            self._depth[need] = d
            self._kind[need] = k
        fresh = ~self._served[sl]
        self._served[sl] = True
        return self._depth[sl].copy(), self._kind[sl].copy(), fresh

    def los_many(self, origin, cand, max_depth: float) -> np.ndarray:
        """Free-travel distance toward each candidate, memoized per origin.

        Sightlines depend on position, not heading, so turning in place reuses
        every entry. Keys carry the candidate's own position too: a walking
        person invalidates only itself.
        """
        if origin != self._los_pos:
            self._los_pos = origin
            self._los = {}
        vals = np.empty(len(cand))
        miss = []
        for i, c in enumerate(cand):
            v = self._los.get((c[2], c[8], c[9]))
            if v is None:
                miss.append(i)
            else:
                vals[i] = v
        if miss:
            dirs = np.array([(cand[i][6], cand[i][7]) for i in miss])
            d, _, _ = _trace(self.layout, origin, dirs, max_depth)
            for j, i in enumerate(miss):
                c = cand[i]
                v = float(d[j])
                self._los[(c[2], c[8], c[9])] = v
                vals[i] = v
        return vals


def _wrap180(deg: float) -> float:
    return (deg + 180.0) % 360.0 - 180.0


def line_of_sight(layout: Layout, a: Point, b: Point) -> bool:
    """True when no Wall/Mirror cell interrupts the straight segment a->b."""
    dist = a.dist(b)
    if dist < 1e-9:
        return True
    dirs = np.array([[(b.x - a.x) / dist, (b.y - a.y) / dist]])
    _, kind, _ = _trace(layout, (a.x, a.y), dirs, dist)
    return kind[0] == 0


def observe(layout: Layout, pose: Pose, cfg: SensorConfig, rng,
            persons=(), tick: int = 0, rays: RayField | None = None) -> Observation:
    """One sensing frame: depth profile plus probabilistic object detections."""
    bearings = cfg.bearings
    fresh = None
    if rays is not None:
        depth, kinds, fresh = rays.sample(pose, bearings)
    else:
        depth, kinds = cast_rays(layout, pose, bearings, cfg.max_depth)
    half_fov = cfg.fov_degrees / 2.0

    # geometric prefilter; sightlines for survivors are traced in one batch
    cand = []

    def consider(cls, pt, radius, entity_id, features=None):
        dx, dy = pt.x - pose.x, pt.y - pose.y
        rng_m = math.hypot(dx, dy)
        if rng_m > cfg.detect_range or rng_m < 1e-9:
            return
        bearing = _wrap180(math.degrees(math.atan2(dy, dx)) - pose.theta)
        if abs(bearing) > half_fov:
            return
        cand.append((cls, radius, entity_id, features, rng_m, bearing,
                     dx / rng_m, dy / rng_m, pt.x, pt.y))

    for i, obj in enumerate(layout.objects):
        consider(obj.cls, obj.point, cfg.object_radius, f"obj{i}")
    for person in persons:
        feats = person.observed_features(rng)
        consider("person", person.position, cfg.person_radius, person.id, feats)

    detections = []
    if cand:
        if rays is not None:
            d_los = rays.los_many((pose.x, pose.y), cand, cfg.detect_range)
        else:
            dirs = np.array([(c[6], c[7]) for c in cand])
            d_los, _, _ = _trace(layout, (pose.x, pose.y), dirs, cfg.detect_range)
        for c, free_to in zip(cand, d_los):
            cls, radius, entity_id, features, rng_m, bearing = c[:6]
            if free_to < rng_m - 1e-9:
                continue
            if rng.random() >= cfg.prob_for(cls):
                continue
            conf = 1.0
            if cfg.confidence_noise > 0:
                conf = min(1.0, max(0.0, 1.0 - abs(rng.gauss(0.0, cfg.confidence_noise))))
            width = 2.0 * math.degrees(math.atan(radius / max(rng_m, radius)))
            detections.append(Detection(cls, conf, bearing, width, rng_m,
                                        entity_id=entity_id, features=features))
    return Observation(pose, bearings, depth, detections, tick,
                       max_depth=cfg.max_depth, hit_kinds=kinds, fresh=fresh)


def detect_openings(obs: Observation, cfg: SensorConfig):
    """Maximal far-depth ray runs flanked by near rays on both sides."""
    depth = obs.depth
    far = depth >= cfg.opening_far - 1e-9
    near = depth <= cfg.opening_near + 1e-9
    n = len(depth)
    out = []
    i = 0
    while i < n:
        if not far[i]:
            i += 1
            continue
        j = i
        while j + 1 < n and far[j + 1]:
            j += 1
        run_len = j - i + 1
        flanked = i > 0 and j < n - 1 and near[i - 1] and near[j + 1]
        if flanked and run_len >= cfg.min_opening_rays:
            b0, b1 = obs.bearings[i], obs.bearings[j]
            out.append(DetectedOpening(float((b0 + b1) / 2.0), float(abs(b1 - b0)),
                                       (i, j)))
        i = j + 1
    out.sort(key=lambda o: abs(o.bearing))
    return out


def mirror_suspect(history, depth_tol: float = 0.05) -> bool:
    """True when the last observations are near-identical despite commanded
    forward motion: the mirror shows free space the robot cannot enter."""
    obs_list = list(history)
    if len(obs_list) < 2:
        return False
    for prev, cur in zip(obs_list, obs_list[1:]):
        if prev.depth.shape != cur.depth.shape:
            return False
        if float(np.max(np.abs(prev.depth - cur.depth))) > depth_tol:
            return False
        if sorted(d.cls for d in prev.detections) != sorted(d.cls for d in cur.detections):
            return False
    return True
