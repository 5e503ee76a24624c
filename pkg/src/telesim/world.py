"""Synthetic indoor house layouts: grid world, regions, objects, geodesics."""
from __future__ import annotations

import heapq
import json
import math
import random
from dataclasses import dataclass, field

import numpy as np

FREE = 0
WALL = 1
MIRROR = 2

CELL_CHARS = {".": FREE, "#": WALL, "M": MIRROR}
CHAR_CELLS = {v: k for k, v in CELL_CHARS.items()}

REGION_KINDS = (
    "bathroom",
    "bedroom",
    "dining room",
    "study room",
    "kitchen",
    "living room",
    "toilet",
    "balcony",
    "passage",
)

# Room kinds in generator placement priority; passage is the corridor itself.
DEFAULT_ROOM_ORDER = (
    "living room",
    "kitchen",
    "bedroom",
    "bathroom",
    "dining room",
    "study room",
    "toilet",
    "balcony",
)

ELEVATED_CLASSES = frozenset({
    "tv monitor", "clock", "microwave", "book", "vase", "potted plant",
    "bottle", "wine glass", "cup", "bowl", "toaster",
})

SQRT2 = math.sqrt(2.0)


class GenerationError(ValueError):
    pass


@dataclass(frozen=True)
class Point:
    x: float
    y: float

    def dist(self, other: "Point") -> float:
        return math.hypot(self.x - other.x, self.y - other.y)


def _norm_theta(theta: float) -> float:
    theta = theta % 360.0
    return theta + 360.0 if theta < 0 else theta


@dataclass(frozen=True)
class Pose:
    x: float
    y: float
    theta: float = 0.0  # degrees anticlockwise, 0 = east

    def __post_init__(self):
        object.__setattr__(self, "theta", _norm_theta(self.theta))

    @property
    def point(self) -> Point:
        return Point(self.x, self.y)


@dataclass
class Region:
    id: int
    kind: str
    cells: tuple  # ((col, row), ...)

    def __post_init__(self):
        if self.kind not in REGION_KINDS:
            raise ValueError(f"unknown region kind: {self.kind!r}")

    @property
    def boundary(self) -> tuple:
        """Perimeter cells: members with a 4-neighbor outside the cell set."""
        member = set(self.cells)
        out = []
        for c, r in self.cells:
            for dc, dr in ((1, 0), (-1, 0), (0, 1), (0, -1)):
                if (c + dc, r + dr) not in member:
                    out.append((c, r))
                    break
        return tuple(out)


@dataclass
class PlacedObject:
    cls: str
    x: float
    y: float
    height_band: str = "floor"

    @property
    def point(self) -> Point:
        return Point(self.x, self.y)


@dataclass
class Opening:
    cells: tuple          # ((col, row), ...) door cells, owned by passage
    connects: tuple       # (region_id_a, region_id_b)
    state: str = "open"


@dataclass
class Layout:
    width: int
    height: int
    cell_size: float
    grid: np.ndarray              # uint8 (height, width), values FREE/WALL/MIRROR
    regions: list
    objects: list
    openings: list
    spawns: list                  # list of Pose
    seed: int | None = None
    _region_grid: np.ndarray | None = field(default=None, repr=False)
    _free_mask: np.ndarray | None = field(default=None, repr=False)

    @property
    def region_grid(self) -> np.ndarray:
        if self._region_grid is None:
            rg = np.full((self.height, self.width), -1, dtype=np.int16)
            for region in self.regions:
                for c, r in region.cells:
                    rg[r, c] = region.id
            self._region_grid = rg
        return self._region_grid

    @property
    def free_mask(self) -> np.ndarray:
        if self._free_mask is None:
            self._free_mask = self.grid == FREE
        return self._free_mask

    def in_bounds(self, col: int, row: int) -> bool:
        return 0 <= col < self.width and 0 <= row < self.height

    def cell_of(self, p: Point) -> tuple:
        return (int(p.x // self.cell_size), int(p.y // self.cell_size))

    def cell_center(self, col: int, row: int) -> Point:
        return Point((col + 0.5) * self.cell_size, (row + 0.5) * self.cell_size)

    def is_free_cell(self, col: int, row: int) -> bool:
        return self.in_bounds(col, row) and self.grid[row, col] == FREE

    def is_free_point(self, p: Point) -> bool:
        c, r = self.cell_of(p)
        return self.is_free_cell(c, r)

    def region_by_id(self, region_id: int) -> Region:
        return self.regions[region_id]

    def regions_of_kind(self, kind: str) -> list:
        return [rg for rg in self.regions if rg.kind == kind]


def region_at(layout: Layout, p: Point):
    """Region id containing p's cell, or None on walls/outside."""
    c, r = layout.cell_of(p)
    if not layout.in_bounds(c, r):
        return None
    rid = int(layout.region_grid[r, c])
    return None if rid < 0 else rid


def region_kind_at(layout: Layout, p: Point):
    rid = region_at(layout, p)
    return None if rid is None else layout.regions[rid].kind


def _neighbors8(layout: Layout, col: int, row: int):
    free = layout.free_mask
    w, h = layout.width, layout.height
    for dc, dr in ((1, 0), (-1, 0), (0, 1), (0, -1)):
        c2, r2 = col + dc, row + dr
        if 0 <= c2 < w and 0 <= r2 < h and free[r2, c2]:
            yield c2, r2, 1.0
    for dc, dr in ((1, 1), (1, -1), (-1, 1), (-1, -1)):
        c2, r2 = col + dc, row + dr
        if not (0 <= c2 < w and 0 <= r2 < h and free[r2, c2]):
            continue
        # No corner cutting: both axial neighbors must be free.
        if free[row, col + dc] and free[row + dr, col]:
            yield c2, r2, SQRT2


def geodesic_field(layout: Layout, sources) -> np.ndarray:
    """Multi-source Dijkstra over Free cells. sources: iterable of (col,row)."""
    dist = np.full((layout.height, layout.width), np.inf)
    heap = []
    for c, r in sources:
        if layout.is_free_cell(c, r) and dist[r, c] > 0:
            dist[r, c] = 0.0
            heap.append((0.0, c, r))
    heapq.heapify(heap)
    cs = layout.cell_size
    while heap:
        d, c, r = heapq.heappop(heap)
        if d > dist[r, c]:
            continue
        for c2, r2, w in _neighbors8(layout, c, r):
            nd = d + w * cs
            if nd < dist[r2, c2]:
                dist[r2, c2] = nd
                heapq.heappush(heap, (nd, c2, r2))
    return dist


def shortest_path_length(layout: Layout, a: Point, b: Point) -> float:
    """Grid-geodesic distance in meters; math.inf when unreachable."""
    ca, cb = layout.cell_of(a), layout.cell_of(b)
    for name, (c, r) in (("a", ca), ("b", cb)):
        if not layout.is_free_cell(c, r):
            raise ValueError(f"endpoint {name} is not navigable: cell {(c, r)}")
    if ca == cb:
        return 0.0
    dist = geodesic_field(layout, [ca])
    return float(dist[cb[1], cb[0]])


def _memo_field(layout: Layout, key, sources) -> np.ndarray:
    # benchmark suites query the same layout/target pair hundreds of times;
    # the field is static so one Dijkstra per pair is plenty
    cache = getattr(layout, "_geo_fields", None)
    if cache is None:
        cache = {}
        object.__setattr__(layout, "_geo_fields", cache)
    field_ = cache.get(key)
    if field_ is None:
        field_ = geodesic_field(layout, sources)
        cache[key] = field_
    return field_


def geodesic_to_region(layout: Layout, kind: str, p: Point) -> float:
    """Distance from p to the nearest cell of any region of the given kind."""
    sources = [cell for rg in layout.regions_of_kind(kind) for cell in rg.cells]
    if not sources:
        return math.inf
    field_ = _memo_field(layout, ("region", kind), sources)
    c, r = layout.cell_of(p)
    if not layout.is_free_cell(c, r):
        return math.inf
    return float(field_[r, c])


def geodesic_to_objects(layout: Layout, cls: str, p: Point) -> float:
    sources = [layout.cell_of(o.point) for o in layout.objects if o.cls == cls]
    if not sources:
        return math.inf
    field_ = _memo_field(layout, ("object", cls), sources)
    c, r = layout.cell_of(p)
    if not layout.is_free_cell(c, r):
        return math.inf
    return float(field_[r, c])


def navigable_centroid(layout: Layout, region: Region) -> Point:
    """Mean of the region's cell centers snapped to its nearest member cell."""
    cols = np.array([c for c, _ in region.cells], dtype=float)
    rows = np.array([r for _, r in region.cells], dtype=float)
    cx, cy = cols.mean(), rows.mean()
    best = min(region.cells, key=lambda cr: (cr[0] - cx) ** 2 + (cr[1] - cy) ** 2)
    return layout.cell_center(*best)


# ---------------------------------------------------------------------------
# Generation

def _room_affinity_table():
    # Imported lazily: knowledge does not import world, so no cycle.
    from . import knowledge
    graph = knowledge.default_graph()
    table = {}
    for kind in REGION_KINDS:
        scored = [
            (cls, graph.survey_weight(cls, kind))
            for cls in graph.object_classes
            if graph.survey_weight(cls, kind) >= 0.5
            and cls not in ("open door", "closed door", "free area")
        ]
        scored.sort(key=lambda cw: (-cw[1], cw[0]))
        table[kind] = [cls for cls, _ in scored]
    return table


def generate_layout(
    seed: int,
    rooms: int = 8,
    room_kinds=None,
    min_room: int = 12,
    max_room: int = 18,
    corridor_width: int = 5,
    door_width: int = 3,
    mirrors: int = 0,
    cell_size: float = 0.25,
    max_width: int | None = None,
) -> Layout:
    """Corridor-spine house: rooms attached above/below a passage corridor."""
    if rooms < 1:
        raise GenerationError("rooms must be >= 1")
    if min_room < door_width + 2 or max_room < min_room:
        raise GenerationError("room size range cannot host a doorway")
    rng = random.Random(seed)

    if room_kinds is None:
        kinds = [DEFAULT_ROOM_ORDER[i % len(DEFAULT_ROOM_ORDER)] for i in range(rooms)]
    else:
        kinds = list(room_kinds)
        if len(kinds) != rooms:
            raise GenerationError("room_kinds length must equal rooms")
        for k in kinds:
            if k not in REGION_KINDS or k == "passage":
                raise GenerationError(f"invalid room kind: {k!r}")

    # Interior sizes per room; split alternately into top and bottom banks.
    sizes = [(rng.randint(min_room, max_room), rng.randint(min_room - 4, max_room - 4))
             for _ in kinds]
    order = list(range(rooms))
    rng.shuffle(order)
    top = [i for pos, i in enumerate(order) if pos % 2 == 0]
    bottom = [i for pos, i in enumerate(order) if pos % 2 == 1]

    def bank_width(bank):
        return sum(sizes[i][0] for i in bank) + len(bank) + 1  # shared walls + outer

    width = max(bank_width(top), bank_width(bottom))
    if max_width is not None and width > max_width:
        raise GenerationError(
            f"rooms cannot fit grid: need width {width} > max_width {max_width}")
    # Stretch the last room of the narrower bank so both banks fill the width.
    for bank in (top, bottom):
        if bank and bank_width(bank) < width:
            sizes[bank[-1]] = (sizes[bank[-1]][0] + width - bank_width(bank),
                               sizes[bank[-1]][1])

    top_depth = max((sizes[i][1] for i in top), default=0)
    bot_depth = max((sizes[i][1] for i in bottom), default=0)
    height = 1 + bot_depth + 1 + corridor_width + 1 + top_depth + 1

    grid = np.full((height, width), WALL, dtype=np.uint8)
    corridor_r0 = 1 + bot_depth + 1
    grid[corridor_r0:corridor_r0 + corridor_width, 1:width - 1] = FREE

    passage_cells = [(c, r) for r in range(corridor_r0, corridor_r0 + corridor_width)
                     for c in range(1, width - 1)]
    regions = [Region(0, "passage", tuple(passage_cells))]
    openings = []
    room_spans = {}  # region id -> (c0, c1, r0, r1) interior extents

    def carve_room(idx, c0, is_top):
        w, d = sizes[idx]
        if is_top:
            r0 = corridor_r0 + corridor_width + 1
            r1 = r0 + d
        else:
            r1 = corridor_r0 - 1
            r0 = r1 - d
        c1 = c0 + w
        grid[r0:r1, c0:c1] = FREE
        rid = len(regions)
        cells = tuple((c, r) for r in range(r0, r1) for c in range(c0, c1))
        regions.append(Region(rid, kinds[idx], cells))
        room_spans[rid] = (c0, c1, r0, r1)
        # Doorway in the wall row between room and corridor.
        door_row = r0 - 1 if is_top else r1
        dc0 = rng.randint(c0 + 1, c1 - door_width - 1) if c1 - door_width - 1 > c0 + 1 else c0 + 1
        door_cells = []
        for c in range(dc0, dc0 + door_width):
            grid[door_row, c] = FREE
            door_cells.append((c, door_row))
        openings.append(Opening(tuple(door_cells), (rid, 0), "open"))
        return rid

    c = 1
    top_ids = []
    for idx in top:
        top_ids.append(carve_room(idx, c, True))
        c += sizes[idx][0] + 1
    c = 1
    bot_ids = []
    for idx in bottom:
        bot_ids.append(carve_room(idx, c, False))
        c += sizes[idx][0] + 1

    # Occasional door between horizontally adjacent rooms in the same bank.
    for bank_ids in (top_ids, bot_ids):
        for left, right in zip(bank_ids, bank_ids[1:]):
            if rng.random() >= 0.35:
                continue
            lc0, lc1, lr0, lr1 = room_spans[left]
            rc0, rc1, rr0, rr1 = room_spans[right]
            r_lo, r_hi = max(lr0, rr0) + 1, min(lr1, rr1) - door_width
            if r_hi <= r_lo:
                continue
            wall_c = lc1  # shared wall column
            dr0 = rng.randint(r_lo, r_hi)
            door_cells = []
            for r in range(dr0, dr0 + door_width):
                grid[r, wall_c] = FREE
                door_cells.append((wall_c, r))
            openings.append(Opening(tuple(door_cells), (left, right), "open"))

    # Door cells belong to passage.
    extra_passage = [cell for op in openings for cell in op.cells]
    regions[0] = Region(0, "passage", tuple(passage_cells + extra_passage))

    # Objects by affinity table; the anchor class of each kind is always placed.
    affinity = _room_affinity_table()
    objects = []
    used_cells = set()
    for rid in top_ids + bot_ids:
        rg = regions[rid]
        choices = affinity.get(rg.kind, [])
        if not choices:
            continue
        count = min(len(choices), rng.randint(2, 4))
        picked = [choices[0]] + rng.sample(choices[1:], count - 1) if count > 1 else [choices[0]]
        c0, c1, r0, r1 = room_spans[rid]
        interior = [(cc, rr) for rr in range(r0 + 1, r1 - 1) for cc in range(c0 + 1, c1 - 1)]
        rng.shuffle(interior)
        for cls, cell in zip(picked, interior):
            if cell in used_cells:
                continue
            used_cells.add(cell)
            p = Point((cell[0] + 0.5) * cell_size, (cell[1] + 0.5) * cell_size)
            band = "elevated" if cls in ELEVATED_CLASSES else "floor"
            objects.append(PlacedObject(cls, p.x, p.y, band))

    # Mirror panels: interior room-wall cells facing free space.
    if mirrors > 0:
        candidates = []
        for rid, (c0, c1, r0, r1) in sorted(room_spans.items()):
            for cc in range(c0, c1):
                for rr in (r0 - 1, r1):
                    if 0 < rr < height - 1 and grid[rr, cc] == WALL:
                        candidates.append((cc, rr))
        rng.shuffle(candidates)
        for cc, rr in candidates[:mirrors]:
            grid[rr, cc] = MIRROR

    # Spawn poses spread along the corridor.
    mid_r = corridor_r0 + corridor_width // 2
    spawn_cols = [max(1, min(width - 2, round(width * f))) for f in (0.15, 0.4, 0.6, 0.85)]
    spawns = []
    for sc in spawn_cols:
        if grid[mid_r, sc] != FREE:
            continue
        theta = rng.choice((0.0, 90.0, 180.0, 270.0))
        spawns.append(Pose((sc + 0.5) * cell_size, (mid_r + 0.5) * cell_size, theta))
    if not spawns:
        raise GenerationError("no free corridor cell for spawn points")

    layout = Layout(width, height, cell_size, grid, regions, objects,
                    openings, spawns, seed=seed)
    _validate(layout, set(kinds))
    return layout


def _validate(layout: Layout, requested_kinds: set):
    present = {rg.kind for rg in layout.regions}
    missing = requested_kinds - present
    if missing:
        raise GenerationError(f"generated layout misses region kinds: {sorted(missing)}")
    seen = {}
    for rg in layout.regions:
        for cell in rg.cells:
            if cell in seen:
                raise GenerationError(f"cell {cell} in two regions: {seen[cell]}, {rg.id}")
            seen[cell] = rg.id
    free_cells = {(c, r) for r in range(layout.height) for c in range(layout.width)
                  if layout.grid[r, c] == FREE}
    unowned = free_cells - set(seen)
    if unowned:
        raise GenerationError(f"free cells outside any region: {sorted(unowned)[:4]}")
    start = layout.cell_of(layout.spawns[0].point)
    dist = geodesic_field(layout, [start])
    for rg in layout.regions:
        if all(not np.isfinite(dist[r, c]) for c, r in rg.cells):
            raise GenerationError(f"region {rg.id} ({rg.kind}) unreachable from spawn")


# ---------------------------------------------------------------------------
# Serialization

def layout_to_json(layout: Layout) -> str:
    doc = {
        "cell_size": layout.cell_size,
        "grid": ["".join(CHAR_CELLS[int(v)] for v in layout.grid[r])
                 for r in range(layout.height)],
        "regions": [
            {"id": rg.id, "kind": rg.kind, "cells": [list(c) for c in rg.cells]}
            for rg in layout.regions
        ],
        "objects": [
            {"class": o.cls, "x": o.x, "y": o.y, "height_band": o.height_band}
            for o in layout.objects
        ],
        "openings": [
            {"cells": [list(c) for c in op.cells],
             "connects": list(op.connects), "state": op.state}
            for op in layout.openings
        ],
        "spawns": [{"x": s.x, "y": s.y, "theta": s.theta} for s in layout.spawns],
        "seed": layout.seed,
    }
    return json.dumps(doc, sort_keys=True, separators=(",", ":"))


def layout_from_json(text: str) -> Layout:
    doc = json.loads(text)
    rows = doc["grid"]
    height, width = len(rows), len(rows[0])
    grid = np.zeros((height, width), dtype=np.uint8)
    for r, row in enumerate(rows):
        if len(row) != width:
            raise ValueError(f"ragged grid row {r}")
        for c, ch in enumerate(row):
            grid[r, c] = CELL_CHARS[ch]
    regions = [Region(d["id"], d["kind"], tuple(tuple(c) for c in d["cells"]))
               for d in doc["regions"]]
    regions.sort(key=lambda rg: rg.id)
    objects = [PlacedObject(d["class"], d["x"], d["y"], d.get("height_band", "floor"))
               for d in doc["objects"]]
    openings = [Opening(tuple(tuple(c) for c in d["cells"]),
                        tuple(d["connects"]), d.get("state", "open"))
                for d in doc["openings"]]
    spawns = [Pose(d["x"], d["y"], d.get("theta", 0.0)) for d in doc["spawns"]]
    return Layout(width, height, float(doc["cell_size"]), grid, regions,
                  objects, openings, spawns, seed=doc.get("seed"))


def layout_from_strings(rows, cell_size: float = 0.25, regions=None,
                        objects=None, openings=None, spawns=None,
                        default_kind: str = "passage") -> Layout:
    """Build a layout from grid strings; handy for scripted test scenes."""
    height, width = len(rows), len(rows[0])
    grid = np.zeros((height, width), dtype=np.uint8)
    for r, row in enumerate(rows):
        for c, ch in enumerate(row):
            grid[r, c] = CELL_CHARS[ch]
    if regions is None:
        cells = tuple((c, r) for r in range(height) for c in range(width)
                      if grid[r, c] == FREE)
        regions = [Region(0, default_kind, cells)]
    if spawns is None:
        first = next((c, r) for r in range(height) for c in range(width)
                     if grid[r, c] == FREE)
        spawns = [Pose((first[0] + 0.5) * cell_size, (first[1] + 0.5) * cell_size, 0.0)]
    return Layout(width, height, cell_size, grid, list(regions),
                  list(objects or []), list(openings or []), list(spawns))
