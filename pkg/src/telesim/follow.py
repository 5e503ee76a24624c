"""Person following: tracker voting, scene-thirds steering, safe-distance stop.

Three voters nominate a detection each tick: a motion-continuity tracker, an
appearance tracker, and a re-identification model that accumulates a running
feature mean. The reid vote carries triple weight on the tick right after the
target was out of view, which is what recovers the target after occlusion.
"""
from __future__ import annotations

import json
import math
import random
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

from .simulator import Action, PersonEntity, TURN_DEGREES
from .world import Point


@dataclass
class FollowConfig:
    stop_range: float = 1.0        # closer than this (by bbox width) -> Stop
    person_radius: float = 0.3     # must match the sensor's person model
    a_gate: float = 0.9            # max offset from constant-velocity prediction
    a_max_misses: int = 3
    b_gate: float = 0.5            # max feature distance to the template
    b_max_misses: int = 3
    b_confusion: float = 0.1       # chance to swap between look-alike persons
    b_similar_dist: float = 0.5
    reid_gate: float = 0.5
    absence_ticks: int = 10        # full-rotation fallback after this many
    seed: int = 0

    def stop_width(self) -> float:
        """Angular width a person shows at exactly stop_range."""
        return 2.0 * math.degrees(math.atan(self.person_radius / self.stop_range))


@dataclass
class TrackerA:
    """Motion continuity: nearest neighbor to a constant-velocity prediction."""

    pos: tuple
    vel: tuple = (0.0, 0.0)
    misses: int = 0


@dataclass
class TrackerB:
    """Appearance match against a frame-to-frame template."""

    template: tuple
    misses: int = 0


@dataclass
class ReidModel:
    """Running mean of confirmed target features; confidence grows with samples."""

    mean: tuple
    samples: int = 1

    def absorb(self, feats):
        n = self.samples
        self.mean = tuple((m * n + f) / (n + 1) for m, f in zip(self.mean, feats))
        self.samples = n + 1


@dataclass
class FollowState:
    target_features: tuple
    tracker_a: TrackerA
    tracker_b: TrackerB
    reid: ReidModel
    last_move: Action = Action.STOP
    weight: float = 1.0 / 3.0
    out_of_view_ticks: int = 0
    pose: object = None
    pending: deque = field(default_factory=deque)   # queued recovery actions
    rng: random.Random = field(default_factory=lambda: random.Random(0))
    last_winner_id: str | None = None               # this tick's vote, for harnesses


@dataclass
class FollowResult:
    retention_ratio: float
    min_separation: float
    reacquired: bool
    ticks: int = 0
    tracked_ticks: int = 0
    final_target_id: str | None = None


def _feat_dist(a, b) -> float:
    return math.sqrt(sum((x - y) ** 2 for x, y in zip(a, b)))


def _det_point(det, pose):
    ang = math.radians(pose.theta + det.bearing)
    return (pose.x + det.range * math.cos(ang), pose.y + det.range * math.sin(ang))


def select_target(detections, choice: int, pose, cfg: FollowConfig | None = None) -> FollowState:
    """Lock the follow state onto the chosen detection.

    choice indexes the detection list as presented to the operator; anything
    out of range or not a person is rejected.
    """
    cfg = cfg or FollowConfig()
    if not 0 <= choice < len(detections):
        raise ValueError(f"no detection at index {choice}")
    det = detections[choice]
    if det.cls != "person":
        raise ValueError(f"detection {choice} is {det.cls!r}, not a person")
    if det.features is None:
        raise ValueError("selected detection carries no features")
    feats = tuple(det.features)
    pos = _det_point(det, pose)
    return FollowState(
        target_features=feats,
        tracker_a=TrackerA(pos=pos),
        tracker_b=TrackerB(template=feats),
        reid=ReidModel(mean=feats),
        pose=pose,
        rng=random.Random(cfg.seed),
    )


def _nominate_a(state: FollowState, cand, cfg: FollowConfig):
    a = state.tracker_a
    if a.misses >= cfg.a_max_misses:
        return None
    px = a.pos[0] + a.vel[0]
    py = a.pos[1] + a.vel[1]
    best, best_d = None, cfg.a_gate
    for i, (det, pos) in enumerate(cand):
        d = math.hypot(pos[0] - px, pos[1] - py)
        if d <= best_d:
            best, best_d = i, d
    return best


def _nominate_b(state: FollowState, cand, cfg: FollowConfig):
    b = state.tracker_b
    if b.misses >= cfg.b_max_misses:
        return None
    scored = sorted(
        ((_feat_dist(det.features, b.template), i) for i, (det, _) in enumerate(cand)),
        key=lambda t: t[0],
    )
    if not scored or scored[0][0] > cfg.b_gate:
        return None
    best = scored[0][1]
    if len(scored) > 1:
        d01 = _feat_dist(cand[best][0].features, cand[scored[1][1]][0].features)
        if d01 < cfg.b_similar_dist and state.rng.random() < cfg.b_confusion:
            return scored[1][1]   # look-alikes: the tracker latches the wrong one
    return best


def _nominate_reid(state: FollowState, cand, cfg: FollowConfig):
    best, best_d = None, cfg.reid_gate
    for i, (det, _) in enumerate(cand):
        d = _feat_dist(det.features, state.reid.mean)
        if d <= best_d:
            best, best_d = i, d
    return best


def vote(candidates, state: FollowState, cfg: FollowConfig | None = None):
    """Weighted plurality over the three voters' nominations.

    Trackers carry 1/3 each; reid carries state.weight (1/3 normally, 1 right
    after an out-of-view tick). Ties go to reid's nominee. Returns the winning
    detection or None when every voter abstains.
    """
    cfg = cfg or FollowConfig()
    pose = state.pose
    cand = [(d, _det_point(d, pose)) for d in candidates]
    na = _nominate_a(state, cand, cfg)
    nb = _nominate_b(state, cand, cfg)
    nr = _nominate_reid(state, cand, cfg)
    state._noms = (na, nb, nr)
    scores = {}
    for nom, w in ((na, 1.0 / 3.0), (nb, 1.0 / 3.0), (nr, state.weight)):
        if nom is not None:
            scores[nom] = scores.get(nom, 0.0) + w
    if not scores:
        return None
    top = max(scores.values())
    tied = [i for i, s in scores.items() if s >= top - 1e-12]
    if nr in tied:
        return candidates[nr]
    return candidates[min(tied)]


def _overlap(a0, a1, b0, b1) -> float:
    return max(0.0, min(a1, b1) - max(a0, b0))


def _sector_action(winner, fov: float) -> Action:
    """Steer toward the scene third holding most of the winner's extent.

    Bearings grow to the left, so the ascending intervals are Right, Forward,
    Left; equal overlap prefers Forward.
    """
    half = fov / 2.0
    third = fov / 3.0
    b0 = max(winner.bearing - winner.angular_width / 2.0, -half)
    b1 = min(winner.bearing + winner.angular_width / 2.0, half)
    right = _overlap(b0, b1, -half, -half + third)
    mid = _overlap(b0, b1, -half + third, half - third)
    left = _overlap(b0, b1, half - third, half)
    if mid >= left and mid >= right:
        return Action.FORWARD
    if left >= right:
        return Action.TURN_LEFT
    return Action.TURN_RIGHT


def _register_miss(state: FollowState):
    state.tracker_a.misses += 1
    state.tracker_b.misses += 1


def _anchor_trackers(state: FollowState, winner, pos):
    a = state.tracker_a
    if a.misses < 3:
        a.vel = (pos[0] - a.pos[0], pos[1] - a.pos[1])
    else:
        a.vel = (0.0, 0.0)   # stale tracker re-seeds without a velocity guess
    a.pos = pos
    a.misses = 0
    state.tracker_b.template = tuple(winner.features)
    state.tracker_b.misses = 0


def follow_step(state: FollowState, obs, cfg: FollowConfig | None = None):
    """One control tick: vote, steer or stop, fall back when the view is empty.

    Returns (action, state). The reid mean only trains while one of the
    trackers corroborates the winner; a reid-only win (the reacquisition case)
    re-anchors the trackers but adds no sample.
    """
    cfg = cfg or FollowConfig()
    state.pose = obs.pose
    state.last_winner_id = None
    persons = [d for d in obs.detections if d.cls == "person"]

    if not persons:
        state.out_of_view_ticks += 1
        state.weight = 1.0
        _register_miss(state)
        if state.out_of_view_ticks == cfg.absence_ticks:
            spins = int(round(360.0 / TURN_DEGREES))
            state.pending.extend([Action.TURN_LEFT] * spins)
        if state.pending:
            return state.pending.popleft(), state
        if state.out_of_view_ticks > cfg.absence_ticks:
            move = state.rng.choice(
                (Action.FORWARD, Action.FORWARD, Action.TURN_LEFT, Action.TURN_RIGHT))
            return move, state
        return state.last_move, state

    state.pending.clear()
    state.out_of_view_ticks = 0
    winner = vote(persons, state, cfg)
    na, nb, _ = state._noms
    state.weight = 1.0 / 3.0
    if winner is None:
        _register_miss(state)
        return state.last_move, state

    state.last_winner_id = winner.entity_id
    widx = persons.index(winner)
    pos = _det_point(winner, obs.pose)
    _anchor_trackers(state, winner, pos)
    if winner.angular_width >= cfg.stop_width():
        return Action.STOP, state
    fov = float(obs.bearings[-1] - obs.bearings[0])
    action = _sector_action(winner, fov)
    state.last_move = action
    if na == widx or nb == widx:
        state.reid.absorb(winner.features)
    return action, state


def load_scenario(source) -> dict:
    """Normalize a scenario: JSON file path, bare script list, or dict.

    A bare list is the on-disk format ({id, waypoints, speed} records); the
    dict form adds "target" (person id) or "choice" (detection index).
    """
    if isinstance(source, (str, Path)):
        source = json.loads(Path(source).read_text())
    if isinstance(source, list):
        source = {"persons": source}
    persons = source.get("persons", [])
    if not persons:
        raise ValueError("scenario has no person scripts")
    return {
        "persons": persons,
        "target": source.get("target"),
        "choice": source.get("choice"),
    }


def _build_persons(scripts):
    out = []
    for i, s in enumerate(scripts):
        out.append(PersonEntity(
            id=str(s.get("id", f"p{i}")),
            waypoints=[Point(float(x), float(y)) for x, y in s["waypoints"]],
            speed=float(s.get("speed", 0.25)),
            appearance_seed=int(s.get("appearance_seed", i)),
            loop=bool(s.get("loop", False)),
        ))
    return out


def run_follow(sim, scenario, budget_ticks: int = 150,
               cfg: FollowConfig | None = None) -> FollowResult:
    """Run the follow controller against scripted walkers.

    retention_ratio = correct-winner ticks / any-winner ticks, judged on
    hidden ground-truth ids; reacquired flags a tick where the weight-1 vote
    picked the true target right after an out-of-view stretch.
    """
    cfg = cfg or FollowConfig()
    sc = load_scenario(scenario)
    sim.persons = _build_persons(sc["persons"])
    target_id = sc["target"] or sim.persons[0].id

    obs = sim.observe()
    if sc["choice"] is not None:
        choice = int(sc["choice"])
    else:
        idx = [i for i, d in enumerate(obs.detections) if d.entity_id == target_id]
        if not idx:
            raise ValueError(f"target {target_id!r} not visible at scenario start")
        choice = idx[0]
    state = select_target(obs.detections, choice, obs.pose, cfg)
    target_id = obs.detections[choice].entity_id
    ent = next(p for p in sim.persons if p.id == target_id)

    min_sep = sim.pose.point.dist(ent.position)
    tracked = correct = 0
    reacquired = False
    last_winner = None
    for _ in range(budget_ticks):
        w_before = state.weight
        action, state = follow_step(state, obs, cfg)
        sim.act(action)
        sim.step_world()
        min_sep = min(min_sep, sim.pose.point.dist(ent.position))
        if state.last_winner_id is not None:
            tracked += 1
            last_winner = state.last_winner_id
            if state.last_winner_id == target_id:
                correct += 1
                if w_before == 1.0:
                    reacquired = True
        obs = sim.observe()
    return FollowResult(
        retention_ratio=correct / tracked if tracked else 0.0,
        min_separation=min_sep,
        reacquired=reacquired,
        ticks=budget_ticks,
        tracked_ticks=tracked,
        final_target_id=last_winner,
    )
