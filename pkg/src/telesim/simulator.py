"""Discrete-action robot simulator with scripted walking persons."""
from __future__ import annotations

import math
import random
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from . import perception
from .world import Layout, Point, Pose, region_kind_at

STEP_METERS = 0.25
TURN_DEGREES = 30.0


class Action(str, Enum):
    FORWARD = "forward"
    TURN_LEFT = "turn_left"
    TURN_RIGHT = "turn_right"
    STOP = "stop"


@dataclass
class PersonEntity:
    """Scripted walker advancing one waypoint leg per world tick."""

    id: str
    waypoints: list
    speed: float = 0.25        # meters per tick, at most two cells
    appearance_seed: int = 0
    loop: bool = False
    feature_noise: float = 0.02
    radius: float = 0.3
    cls: str = "person"

    def __post_init__(self):
        self.position = self.waypoints[0]
        self._leg = 1
        rng = np.random.default_rng(self.appearance_seed)
        v = rng.normal(size=8)
        self.appearance = v / np.linalg.norm(v)

    def observed_features(self, rng: random.Random):
        feats = [a + rng.gauss(0.0, self.feature_noise) for a in self.appearance]
        return tuple(feats)

    def advance(self):
        if self._leg >= len(self.waypoints):
            if self.loop and len(self.waypoints) > 1:
                self._leg = 0
            else:
                return
        target = self.waypoints[self._leg]
        d = self.position.dist(target)
        if d <= self.speed + 1e-12:
            self.position = target
            self._leg += 1
        else:
            f = self.speed / d
            self.position = Point(self.position.x + (target.x - self.position.x) * f,
                                  self.position.y + (target.y - self.position.y) * f)


@dataclass
class EpisodeResult:
    success: bool
    steps: int
    path_length: float
    shortest_length: float
    final_distance: float
    reason: str = ""
    message: str = ""
    target: str = ""
    policy: str = ""
    variant: str = ""
    trajectory: list = field(default_factory=list)
    visited_regions: list = field(default_factory=list)


class Simulator:
    """Holds true world state; actions either apply fully or not at all."""

    def __init__(self, layout: Layout, start=0, sensor=None, seed: int = 0,
                 persons=()):
        self.layout = layout
        if isinstance(start, Pose):
            self.pose = start
        else:
            self.pose = layout.spawns[start]
        if not layout.is_free_point(self.pose.point):
            raise ValueError("start pose not on a free cell")
        self.sensor = sensor or perception.SensorConfig()
        self.rng = random.Random(seed)
        self.persons = list(persons)
        self.steps = 0
        self.ticks = 0
        self.collisions = 0
        self.path_length = 0.0
        self.trajectory = [self.pose]
        self._rays = perception.RayField(layout, self.sensor)

    def observe(self) -> perception.Observation:
        return perception.observe(self.layout, self.pose, self.sensor, self.rng,
                                  persons=self.persons, tick=self.ticks,
                                  rays=self._rays)

    def act(self, action: Action) -> bool:
        """Apply one action. Returns False for a blocked Forward (pose kept,
        step still spent). Stop is free."""
        if action == Action.STOP:
            return True
        self.steps += 1
        if action == Action.TURN_LEFT:
            self.pose = Pose(self.pose.x, self.pose.y, self.pose.theta + TURN_DEGREES)
            self.trajectory.append(self.pose)
            return True
        if action == Action.TURN_RIGHT:
            self.pose = Pose(self.pose.x, self.pose.y, self.pose.theta - TURN_DEGREES)
            self.trajectory.append(self.pose)
            return True
        th = math.radians(self.pose.theta)
        nx = self.pose.x + STEP_METERS * math.cos(th)
        ny = self.pose.y + STEP_METERS * math.sin(th)
        mid = Point(self.pose.x + (nx - self.pose.x) / 2.0,
                    self.pose.y + (ny - self.pose.y) / 2.0)
        if not (self.layout.is_free_point(mid) and self.layout.is_free_point(Point(nx, ny))):
            self.collisions += 1
            self.trajectory.append(self.pose)
            return False
        self.path_length += STEP_METERS
        self.pose = Pose(nx, ny, self.pose.theta)
        self.trajectory.append(self.pose)
        return True

    def step_world(self):
        """Advance scripted persons by one tick."""
        for p in self.persons:
            p.advance()
        self.ticks += 1

    def region_kind(self):
        return region_kind_at(self.layout, self.pose.point)
