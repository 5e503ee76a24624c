"""Deterministic 2D indoor simulator and navigation stack for telepresence robots."""

__version__ = "0.1.0"

from .world import (  # noqa: F401
    FREE, WALL, MIRROR, REGION_KINDS, GenerationError,
    Layout, Opening, PlacedObject, Point, Pose, Region,
    generate_layout, layout_from_json, layout_from_strings, layout_to_json,
    navigable_centroid, region_at, region_kind_at, shortest_path_length,
)
from .simulator import (  # noqa: F401
    Action, EpisodeResult, PersonEntity, Simulator, STEP_METERS, TURN_DEGREES,
)
