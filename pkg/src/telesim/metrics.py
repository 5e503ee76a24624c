"""Navigation metrics (Success, SPL, SoftSPL, DTS) and the survey MOS."""
from __future__ import annotations

from dataclasses import dataclass, field


def _episode_fields(ep):
    """(S, l, p, d) from an EpisodeResult or a plain (S, l, p, d) tuple."""
    if hasattr(ep, "success"):
        return (1.0 if ep.success else 0.0, float(ep.shortest_length),
                float(ep.path_length), float(ep.final_distance))
    s, l, p, d = ep
    return float(s), float(l), float(p), float(d)


def success_rate(episodes) -> float:
    """Successful episodes over total episodes."""
    if not episodes:
        raise ValueError("no episodes")
    return sum(_episode_fields(e)[0] for e in episodes) / len(episodes)


def spl(episodes) -> float:
    """Success weighted by path length: mean of S_i * l_i / max(p_i, l_i).

    A zero-length episode (spawned on the goal, never moved) counts as
    perfectly efficient when successful; the ratio limit is 1.
    """
    if not episodes:
        raise ValueError("no episodes")
    total = 0.0
    for e in episodes:
        s, l, p, _ = _episode_fields(e)
        denom = max(p, l)
        total += s if denom <= 0 else s * l / denom
    return total / len(episodes)


def softspl(episodes) -> float:
    """SPL with the binary success replaced by goal progress 1 - d/max(l, d)."""
    if not episodes:
        raise ValueError("no episodes")
    total = 0.0
    for e in episodes:
        _, l, p, d = _episode_fields(e)
        progress = 1.0 if max(l, d) <= 0 else 1.0 - d / max(l, d)
        efficiency = 1.0 if max(p, l) <= 0 else l / max(p, l)
        total += progress * efficiency
    return total / len(episodes)


def dts(distance, d: float = 1.0) -> float:
    """Distance to success: how far outside the success ball the agent ended.

    Accepts a raw euclidean distance to the goal, or an EpisodeResult, whose
    final_distance already has the task's own threshold applied (pass d=0
    in that case).
    """
    dist = getattr(distance, "final_distance", distance)
    return max(float(dist) - d, 0.0)


@dataclass
class RatingsTable:
    """Survey ratings: per-feature attribute scores and per-user importances.

    ratings[feature][user] is the user's score list, one entry per attribute
    of that feature; weights[feature][user] is how much that user said the
    feature matters. Scores live on a 1-5 scale.
    """

    ratings: dict
    weights: dict
    attributes: dict = field(default_factory=dict)   # feature -> count, optional

    def __post_init__(self):
        for feature, users in self.ratings.items():
            counts = {len(scores) for scores in users.values()}
            if len(counts) > 1:
                raise ValueError(f"uneven attribute counts for {feature!r}: {counts}")
            declared = self.attributes.get(feature)
            if declared is not None and counts and counts != {declared}:
                raise ValueError(f"{feature!r} expects {declared} attributes")
            for user, scores in users.items():
                for a in scores:
                    if not 1.0 <= a <= 5.0:
                        raise ValueError(f"rating {a} for {feature!r}/{user!r} "
                                         "outside [1, 5]")
                w = self.weights.get(feature, {}).get(user)
                if w is None or w <= 0:
                    raise ValueError(f"missing or non-positive weight for "
                                     f"{feature!r}/{user!r}")


def mos(table: RatingsTable) -> dict:
    """Feature-wise collective mean opinion score.

    M_k = sum_j w_kj * (sum_i a_ij / A_k) / sum_j w_kj: each user's attribute
    mean for the feature, averaged under that user's importance weight.
    """
    out = {}
    for feature, users in table.ratings.items():
        num = den = 0.0
        for user, scores in users.items():
            w = table.weights[feature][user]
            num += w * (sum(scores) / len(scores))
            den += w
        if den <= 0:
            raise ValueError(f"weights for {feature!r} sum to zero")
        out[feature] = num / den
    return out
