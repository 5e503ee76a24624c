"""Benchmark harness: paired-seed episode suites, CSV reports, ordering checks."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

from . import metrics
from .policies import (TaskConfig, run_areagoal, run_frontier_baseline,
                       run_objectgoal, run_random_baseline)
from .simulator import Simulator
from .world import generate_layout, geodesic_to_objects, region_kind_at

AREA_TARGETS = ("kitchen", "bedroom", "bathroom", "study room",
                "living room", "dining room")
# object classes the stock generator places in every layout seed 1..10
OBJECT_TARGETS = ("bed", "sofa", "dining table", "oven", "toilet",
                  "potted plant")
AREA_POLICIES = ("ours-area", "ours-view", "frontier", "random")
OBJECT_POLICIES = ("ours", "frontier", "random")

CSV_COLUMNS = ("target", "policy", "variant", "success", "mean_steps",
               "spl", "softspl", "dts")

_DEFAULTS = {
    "task": "area",
    "layout_seeds": tuple(range(1, 11)),
    "episodes": 20,
    "targets": None,
    "policies": None,
    "variant": "area",
    "budget": 500,
    "out": None,
}
_ALIASES = {"seeds": "layout_seeds"}


@dataclass
class EpisodeRow:
    layout_seed: int
    target: str
    episode: int
    policy: str
    variant: str
    result: object


@dataclass
class BenchReport:
    config: dict
    episodes: list
    rows: list = field(default_factory=list)      # per (target, policy, variant)
    summary: list = field(default_factory=list)   # per (policy, variant)


def _normalize_config(config) -> dict:
    cfg = dict(_DEFAULTS)
    for k, v in dict(config or {}).items():
        k = _ALIASES.get(k, k)
        if k not in _DEFAULTS:
            raise ValueError(f"unknown config key: {k!r}")
        if v is not None:
            cfg[k] = v
    if cfg["task"] not in ("area", "object"):
        raise ValueError(f"unknown task: {cfg['task']!r}")
    seeds = cfg["layout_seeds"]
    if isinstance(seeds, int):
        seeds = tuple(range(1, seeds + 1))
    cfg["layout_seeds"] = tuple(int(s) for s in seeds)
    if cfg["targets"] is None:
        cfg["targets"] = AREA_TARGETS if cfg["task"] == "area" else OBJECT_TARGETS
    cfg["targets"] = tuple(cfg["targets"])
    if cfg["policies"] is None:
        cfg["policies"] = AREA_POLICIES if cfg["task"] == "area" else OBJECT_POLICIES
    cfg["policies"] = tuple(cfg["policies"])
    cfg["episodes"] = int(cfg["episodes"])
    cfg["budget"] = int(cfg["budget"])
    return cfg


def _split_policy(name: str, default_variant: str, task: str):
    """'ours-view' -> ('ours', 'view'); baselines carry no variant."""
    if name.startswith("ours"):
        _, _, suffix = name.partition("-")
        variant = suffix or (default_variant if task == "area" else "")
        return "ours", variant
    if name in ("frontier", "random"):
        return name, ""
    raise ValueError(f"unknown policy: {name!r}")


def _start_index(lay, task: str, target: str, e: int) -> int:
    """Paired start spawn for episode e; every policy sees the same index.

    Area episodes must not begin inside the target region; object episodes
    keep at least 3 m of geodesic to the nearest instance so a random walker
    cannot luck into the success ball often.
    """
    n = len(lay.spawns)
    best, best_d = e % n, -1.0
    for k in range(n):
        idx = (e + k) % n
        p = lay.spawns[idx].point
        if task == "area":
            if region_kind_at(lay, p) == target:
                continue
            return idx
        d = geodesic_to_objects(lay, target, p)
        if d >= 3.0:
            return idx
        if d > best_d:
            best, best_d = idx, d
    return best


def _run_policy(policy: str, variant: str, task: str, sim, target: str,
                tc: TaskConfig):
    if policy == "ours":
        if task == "area":
            return run_areagoal(sim, target, variant=variant or "area", cfg=tc)
        return run_objectgoal(sim, target, cfg=tc)
    goal_spec = (task, target)
    if policy == "frontier":
        return run_frontier_baseline(sim, goal_spec, cfg=tc)
    return run_random_baseline(sim, goal_spec, cfg=tc)


def _stats(results) -> dict:
    return {
        "episodes": len(results),
        "success": metrics.success_rate(results),
        "mean_steps": sum(r.steps for r in results) / len(results),
        "spl": metrics.spl(results),
        "softspl": metrics.softspl(results),
        "dts": sum(r.final_distance for r in results) / len(results),
    }


def _aggregate(report: BenchReport):
    cfg = report.config
    by_cell = {}
    for row in report.episodes:
        by_cell.setdefault((row.target, row.policy, row.variant), []).append(row.result)
    for target in cfg["targets"]:
        for pol in cfg["policies"]:
            policy, variant = _split_policy(pol, cfg["variant"], cfg["task"])
            results = by_cell.get((target, policy, variant))
            if results:
                report.rows.append({"target": target, "policy": policy,
                                    "variant": variant, **_stats(results)})
    by_policy = {}
    for row in report.episodes:
        by_policy.setdefault((row.policy, row.variant), []).append(row.result)
    for pol in cfg["policies"]:
        policy, variant = _split_policy(pol, cfg["variant"], cfg["task"])
        results = by_policy.get((policy, variant))
        if results:
            report.summary.append({"policy": policy, "variant": variant,
                                   **_stats(results)})


def run_benchmark(config=None, progress=None) -> BenchReport:
    """Run the paired-seed suite described by config (invalid keys rejected).

    Episode e of every (layout seed, target) cell reuses one start spawn and
    one simulator seed across all policies, so per-episode comparisons are
    like for like. Results are deterministic for a given config.
    """
    cfg = _normalize_config(config)
    episodes = []
    for s in cfg["layout_seeds"]:
        lay = generate_layout(seed=s)
        for target in cfg["targets"]:
            for e in range(cfg["episodes"]):
                start = _start_index(lay, cfg["task"], target, e)
                for pol in cfg["policies"]:
                    policy, variant = _split_policy(pol, cfg["variant"], cfg["task"])
                    sim = Simulator(lay, start=start, seed=100 + e)
                    tc = TaskConfig(step_budget=cfg["budget"])
                    res = _run_policy(policy, variant, cfg["task"], sim, target, tc)
                    episodes.append(EpisodeRow(s, target, e, policy, variant, res))
                if progress is not None:
                    progress(episodes[-1])
    report = BenchReport(config=cfg, episodes=episodes)
    _aggregate(report)
    if cfg["out"]:
        write_csv(report, cfg["out"])
    return report


def write_csv(report: BenchReport, path):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(CSV_COLUMNS)
        for row in report.rows:
            w.writerow([row["target"], row["policy"], row["variant"],
                        f"{row['success']:.6f}", f"{row['mean_steps']:.2f}",
                        f"{row['spl']:.6f}", f"{row['softspl']:.6f}",
                        f"{row['dts']:.6f}"])


def format_summary(report: BenchReport) -> str:
    """Aggregate table over all targets, one line per policy/variant."""
    lines = [f"{'policy':<10} {'variant':<8} {'episodes':>8} {'success':>8} "
             f"{'mean_steps':>10} {'spl':>8} {'softspl':>8} {'dts':>8}"]
    for s in report.summary:
        lines.append(f"{s['policy']:<10} {s['variant'] or '-':<8} "
                     f"{s['episodes']:>8d} {s['success']:>8.3f} "
                     f"{s['mean_steps']:>10.1f} {s['spl']:>8.3f} "
                     f"{s['softspl']:>8.3f} {s['dts']:>8.3f}")
    return "\n".join(lines)


def _summary_cell(report: BenchReport, policy: str, variant: str = ""):
    for s in report.summary:
        if s["policy"] == policy and s["variant"] == variant:
            return s
    return None


def assert_ordering(report: BenchReport) -> list:
    """Violations of the expected policy ordering; empty means pass."""
    fails = []
    task = report.config["task"]
    if task == "area":
        ours = _summary_cell(report, "ours", "area")
        view = _summary_cell(report, "ours", "view")
        frontier = _summary_cell(report, "frontier")
        rand = _summary_cell(report, "random")
        pairs = [("ours", ours, "frontier", frontier),
                 ("frontier", frontier, "random", rand)]
        for an, a, bn, b in pairs:
            if a is None or b is None:
                continue
            if a["success"] < b["success"] - 0.02:
                fails.append(f"success({an})={a['success']:.3f} < "
                             f"success({bn})={b['success']:.3f} - 0.02")
            if a["mean_steps"] > b["mean_steps"] + 5.0:
                fails.append(f"mean_steps({an})={a['mean_steps']:.1f} > "
                             f"mean_steps({bn})={b['mean_steps']:.1f} + 5")
        if view is not None and ours is not None:
            paired = {}
            for row in report.episodes:
                if row.policy == "ours":
                    paired.setdefault((row.layout_seed, row.target, row.episode),
                                      {})[row.variant] = row.result
            for key, pair in paired.items():
                if "area" not in pair or "view" not in pair:
                    continue
                a, v = pair["area"], pair["view"]
                if a.success and not v.success:
                    fails.append(f"view lost an episode area won: {key}")
                if v.steps > a.steps:
                    fails.append(f"view used more steps than area: {key} "
                                 f"({v.steps} > {a.steps})")
    else:
        ours = _summary_cell(report, "ours")
        frontier = _summary_cell(report, "frontier")
        rand = _summary_cell(report, "random")
        if ours and frontier and rand:
            for m in ("success", "spl"):
                if not ours[m] > frontier[m]:
                    fails.append(f"{m}(ours)={ours[m]:.3f} <= "
                                 f"{m}(frontier)={frontier[m]:.3f}")
                if not frontier[m] > rand[m]:
                    fails.append(f"{m}(frontier)={frontier[m]:.3f} <= "
                                 f"{m}(random)={rand[m]:.3f}")
            if rand["success"] >= 0.2:
                fails.append(f"success(random)={rand['success']:.3f} >= 0.2")
    return fails
