"""Command line front end: layout generation, benchmark suite, live server."""
from __future__ import annotations

import json
import sys

import click

from . import benchmark
from .world import generate_layout, layout_to_json


def _parse_seeds(text: str):
    """'1..10' or '1,4,7' or a single integer."""
    text = text.strip()
    if ".." in text:
        lo, hi = text.split("..", 1)
        return tuple(range(int(lo), int(hi) + 1))
    return tuple(int(p) for p in text.split(",") if p.strip())


@click.group()
def main():
    """Indoor navigation simulator tools."""


@main.command("gen-layout")
@click.option("--seed", type=int, default=1, show_default=True)
@click.option("--rooms", type=int, default=8, show_default=True)
@click.option("--out", type=click.Path(dir_okay=False), default=None,
              help="Write JSON here instead of stdout.")
def gen_layout(seed, rooms, out):
    """Generate a procedural layout and emit its JSON document."""
    lay = generate_layout(seed=seed, rooms=rooms)
    text = layout_to_json(lay)
    if out:
        with open(out, "w", encoding="utf-8") as f:
            f.write(text)
        click.echo(f"wrote {out}")
    else:
        click.echo(text)


@main.command("bench")
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False),
              default=None, help="JSON file of suite options; flags override it.")
@click.option("--task", type=click.Choice(["area", "object"]), default=None)
@click.option("--layout-seeds", default=None, help="e.g. 1..10 or 2,5,9")
@click.option("--episodes", type=int, default=None)
@click.option("--targets", default=None, help="comma separated target names")
@click.option("--policies", default=None,
              help="comma separated, e.g. ours,frontier,random or ours-view")
@click.option("--variant", type=click.Choice(["area", "view", "center"]),
              default=None)
@click.option("--budget", type=int, default=None)
@click.option("--out", default=None, help="CSV report path.")
@click.option("--assert", "assert_order", is_flag=True,
              help="Exit nonzero when the policy ordering checks fail.")
def bench(config_path, task, layout_seeds, episodes, targets, policies,
          variant, budget, out, assert_order):
    """Run the paired-seed benchmark suite and print the summary table."""
    cfg = {}
    if config_path:
        with open(config_path, "r", encoding="utf-8") as f:
            cfg.update(json.load(f))
    if task is not None:
        cfg["task"] = task
    if layout_seeds is not None:
        cfg["layout_seeds"] = _parse_seeds(layout_seeds)
    if episodes is not None:
        cfg["episodes"] = episodes
    if targets is not None:
        cfg["targets"] = tuple(t.strip() for t in targets.split(",") if t.strip())
    if policies is not None:
        cfg["policies"] = tuple(p.strip() for p in policies.split(",") if p.strip())
    if variant is not None:
        cfg["variant"] = variant
    if budget is not None:
        cfg["budget"] = budget
    if out is not None:
        cfg["out"] = out

    done = {"n": 0}

    def progress(_row):
        done["n"] += 1
        if done["n"] % 50 == 0:
            click.echo(f"  {done['n']} episode groups done", err=True)

    try:
        report = benchmark.run_benchmark(cfg, progress=progress)
    except ValueError as e:
        raise click.ClickException(str(e))
    click.echo(benchmark.format_summary(report))
    if cfg.get("out"):
        click.echo(f"report written to {cfg['out']}")
    if assert_order:
        violations = benchmark.assert_ordering(report)
        for v in violations:
            click.echo(f"ORDERING VIOLATION: {v}", err=True)
        if violations:
            sys.exit(1)
        click.echo("ordering checks passed")


@main.command("serve")
@click.option("--port", type=int, default=None,
              help="Listen port; TELESIM_PORT is the fallback.")
@click.option("--layout", "layout_file", type=click.Path(exists=True, dir_okay=False),
              default=None, help="Layout JSON file to load.")
@click.option("--seed", type=int, default=1, show_default=True,
              help="Layout generator seed when no file is given.")
def serve_cmd(port, layout_file, seed):
    """Start the session server (WebSocket endpoint at /session/{id})."""
    from .server import pick_port, serve
    click.echo(f"serving on 127.0.0.1:{pick_port(port)}")
    serve(port=port, layout_file=layout_file, seed=seed)


if __name__ == "__main__":
    main()
