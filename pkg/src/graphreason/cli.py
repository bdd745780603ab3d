"""Command-line interface.

Five commands: ``run`` one experiment, ``sweep`` an axis of experiments,
``score`` to rebuild result tables from stored traces, ``validate-trace``
to check trace files, and ``gen-graph`` to produce a synthetic graph.
Configuration problems surface before anything is written and exit
nonzero.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click

from . import kg
from .runner import ConfigError, RunConfig, run_experiment, run_sweep, score_run
from .traces import validate_trace


@click.group()
def main() -> None:
    """Knowledge-graph grounded stepwise reasoning runner."""


def _run_options(command):
    options = [
        click.option("--kg", "kg_path", required=True, help="Knowledge graph file."),
        click.option("--questions", "questions_path", required=True, help="Question file."),
        click.option("--out", "out_dir", required=True, help="Output directory."),
        click.option(
            "--strategy",
            type=click.Choice(["cot", "tot", "got"]),
            default="cot",
            show_default=True,
        ),
        click.option(
            "--interaction",
            type=click.Choice(["agent", "explore"]),
            default="agent",
            show_default=True,
        ),
        click.option(
            "--evaluator",
            type=click.Choice(["select", "score"]),
            default="select",
            show_default=True,
        ),
        click.option("--steps", type=int, default=10, show_default=True, help="Chain step limit."),
        click.option("--branching", type=int, default=3, show_default=True, help="Children per state."),
        click.option("--retain", type=int, default=3, show_default=True, help="Beam width."),
        click.option("--max-depth", type=int, default=3, show_default=True, help="Tree depth limit."),
        click.option(
            "--search-depth", type=int, default=3, show_default=True, help="Graph search depth."
        ),
        click.option(
            "--backend",
            type=click.Choice(["wire", "replay"]),
            default="replay",
            show_default=True,
        ),
        click.option("--endpoint", default=None, help="Wire backend URL."),
        click.option("--model", default=None, help="Wire backend model name."),
        click.option("--replay", "replay_path", default=None, help="Replay script file."),
        click.option(
            "--judge", type=click.Choice(["none", "llm"]), default="none", show_default=True
        ),
        click.option("--seed", type=int, default=0, show_default=True),
    ]
    for option in reversed(options):
        command = option(command)
    return command


def _build_config(**kwargs) -> RunConfig:
    return RunConfig(**kwargs)


@main.command("run")
@_run_options
def run_command(**kwargs) -> None:
    """Run one experiment and write traces, results, and a report."""
    config = _build_config(**kwargs)
    try:
        report = run_experiment(config)
    except ConfigError as exc:
        raise click.ClickException(str(exc)) from exc
    click.echo(f"ran {report.overall.count} questions; artifacts in {config.out_dir}")


@main.command("sweep")
@_run_options
@click.option(
    "--axis",
    type=click.Choice(["steps", "depth", "width", "evaluator"]),
    required=True,
)
@click.option("--values", required=True, help="Comma-separated axis values.")
def sweep_command(axis: str, values: str, **kwargs) -> None:
    """Run one experiment per axis value and write a sweep summary table."""
    config = _build_config(**kwargs)
    value_list = [v.strip() for v in values.split(",") if v.strip()]
    try:
        run_sweep(config, axis, value_list)
    except ConfigError as exc:
        raise click.ClickException(str(exc)) from exc
    click.echo(f"swept {axis} over {value_list}; artifacts in {config.out_dir}")


@main.command("validate-trace")
@click.argument("paths", nargs=-1, required=True)
def validate_command(paths: tuple[str, ...]) -> None:
    """Check trace files against the structural invariants."""
    failed = False
    for path in paths:
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            click.echo(f"{path}: unreadable ({exc})")
            failed = True
            continue
        violations = validate_trace(data)
        if violations:
            failed = True
            for violation in violations:
                click.echo(f"{path}: {violation}")
        else:
            click.echo(f"{path}: ok")
    if failed:
        sys.exit(1)


@main.command("score")
@click.option("--traces", "traces_dir", required=True, help="Directory of .trace files.")
@click.option("--questions", "questions_path", required=True, help="Question file.")
@click.option("--out", "out_dir", required=True, help="Output directory.")
def score_command(traces_dir: str, questions_path: str, out_dir: str) -> None:
    """Recompute results.lines and report.table from stored traces."""
    try:
        report = score_run(traces_dir, questions_path, out_dir)
    except ConfigError as exc:
        raise click.ClickException(str(exc)) from exc
    click.echo(f"scored {report.overall.count} questions; tables in {out_dir}")


@main.command("gen-graph")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--nodes", type=int, default=10, show_default=True)
@click.option("--edges-per-node", type=int, default=2, show_default=True)
@click.option("--node-types", default="alpha,beta", show_default=True, help="Comma-separated.")
@click.option("--relations", default="linked-to,derived-from", show_default=True)
@click.option("--out", "out_path", required=True, help="Graph file to write.")
def gen_graph_command(
    seed: int,
    nodes: int,
    edges_per_node: int,
    node_types: str,
    relations: str,
    out_path: str,
) -> None:
    """Generate a seeded synthetic graph file."""
    try:
        spec = kg.SyntheticGraphSpec(
            node_types=tuple(t.strip() for t in node_types.split(",") if t.strip()),
            relations=tuple(r.strip() for r in relations.split(",") if r.strip()),
            node_count=nodes,
            edges_per_node=edges_per_node,
        )
        graph = kg.generate_synthetic_graph(seed, spec)
    except ValueError as exc:
        raise click.ClickException(str(exc)) from exc
    kg.save_graph(graph, out_path)
    click.echo(f"wrote {graph.stats.node_count} nodes to {out_path}")


if __name__ == "__main__":
    main()
