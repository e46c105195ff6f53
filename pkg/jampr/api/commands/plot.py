from pathlib import Path

import click

from ...services.instance_service import instance_service
from ...services.plot_service import plot_service
from ...services.solution_service import solution_service
from ..deps import configure, data_path, resolve_variant, variant_options


@click.command("plot")
@click.argument("instance_file", type=click.Path(dir_okay=False, path_type=Path))
@click.argument("solution_file", type=click.Path(dir_okay=False, path_type=Path))
@variant_options
@click.option("--title", default="", help="Figure title (defaults to the instance name).")
@click.option("--adjust-due", is_flag=True)
@click.option("-o", "--out", "out_file", type=click.Path(dir_okay=False, path_type=Path), default=None,
              help="SVG file to write; stdout otherwise.")
@click.pass_context
def plot(ctx, instance_file, solution_file, variant_kind, alpha, beta, penalty, title, adjust_due, out_file):
    """Render a solution as an SVG route plot."""
    settings = configure(ctx)
    variant = resolve_variant(variant_kind, alpha, beta, penalty)
    inst = instance_service.read_instance(data_path(instance_file, settings), adjust_due=adjust_due)
    solution = solution_service.read_solution(solution_file)
    svg = plot_service.plot_solution(inst, solution, variant, title=title)
    if out_file is None:
        click.echo(svg, nl=False)
    else:
        out_file.write_text(svg, encoding="utf-8")
