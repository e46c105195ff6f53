from pathlib import Path

import click

from ...core.env import cost, validate as validate_solution
from ...services.instance_service import instance_service
from ...services.solution_service import solution_service
from ...utils.errors import raise_validation_failed
from ..deps import configure, data_path, resolve_variant, variant_options


@click.command("validate")
@click.argument("instance_file", type=click.Path(dir_okay=False, path_type=Path))
@click.argument("solution_file", type=click.Path(dir_okay=False, path_type=Path))
@variant_options
@click.option("--adjust-due", is_flag=True)
@click.pass_context
def validate(ctx, instance_file, solution_file, variant_kind, alpha, beta, penalty, adjust_due):
    """Check a solution file against an instance and recompute its cost."""
    settings = configure(ctx)
    variant = resolve_variant(variant_kind, alpha, beta, penalty)
    inst = instance_service.read_instance(data_path(instance_file, settings), adjust_due=adjust_due)
    solution = solution_service.read_solution(solution_file)
    report = validate_solution(inst, solution, variant)
    for violation in report.violations:
        where = f" (tour {violation.tour})" if violation.tour is not None else ""
        click.echo(f"{violation.kind}{where}: {violation.message}")
    if not report.ok:
        raise_validation_failed(f"{len(report.violations)} violation(s)", details={"file": str(solution_file)})
    breakdown = cost(inst, solution, variant)
    click.echo(f"ok: cost={breakdown.total:.4f} k={solution.k} dist={breakdown.distance:.4f}")
    if abs(breakdown.total - solution.total) > 1e-6 * max(1.0, abs(breakdown.total)):
        click.echo(f"note: file reports cost {solution.total:.4f}")
