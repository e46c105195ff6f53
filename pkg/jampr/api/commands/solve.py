from pathlib import Path

import click

from ...core.env import validate
from ...services.instance_service import instance_service
from ...services.solution_service import solution_service
from ...services.solver_service import SolveMode, solver_service
from ...utils.errors import raise_infeasible_solution
from ..deps import configure, data_path, resolve_variant, variant_options


@click.command("solve")
@click.argument("instance_file", type=click.Path(dir_okay=False, path_type=Path))
@click.option("--policy", "policy_spec", required=True, help="Checkpoint path or 'random'.")
@click.option("--mode", type=click.Choice([m.value for m in SolveMode]), default=SolveMode.GREEDY.value,
              show_default=True)
@click.option("-n", "--samples", "n_samples", type=click.IntRange(min=1), default=None,
              help="Sampled rollouts (default 1280, or 1000 for random).")
@variant_options
@click.option("--m-con", type=click.IntRange(min=1), default=None)
@click.option("--seed", type=int, default=None)
@click.option("--adjust-due", is_flag=True, help="Solomon files: window end = due date - service time.")
@click.option("-o", "--out", "out_file", type=click.Path(dir_okay=False, path_type=Path), default=None,
              help="Solution file to write.")
@click.pass_context
def solve(ctx, instance_file, policy_spec, mode, n_samples, variant_kind, alpha, beta, penalty, m_con, seed,
          adjust_due, out_file):
    """Solve one instance and print a summary line."""
    settings = configure(ctx)
    variant = resolve_variant(variant_kind, alpha, beta, penalty)
    inst = instance_service.read_instance(data_path(instance_file, settings), adjust_due=adjust_due)
    handle = solver_service.load_policy(policy_spec, variant)
    result = solver_service.solve(inst, handle, variant, SolveMode(mode), n_samples, seed, m_con)
    report = validate(inst, result.solution, variant)
    if not report.ok:
        raise_infeasible_solution(
            f"Solution violates constraints: {report.violations[0].message}",
            details={"violations": len(report.violations)}
        )
    if out_file is not None:
        solution_service.write_solution(out_file, result.solution)
    cost = result.solution.cost
    click.echo(
        f"{inst.name or instance_file.stem}: cost={cost.total:.4f} k={result.solution.k} "
        f"dist={cost.distance:.4f} mode={result.mode.value} n={result.n_samples} t={result.seconds:.3f}s"
    )
