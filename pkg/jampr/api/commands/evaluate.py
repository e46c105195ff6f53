from pathlib import Path

import click

from ...schemas.report import EvalReport
from ...services.instance_service import instance_service
from ...services.solver_service import SolveMode, solver_service
from ..deps import configure, data_path, resolve_variant, variant_options


@click.command("eval")
@click.argument("test_set", type=click.Path(path_type=Path))
@click.option("--policy", "policy_spec", required=True, help="Checkpoint path or 'random'.")
@click.option("--mode", type=click.Choice([m.value for m in SolveMode]), default=SolveMode.GREEDY.value,
              show_default=True)
@click.option("-n", "--samples", "n_samples", type=click.IntRange(min=1), default=None)
@variant_options
@click.option("--m-con", type=click.IntRange(min=1), default=None)
@click.option("--seed", type=int, default=None)
@click.option("--allow-mixed", is_flag=True, help="Accept test sets with several problem sizes.")
@click.option("--jobs", type=click.IntRange(min=1), default=1, show_default=True,
              help="Instances solved in parallel; each is still timed on a single lane.")
@click.option("--limit", type=click.IntRange(min=1), default=None, help="Evaluate only the first instances.")
@click.option("-o", "--out", "out_file", type=click.Path(dir_okay=False, path_type=Path), default=None,
              help="CSV report to write.")
@click.option("--compare", "compare_file", type=click.Path(exists=True, dir_okay=False, path_type=Path), default=None,
              help="Earlier CSV report; prints the mean cost gap over shared instances.")
@click.pass_context
def evaluate(ctx, test_set, policy_spec, mode, n_samples, variant_kind, alpha, beta, penalty, m_con, seed,
             allow_mixed, jobs, limit, out_file, compare_file):
    """Evaluate a policy on every instance of TEST_SET (a directory or a single file)."""
    settings = configure(ctx)
    variant = resolve_variant(variant_kind, alpha, beta, penalty)
    instances = instance_service.read_directory(data_path(test_set, settings))
    if limit is not None:
        instances = instances[:limit]
    handle = solver_service.load_policy(policy_spec, variant)
    report = solver_service.evaluate(
        instances, handle, variant, SolveMode(mode), n_samples, seed, m_con, allow_mixed=allow_mixed, jobs=jobs
    )
    reference = None
    if compare_file is not None:
        reference = EvalReport.read_csv(
            compare_file, policy=compare_file.stem, variant=report.variant, mode=report.mode, m_con=report.m_con
        )
    if out_file is not None:
        out_file.write_text(report.to_csv(), encoding="utf-8")
    click.echo(report.render())
    if reference is not None:
        gap = report.gap_to(reference)
        click.echo(f"gap vs {compare_file.name}: {gap['mean_gap_pct']:+.2f}% over {int(gap['shared'])} shared instances")
