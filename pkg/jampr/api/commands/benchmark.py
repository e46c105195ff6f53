from pathlib import Path

import click

from ...services.solver_service import SolveMode, solver_service
from ..deps import configure, data_path, resolve_variant, variant_options


@click.command("benchmark")
@click.argument("paths", nargs=-1, required=True, type=click.Path(path_type=Path))
@click.option("--policy", "policy_specs", multiple=True, required=True,
              help="Checkpoint path or 'random'; repeat to compare several.")
@click.option("--mode", "modes", multiple=True, type=click.Choice([m.value for m in SolveMode]),
              default=(SolveMode.GREEDY.value, SolveMode.SAMPLE.value), show_default=True)
@click.option("--track", "tracks", multiple=True, type=click.Choice(["100", "50"]), default=("100", "50"),
              show_default=True, help="Full instances and/or the two 50-customer halves.")
@click.option("-n", "--samples", "n_samples", type=click.IntRange(min=1), default=None)
@variant_options
@click.option("--seed", type=int, default=None)
@click.option("--adjust-due", is_flag=True, help="Window end = due date - service time.")
@click.option("--vehicle-weight", type=click.FloatRange(min=0), default=0.0, show_default=True,
              help="Weight per vehicle for the additional weighted objective column (0 = off).")
@click.option("--jobs", type=click.IntRange(min=1), default=1, show_default=True)
@click.option("-o", "--out", "out_file", type=click.Path(dir_okay=False, path_type=Path), default=None,
              help="CSV of the per-instance rows.")
@click.pass_context
def benchmark(ctx, paths, policy_specs, modes, tracks, n_samples, variant_kind, alpha, beta, penalty, seed,
              adjust_due, vehicle_weight, jobs, out_file):
    """Run Solomon benchmark files (or directories of them) and print group averages."""
    settings = configure(ctx)
    variant = resolve_variant(variant_kind, alpha, beta, penalty)
    files = []
    for path in paths:
        path = data_path(path, settings)
        if path.is_dir():
            files.extend(sorted(p for p in path.iterdir() if p.is_file() and p.suffix.lower() in (".txt", ".vrp")))
        else:
            files.append(path)
    handles = [solver_service.load_policy(spec, variant) for spec in policy_specs]
    report = solver_service.benchmark(
        files, handles, [SolveMode(m) for m in modes], variant, tracks=tracks, n_samples=n_samples,
        seed=seed, adjust_due=adjust_due, vehicle_weight=vehicle_weight, jobs=jobs
    )
    if out_file is not None:
        report.to_frame().to_csv(out_file, index=False, float_format="%.10g")
    aggregate = report.aggregate()
    if not aggregate.empty:
        click.echo(aggregate.to_string(index=False, float_format=lambda v: f"{v:.2f}"))
    for key, message in report.errors.items():
        click.echo(f"error: {key}: {message}", err=True)
