from pathlib import Path

import click

from ...schemas.instance import GenParams, VariantHint
from ...services.instance_service import instance_service
from ..deps import configure


@click.command("generate")
@click.option("-n", "--customers", "n", type=int, required=True, help="Customers per instance.")
@click.option("--count", type=click.IntRange(min=1), default=1, show_default=True)
@click.option("--variant", "hint", type=click.Choice([h.value for h in VariantHint], case_sensitive=False),
              default=VariantHint.CVRPTW.value, show_default=True)
@click.option("--seed", type=int, default=None, help="Root seed; per-instance seeds are derived from it.")
@click.option("--capacity", type=float, default=None, help="Override the capacity table.")
@click.option("--out-dir", type=click.Path(file_okay=False, path_type=Path), required=True)
@click.pass_context
def generate(ctx, n, count, hint, seed, capacity, out_dir):
    """Generate COUNT random instances plus a seed manifest."""
    settings = configure(ctx)
    seed = settings.gen.test_seed if seed is None else seed
    instances = instance_service.generate_set(
        n, count, VariantHint(hint.upper()), seed, GenParams(capacity=capacity)
    )
    paths = instance_service.write_set(out_dir, instances, seed)
    click.echo(f"Wrote {len(paths)} instances to {out_dir}")
