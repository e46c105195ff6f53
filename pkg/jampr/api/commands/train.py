from pathlib import Path

import click

from ...schemas.train import PolicyConfig, PolicyKind, TrainConfig
from ...services.train_service import train_service
from ..deps import configure, resolve_variant, variant_options

LEARNED = [kind.value for kind in PolicyKind if kind != PolicyKind.RANDOM]


@click.command("train")
@click.option("-n", "--customers", "n", type=int, required=True, help="Customers per training instance.")
@variant_options
@click.option("--policy", "kind", type=click.Choice(LEARNED), default=PolicyKind.JAMPR.value, show_default=True)
@click.option("--epochs", type=int, default=None)
@click.option("--instances", "instances_per_epoch", type=int, default=None, help="Instances per epoch.")
@click.option("--batch-size", type=int, default=None)
@click.option("--lr", "lr0", type=float, default=None, help="Initial learning rate.")
@click.option("--val-size", type=int, default=None)
@click.option("--warmup-epochs", type=int, default=None)
@click.option("--m-con", type=click.IntRange(min=1), default=None, help="Concurrently active vehicles.")
@click.option("--m-pre", type=click.IntRange(min=0), default=None, help="Premature depot returns allowed.")
@click.option("--capacity", type=click.FloatRange(min=0, min_open=True), default=None,
              help="Vehicle capacity for sizes outside the generator table.")
@click.option("--d-node", type=int, default=None, help="Node embedding width.")
@click.option("--d-hidden", type=int, default=None, help="Vehicle and tour encoder width.")
@click.option("--heads", "n_heads", type=int, default=None)
@click.option("--seed", type=int, default=None)
@click.option("--out-dir", type=click.Path(file_okay=False, path_type=Path), required=True)
@click.option("--resume", type=click.Path(dir_okay=False, exists=True, path_type=Path), default=None,
              help="Continue from an epoch checkpoint.")
@click.pass_context
def train(ctx, n, variant_kind, alpha, beta, penalty, kind, epochs, instances_per_epoch, batch_size, lr0,
          val_size, warmup_epochs, m_con, m_pre, capacity, d_node, d_hidden, n_heads, seed, out_dir, resume):
    """Train a policy with REINFORCE and the greedy rollout baseline."""
    configure(ctx)
    variant = resolve_variant(variant_kind, alpha, beta, penalty)
    try:
        config = TrainConfig.from_settings(
            n, variant.kind, policy=PolicyKind(kind), epochs=epochs, instances_per_epoch=instances_per_epoch,
            batch_size=batch_size, lr0=lr0, val_size=val_size, warmup_epochs=warmup_epochs,
            seed=seed, m_con=m_con, m_pre=m_pre, capacity=capacity
        )
        if d_node is not None and d_hidden is None:
            d_hidden = d_node // 2
        d_action = d_node
        policy_config = PolicyConfig.from_settings(
            PolicyKind(kind), variant.kind, d_node=d_node, d_hidden=d_hidden, d_action=d_action, n_heads=n_heads
        )
    except ValueError as e:
        raise click.UsageError(str(e))

    def report(row: dict) -> None:
        click.echo(
            f"epoch {row['epoch']:3d}  train_cost={row['train_cost']:.3f}  "
            f"val_cost={row['val_cost']:.3f}  lr={row['lr']:.3g}  {row['seconds']:.1f}s"
        )

    result = train_service.train(config, policy_config, variant, out_dir, resume=resume, on_epoch=report)
    if result.best is not None:
        click.echo(f"best checkpoint: {result.best}")
