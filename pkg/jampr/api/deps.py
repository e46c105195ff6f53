"""Shared option groups and helpers for the sub-commands."""

from pathlib import Path
from typing import Optional
import logging

import click

from ..core.config import Settings, activate_settings, load_settings
from ..schemas.variant import Penalty, Variant, VariantKind
from ..utils import debug_log

logger = logging.getLogger(__name__)

VARIANT_CHOICE = click.Choice([kind.value for kind in VariantKind], case_sensitive=False)
# settings overrides collected by option callbacks, applied in `configure`
META_OVERRIDES = "jampr.overrides"


def _wait_cost(ctx: click.Context, param: click.Parameter, value: Optional[bool]) -> Optional[bool]:
    if value is not None:
        ctx.meta.setdefault(META_OVERRIDES, {})["env.cost_includes_wait"] = value
    return value


def configure(ctx: click.Context, **overrides) -> Settings:
    """Resolve settings for this invocation (flags > config file > environment) and make them active."""
    root = ctx.find_root()
    params = root.params if root is not None else {}
    config_file: Optional[Path] = params.get("config_file")
    overrides = {key: value for key, value in overrides.items() if value is not None}
    overrides.update(ctx.meta.get(META_OVERRIDES, {}))
    if params.get("debug"):
        overrides["debug"] = True
    settings = load_settings(config_file, overrides)
    activate_settings(settings)
    level = logging.DEBUG if settings.debug else logging.WARNING
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", force=True)
    debug_log("CLI", f"{ctx.info_name}: environment={settings.environment.value}, data_dir={settings.data_dir}")
    return settings


def variant_options(func):
    """`--variant` plus optional penalty weight overrides."""
    options = [
        click.option("--variant", "variant_kind", type=VARIANT_CHOICE, default="TW1", show_default=True,
                     help="Problem variant: CVRP, TW1 (hard), TW2 (soft late), TW3 (soft both)."),
        click.option("--alpha", type=float, default=None, help="Early-service penalty weight."),
        click.option("--beta", type=float, default=None, help="Late-service penalty weight (TW2/TW3)."),
        click.option("--penalty", type=click.Choice([p.value for p in Penalty]), default=None,
                     help="Penalty shape for deviations."),
        click.option("--wait-cost/--no-wait-cost", default=None, expose_value=False, callback=_wait_cost,
                     help="Charge waiting time as travel time (default on)."),
    ]
    for option in reversed(options):
        func = option(func)
    return func


def resolve_variant(
    variant_kind: str,
    alpha: Optional[float] = None,
    beta: Optional[float] = None,
    penalty: Optional[str] = None
) -> Variant:
    """Configured default variant with any flag overrides applied."""
    variant = Variant.default(VariantKind(variant_kind.upper()))
    updates = {key: value for key, value in (("alpha", alpha), ("beta", beta), ("penalty", penalty)) if value is not None}
    if not updates:
        return variant
    try:
        return Variant(**{**variant.model_dump(), **updates})
    except ValueError as e:
        raise click.BadParameter(str(e))


def data_path(path: Path, settings: Settings) -> Path:
    """Relative paths that do not exist in the working directory resolve under the data directory."""
    path = Path(path)
    if path.is_absolute() or path.exists():
        return path
    candidate = settings.data_dir / path
    return candidate if candidate.exists() else path
