from pathlib import Path
import sys

import click

from jampr import __version__
from jampr.api.commands import benchmark, evaluate, generate, plot, solve, train, validate
from jampr.utils import debug_log
from jampr.utils.errors import EXIT_IO, EXIT_OK, EXIT_USAGE, JamprError


class JamprCLI(click.Group):
    """Click group that turns domain errors into the documented exit codes."""

    def main(self, args=None, prog_name=None, complete_var=None, standalone_mode=True, **extra):
        try:
            rv = super().main(args, prog_name, complete_var, standalone_mode=False, **extra)
        except click.ClickException as e:
            e.show()
            sys.exit(EXIT_USAGE)
        except click.Abort:
            click.echo("Aborted!", err=True)
            sys.exit(EXIT_USAGE)
        except JamprError as e:
            debug_log("CLI", f"{type(e).__name__}: {e}", exc_info=True)
            click.echo(f"Error: {e}", err=True)
            sys.exit(e.exit_code)
        except OSError as e:
            click.echo(f"Error: {e}", err=True)
            sys.exit(EXIT_IO)
        code = rv if isinstance(rv, int) else EXIT_OK
        if standalone_mode:
            sys.exit(code)
        return code


@click.group(cls=JamprCLI)
@click.version_option(__version__, prog_name="jampr")
@click.option("--config", "config_file", type=click.Path(dir_okay=False, exists=True, path_type=Path),
              default=None, help="Key-value config file (`section.field value` per line).")
@click.option("--debug", is_flag=True, help="Trace output on stderr.")
def cli(config_file, debug):
    """Neural construction solver for capacitated vehicle routing with time windows."""


# Include commands
cli.add_command(generate.generate)
cli.add_command(train.train)
cli.add_command(solve.solve)
cli.add_command(evaluate.evaluate)
cli.add_command(benchmark.benchmark)
cli.add_command(plot.plot)
cli.add_command(validate.validate)


if __name__ == "__main__":
    cli()
