"""Command-line interface: run studies, emit ratio surfaces, list registries.

Exit codes: 0 success, 2 usage error, 3 runtime error (including partially
failed trials).
"""

import sys

import click

from .acquisition import STRATEGY_NAMES
from .benchmarks import BENCHMARK_NAMES
from .errors import GsaxError
from .harness import StudyConfig, parse_config_file, run_study, write_ratio_surface


@click.group()
def cli():
    """GP-based Sobol index estimation with adaptive sampling."""


@cli.command("run")
@click.option("--config", "config_file", type=click.Path(exists=True, dir_okay=False),
              default=None, help="Flat key=value study config; flags override it.")
@click.option("--benchmark", type=click.Choice(BENCHMARK_NAMES), default=None)
@click.option("--strategy", "strategies", multiple=True,
              type=click.Choice(sorted(STRATEGY_NAMES)),
              help="Repeatable; every strategy runs the full set of trials.")
@click.option("--initial", "n_initial", type=int, default=None,
              help="Initial LHS design size.")
@click.option("--budget", type=int, default=None, help="Total evaluation budget.")
@click.option("--candidates", "n_candidates", type=int, default=None,
              help="Candidate pool size per iteration.")
@click.option("--grid", "n_grid", type=int, default=None,
              help="Marginal-GP grid resolution.")
@click.option("--trials", "n_trials", type=int, default=None)
@click.option("--seed", type=int, default=None)
@click.option("--jobs", type=int, envvar="GSAX_JOBS", default=None,
              help="Parallel trial workers (env GSAX_JOBS).")
@click.option("--out", type=click.Path(file_okay=False), default=None)
@click.option("--estimator", type=click.Choice(["mean_predictor", "full_gp"]), default=None)
@click.option("--realizations", "n_realizations", type=int, default=None,
              help="Main-effect realizations for the full_gp estimator.")
@click.option("--weight-mode", type=click.Choice(["uniform", "sobol_proportional"]),
              default=None)
@click.option("--candidate-mode", type=click.Choice(["uniform", "lhs"]), default=None)
@click.option("--epsilon", type=float, default=None,
              help="Enable the convergence stop with this threshold.")
@click.option("--patience", type=int, default=None)
@click.option("--paired", is_flag=True, default=None,
              help="Share trial seeds (hence initial designs) across strategies.")
@click.option("--emit", multiple=True, type=click.Choice(["trace", "aggregate", "ratio_surface"]),
              help="Outputs to write (default: trace and aggregate).")
@click.option("--timing", type=click.Choice(["zero", "measured"]), default=None,
              help="wall_ms column content; 'zero' keeps outputs byte-identical.")
def run_command(config_file, **flags):
    """Run repeated seeded trials of one benchmark across strategies."""
    values = parse_config_file(config_file) if config_file else {}
    for key, val in flags.items():
        if val is None:
            continue
        if key == "strategies":
            if val:
                values["strategies"] = list(val)
        elif key == "emit":
            if val:
                values["emit"] = set(val)
        else:
            values[key] = val
    if "benchmark" not in values:
        raise click.UsageError("--benchmark is required (flag or config file)")
    if not values.get("strategies"):
        raise click.UsageError("at least one --strategy is required")
    try:
        config = StudyConfig(**values)
    except (GsaxError, TypeError) as exc:
        raise click.UsageError(str(exc))

    result = run_study(config)
    for path in result.files:
        click.echo(path)
    if result.failures:
        click.echo(f"error: {len(result.failures)} trial(s) failed: "
                   + ", ".join(result.failures), err=True)
        sys.exit(3)


@cli.command("ratio-surface")
@click.option("--s", "s_value", type=float, required=True, help="True Sobol ratio S = A/Y.")
@click.option("--case", type=click.IntRange(1, 4), required=True)
@click.option("--y", "y_value", type=float, default=1.0, show_default=True)
@click.option("--max-da", type=float, default=0.5, show_default=True)
@click.option("--max-dy", type=float, default=0.5, show_default=True)
@click.option("--n", type=int, default=101, show_default=True, help="Grid points per axis.")
@click.option("--out", type=click.Path(dir_okay=False), required=True)
def ratio_surface_command(s_value, case, y_value, max_da, max_dy, n, out):
    """Tabulate the ratio-of-errors surface for plotting."""
    write_ratio_surface(s_value, case, out, y=y_value, max_da=max_da,
                        max_dy=max_dy, n=n)
    click.echo(out)


@cli.command("list")
def list_command():
    """List available benchmarks and strategies."""
    click.echo("benchmarks: " + " ".join(BENCHMARK_NAMES))
    click.echo("strategies: " + " ".join(sorted(STRATEGY_NAMES)))


def main():
    try:
        cli(standalone_mode=False)
    except click.UsageError as exc:
        click.echo(f"usage error: {exc.format_message()}", err=True)
        sys.exit(2)
    except click.ClickException as exc:
        exc.show()
        sys.exit(2)
    except click.exceptions.Abort:
        sys.exit(2)
    except GsaxError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(3)


if __name__ == "__main__":
    main()
