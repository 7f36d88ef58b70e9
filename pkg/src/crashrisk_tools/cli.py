"""
Command-line interface for crashrisk-tools.

This module provides the main entry point for the CLI.
"""

from __future__ import annotations

import logging

import typer
from rich.console import Console
from rich.logging import RichHandler

from . import __version__
from .matching import match, prepare
from .mcmc import fit
from .recovery import recover
from .report import report
from .risk import evaluate, score
from .screening import screen_command
from .settings import get_run_settings
from .simgen import simulate
from .utils import console

app = typer.Typer(
    no_args_is_help=True,
    help="Real-time crash risk analysis for signalized intersections",
)


def version_callback(value: bool) -> None:
    """Print version and exit."""
    if value:
        console.print(f"crashrisk-tools version {__version__}")
        raise typer.Exit()


def configure_logging(verbose: bool) -> None:
    """Route library logging through Rich on stderr."""
    handler = RichHandler(console=Console(stderr=True), show_path=False, rich_tracebacks=False)
    root = logging.getLogger("crashrisk_tools")
    root.handlers[:] = [handler]
    root.setLevel(logging.DEBUG if verbose else logging.WARNING)
    root.propagate = False


@app.callback()
def main(
    ctx: typer.Context,
    version: bool = typer.Option(
        None,
        "--version",
        "-v",
        callback=version_callback,
        is_eager=True,
        help="Show version and exit",
    ),
    threads: int | None = typer.Option(
        None, "--threads", min=1, help="Worker threads (default: CRASHRISK_THREADS or 4)"
    ),
    verbose: bool = typer.Option(False, "--verbose", help="Debug logging"),
) -> None:
    """Crash risk tools - build matched datasets, fit models and score events."""
    configure_logging(verbose)
    ctx.obj = {"threads": threads or get_run_settings().threads}


# Pipeline commands, in the order they are normally run
app.command("simulate")(simulate)
app.command("prepare")(prepare)
app.command("match")(match)
app.command("screen")(screen_command)
app.command("fit")(fit)
app.command("score")(score)
app.command("evaluate")(evaluate)
app.command("report")(report)
app.command("recover")(recover)


if __name__ == "__main__":
    app()
