"""Descriptive statistics of a matched dataset."""

from __future__ import annotations

from pathlib import Path

import pandas as pd
import typer
from rich.table import Table

from .domain import parse_variable_name
from .manifest import CLI_ERRORS, RunRecorder, fail
from .matching import read_dataset, variable_columns
from .utils import console, human_readable_number

STATS_COLUMNS = ["variable", "slice", "group", "n", "mean", "sd", "min", "max"]


def describe(frame: pd.DataFrame) -> pd.DataFrame:
    """Mean, sd, min and max of every base variable by slice and crash/control group.

    Untagged variables (weather) get an empty slice.
    """
    names = variable_columns(frame)
    groups = frame["label"].map({1: "crash", 0: "control"})
    rows = []
    for name in names:
        parsed = parse_variable_name(name)
        for group in ("crash", "control"):
            values = frame.loc[groups == group, name].astype(float)
            rows.append(
                {
                    "variable": parsed.base,
                    "slice": parsed.slice_index if parsed.slice_index is not None else "",
                    "group": group,
                    "n": int(values.count()),
                    "mean": values.mean(),
                    "sd": values.std(ddof=1),
                    "min": values.min(),
                    "max": values.max(),
                }
            )
    return pd.DataFrame(rows, columns=STATS_COLUMNS)


# -- CLI command --


def report(
    data: Path = typer.Option(..., "--data", help="Wide dataset CSV"),
    out: Path = typer.Option(..., "--out", help="Statistics CSV"),
) -> None:
    """Descriptive statistics per variable, split by crash/control and slice."""
    try:
        with RunRecorder("report") as recorder:
            recorder.add_input(data)
            frame = read_dataset(data)
            stats = describe(frame)
            recorder.write_csv(stats, out)
    except CLI_ERRORS as exc:
        raise fail(exc) from exc

    n_strata = frame["stratum_id"].nunique()
    table = Table(title=f"Dataset summary ({human_readable_number(n_strata)} strata)")
    table.add_column("Variable", style="cyan")
    table.add_column("Crash mean", justify="right", style="green")
    table.add_column("Control mean", justify="right", style="yellow")
    first_slice = stats[stats["slice"].isin([1, ""])]
    wide = first_slice.pivot_table(index="variable", columns="group", values="mean", sort=False)
    for variable, row in wide.iterrows():
        crash = row.get("crash", float("nan"))
        control = row.get("control", float("nan"))
        table.add_row(str(variable), f"{crash:.3f}", f"{control:.3f}")
    console.print(table)
    console.print(f"[green]Wrote statistics for {len(stats) // 2} variables to {out}[/green]")
