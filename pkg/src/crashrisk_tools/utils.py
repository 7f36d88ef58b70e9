"""Utility functions for crashrisk-tools."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor, as_completed
from datetime import timedelta
from typing import TYPE_CHECKING, TypeVar

import humanize
from rich.console import Console
from rich.progress import BarColumn, Progress, TextColumn, TimeElapsedColumn

if TYPE_CHECKING:
    from collections.abc import Callable, Sequence

T = TypeVar("T")
R = TypeVar("R")

console = Console()


def human_readable_number(number: int) -> str:
    """Format number with thousands separators."""
    return humanize.intcomma(number)


def human_readable_duration(seconds: float) -> str:
    """Format a duration like '2 minutes'."""
    return humanize.precisedelta(timedelta(seconds=seconds), minimum_unit="seconds", format="%0.1f")


def human_readable_percent(part: int, total: int) -> str:
    if total == 0:
        return "-"
    return f"{100.0 * part / total:.1f}%"


def make_progress() -> Progress:
    """Progress bar with the column set used by every long-running command."""
    return Progress(
        TextColumn("[progress.description]{task.description}"),
        BarColumn(),
        TextColumn("[progress.completed]{task.completed}/{task.total}"),
        TimeElapsedColumn(),
        console=console,
        transient=True,
    )


def parallel_map(
    func: Callable[[T], R],
    items: Sequence[T],
    num_threads: int,
    description: str | None = None,
) -> list[R]:
    """Apply *func* to every item on a thread pool, keeping input order.

    Results are put back at their submission index so output never depends
    on completion order or thread count.
    """
    results: list[R | None] = [None] * len(items)
    if num_threads <= 1 or len(items) <= 1:
        for i, item in enumerate(items):
            results[i] = func(item)
        return results  # type: ignore[return-value]
    with ThreadPoolExecutor(max_workers=num_threads) as executor:
        future_to_index = {executor.submit(func, item): i for i, item in enumerate(items)}
        if description is None:
            for future in as_completed(future_to_index):
                results[future_to_index[future]] = future.result()
        else:
            with make_progress() as progress:
                task = progress.add_task(f"[cyan]{description}", total=len(items))
                for future in as_completed(future_to_index):
                    results[future_to_index[future]] = future.result()
                    progress.advance(task)
    return results  # type: ignore[return-value]
