"""Correlation screening of candidate variables (Pearson and MIC)."""

from __future__ import annotations

import dataclasses
import logging
from collections import defaultdict
from itertools import combinations
from pathlib import Path
from typing import TYPE_CHECKING

import numpy as np
import pandas as pd
import typer
from rich.table import Table

from .domain import SLICE_WINDOWS, parse_variable_name, slice_variables
from .exceptions import InvalidInputError, UndefinedStatisticError
from .manifest import CLI_ERRORS, RunRecorder, fail
from .matching import read_dataset, variable_columns
from .mic import mic
from .settings import ScreeningSettings, get_screening_settings
from .utils import console, human_readable_number, parallel_map

if TYPE_CHECKING:
    from collections.abc import Sequence

logger = logging.getLogger(__name__)

REPORT_COLUMNS = ["var_a", "var_b", "pearson", "mic", "flag"]


def pearson(x: np.ndarray, y: np.ndarray) -> float:
    """Sample Pearson correlation."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.size != y.size or x.size < 3:
        msg = f"pearson needs two vectors of equal length >= 3, got {x.size} and {y.size}"
        raise InvalidInputError(msg)
    dx = x - x.mean()
    dy = y - y.mean()
    sxx = float(dx @ dx)
    syy = float(dy @ dy)
    if sxx == 0 or syy == 0:
        msg = "correlation is undefined for a constant vector"
        raise UndefinedStatisticError(msg)
    return float(np.clip((dx @ dy) / np.sqrt(sxx * syy), -1.0, 1.0))


def correlation_matrix(matrix: np.ndarray) -> np.ndarray:
    """Pearson correlations of all columns; columns must be non-constant."""
    centered = matrix - matrix.mean(axis=0)
    norms = np.sqrt((centered**2).sum(axis=0))
    z = centered / norms
    return np.clip(z.T @ z, -1.0, 1.0)


@dataclasses.dataclass(frozen=True, slots=True)
class PairResult:
    var_a: str
    var_b: str
    pearson_r: float
    mic: float
    flagged_linear: bool
    flagged_nonlinear: bool

    @property
    def flagged(self) -> bool:
        return self.flagged_linear or self.flagged_nonlinear

    @property
    def flag(self) -> str:
        if self.flagged_linear and self.flagged_nonlinear:
            return "both"
        if self.flagged_linear:
            return "linear"
        if self.flagged_nonlinear:
            return "nonlinear"
        return ""


@dataclasses.dataclass(frozen=True, slots=True)
class ScreeningReport:
    pairs: list[PairResult]
    retained: list[str]
    dropped: dict[str, str]


def screening_pairs(names: Sequence[str], *, cross_slice: bool = True) -> list[tuple[str, str]]:
    """Pairs to evaluate, in canonical order.

    Every pair inside one slice's variable set (weather included in each),
    plus same-named variables across slices when ``cross_slice`` is set.
    """
    position = {n: i for i, n in enumerate(names)}
    pairs: set[tuple[str, str]] = set()
    slices = {parse_variable_name(n).slice_index for n in names} - {None}
    if not slices:
        pairs.update(combinations(names, 2))
    for k in sorted(slices):
        pairs.update(combinations(slice_variables(names, k), 2))
    if cross_slice and len(slices) > 1:
        by_base: dict[str, list[str]] = defaultdict(list)
        for n in names:
            parsed = parse_variable_name(n)
            if parsed.slice_index is not None:
                by_base[parsed.base].append(n)
        for group in by_base.values():
            pairs.update(combinations(group, 2))
    ordered = [(a, b) if position[a] < position[b] else (b, a) for a, b in pairs]
    return sorted(ordered, key=lambda p: (position[p[0]], position[p[1]]))


def screen(
    frame: pd.DataFrame,
    r_threshold: float = 0.6,
    mic_threshold: float = 0.7,
    *,
    settings: ScreeningSettings | None = None,
    num_threads: int = 1,
) -> ScreeningReport:
    """Flag highly correlated pairs and prune the candidate set.

    A pair is flagged when ``|r| > r_threshold`` or ``mic > mic_threshold``.
    Constant columns carry no information and are dropped before pairing.
    """
    settings = settings or get_screening_settings()
    values = frame.to_numpy(dtype=float)
    if not np.isfinite(values).all():
        msg = "screening input contains missing or non-finite values"
        raise InvalidInputError(msg)
    names = list(frame.columns)
    constant = [n for n, col in zip(names, values.T, strict=True) if np.ptp(col) == 0]
    for n in constant:
        logger.warning("dropping constant variable %s", n)
    names = [n for n in names if n not in constant]
    col = {n: i for i, n in enumerate(frame.columns)}
    kept = values[:, [col[n] for n in names]]
    r = correlation_matrix(kept) if names else np.empty((0, 0))
    local = {n: i for i, n in enumerate(names)}
    pairs = screening_pairs(names, cross_slice=settings.cross_slice)

    def evaluate(pair: tuple[str, str]) -> PairResult:
        a, b = pair
        r_ab = float(r[local[a], local[b]])
        m_ab = mic(kept[:, local[a]], kept[:, local[b]], settings.mic_alpha, settings.mic_c)
        return PairResult(a, b, r_ab, m_ab, abs(r_ab) > r_threshold, m_ab > mic_threshold)

    results = parallel_map(evaluate, pairs, num_threads, description="Screening pairs...")
    report = ScreeningReport(
        pairs=results, retained=names, dropped={n: "constant" for n in constant}
    )
    retained = prune(report)
    dropped = dict(report.dropped)
    for n in names:
        if n not in retained:
            dropped[n] = "correlated"
    return ScreeningReport(pairs=results, retained=retained, dropped=dropped)


def prune(report: ScreeningReport) -> list[str]:
    """Greedy removal until no flagged pair has both members retained.

    Drops the variable with the most flagged partners; ties go to the larger
    mean |r| over flagged partners, then to the lexicographically larger name.
    """
    retained = list(report.retained)
    alive = set(retained)
    flagged = [p for p in report.pairs if p.flagged]
    while True:
        partners: dict[str, list[float]] = defaultdict(list)
        for p in flagged:
            if p.var_a in alive and p.var_b in alive:
                partners[p.var_a].append(abs(p.pearson_r))
                partners[p.var_b].append(abs(p.pearson_r))
        if not partners:
            break
        victim = max(partners, key=lambda n: (len(partners[n]), float(np.mean(partners[n])), n))
        alive.discard(victim)
    return [n for n in retained if n in alive]


def report_frame(report: ScreeningReport) -> pd.DataFrame:
    rows = [
        {"var_a": p.var_a, "var_b": p.var_b, "pearson": p.pearson_r, "mic": p.mic, "flag": p.flag}
        for p in report.pairs
    ]
    return pd.DataFrame(rows, columns=REPORT_COLUMNS)


def read_variable_list(path: Path) -> list[str]:
    """One variable per line; blank lines and ``#`` comments ignored."""
    names = []
    for line in path.read_text().splitlines():
        line = line.split("#", 1)[0].strip()
        if line:
            names.append(line)
    return names


# -- CLI command --


def screen_command(
    ctx: typer.Context,
    data: Path = typer.Option(..., "--data", help="Wide dataset CSV"),
    out: Path = typer.Option(..., "--out", help="Screening report CSV"),
    r: float | None = typer.Option(None, "--r", help="Pearson threshold on |r|"),
    mic_threshold: float | None = typer.Option(None, "--mic", help="MIC threshold"),
    slice_index: int | None = typer.Option(None, "--slice", help="Screen one time slice only"),
    cross_slice: bool | None = typer.Option(
        None, "--cross-slice/--no-cross-slice", help="Also pair same-named variables across slices"
    ),
) -> None:
    """Flag correlated variable pairs and write the retained variable list."""
    num_threads = ctx.obj.get("threads", 1) if ctx.obj else 1
    try:
        defaults = get_screening_settings()
        overrides = {
            "r_threshold": r,
            "mic_threshold": mic_threshold,
            "cross_slice": cross_slice,
        }
        settings = ScreeningSettings(
            **{**defaults.model_dump(), **{k: v for k, v in overrides.items() if v is not None}}
        )
        with RunRecorder("screen") as recorder:
            recorder.add_input(data)
            df = read_dataset(data)
            names = variable_columns(df)
            if slice_index is not None:
                if slice_index not in SLICE_WINDOWS:
                    msg = f"slice must be one of 1..4, got {slice_index}"
                    raise InvalidInputError(msg)
                names = slice_variables(names, slice_index)
            report = screen(
                df[names],
                settings.r_threshold,
                settings.mic_threshold,
                settings=settings,
                num_threads=num_threads,
            )
            recorder.write_csv(report_frame(report), out)
            recorder.write_text("".join(f"{n}\n" for n in report.retained), out.parent / "retained.txt")
    except CLI_ERRORS as exc:
        raise fail(exc) from exc

    flagged = [p for p in report.pairs if p.flagged]
    table = Table(title="Highly correlated pairs")
    table.add_column("Variable 1", style="cyan")
    table.add_column("Variable 2", style="cyan")
    table.add_column("Pearson", justify="right", style="green")
    table.add_column("MIC", justify="right", style="yellow")
    for p in flagged[:20]:
        table.add_row(p.var_a, p.var_b, f"{p.pearson_r:.3f}", f"{p.mic:.3f}")
    console.print(table)
    console.print(
        f"[cyan]Pairs evaluated:[/cyan] {human_readable_number(len(report.pairs))}, "
        f"flagged: {human_readable_number(len(flagged))}, "
        f"retained variables: {human_readable_number(len(report.retained))}"
    )
