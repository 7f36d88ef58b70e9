"""Odds-ratio risk scores and ROC evaluation."""

from __future__ import annotations

import dataclasses
import math
from pathlib import Path
from typing import TYPE_CHECKING

import numpy as np
import pandas as pd
import typer
from sklearn.metrics import auc as trapezoid_auc
from sklearn.metrics import roc_curve

from .exceptions import InvalidInputError, UndefinedStatisticError
from .manifest import CLI_ERRORS, RunRecorder, fail
from .matching import read_dataset, strata_from_frame
from .models import FittedModel, load_model
from .published import load_published_model
from .schemas import FeatureVector
from .utils import console, human_readable_number

if TYPE_CHECKING:
    from collections.abc import Mapping, Sequence

    from .schemas import Stratum

SCORE_COLUMNS = ["event_id", "stratum_id", "odds_ratio", "adjusted", "label"]
ROC_COLUMNS = ["threshold", "fpr", "tpr"]


@dataclasses.dataclass(frozen=True, slots=True)
class RiskScore:
    event_id: str
    stratum_id: str
    odds_ratio: float
    label: int
    adjusted: float | None = None


@dataclasses.dataclass(frozen=True, slots=True)
class RocResult:
    thresholds: np.ndarray
    fpr: np.ndarray
    tpr: np.ndarray
    auc: float

    @property
    def points(self) -> list[tuple[float, float]]:
        return list(zip(self.fpr.tolist(), self.tpr.tolist(), strict=True))


def _check_keys(beta: Mapping[str, float], vector: Mapping[str, float]) -> None:
    missing = [n for n in beta if n not in vector]
    if missing:
        msg = f"event lacks model variables: {', '.join(missing[:5])}"
        raise InvalidInputError(msg)


def odds_ratio_pair(
    beta: Mapping[str, float],
    x1: Mapping[str, float] | FeatureVector,
    x2: Mapping[str, float] | FeatureVector,
) -> float:
    """``exp(sum_k beta_k (x1_k - x2_k))``."""
    v1 = x1.values if isinstance(x1, FeatureVector) else x1
    v2 = x2.values if isinstance(x2, FeatureVector) else x2
    _check_keys(beta, v1)
    _check_keys(beta, v2)
    return math.exp(sum(b * (v1[n] - v2[n]) for n, b in beta.items()))


def control_mean(controls: Sequence[FeatureVector], names: Sequence[str]) -> dict[str, float]:
    if not controls:
        msg = "cannot score against an empty control set"
        raise InvalidInputError(msg)
    for vector in controls:
        _check_keys(dict.fromkeys(names, 0.0), vector.values)
    matrix = np.array([[v.values[n] for n in names] for v in controls])
    return dict(zip(names, matrix.mean(axis=0).tolist(), strict=True))


def score_event(
    beta: Mapping[str, float],
    x: FeatureVector,
    stratum_controls: Sequence[FeatureVector],
    *,
    event_id: str = "",
    stratum_id: str = "",
    label: int = 1,
) -> RiskScore:
    """Odds ratio of an event against the mean of its stratum's controls."""
    xbar = control_mean(stratum_controls, list(beta))
    return RiskScore(
        event_id=event_id,
        stratum_id=stratum_id,
        odds_ratio=odds_ratio_pair(beta, x, xbar),
        label=label,
    )


def score_strata(beta: Mapping[str, float], strata: Sequence[Stratum]) -> list[RiskScore]:
    """Score the crash and every control of each stratum against its control mean."""
    scores = []
    for stratum in strata:
        for j, vector in enumerate(stratum.vectors):
            scores.append(
                score_event(
                    beta,
                    vector,
                    stratum.controls,
                    event_id=stratum.stratum_id if j == 0 else f"{stratum.stratum_id}-c{j}",
                    stratum_id=stratum.stratum_id,
                    label=1 if j == 0 else 0,
                )
            )
    return scores


def adjust_scores(scores: Sequence[float]) -> list[float]:
    """Divide by the largest score so the riskiest event maps to 1.0."""
    values = np.asarray(scores, dtype=float)
    if values.size == 0:
        msg = "no scores to adjust"
        raise InvalidInputError(msg)
    if not (values > 0).all():
        msg = "odds ratios must be positive"
        raise InvalidInputError(msg)
    return (values / values.max()).tolist()


def roc_auc(scores: Sequence[float], labels: Sequence[int]) -> RocResult:
    """Step ROC over every distinct score and its trapezoidal area.

    Ties count one half, so the area equals the Mann-Whitney statistic.
    """
    s = np.asarray(scores, dtype=float)
    y = np.asarray(labels, dtype=int)
    if s.size != y.size:
        msg = f"{s.size} scores for {y.size} labels"
        raise InvalidInputError(msg)
    if np.unique(y).size < 2:
        msg = "AUC is undefined unless both crash and control events are present"
        raise UndefinedStatisticError(msg)
    fpr, tpr, thresholds = roc_curve(y, s, drop_intermediate=False)
    thresholds = thresholds.astype(float)
    thresholds[0] = s.max() + 1.0
    thresholds = np.append(thresholds, s.min() - 1.0)
    fpr = np.append(fpr, 1.0)
    tpr = np.append(tpr, 1.0)
    return RocResult(thresholds=thresholds, fpr=fpr, tpr=tpr, auc=float(trapezoid_auc(fpr, tpr)))


def roc_frame(result: RocResult) -> pd.DataFrame:
    return pd.DataFrame(
        dict(zip(ROC_COLUMNS, (result.thresholds, result.fpr, result.tpr), strict=True))
    )


def scores_frame(scores: Sequence[RiskScore]) -> pd.DataFrame:
    adjusted = adjust_scores([s.odds_ratio for s in scores]) if scores else []
    rows = [
        {
            "event_id": s.event_id,
            "stratum_id": s.stratum_id,
            "odds_ratio": s.odds_ratio,
            "adjusted": a,
            "label": s.label,
        }
        for s, a in zip(scores, adjusted, strict=True)
    ]
    return pd.DataFrame(rows, columns=SCORE_COLUMNS)


def score_dataset(model: FittedModel, frame: pd.DataFrame) -> list[RiskScore]:
    """Score every event of a wide dataset with a fitted or published model."""
    missing = [n for n in model.variables if n not in frame.columns]
    if missing:
        msg = f"dataset lacks model variables: {', '.join(missing[:5])}"
        raise InvalidInputError(msg)
    work = model.standardization.apply(frame) if model.standardization else frame
    strata = strata_from_frame(work, model.variables)
    scores = score_strata(model.beta(), strata)
    if "event_id" in frame.columns:
        event_ids = [
            e
            for _, group in frame.groupby("stratum_id", sort=False)
            for e in group.sort_values("label", ascending=False, kind="stable")["event_id"]
        ]
        scores = [dataclasses.replace(s, event_id=str(e)) for s, e in zip(scores, event_ids, strict=True)]
    return scores


# -- CLI commands --


def score(
    data: Path = typer.Option(..., "--data", help="Wide dataset CSV"),
    out: Path = typer.Option(..., "--out", help="Scores CSV"),
    model_path: Path | None = typer.Option(None, "--model", help="Fitted model JSON"),
    published_model: str | None = typer.Option(
        None, "--published-model", help="Embedded published model name"
    ),
) -> None:
    """Score events by odds ratio against their stratum's controls."""
    try:
        if (model_path is None) == (published_model is None):
            msg = "pass exactly one of --model and --published-model"
            raise InvalidInputError(msg)
        with RunRecorder("score") as recorder:
            recorder.add_input(data)
            if model_path is not None:
                recorder.add_input(model_path)
                model = load_model(model_path)
            else:
                model = load_published_model(published_model)
            frame = read_dataset(data)
            scores = score_dataset(model, frame)
            recorder.write_csv(scores_frame(scores), out)
    except CLI_ERRORS as exc:
        raise fail(exc) from exc
    console.print(
        f"[green]Scored {human_readable_number(len(scores))} events with {model.name}[/green]"
    )


def evaluate(
    scores: Path = typer.Option(..., "--scores", help="Scores CSV"),
    out: Path = typer.Option(..., "--out", help="ROC CSV"),
    column: str = typer.Option("adjusted", "--column", help="Score column to rank by"),
) -> None:
    """ROC curve and AUC of a scores file."""
    try:
        with RunRecorder("evaluate") as recorder:
            recorder.add_input(scores)
            frame = pd.read_csv(scores)
            if column not in frame.columns or "label" not in frame.columns:
                msg = f"{scores.name} needs columns {column!r} and 'label'"
                raise InvalidInputError(msg)
            result = roc_auc(frame[column].to_numpy(dtype=float), frame["label"].to_numpy(dtype=int))
            recorder.write_csv(roc_frame(result), out)
    except CLI_ERRORS as exc:
        raise fail(exc) from exc
    console.print(f"[cyan]AUC:[/cyan] {result.auc:.4f}")
