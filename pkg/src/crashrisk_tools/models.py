"""Fitted model artifact and its JSON representation."""

from __future__ import annotations

import hashlib
from pathlib import Path
from typing import TYPE_CHECKING

import numpy as np
from pydantic import BaseModel, Field

from . import __version__
from .exceptions import InvalidInputError

if TYPE_CHECKING:
    from collections.abc import Sequence

    import pandas as pd


class CoefficientSummary(BaseModel):
    """Posterior summary of one coefficient and its odds ratio."""

    name: str
    mean: float
    sd: float | None = None
    q025: float
    q05: float | None = None
    q95: float | None = None
    q975: float
    or_mean: float
    or_q025: float
    or_q975: float
    rhat: float | None = None
    ess: float | None = None
    significance: str = ""


class PosteriorSummary(BaseModel):
    coefficients: list[CoefficientSummary]
    acceptance_rates: list[float] = Field(default_factory=list)
    converged: bool = True
    warnings: list[str] = Field(default_factory=list)


class SamplerInfo(BaseModel):
    chains: int
    iterations: int
    burn_in: int
    prior_variance: float
    target_acceptance: float
    seed: int
    chain_seeds: list[int] | None = None


class DatasetFingerprint(BaseModel):
    rows: int
    strata: int
    m: int
    variable_hash: str


class Standardization(BaseModel):
    """Per-variable z-score transform applied before fitting."""

    means: dict[str, float]
    sds: dict[str, float]

    def apply(self, frame: pd.DataFrame) -> pd.DataFrame:
        out = frame.copy()
        for name, mean in self.means.items():
            if name in out.columns:
                out[name] = (out[name] - mean) / self.sds[name]
        return out


class FittedModel(BaseModel):
    """Everything needed to score events and audit a fit."""

    name: str
    variables: list[str]
    posterior: PosteriorSummary
    auc: float | None = None
    location_class: str | None = None
    slice_index: int | None = None
    source: str = "fit"
    sampler: SamplerInfo | None = None
    dataset: DatasetFingerprint | None = None
    standardization: Standardization | None = None
    tool_version: str = __version__

    @property
    def coefficients(self) -> list[CoefficientSummary]:
        return self.posterior.coefficients

    def beta(self) -> dict[str, float]:
        """Posterior mean of each coefficient, in variable order."""
        means = {c.name: c.mean for c in self.posterior.coefficients}
        return {n: means[n] for n in self.variables}

    def coefficient(self, name: str) -> CoefficientSummary:
        for c in self.posterior.coefficients:
            if c.name == name:
                return c
        msg = f"model {self.name} has no variable {name!r}"
        raise InvalidInputError(msg)


def variable_hash(names: Sequence[str]) -> str:
    return hashlib.sha256("\n".join(names).encode("utf-8")).hexdigest()[:16]


def fingerprint(frame: pd.DataFrame, names: Sequence[str]) -> DatasetFingerprint:
    sizes = frame.groupby("stratum_id", sort=False).size()
    return DatasetFingerprint(
        rows=len(frame),
        strata=len(sizes),
        m=int(sizes.iloc[0]) - 1 if len(sizes) else 0,
        variable_hash=variable_hash(names),
    )


def standardization_for(frame: pd.DataFrame, names: Sequence[str]) -> Standardization:
    means = {n: float(frame[n].mean()) for n in names}
    sds = {}
    for n in names:
        sd = float(frame[n].std(ddof=1))
        sds[n] = sd if np.isfinite(sd) and sd > 0 else 1.0
    return Standardization(means=means, sds=sds)


def load_model(path: Path) -> FittedModel:
    return FittedModel.model_validate_json(Path(path).read_text())
