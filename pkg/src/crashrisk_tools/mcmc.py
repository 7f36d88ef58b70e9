"""Bayesian conditional logistic estimation by adaptive random-walk Metropolis.

Chains adapt their proposal covariance (scaled empirical covariance plus a
Robbins-Monro step size) during burn-in only; retained draws come from a
fixed kernel. Convergence is judged with the split-chain potential scale
reduction factor.
"""

from __future__ import annotations

import dataclasses
import logging
import math
from pathlib import Path
from typing import TYPE_CHECKING

import numpy as np
import typer
from rich.table import Table

from .domain import SLICE_WINDOWS, slice_variables
from .exceptions import InvalidInputError, NonConvergenceError, NumericalError
from .inference import MleFit, design_array, fit_mle, loglik_array
from .manifest import CLI_ERRORS, RunRecorder, fail
from .matching import read_dataset, strata_from_frame, variable_columns
from .models import (
    CoefficientSummary,
    FittedModel,
    PosteriorSummary,
    SamplerInfo,
    fingerprint,
    standardization_for,
)
from .risk import roc_auc, score_strata
from .screening import read_variable_list
from .settings import McmcSettings, get_mcmc_settings
from .utils import console, human_readable_duration, parallel_map

if TYPE_CHECKING:
    from collections.abc import Sequence

    import pandas as pd

    from .schemas import Stratum

logger = logging.getLogger(__name__)

ADAPT_EVERY = 100
ADAPT_EPSILON = 1e-8
SIGNIFICANCE_LEVELS = (0.05, 0.1)


# -- Diagnostics --


def _split_halves(chains: np.ndarray) -> np.ndarray:
    n = chains.shape[1]
    half = n // 2
    return np.concatenate([chains[:, :half], chains[:, n - half :]], axis=0)


def bgr_diagnostic(chains: np.ndarray) -> float | np.ndarray:
    """Split-chain R-hat for ``(chains, draws)`` or ``(chains, draws, params)`` input.

    Exactly identical chains give 1.0. Zero within-chain variance with
    non-zero between-chain variance gives ``inf``.
    """
    arr = np.asarray(chains, dtype=float)
    if arr.ndim == 3:
        return np.array([bgr_diagnostic(arr[:, :, u]) for u in range(arr.shape[2])])
    if arr.ndim != 2 or arr.shape[0] < 2:
        msg = "R-hat needs at least 2 chains of equal length"
        raise InvalidInputError(msg)
    if arr.shape[1] < 4:
        msg = "R-hat needs at least 4 draws per chain"
        raise InvalidInputError(msg)
    if (arr == arr[0]).all():
        return 1.0
    split = _split_halves(arr)
    n = split.shape[1]
    means = split.mean(axis=1)
    between = n * means.var(ddof=1)
    within = split.var(axis=1, ddof=1).mean()
    if within == 0:
        return math.inf if between > 0 else 1.0
    return float(math.sqrt((n - 1) / n + between / (n * within)))


def effective_sample_size(chains: np.ndarray) -> float:
    """Multi-chain ESS with Geyer's initial positive sequence."""
    arr = np.asarray(chains, dtype=float)
    n_chains, n = arr.shape
    centered = arr - arr.mean(axis=1, keepdims=True)
    size = 1 << (2 * n - 1).bit_length()
    spectrum = np.fft.rfft(centered, n=size, axis=1)
    acov = np.fft.irfft(spectrum * np.conjugate(spectrum), n=size, axis=1)[:, :n] / n
    within = arr.var(axis=1, ddof=1).mean()
    var_plus = within * (n - 1) / n + (arr.mean(axis=1).var(ddof=1) if n_chains > 1 else 0.0)
    if var_plus <= 0:
        return float(n_chains * n)
    rho = 1.0 - (within - acov.mean(axis=0)) / var_plus
    rho[0] = 1.0
    total = 0.0
    previous = math.inf
    for t in range(0, n - 1, 2):
        pair = rho[t] + rho[t + 1]
        if pair <= 0:
            break
        pair = min(pair, previous)
        total += pair
        previous = pair
    tau = max(-1.0 + 2.0 * total, 1.0 / math.log10(max(n_chains * n, 10)))
    return float(n_chains * n / tau)


def significance_level(coef: CoefficientSummary) -> str:
    """'0.05' when the 95% BCI excludes zero, '0.1' when only the 90% BCI does."""
    if coef.q025 > 0 or coef.q975 < 0:
        if coef.q05 is None and coef.significance:
            return coef.significance
        return "0.05"
    if coef.q05 is None or coef.q95 is None:
        return coef.significance
    if coef.q05 > 0 or coef.q95 < 0:
        return "0.1"
    return ""


def significance(summary: PosteriorSummary) -> dict[str, str]:
    return {c.name: significance_level(c) for c in summary.coefficients}


# -- Sampler --


@dataclasses.dataclass(frozen=True, slots=True)
class ChainResult:
    draws: np.ndarray
    acceptance: float


def _run_chain(
    X: np.ndarray,
    settings: McmcSettings,
    seed: np.random.SeedSequence,
    center: np.ndarray,
    cov: np.ndarray,
) -> ChainResult:
    rng = np.random.default_rng(seed)
    k = X.shape[2]
    precision = 1.0 / settings.prior_variance

    def log_post(b: np.ndarray) -> float:
        return loglik_array(b, X) - 0.5 * precision * float(b @ b)

    chol = np.linalg.cholesky(cov)
    b = center + 2.0 * chol @ rng.standard_normal(k)
    lp = log_post(b)
    log_scale = math.log(2.38**2 / k)
    n_keep = settings.iterations - settings.burn_in
    history = np.empty((settings.burn_in, k))
    draws = np.empty((n_keep, k))
    accepted = 0
    for t in range(settings.iterations):
        proposal = b + math.exp(0.5 * log_scale) * (chol @ rng.standard_normal(k))
        lp_prop = log_post(proposal)
        log_ratio = lp_prop - lp
        if math.log(rng.random() + 1e-300) < log_ratio:
            b, lp = proposal, lp_prop
            if t >= settings.burn_in:
                accepted += 1
        if t < settings.burn_in:
            history[t] = b
            alpha = math.exp(min(0.0, log_ratio)) if np.isfinite(log_ratio) else 0.0
            log_scale += (alpha - settings.target_acceptance) / (t + 1) ** 0.6
            if (t + 1) % ADAPT_EVERY == 0 and t + 1 >= 2 * ADAPT_EVERY:
                window = history[(t + 1) // 2 : t + 1]
                empirical = np.atleast_2d(np.cov(window, rowvar=False))
                try:
                    chol = np.linalg.cholesky(empirical + ADAPT_EPSILON * np.eye(k))
                except np.linalg.LinAlgError:
                    logger.debug("empirical covariance not positive definite at %d", t + 1)
        else:
            draws[t - settings.burn_in] = b
    return ChainResult(draws=draws, acceptance=accepted / n_keep)


@dataclasses.dataclass(frozen=True, slots=True)
class BayesFit:
    """Posterior summary plus the retained chains, shape ``(chains, draws, k)``."""

    names: list[str]
    posterior: PosteriorSummary
    chains: np.ndarray
    mle: MleFit | None

    @property
    def pooled(self) -> np.ndarray:
        return self.chains.reshape(-1, self.chains.shape[2])


def summarize_chains(
    chains: np.ndarray, names: Sequence[str], rhat_threshold: float = 1.1
) -> PosteriorSummary:
    pooled = chains.reshape(-1, chains.shape[2])
    rhat = np.atleast_1d(bgr_diagnostic(chains))
    coefficients = []
    for u, name in enumerate(names):
        draws = pooled[:, u]
        q025, q05, q95, q975 = np.quantile(draws, [0.025, 0.05, 0.95, 0.975])
        coef = CoefficientSummary(
            name=name,
            mean=float(draws.mean()),
            sd=float(draws.std(ddof=1)),
            q025=float(q025),
            q05=float(q05),
            q95=float(q95),
            q975=float(q975),
            or_mean=float(np.exp(draws).mean()),
            or_q025=float(np.exp(q025)),
            or_q975=float(np.exp(q975)),
            rhat=float(rhat[u]),
            ess=effective_sample_size(chains[:, :, u]),
        )
        coefficients.append(coef.model_copy(update={"significance": significance_level(coef)}))
    warnings = [
        f"R-hat {c.rhat:.3f} > {rhat_threshold} for {c.name}"
        for c in coefficients
        if c.rhat is not None and not c.rhat <= rhat_threshold
    ]
    return PosteriorSummary(coefficients=coefficients, converged=not warnings, warnings=warnings)


def fit_bayes(
    strata: Sequence[Stratum] | np.ndarray,
    settings: McmcSettings,
    names: Sequence[str] | None = None,
    *,
    chain_seeds: Sequence[int] | None = None,
    num_threads: int = 1,
) -> BayesFit:
    """Run independent Metropolis chains on the conditional-logit posterior.

    Chain generators are spawned from ``settings.seed``; passing
    ``chain_seeds`` seeds each chain explicitly instead.
    """
    if isinstance(strata, np.ndarray):
        X = strata
        names = list(names) if names is not None else [f"x{u}" for u in range(X.shape[2])]
    else:
        names = list(names) if names is not None else sorted(strata[0].crash.names)
        X = design_array(strata, names)
    k = X.shape[2]
    if chain_seeds is not None and len(chain_seeds) != settings.chains:
        msg = f"{len(chain_seeds)} chain seeds for {settings.chains} chains"
        raise InvalidInputError(msg)

    mle: MleFit | None = None
    try:
        mle = fit_mle(X, names)
        center, cov = mle.coefficients.values, mle.covariance
    except NumericalError as exc:
        logger.warning("no MLE starting point (%s); starting chains near zero", exc)
        center, cov = np.zeros(k), 0.01 * np.eye(k)

    if chain_seeds is not None:
        seeds = [np.random.SeedSequence(s) for s in chain_seeds]
    else:
        seeds = np.random.SeedSequence(settings.seed).spawn(settings.chains)
    results = parallel_map(
        lambda seed: _run_chain(X, settings, seed, center, cov),
        seeds,
        num_threads,
        description="Sampling chains...",
    )
    chains = np.stack([r.draws for r in results])
    posterior = summarize_chains(chains, names, settings.rhat_threshold)
    posterior = posterior.model_copy(update={"acceptance_rates": [r.acceptance for r in results]})
    for warning in posterior.warnings:
        logger.warning("non-convergence: %s", warning)
    return BayesFit(names=list(names), posterior=posterior, chains=chains, mle=mle)


def wrong_sign_probability(draws: np.ndarray) -> float:
    return float(min((draws > 0).mean(), (draws < 0).mean()))


def backward_eliminate(
    strata: Sequence[Stratum],
    names: Sequence[str],
    settings: McmcSettings,
    *,
    num_threads: int = 1,
) -> BayesFit:
    """Refit, dropping the least significant variable, until all are significant at 0.1."""
    current = list(names)
    while True:
        fit = fit_bayes(strata, settings, current, num_threads=num_threads)
        insignificant = [c.name for c in fit.posterior.coefficients if not c.significance]
        if not insignificant or len(current) == 1:
            return fit
        pooled = fit.pooled
        victim = max(
            insignificant,
            key=lambda n: (wrong_sign_probability(pooled[:, current.index(n)]), n),
        )
        logger.info("backward elimination drops %s", victim)
        current.remove(victim)


# -- Model assembly --


def build_fitted_model(
    frame: pd.DataFrame,
    names: Sequence[str],
    settings: McmcSettings,
    *,
    name: str = "model",
    slice_index: int | None = None,
    standardize: bool = False,
    backward: bool = False,
    chain_seeds: Sequence[int] | None = None,
    num_threads: int = 1,
) -> tuple[FittedModel, BayesFit]:
    """Fit a dataset frame and package the result as a ``FittedModel``."""
    transform = standardization_for(frame, names) if standardize else None
    work = transform.apply(frame) if transform else frame
    strata = strata_from_frame(work, names)
    if backward:
        fit = backward_eliminate(strata, names, settings, num_threads=num_threads)
    else:
        fit = fit_bayes(strata, settings, names, chain_seeds=chain_seeds, num_threads=num_threads)
    kept = fit.names
    beta = {c.name: c.mean for c in fit.posterior.coefficients}
    scored = score_strata(beta, strata_from_frame(work, kept))
    auc = roc_auc([s.odds_ratio for s in scored], [s.label for s in scored]).auc
    location = None
    if "location_class" in frame.columns and frame["location_class"].notna().any():
        location = str(frame["location_class"].dropna().iloc[0])
    model = FittedModel(
        name=name,
        variables=kept,
        posterior=fit.posterior,
        auc=auc,
        location_class=location,
        slice_index=slice_index,
        sampler=SamplerInfo(
            chains=settings.chains,
            iterations=settings.iterations,
            burn_in=settings.burn_in,
            prior_variance=settings.prior_variance,
            target_acceptance=settings.target_acceptance,
            seed=settings.seed,
            chain_seeds=list(chain_seeds) if chain_seeds is not None else None,
        ),
        dataset=fingerprint(frame, kept),
        standardization=(
            transform.model_copy(
                update={
                    "means": {n: transform.means[n] for n in kept},
                    "sds": {n: transform.sds[n] for n in kept},
                }
            )
            if transform
            else None
        ),
    )
    return model, fit


def resolve_variables(
    selection: str | None, available: Sequence[str], slice_index: int | None
) -> list[str]:
    """Variables from a file path, a comma-separated list, or the dataset itself."""
    if selection:
        path = Path(selection)
        if path.exists():
            names = read_variable_list(path)
        else:
            names = [s.strip() for s in selection.split(",") if s.strip()]
    else:
        names = list(available)
    if slice_index is not None:
        if slice_index not in SLICE_WINDOWS:
            msg = f"slice must be one of 1..4, got {slice_index}"
            raise InvalidInputError(msg)
        names = slice_variables(names, slice_index)
    unknown = [n for n in names if n not in available]
    if unknown:
        msg = f"variables not in dataset: {', '.join(unknown)}"
        raise InvalidInputError(msg)
    if not names:
        msg = "no variables to fit"
        raise InvalidInputError(msg)
    return names


# -- CLI command --


def fit(
    ctx: typer.Context,
    data: Path = typer.Option(..., "--data", help="Wide dataset CSV"),
    seed: int = typer.Option(..., "--seed", help="Sampler seed"),
    out: Path = typer.Option(..., "--out", help="Model JSON"),
    variables: str | None = typer.Option(None, "--vars", help="Variable file or comma list"),
    chains: int | None = typer.Option(None, "--chains"),
    iterations: int | None = typer.Option(None, "--iters"),
    burn_in: int | None = typer.Option(None, "--burn"),
    prior_variance: float | None = typer.Option(None, "--prior-variance"),
    slice_index: int | None = typer.Option(None, "--slice", help="Fit one time slice only"),
    backward: bool = typer.Option(False, "--backward", help="Backward elimination at 0.1"),
    standardize: bool = typer.Option(False, "--standardize", help="Z-score variables first"),
    strict: bool = typer.Option(False, "--strict", help="Fail when R-hat exceeds the threshold"),
    name: str | None = typer.Option(None, "--name", help="Model name stored in the artifact"),
) -> None:
    """Fit a Bayesian conditional logistic model."""
    num_threads = ctx.obj.get("threads", 1) if ctx.obj else 1
    try:
        overrides = {
            "seed": seed,
            "chains": chains,
            "iterations": iterations,
            "burn_in": burn_in,
            "prior_variance": prior_variance,
        }
        settings = McmcSettings(
            **{
                **get_mcmc_settings().model_dump(),
                **{k: v for k, v in overrides.items() if v is not None},
            }
        )
        with RunRecorder("fit", seeds={"seed": seed}) as recorder:
            recorder.add_input(data)
            frame = read_dataset(data)
            names = resolve_variables(variables, variable_columns(frame), slice_index)
            model, _ = build_fitted_model(
                frame,
                names,
                settings,
                name=name or out.stem,
                slice_index=slice_index,
                standardize=standardize,
                backward=backward,
                num_threads=num_threads,
            )
            if strict and not model.posterior.converged:
                raise NonConvergenceError("; ".join(model.posterior.warnings))
            recorder.write_json(model, out)
            run = recorder.manifest
    except CLI_ERRORS as exc:
        raise fail(exc) from exc

    table = Table(title=f"Posterior summary ({model.name})")
    table.add_column("Variable", style="cyan")
    table.add_column("Mean", justify="right", style="green")
    table.add_column("95% BCI", justify="right")
    table.add_column("Odds ratio", justify="right", style="yellow")
    table.add_column("R-hat", justify="right")
    for c in model.coefficients:
        marker = "*" if c.significance == "0.1" else ""
        table.add_row(
            c.name,
            f"{c.mean:.3f}",
            f"({c.q025:.3f}, {c.q975:.3f}){marker}",
            f"{c.or_mean:.3f}",
            f"{c.rhat:.3f}" if c.rhat is not None else "-",
        )
    console.print(table)
    console.print(f"[cyan]In-sample AUC:[/cyan] {model.auc:.4f}")
    console.print(f"[cyan]Elapsed:[/cyan] {human_readable_duration(run.duration_seconds)}")
    for warning in model.posterior.warnings:
        console.print(f"[yellow]Warning:[/yellow] {warning}")
