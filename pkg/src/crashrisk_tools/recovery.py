"""Parameter-recovery experiment over synthetic worlds."""

from __future__ import annotations

import dataclasses
import logging
from pathlib import Path
from typing import TYPE_CHECKING

import numpy as np
import pandas as pd
import typer
from rich.table import Table
from sklearn.metrics import roc_auc_score

from .domain import event_variables
from .exceptions import CrashRiskError, InvalidInputError
from .features import StreamIndex
from .manifest import CLI_ERRORS, RunRecorder, fail
from .matching import build_dataset, prepare_crashes, strata_frame, strata_from_frame
from .mcmc import fit_bayes
from .risk import roc_auc, score_strata
from .schemas import LocationClass
from .screening import prune, screen
from .settings import (
    MatchingSettings,
    McmcSettings,
    get_matching_settings,
    get_mcmc_settings,
)
from .simgen import ScenarioConfig, load_scenario, simulate_world
from .streams import crash_records
from .utils import console, human_readable_number, parallel_map

if TYPE_CHECKING:
    from collections.abc import Sequence

    from .risk import RiskScore
    from .schemas import Stratum

logger = logging.getLogger(__name__)

MIN_STRATA = 30
NULL_DRAWS = 200
RECOVERY_COLUMNS = [
    "variable",
    "true_beta",
    "mean_estimate",
    "bias",
    "rmse",
    "coverage",
    "sign_agreement",
    "replications",
    "screened_out",
]
REPLICATION_COLUMNS = [
    "replication",
    "strata",
    "held_out_strata",
    "retained",
    "auc",
    "held_out_auc",
    "null_auc_mean",
    "null_auc_sd",
    "converged",
]


@dataclasses.dataclass(frozen=True, slots=True)
class Replication:
    """Posterior summary of one replication, keyed by the variables it kept."""

    index: int
    strata: int
    means: dict[str, float]
    lower: dict[str, float]
    upper: dict[str, float]
    auc: float
    converged: bool
    held_out_strata: int = 0
    held_out_auc: float = float("nan")
    null_auc_mean: float = float("nan")
    null_auc_sd: float = float("nan")


@dataclasses.dataclass(frozen=True, slots=True)
class RecoveryReport:
    true_beta: dict[str, float]
    replications: list[Replication]
    discarded: list[int]

    def frame(self) -> pd.DataFrame:
        """Bias, RMSE, coverage and sign agreement per true-beta variable.

        A variable is summarized over the replications whose screening kept it.
        """
        rows = []
        for name, truth in self.true_beta.items():
            kept = [r for r in self.replications if name in r.means]
            means = np.array([r.means[name] for r in kept])
            covered = [r.lower[name] <= truth <= r.upper[name] for r in kept]
            same_sign = [np.sign(m) == np.sign(truth) for m in means]
            n = len(kept)
            rows.append(
                {
                    "variable": name,
                    "true_beta": truth,
                    "mean_estimate": float(means.mean()) if n else np.nan,
                    "bias": float(means.mean() - truth) if n else np.nan,
                    "rmse": float(np.sqrt(((means - truth) ** 2).mean())) if n else np.nan,
                    "coverage": float(np.mean(covered)) if n else np.nan,
                    "sign_agreement": float(np.mean(same_sign)) if n else np.nan,
                    "replications": n,
                    "screened_out": len(self.replications) - n,
                }
            )
        return pd.DataFrame(rows, columns=RECOVERY_COLUMNS)

    def replication_frame(self) -> pd.DataFrame:
        rows = [
            {
                "replication": r.index,
                "strata": r.strata,
                "held_out_strata": r.held_out_strata,
                "retained": ";".join(r.means),
                "auc": r.auc,
                "held_out_auc": r.held_out_auc,
                "null_auc_mean": r.null_auc_mean,
                "null_auc_sd": r.null_auc_sd,
                "converged": r.converged,
            }
            for r in self.replications
        ]
        return pd.DataFrame(rows, columns=REPLICATION_COLUMNS)

    def _mean(self, field: str) -> float:
        if not self.replications:
            return float("nan")
        return float(np.mean([getattr(r, field) for r in self.replications]))

    @property
    def mean_auc(self) -> float:
        return self._mean("auc")

    @property
    def held_out_auc(self) -> float:
        return self._mean("held_out_auc")

    @property
    def null_auc_mean(self) -> float:
        return self._mean("null_auc_mean")

    @property
    def null_auc_sd(self) -> float:
        return self._mean("null_auc_sd")

    @property
    def beats_null(self) -> bool:
        """Held-out AUC clears 0.5 plus three null standard deviations."""
        return self.held_out_auc > 0.5 + 3 * self.null_auc_sd


def recovery_variables(config: ScenarioConfig) -> list[str]:
    """True-beta variables that belong to within-intersection events."""
    vocabulary = set(event_variables(LocationClass.within))
    names = [n for n, b in config.true_beta.items() if n in vocabulary and b != 0]
    if len(names) < 3:
        msg = f"recovery needs true_beta nonzero on at least 3 within variables, got {len(names)}"
        raise InvalidInputError(msg)
    return names


def replication_seeds(seed: int, replications: int) -> list[np.random.SeedSequence]:
    """Independent child seed sequences, one per replication."""
    return np.random.SeedSequence(seed).spawn(replications)


def null_auc(
    scores: Sequence[RiskScore], rng: np.random.Generator, draws: int = NULL_DRAWS
) -> tuple[float, float]:
    """Mean and standard deviation of the AUC with labels shuffled within strata.

    Each draw keeps one crash per stratum but moves it to a random member of
    that stratum, so the stratum structure of the null matches the data.
    """
    if draws < 2:
        msg = "null AUC needs at least 2 draws"
        raise InvalidInputError(msg)
    odds = np.array([s.odds_ratio for s in scores], dtype=float)
    labels = np.array([s.label for s in scores], dtype=int)
    codes, _ = pd.factorize(pd.Series([s.stratum_id for s in scores]))
    if np.unique(labels).size < 2:
        msg = "null AUC needs both crash and control events"
        raise InvalidInputError(msg)
    in_place = np.lexsort((np.arange(codes.size), codes))
    shuffled = np.empty_like(labels)
    values = np.empty(draws)
    for k in range(draws):
        moved = np.lexsort((rng.random(codes.size), codes))
        shuffled[in_place] = labels[moved]
        values[k] = roc_auc_score(shuffled, odds)
    return float(values.mean()), float(values.std(ddof=1))


def simulate_strata(
    config: ScenarioConfig, world_seed: int, sampler_seed: int, matching: MatchingSettings
) -> list[Stratum]:
    """Matched within-intersection strata of one freshly simulated world."""
    world = simulate_world(config.model_copy(update={"seed": world_seed}))
    eligible, _ = prepare_crashes(
        crash_records(world.crashes), world.intersections, matching.location_threshold_ft
    )
    dataset = build_dataset(
        [c for c in eligible if c.location_class == LocationClass.within],
        StreamIndex(world),
        matching.model_copy(update={"rng_seed": sampler_seed}),
        crash_log=world.crashes,
    )
    return dataset.strata


def run_replication(
    config: ScenarioConfig,
    index: int,
    seed: np.random.SeedSequence,
    names: list[str],
    matching: MatchingSettings,
    mcmc: McmcSettings,
) -> Replication | None:
    """Simulate, match, screen and fit one world, then score a held-out twin.

    The twin is the same scenario under a fresh seed. Returns None when
    either world yields fewer than ``MIN_STRATA`` strata.
    """
    world_seed, sampler_seed, chain_seed, held_out_seed, null_seed = (
        int(s) for s in seed.generate_state(5)
    )
    strata = simulate_strata(config, world_seed, sampler_seed, matching)
    if len(strata) < MIN_STRATA:
        logger.warning("replication %d discarded: %d strata", index, len(strata))
        return None
    held_out = simulate_strata(config, held_out_seed, held_out_seed, matching)
    if len(held_out) < MIN_STRATA:
        logger.warning("replication %d discarded: %d held-out strata", index, len(held_out))
        return None

    frame = strata_frame(strata)
    kept = set(prune(screen(frame[names])))
    retained = [n for n in names if n in kept]
    if not retained:
        logger.warning("replication %d discarded: screening kept no variables", index)
        return None
    if len(retained) < len(names):
        dropped = sorted(set(names) - set(retained))
        logger.info("replication %d: screening dropped %s", index, ", ".join(dropped))
    fit = fit_bayes(strata, mcmc.model_copy(update={"seed": chain_seed}), retained)
    coefs = {c.name: c for c in fit.posterior.coefficients}
    beta = {n: coefs[n].mean for n in retained}

    scored = score_strata(beta, strata_from_frame(frame, retained))
    held_out_scored = score_strata(beta, strata_from_frame(strata_frame(held_out), retained))
    null_mean, null_sd = null_auc(held_out_scored, np.random.default_rng(null_seed))
    return Replication(
        index=index,
        strata=len(strata),
        means=beta,
        lower={n: coefs[n].q025 for n in retained},
        upper={n: coefs[n].q975 for n in retained},
        auc=roc_auc([s.odds_ratio for s in scored], [s.label for s in scored]).auc,
        converged=fit.posterior.converged,
        held_out_strata=len(held_out),
        held_out_auc=roc_auc(
            [s.odds_ratio for s in held_out_scored], [s.label for s in held_out_scored]
        ).auc,
        null_auc_mean=null_mean,
        null_auc_sd=null_sd,
    )


def recovery_experiment(
    config: ScenarioConfig,
    replications: int = 20,
    *,
    matching: MatchingSettings | None = None,
    mcmc: McmcSettings | None = None,
    num_threads: int = 1,
) -> RecoveryReport:
    """Simulate, match, screen and fit ``replications`` independent worlds.

    Replication seeds are spawned from ``config.seed``, and each one seeds its
    world, control sampler, chains and held-out twin, so results do not
    depend on ``num_threads``.
    """
    if replications < 1:
        msg = "replications must be >= 1"
        raise InvalidInputError(msg)
    names = recovery_variables(config)
    matching = matching or get_matching_settings()
    mcmc = mcmc or get_mcmc_settings()
    seeds = replication_seeds(config.seed, replications)
    results = parallel_map(
        lambda r: run_replication(config, r, seeds[r], names, matching, mcmc),
        list(range(replications)),
        num_threads,
        description="Running replications...",
    )
    kept = [r for r in results if r is not None]
    discarded = [i for i, r in enumerate(results) if r is None]
    if not kept:
        msg = f"all {replications} replications had fewer than {MIN_STRATA} strata"
        raise CrashRiskError(msg)
    return RecoveryReport(
        true_beta={n: config.true_beta[n] for n in names},
        replications=kept,
        discarded=discarded,
    )


# -- CLI command --


def recover(
    ctx: typer.Context,
    scenario: Path = typer.Option(..., "--scenario", help="Scenario JSON"),
    out: Path = typer.Option(..., "--out", help="Output directory"),
    seed: int = typer.Option(
        ..., "--seed", help="Base seed; replication seeds are spawned from it"
    ),
    reps: int = typer.Option(20, "--reps", help="Number of replications"),
    iterations: int | None = typer.Option(None, "--iters"),
    burn_in: int | None = typer.Option(None, "--burn"),
) -> None:
    """Check that the pipeline recovers a scenario's true coefficients."""
    num_threads = ctx.obj.get("threads", 1) if ctx.obj else 1
    try:
        config = load_scenario(scenario).model_copy(update={"seed": seed})
        overrides = {"iterations": iterations, "burn_in": burn_in}
        mcmc = McmcSettings(
            **{
                **get_mcmc_settings().model_dump(),
                **{k: v for k, v in overrides.items() if v is not None},
            }
        )
        with RunRecorder("recover", seeds={"seed": seed}, config_paths=[scenario]) as recorder:
            recorder.add_input(scenario)
            report = recovery_experiment(config, reps, mcmc=mcmc, num_threads=num_threads)
            frame = report.frame()
            out.mkdir(parents=True, exist_ok=True)
            recorder.write_csv(frame, out / "recovery.csv")
            recorder.write_csv(report.replication_frame(), out / "replications.csv")
    except CLI_ERRORS as exc:
        raise fail(exc) from exc

    table = Table(title="Parameter recovery")
    table.add_column("Variable", style="cyan")
    table.add_column("True", justify="right")
    table.add_column("Mean estimate", justify="right", style="green")
    table.add_column("RMSE", justify="right")
    table.add_column("Coverage", justify="right", style="yellow")
    for row in frame.itertuples(index=False):
        table.add_row(
            row.variable,
            f"{row.true_beta:.3f}",
            f"{row.mean_estimate:.3f}",
            f"{row.rmse:.3f}",
            f"{100 * row.coverage:.0f}%",
        )
    console.print(table)
    console.print(
        f"[cyan]Replications used:[/cyan] {human_readable_number(len(report.replications))}, "
        f"discarded: {human_readable_number(len(report.discarded))}"
    )
    console.print(
        f"[cyan]Held-out AUC:[/cyan] {report.held_out_auc:.4f} "
        f"(null {report.null_auc_mean:.4f} +/- {report.null_auc_sd:.4f})"
    )
    if not report.beats_null:
        console.print("[yellow]Held-out AUC does not clear the null by 3 sd[/yellow]")
