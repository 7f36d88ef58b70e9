"""
Tests for the parameter-recovery experiment.
"""

import dataclasses

import numpy as np
import pytest

from crashrisk_tools.exceptions import CrashRiskError, InvalidInputError
from crashrisk_tools.recovery import (
    RECOVERY_COLUMNS,
    REPLICATION_COLUMNS,
    RecoveryReport,
    Replication,
    null_auc,
    recovery_experiment,
    recovery_variables,
    replication_seeds,
)
from crashrisk_tools.risk import RiskScore
from crashrisk_tools.settings import McmcSettings
from crashrisk_tools.simgen import ScenarioConfig

BETA = {"Avg_speed_0_5": -0.15, "A_TH_Avg_Queue_0_5": 0.08, "B_Vol_LT_5_10": 0.1}

# Variables in different slices with different bases never form a screening pair.
STRONG_BETA = {"Avg_speed_0_5": -0.35, "B_Vol_LT_5_10": 0.1, "C_TH_Avg_Queue_10_15": 0.08}


def _replication(index: int, means: dict[str, float], half_width: float = 0.05) -> Replication:
    return Replication(
        index=index,
        strata=50,
        means=means,
        lower={n: m - half_width for n, m in means.items()},
        upper={n: m + half_width for n, m in means.items()},
        auc=0.6 + 0.1 * index,
        converged=True,
        held_out_strata=40,
        held_out_auc=0.7 + 0.1 * index,
        null_auc_mean=0.5,
        null_auc_sd=0.04 + 0.02 * index,
    )


def _scores(odds: list[list[float]]) -> list[RiskScore]:
    """Strata given as odds ratios with the crash first."""
    return [
        RiskScore(event_id=f"s{i}-{j}", stratum_id=f"s{i}", odds_ratio=o, label=int(j == 0))
        for i, row in enumerate(odds)
        for j, o in enumerate(row)
    ]


class TestRecoveryVariables:
    def test_nonzero_within_variables(self) -> None:
        config = ScenarioConfig(true_beta={**BETA, "Visibility": 0.0})

        assert recovery_variables(config) == list(BETA)

    def test_needs_three(self) -> None:
        config = ScenarioConfig(true_beta={"Avg_speed_0_5": -0.1, "B_Vol_LT_5_10": 0.1})

        with pytest.raises(InvalidInputError, match="at least 3"):
            recovery_variables(config)


class TestReplicationSeeds:
    def test_spawned_children_are_distinct(self) -> None:
        states = [tuple(s.generate_state(4)) for s in replication_seeds(11, 5)]

        assert len(set(states)) == 5

    def test_reproducible(self) -> None:
        first = [tuple(s.generate_state(2)) for s in replication_seeds(3, 4)]
        second = [tuple(s.generate_state(2)) for s in replication_seeds(3, 4)]

        assert first == second

    def test_neighbouring_base_seeds_do_not_share_replications(self) -> None:
        """Base seed s+1 must not replay replication 1 of base seed s."""
        a = {tuple(s.generate_state(2)) for s in replication_seeds(7, 3)}
        b = {tuple(s.generate_state(2)) for s in replication_seeds(8, 3)}

        assert not a & b


class TestNullAuc:
    def test_centred_on_one_half(self) -> None:
        rng = np.random.default_rng(0)
        scores = _scores(rng.lognormal(size=(60, 5)).tolist())

        mean, sd = null_auc(scores, np.random.default_rng(1), draws=400)

        assert mean == pytest.approx(0.5, abs=0.02)
        assert 0.0 < sd < 0.1

    def test_constant_within_strata_gives_ties(self) -> None:
        """Shuffling inside a stratum of equal scores cannot move the AUC."""
        scores = _scores([[float(i + 1)] * 4 for i in range(10)])

        mean, sd = null_auc(scores, np.random.default_rng(2), draws=20)

        assert mean == pytest.approx(0.5)
        assert sd == pytest.approx(0.0)

    def test_one_crash_per_stratum_is_kept(self, monkeypatch: pytest.MonkeyPatch) -> None:
        seen: list[np.ndarray] = []

        def record(labels: np.ndarray, odds: np.ndarray) -> float:
            seen.append(labels.copy())
            return 0.5

        monkeypatch.setattr("crashrisk_tools.recovery.roc_auc_score", record)
        scores = _scores([[3.0, 1.0, 2.0], [1.0, 5.0, 4.0], [2.0, 2.5, 0.5]])

        null_auc(scores, np.random.default_rng(3), draws=10)

        for labels in seen:
            assert labels.reshape(3, 3).sum(axis=1).tolist() == [1, 1, 1]

    def test_needs_two_draws(self) -> None:
        with pytest.raises(InvalidInputError):
            null_auc(_scores([[2.0, 1.0]] * 3), np.random.default_rng(0), draws=1)

    def test_needs_both_labels(self) -> None:
        scores = [RiskScore("e1", "s1", 1.0, 0), RiskScore("e2", "s1", 2.0, 0)]

        with pytest.raises(InvalidInputError):
            null_auc(scores, np.random.default_rng(0))


class TestRecoveryReport:
    """Tests for the summary tables."""

    def test_frame(self) -> None:
        report = RecoveryReport(
            true_beta={"a": 0.1, "b": -0.2},
            replications=[
                _replication(0, {"a": 0.12, "b": -0.1}),
                _replication(1, {"a": 0.08, "b": 0.05}),
            ],
            discarded=[2],
        )

        frame = report.frame().set_index("variable")

        assert frame.reset_index().columns.tolist() == RECOVERY_COLUMNS
        assert frame.loc["a", "mean_estimate"] == pytest.approx(0.1)
        assert frame.loc["a", "bias"] == pytest.approx(0.0, abs=1e-12)
        assert frame.loc["a", "rmse"] == pytest.approx(0.02)
        assert frame.loc["a", "coverage"] == 1.0
        assert frame.loc["b", "coverage"] == 0.0
        assert frame.loc["b", "sign_agreement"] == 0.5
        assert frame.loc["b", "replications"] == 2
        assert report.mean_auc == pytest.approx(0.65)

    def test_screened_out_variable(self) -> None:
        report = RecoveryReport(
            true_beta={"a": 0.1, "b": -0.2},
            replications=[
                _replication(0, {"a": 0.1, "b": -0.2}),
                _replication(1, {"a": 0.3}),
            ],
            discarded=[],
        )

        frame = report.frame().set_index("variable")

        assert frame.loc["b", "replications"] == 1
        assert frame.loc["b", "screened_out"] == 1
        assert frame.loc["b", "mean_estimate"] == pytest.approx(-0.2)
        assert frame.loc["a", "coverage"] == 0.5

    def test_held_out_summary(self) -> None:
        report = RecoveryReport(
            true_beta={"a": 0.1},
            replications=[_replication(0, {"a": 0.1}), _replication(1, {"a": 0.1})],
            discarded=[],
        )

        assert report.held_out_auc == pytest.approx(0.75)
        assert report.null_auc_mean == pytest.approx(0.5)
        assert report.null_auc_sd == pytest.approx(0.05)
        assert report.beats_null
        rows = report.replication_frame()
        assert rows.columns.tolist() == REPLICATION_COLUMNS
        assert rows["retained"].tolist() == ["a", "a"]

    def test_does_not_beat_wide_null(self) -> None:
        replication = dataclasses.replace(_replication(0, {"a": 0.1}), null_auc_sd=0.1)
        report = RecoveryReport(true_beta={"a": 0.1}, replications=[replication], discarded=[])

        assert not report.beats_null


class TestRecoveryExperiment:
    def test_bad_replication_count(self) -> None:
        with pytest.raises(InvalidInputError):
            recovery_experiment(ScenarioConfig(true_beta=BETA), 0)

    def test_no_crashes_discards_everything(self) -> None:
        config = ScenarioConfig(n_intersections=1, days=7, base_rate=0.0, true_beta=BETA)

        with pytest.raises(CrashRiskError, match="fewer than"):
            recovery_experiment(config, 1, mcmc=McmcSettings(iterations=200, burn_in=50))

    @pytest.mark.slow
    @pytest.mark.integration
    def test_small_experiment(self) -> None:
        config = ScenarioConfig(n_intersections=3, days=70, base_rate=0.002, true_beta=BETA, seed=5)
        mcmc = McmcSettings(chains=2, iterations=1500, burn_in=500)

        report = recovery_experiment(config, 2, mcmc=mcmc, num_threads=2)
        frame = report.frame()

        assert len(report.replications) + len(report.discarded) == 2
        assert frame["variable"].tolist() == list(BETA)
        assert frame["coverage"].between(0, 1).all()
        assert all(r.strata >= 30 for r in report.replications)
        assert all(r.held_out_strata >= 30 for r in report.replications)
        assert 0.0 <= report.mean_auc <= 1.0
        assert 0.0 <= report.held_out_auc <= 1.0

    @pytest.mark.slow
    @pytest.mark.integration
    def test_twenty_replications_recover_truth(self) -> None:
        config = ScenarioConfig(
            n_intersections=3, days=42, base_rate=0.001, true_beta=STRONG_BETA, seed=2017
        )
        mcmc = McmcSettings(chains=2, iterations=2000, burn_in=500)

        report = recovery_experiment(config, 20, mcmc=mcmc, num_threads=4)
        frame = report.frame().set_index("variable")

        assert len(report.replications) == 20
        assert (frame["coverage"] >= 0.85).all()
        strong = [n for n, b in STRONG_BETA.items() if abs(b) >= 0.3]
        assert (frame.loc[strong, "sign_agreement"] >= 0.9).all()
        assert report.held_out_auc > 0.5 + 3 * report.null_auc_sd
