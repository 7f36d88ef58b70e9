"""
Tests for the Metropolis sampler, convergence diagnostics and model assembly.
"""

import math

import numpy as np
import pytest
from pydantic import ValidationError

from crashrisk_tools.exceptions import InvalidInputError
from crashrisk_tools.mcmc import (
    backward_eliminate,
    bgr_diagnostic,
    build_fitted_model,
    effective_sample_size,
    fit_bayes,
    resolve_variables,
    significance_level,
    summarize_chains,
)
from crashrisk_tools.models import CoefficientSummary, load_model
from crashrisk_tools.settings import McmcSettings

from .conftest import design_frame, make_stratum, simulate_strata


def _coef(
    q025: float, q975: float, q05: float | None = None, q95: float | None = None, **extra
) -> CoefficientSummary:
    return CoefficientSummary(
        name="x",
        mean=(q025 + q975) / 2,
        q025=q025,
        q975=q975,
        q05=q05,
        q95=q95,
        or_mean=math.exp((q025 + q975) / 2),
        or_q025=math.exp(q025),
        or_q975=math.exp(q975),
        **extra,
    )


class TestBgrDiagnostic:
    """Tests for the split-chain R-hat."""

    def test_identical_chains(self) -> None:
        chain = np.random.default_rng(0).normal(size=50)

        assert bgr_diagnostic(np.stack([chain, chain, chain])) == 1.0

    def test_constant_distinct_chains(self) -> None:
        chains = np.array([[1.0] * 10, [2.0] * 10])

        assert bgr_diagnostic(chains) == math.inf

    def test_well_mixed_chains(self) -> None:
        chains = np.random.default_rng(1).normal(size=(4, 1000))

        assert bgr_diagnostic(chains) < 1.02

    def test_separated_chains(self) -> None:
        rng = np.random.default_rng(2)
        chains = np.stack([rng.normal(size=500), rng.normal(loc=5.0, size=500)])

        assert bgr_diagnostic(chains) > 1.5

    def test_per_parameter(self) -> None:
        chains = np.random.default_rng(3).normal(size=(3, 200, 2))

        assert bgr_diagnostic(chains).shape == (2,)

    def test_too_few_draws(self) -> None:
        with pytest.raises(InvalidInputError, match="4 draws"):
            bgr_diagnostic(np.zeros((2, 3)) + np.arange(3))

    def test_single_chain(self) -> None:
        with pytest.raises(InvalidInputError):
            bgr_diagnostic(np.arange(10.0).reshape(1, 10))


class TestEffectiveSampleSize:
    def test_independent_draws(self) -> None:
        chains = np.random.default_rng(4).normal(size=(4, 1000))

        assert 2000 < effective_sample_size(chains) < 6000

    def test_autocorrelated_draws(self) -> None:
        rng = np.random.default_rng(5)
        chains = np.empty((2, 2000))
        for c in range(2):
            x = 0.0
            for t in range(2000):
                x = 0.95 * x + rng.normal()
                chains[c, t] = x

        assert effective_sample_size(chains) < 400


class TestSignificanceLevel:
    """Tests for the 0.05 / 0.1 credible-interval flags."""

    def test_95_interval_excludes_zero(self) -> None:
        assert significance_level(_coef(0.002, 0.024, 0.004, 0.02)) == "0.05"

    def test_only_90_interval_excludes_zero(self) -> None:
        assert significance_level(_coef(-0.01, 0.03, 0.001, 0.025)) == "0.1"

    def test_not_significant(self) -> None:
        assert significance_level(_coef(-0.01, 0.02, -0.005, 0.015)) == ""

    def test_published_flag_kept(self) -> None:
        """Published rows have no 90% bounds; their recorded flag stands."""
        assert significance_level(_coef(-0.07, -0.005, significance="0.1")) == "0.1"
        assert significance_level(_coef(-0.01, 0.02, significance="0.1")) == "0.1"
        assert significance_level(_coef(0.1, 0.3)) == "0.05"


class TestSummarizeChains:
    def test_summary_values(self) -> None:
        chains = np.random.default_rng(6).normal(loc=2.0, scale=0.5, size=(3, 4000, 1))

        coef = summarize_chains(chains, ["x"]).coefficients[0]

        assert coef.mean == pytest.approx(2.0, abs=0.03)
        assert coef.sd == pytest.approx(0.5, abs=0.03)
        assert coef.q025 < coef.q05 < coef.mean < coef.q95 < coef.q975
        assert coef.or_mean == pytest.approx(math.exp(2.125), rel=0.05)
        assert coef.or_q025 == pytest.approx(math.exp(coef.q025))
        assert coef.significance == "0.05"

    def test_non_convergence_warning(self) -> None:
        rng = np.random.default_rng(7)
        chains = np.stack([rng.normal(size=(500, 1)), rng.normal(loc=4.0, size=(500, 1))])

        summary = summarize_chains(chains, ["x"])

        assert not summary.converged
        assert "x" in summary.warnings[0]


class TestMcmcSettings:
    def test_burn_in_must_be_below_iterations(self) -> None:
        with pytest.raises(ValidationError, match="burn_in"):
            McmcSettings(iterations=100, burn_in=100)

    def test_at_least_two_chains(self) -> None:
        with pytest.raises(ValidationError):
            McmcSettings(chains=1)


class TestFitBayes:
    """Tests for the sampler itself."""

    SETTINGS = McmcSettings(chains=3, iterations=1500, burn_in=500, seed=1)

    def test_shapes_and_acceptance(self) -> None:
        X = simulate_strata(np.array([0.5, -0.4]), 150, seed=4)

        fit = fit_bayes(X, self.SETTINGS, ["a", "b"])

        assert fit.chains.shape == (3, 1000, 2)
        assert fit.pooled.shape == (3000, 2)
        assert [c.name for c in fit.posterior.coefficients] == ["a", "b"]
        assert all(0.0 < r < 1.0 for r in fit.posterior.acceptance_rates)
        assert fit.mle is not None

    def test_identical_chain_seeds(self) -> None:
        X = simulate_strata(np.array([0.5]), 100, seed=5)

        fit = fit_bayes(X, self.SETTINGS, ["a"], chain_seeds=[9, 9, 9])

        assert fit.posterior.coefficients[0].rhat == 1.0

    def test_chain_seed_count(self) -> None:
        X = simulate_strata(np.array([0.5]), 50, seed=5)

        with pytest.raises(InvalidInputError, match="chain seeds"):
            fit_bayes(X, self.SETTINGS, ["a"], chain_seeds=[1, 2])

    def test_reproducible(self) -> None:
        X = simulate_strata(np.array([0.5, -0.4]), 100, seed=6)

        first = fit_bayes(X, self.SETTINGS, ["a", "b"])
        second = fit_bayes(X, self.SETTINGS, ["a", "b"], num_threads=3)

        np.testing.assert_array_equal(first.chains, second.chains)

    @pytest.mark.slow
    def test_posterior_mean_near_mle(self) -> None:
        """With a diffuse prior and 200 strata the posterior mean sits on the MLE."""
        X = simulate_strata(np.array([0.5, -0.4]), 200, seed=4)
        settings = McmcSettings(chains=3, iterations=4000, burn_in=1000, seed=2)

        fit = fit_bayes(X, settings, ["a", "b"])
        means = np.array([c.mean for c in fit.posterior.coefficients])

        assert np.abs(means - fit.mle.coefficients.values).max() < 0.05
        assert fit.posterior.converged

    def test_separated_data_still_samples(self) -> None:
        """Without an MLE the chains start near zero and the prior keeps them finite."""
        strata = [make_stratum(f"S{i}", {"x": 1.0}, [{"x": 0.0}]) for i in range(5)]
        settings = McmcSettings(chains=2, iterations=400, burn_in=100, prior_variance=4.0)

        fit = fit_bayes(strata, settings)

        assert fit.mle is None
        assert np.isfinite(fit.chains).all()


def _symmetric_noise_strata(n: int, seed: int) -> list:
    """A strong positive variable plus one whose likelihood is even in its coefficient."""
    rng = np.random.default_rng(seed)
    strata = []
    for i in range(n):
        s1, s2 = rng.normal(size=2)
        strata.append(
            make_stratum(
                f"S{i}",
                {"strong": rng.normal(loc=1.0), "noise": 0.0},
                [
                    {"strong": s1, "noise": 1.0},
                    {"strong": s1, "noise": -1.0},
                    {"strong": s2, "noise": 2.0},
                    {"strong": s2, "noise": -2.0},
                ],
            )
        )
    return strata


class TestBackwardElimination:
    @pytest.mark.slow
    def test_drops_insignificant_variable(self) -> None:
        settings = McmcSettings(chains=2, iterations=2000, burn_in=500, seed=3)

        fit = backward_eliminate(_symmetric_noise_strata(200, seed=8), ["strong", "noise"], settings)

        assert fit.names == ["strong"]
        assert fit.posterior.coefficients[0].significance == "0.05"


class TestBuildFittedModel:
    """Tests for packaging a fit as a model artifact."""

    SETTINGS = McmcSettings(chains=2, iterations=1200, burn_in=400, seed=5)

    def test_model_fields(self) -> None:
        X = simulate_strata(np.array([0.8, 0.0]), 120, seed=9)
        frame = design_frame(X, ["a", "b"])

        model, fit = build_fitted_model(frame, ["a", "b"], self.SETTINGS, name="demo")

        assert model.name == "demo"
        assert model.variables == ["a", "b"]
        assert 0.5 < model.auc <= 1.0
        assert model.dataset.strata == 120
        assert model.dataset.m == 4
        assert model.sampler.iterations == 1200
        assert model.standardization is None
        assert model.beta()["a"] == pytest.approx(fit.posterior.coefficients[0].mean)

    def test_standardized(self) -> None:
        X = simulate_strata(np.array([0.8]), 80, seed=10) * 10 + 50
        frame = design_frame(X, ["a"])

        model, _ = build_fitted_model(frame, ["a"], self.SETTINGS, standardize=True)

        assert model.standardization.means["a"] == pytest.approx(frame["a"].mean())
        assert model.standardization.sds["a"] == pytest.approx(frame["a"].std())

    def test_json_round_trip(self, tmp_path) -> None:
        X = simulate_strata(np.array([0.3]), 60, seed=11)
        model, _ = build_fitted_model(design_frame(X, ["a"]), ["a"], self.SETTINGS)
        path = tmp_path / "model.json"
        path.write_text(model.model_dump_json())

        assert load_model(path) == model


class TestResolveVariables:
    AVAILABLE = ["A_Vol_Th_0_5", "A_Vol_Th_5_10", "Visibility"]

    def test_all_available(self) -> None:
        assert resolve_variables(None, self.AVAILABLE, None) == self.AVAILABLE

    def test_comma_list(self) -> None:
        assert resolve_variables("Visibility, A_Vol_Th_0_5", self.AVAILABLE, None) == [
            "Visibility",
            "A_Vol_Th_0_5",
        ]

    def test_file(self, tmp_path) -> None:
        path = tmp_path / "retained.txt"
        path.write_text("# kept\nA_Vol_Th_5_10\n\nVisibility\n")

        assert resolve_variables(str(path), self.AVAILABLE, None) == ["A_Vol_Th_5_10", "Visibility"]

    def test_slice_filter(self) -> None:
        assert resolve_variables(None, self.AVAILABLE, 2) == ["A_Vol_Th_5_10", "Visibility"]

    def test_bad_slice(self) -> None:
        with pytest.raises(InvalidInputError, match="slice"):
            resolve_variables(None, self.AVAILABLE, 5)

    def test_unknown_variable(self) -> None:
        with pytest.raises(InvalidInputError, match="not in dataset"):
            resolve_variables("B_OAFR_0_5", self.AVAILABLE, None)
