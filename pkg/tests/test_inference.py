"""
Tests for the conditional logistic likelihood and the maximum-likelihood fit.
"""

import math

import numpy as np
import pytest

from crashrisk_tools.exceptions import InvalidInputError, SeparationError
from crashrisk_tools.inference import (
    Coefficients,
    clogit_grad,
    clogit_loglik,
    design_array,
    fit_mle,
)

from .conftest import make_stratum, simulate_strata


class TestLoglik:
    """Tests for clogit_loglik."""

    def test_zero_coefficients(self) -> None:
        """With beta = 0 every event in a 1:4 stratum is equally likely."""
        stratum = make_stratum("S1", {"x": 3.0}, [{"x": 1.0}, {"x": 2.0}, {"x": 0.0}, {"x": 5.0}])

        assert clogit_loglik({"x": 0.0}, [stratum]) == pytest.approx(math.log(1 / 5))

    def test_single_covariate(self) -> None:
        stratum = make_stratum("S1", {"x": 1.0}, [{"x": 0.0}])

        assert clogit_loglik({"x": math.log(2)}, [stratum]) == pytest.approx(math.log(2 / 3))

    def test_strata_add(self) -> None:
        stratum = make_stratum("S1", {"x": 1.0, "y": -0.5}, [{"x": 0.2, "y": 1.0}, {"x": 0.0, "y": 0.0}])
        beta = {"x": 0.4, "y": -1.1}

        assert clogit_loglik(beta, [stratum, stratum]) == pytest.approx(2 * clogit_loglik(beta, [stratum]))

    def test_key_mismatch(self) -> None:
        stratum = make_stratum("S1", {"x": 1.0}, [{"x": 0.0}])

        with pytest.raises(InvalidInputError):
            clogit_loglik({"z": 1.0}, [stratum])

    def test_large_coefficients_stay_finite(self) -> None:
        stratum = make_stratum("S1", {"x": 1000.0}, [{"x": 0.0}])

        assert np.isfinite(clogit_loglik({"x": 5.0}, [stratum]))

    def test_array_input(self) -> None:
        X = simulate_strata(np.array([0.5, -0.3]), 20, seed=3)
        coef = Coefficients(names=("a", "b"), values=np.array([0.5, -0.3]))

        assert np.isfinite(clogit_loglik(coef, X))


class TestGradient:
    """Tests for clogit_grad."""

    def test_balanced_stratum(self) -> None:
        stratum = make_stratum("S1", {"x": 1.0}, [{"x": 0.0}, {"x": 2.0}, {"x": 1.0}, {"x": 1.0}])

        assert clogit_grad({"x": 0.0}, [stratum]) == pytest.approx([0.0])

    def test_matches_finite_differences(self) -> None:
        X = simulate_strata(np.array([0.3, -0.2, 0.1]), 40, seed=1)
        b = np.array([0.2, 0.1, -0.4])
        names = ("a", "b", "c")
        h = 1e-6

        grad = clogit_grad(Coefficients(names, b), X)
        numeric = [
            (clogit_loglik(Coefficients(names, b + h * e), X) - clogit_loglik(Coefficients(names, b - h * e), X))
            / (2 * h)
            for e in np.eye(3)
        ]

        assert grad == pytest.approx(numeric, rel=1e-5, abs=1e-6)


class TestFitMle:
    """Tests for Newton-Raphson maximum likelihood."""

    def test_recovers_known_beta(self) -> None:
        beta = np.array([0.8, -0.5])
        X = simulate_strata(beta, 600, seed=7)

        fit = fit_mle(X, ["a", "b"])

        assert np.all(np.abs(fit.coefficients.values - beta) < 4 * fit.standard_errors)
        assert np.abs(clogit_grad(fit.coefficients, X)).max() < 1e-6

    def test_null_data_near_zero(self) -> None:
        """Data simulated with beta = 0 gives estimates within 3 standard errors."""
        inside = 0
        for seed in range(40):
            fit = fit_mle(simulate_strata(np.zeros(1), 150, seed=seed), ["x"])
            inside += abs(fit.coefficients.values[0]) < 3 * fit.standard_errors[0]

        assert inside >= 38

    def test_separation(self) -> None:
        strata = [
            make_stratum(f"S{i}", {"x": 10.0 + i}, [{"x": float(j)} for j in range(4)]) for i in range(5)
        ]

        with pytest.raises(SeparationError) as excinfo:
            fit_mle(strata, ["x"])

        assert excinfo.value.variable == "x"

    def test_names_from_strata(self) -> None:
        X = simulate_strata(np.array([0.4, 0.0]), 200, seed=2)
        strata = [
            make_stratum(
                f"S{i}",
                {"b": X[i, 0, 1], "a": X[i, 0, 0]},
                [{"a": X[i, j, 0], "b": X[i, j, 1]} for j in range(1, 5)],
            )
            for i in range(X.shape[0])
        ]

        fit = fit_mle(strata)

        assert fit.coefficients.names == ("a", "b")
        assert fit.coefficients.values == pytest.approx(fit_mle(X, ["a", "b"]).coefficients.values)


class TestDesignArray:
    """Tests for stacking strata into arrays."""

    def test_shape_and_order(self) -> None:
        stratum = make_stratum("S1", {"x": 1.0, "y": 2.0}, [{"x": 3.0, "y": 4.0}])

        X = design_array([stratum], ["y", "x"])

        assert X.shape == (1, 2, 2)
        assert X[0].tolist() == [[2.0, 1.0], [4.0, 3.0]]

    def test_missing_variable(self) -> None:
        stratum = make_stratum("S1", {"x": 1.0}, [{"x": 3.0}])

        with pytest.raises(InvalidInputError, match="lacks"):
            design_array([stratum], ["x", "y"])

    def test_empty(self) -> None:
        with pytest.raises(InvalidInputError):
            design_array([], ["x"])
