"""
Tests for correlation screening and pruning.
"""

import numpy as np
import pandas as pd
import pytest

from crashrisk_tools.domain import event_variables, parse_variable_name, slice_variables
from crashrisk_tools.exceptions import InvalidInputError, UndefinedStatisticError
from crashrisk_tools.screening import (
    PairResult,
    ScreeningReport,
    pearson,
    prune,
    report_frame,
    screen,
    screening_pairs,
)
from crashrisk_tools.settings import ScreeningSettings


def _pair(a: str, b: str, r: float = 0.9, flagged: bool = True) -> PairResult:
    return PairResult(a, b, r, 0.0, flagged, False)


class TestPearson:
    """Tests for the sample correlation."""

    def test_identity(self) -> None:
        x = np.array([1.0, 4.0, 2.0, 8.0])

        assert pearson(x, x) == pytest.approx(1.0)
        assert pearson(x, -x) == pytest.approx(-1.0)

    def test_hand_value(self) -> None:
        assert pearson(np.array([1, 2, 3]), np.array([1, 2, 4])) == pytest.approx(0.98198, abs=1e-5)

    def test_constant_vector(self) -> None:
        with pytest.raises(UndefinedStatisticError):
            pearson(np.ones(5), np.arange(5.0))

    def test_length_mismatch(self) -> None:
        with pytest.raises(InvalidInputError):
            pearson(np.arange(4.0), np.arange(5.0))


class TestScreeningPairs:
    """Tests for which pairs get evaluated."""

    def test_single_slice_count(self) -> None:
        names = slice_variables(event_variables("within"), 1)

        assert len(screening_pairs(names)) == 1596

    def test_two_slices(self) -> None:
        """Within-slice pairs share the weather pairs; cross-slice adds same-named pairs."""
        names = [n for n in event_variables("within") if parse_variable_name(n).slice_index in (1, 2, None)]

        within_only = screening_pairs(names, cross_slice=False)
        with_cross = screening_pairs(names, cross_slice=True)

        assert len(within_only) == 2 * 1596 - 3
        assert len(with_cross) == len(within_only) + 54
        assert ("A_OAFR_0_5", "A_OAFR_5_10") in with_cross
        assert ("A_OAFR_0_5", "B_OAFR_5_10") not in with_cross

    def test_canonical_order(self) -> None:
        names = ["Visibility", "A_Vol_Th_0_5", "WeatherType"]

        assert screening_pairs(names) == [
            ("Visibility", "A_Vol_Th_0_5"),
            ("Visibility", "WeatherType"),
            ("A_Vol_Th_0_5", "WeatherType"),
        ]


class TestScreen:
    """Tests for the full screening pass."""

    def test_identical_columns_flagged_linear(self) -> None:
        x = np.random.default_rng(0).normal(size=60)
        frame = pd.DataFrame({"Avg_speed_0_5": x, "Std_speed_0_5": x})

        report = screen(frame, settings=ScreeningSettings())

        assert len(report.pairs) == 1
        assert report.pairs[0].flagged_linear
        assert report.retained == ["Avg_speed_0_5"]
        assert report.dropped == {"Std_speed_0_5": "correlated"}

    def test_nonlinear_dependence(self) -> None:
        """A parabola on symmetric x has r = 0 but a high MIC."""
        x = np.linspace(-1, 1, 101)
        frame = pd.DataFrame({"A_Vol_Th_0_5": x, "A_OAFR_0_5": x**2})

        report = screen(frame, settings=ScreeningSettings())
        pair = report.pairs[0]

        assert abs(pair.pearson_r) < 1e-9
        assert not pair.flagged_linear
        assert pair.flagged_nonlinear
        assert pair.flag == "nonlinear"

    def test_negative_correlation_flagged(self) -> None:
        rng = np.random.default_rng(3)
        x = rng.normal(size=80)
        frame = pd.DataFrame({"A_Vol_Th_0_5": x, "B_Vol_Th_0_5": -x + 0.3 * rng.normal(size=80)})

        report = screen(frame, settings=ScreeningSettings())

        assert report.pairs[0].pearson_r < -0.6
        assert report.pairs[0].flagged_linear

    def test_independent_columns_kept(self) -> None:
        rng = np.random.default_rng(5)
        frame = pd.DataFrame(
            {"A_Vol_Th_0_5": rng.normal(size=150), "Avg_speed_0_5": rng.normal(size=150)}
        )

        report = screen(frame, settings=ScreeningSettings())

        assert report.retained == ["A_Vol_Th_0_5", "Avg_speed_0_5"]
        assert report.dropped == {}

    def test_constant_column_dropped(self) -> None:
        rng = np.random.default_rng(6)
        frame = pd.DataFrame(
            {"WeatherType": np.zeros(40), "Visibility": rng.normal(size=40), "HourlyPrecip": rng.normal(size=40)}
        )

        report = screen(frame, settings=ScreeningSettings())

        assert report.dropped["WeatherType"] == "constant"
        assert "WeatherType" not in report.retained

    def test_missing_values_rejected(self) -> None:
        frame = pd.DataFrame({"Visibility": [1.0, np.nan, 2.0], "HourlyPrecip": [0.0, 0.1, 0.2]})

        with pytest.raises(InvalidInputError, match="non-finite"):
            screen(frame)

    def test_report_frame(self) -> None:
        x = np.random.default_rng(0).normal(size=60)
        frame = pd.DataFrame({"Avg_speed_0_5": x, "Std_speed_0_5": x})

        table = report_frame(screen(frame, settings=ScreeningSettings()))

        assert table.columns.tolist() == ["var_a", "var_b", "pearson", "mic", "flag"]
        assert table.loc[0, "flag"] == "both"


class TestPrune:
    """Tests for greedy pruning of flagged pairs."""

    def test_no_flags(self) -> None:
        report = ScreeningReport(pairs=[_pair("a", "b", flagged=False)], retained=["a", "b"], dropped={})

        assert prune(report) == ["a", "b"]

    def test_most_partners_dropped(self) -> None:
        report = ScreeningReport(
            pairs=[_pair("a", "b"), _pair("a", "c"), _pair("b", "c", flagged=False)],
            retained=["a", "b", "c"],
            dropped={},
        )

        assert prune(report) == ["b", "c"]

    def test_tie_broken_by_mean_abs_r(self) -> None:
        report = ScreeningReport(
            pairs=[_pair("a", "b", r=0.7), _pair("c", "d", r=-0.95), _pair("b", "d", r=0.65)],
            retained=["a", "b", "c", "d"],
            dropped={},
        )

        # b and d both have two partners; d's are stronger on average, then
        # a and b tie outright and the larger name goes
        assert prune(report) == ["a", "c"]

    def test_tie_broken_by_name(self) -> None:
        report = ScreeningReport(pairs=[_pair("a", "b")], retained=["a", "b"], dropped={})

        assert prune(report) == ["a"]

    def test_no_flagged_pair_survives(self) -> None:
        rng = np.random.default_rng(9)
        names = [f"x{i}" for i in range(8)]
        pairs = [
            _pair(names[i], names[j], flagged=bool(rng.random() < 0.4))
            for i in range(8)
            for j in range(i + 1, 8)
        ]
        report = ScreeningReport(pairs=pairs, retained=names, dropped={})

        alive = set(prune(report))

        assert not any(p.flagged and p.var_a in alive and p.var_b in alive for p in pairs)
