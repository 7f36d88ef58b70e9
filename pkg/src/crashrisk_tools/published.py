"""Published scoring models for within-intersection and entrance crashes.

Each model stores the coefficient posterior means, 95% credible intervals,
odds ratios and in-sample AUC as printed. Slice models print names without
the window suffix; ``load_published_model`` expands them so they line up
with dataset columns.
"""

from __future__ import annotations

import dataclasses

from .domain import parse_variable_name, variable_name
from .exceptions import InvalidInputError
from .models import CoefficientSummary, FittedModel, PosteriorSummary


@dataclasses.dataclass(frozen=True, slots=True)
class _Row:
    name: str
    mean: float
    q025: float
    q975: float
    or_mean: float
    or_q025: float
    or_q975: float
    # significant at 0.1 only
    weak: bool = False


@dataclasses.dataclass(frozen=True, slots=True)
class _Table:
    location_class: str
    slice_index: int | None
    auc: float
    rows: tuple[_Row, ...]


_TABLES: dict[str, _Table] = {
    "within_full": _Table(
        "within",
        None,
        0.7596,
        (
            _Row("Avg_speed_0_5", -0.038, -0.07, -0.005, 0.963, 0.932, 0.995, weak=True),
            _Row("Std_speed_0_5", 0.066, 0.001, 0.131, 1.068, 1.001, 1.14),
            _Row("B_TH_Avg_Wait_0_5", 0.013, 0.002, 0.024, 1.013, 1.002, 1.024),
            _Row("D_TH_Avg_Wait_0_5", 0.016, 0.006, 0.026, 1.016, 1.006, 1.026),
            _Row("B_LT_Std_Green_5_10", -0.138, -0.248, -0.04, 0.871, 0.78, 0.961),
            _Row("C_TH_Avg_Wait_5_10", 0.017, 0.001, 0.032, 1.017, 1.001, 1.033, weak=True),
            _Row("B_Vol_LT_10_15", 0.029, 0.005, 0.054, 1.029, 1.005, 1.055, weak=True),
            _Row("D_TH_Avg_Green_10_15", -0.059, -0.103, -0.017, 0.943, 0.902, 0.983),
            _Row("A_LT_Avg_Green_15_20", -0.055, -0.106, -0.006, 0.946, 0.899, 0.994),
            _Row("A_LT_Std_Green_15_20", -0.090, -0.161, -0.019, 0.914, 0.851, 0.981),
            _Row("C_LT_Avg_Queue_15_20", -0.094, -0.18, -0.013, 0.910, 0.835, 0.987),
            _Row("D_TH_GreenRatio_15_20", -0.088, -0.175, -0.004, 0.916, 0.839, 0.996),
            _Row("D_TH_Std_Green_15_20", 0.060, 0.004, 0.114, 1.062, 1.004, 1.121),
            _Row("D_TH_Avg_Queue_15_20", -0.067, -0.13, -0.005, 0.935, 0.878, 0.995),
        ),
    ),
    "within_slice1": _Table(
        "within",
        1,
        0.6759,
        (
            _Row("Avg_speed", -0.033, -0.063, -0.004, 0.968, 0.939, 0.996, weak=True),
            _Row("Std_speed", 0.056, 0.008, 0.101, 1.058, 1.008, 1.106, weak=True),
            _Row("B_Vol_LT", 0.034, 0.009, 0.063, 1.035, 1.009, 1.065),
            _Row("B_TH_Avg_Wait", 0.013, 0.003, 0.022, 1.013, 1.003, 1.022),
            _Row("C_Vol_Th", -0.006, -0.012, 0.000, 0.994, 0.988, 1.000, weak=True),
            _Row("D_TH_Avg_Wait", 0.009, 0.000, 0.017, 1.009, 1.000, 1.017),
        ),
    ),
    "within_slice2": _Table(
        "within",
        2,
        0.6927,
        (
            _Row("A_Vol_Th", 0.005, 0.001, 0.011, 1.005, 1.001, 1.011, weak=True),
            _Row("B_Vol_LT", 0.039, 0.011, 0.07, 1.040, 1.011, 1.073),
            _Row("B_LT_Std_Green", -0.106, -0.206, -0.017, 0.899, 0.814, 0.983),
            _Row("B_TH_Avg_Queue", -0.046, -0.09, -0.005, 0.955, 0.914, 0.995, weak=True),
            _Row("D_Vol_LT", -0.036, -0.067, -0.004, 0.965, 0.935, 0.996, weak=True),
            _Row("D_OAFR", 0.518, 0.077, 0.978, 1.679, 1.08, 2.659),
            _Row("D_TH_Avg_Wait", -0.011, -0.02, -0.002, 0.989, 0.98, 0.998),
        ),
    ),
    "within_slice3": _Table(
        "within",
        3,
        0.6337,
        (
            _Row("B_Vol_LT", 0.031, 0.005, 0.058, 1.031, 1.005, 1.06),
            _Row("D_TH_Avg_Green", -0.057, -0.099, -0.019, 0.945, 0.906, 0.981),
            _Row("D_TH_Avg_Wait", 0.011, 0.001, 0.021, 1.011, 1.001, 1.021),
        ),
    ),
    "within_slice4": _Table(
        "within",
        4,
        0.6858,
        (
            _Row("A_LT_Avg_Green", -0.041, -0.08, -0.003, 0.96, 0.923, 0.997, weak=True),
            _Row("A_LT_Std_Green", -0.064, -0.131, -0.004, 0.938, 0.877, 0.996),
            _Row("B_Vol_LT", 0.036, 0.006, 0.066, 1.037, 1.006, 1.068),
            _Row("B_TH_Avg_Queue", -0.052, -0.103, -0.008, 0.949, 0.902, 0.992),
            _Row("C_LT_Avg_Queue", -0.076, -0.159, -0.003, 0.927, 0.853, 0.997),
            _Row("D_Vol_LT", -0.039, -0.078, -0.004, 0.962, 0.925, 0.996),
            _Row("D_TH_GreenRatio", -0.074, -0.145, -0.004, 0.929, 0.865, 0.996),
            _Row("D_TH_Std_Green", 0.054, 0.006, 0.103, 1.055, 1.006, 1.108),
        ),
    ),
    "entrance_full": _Table(
        "entrance",
        None,
        0.728,
        (
            _Row("A_TH_Avg_Queue_0_5", 0.054, 0.018, 0.094, 1.055, 1.018, 1.099),
            _Row("A_LT_Avg_Green_5_10", -0.056, -0.107, -0.006, 0.946, 0.899, 0.994),
            _Row("A_LT_Avg_Queue_5_10", -0.065, -0.128, -0.007, 0.937, 0.88, 0.993, weak=True),
            _Row("A_TH_Avg_Wait_5_10", 0.014, 0.000, 0.028, 1.014, 1.000, 1.028),
            _Row("Avg_speed_10_15", -0.046, -0.078, -0.017, 0.955, 0.925, 0.983),
            _Row("A_TH_Avg_Green_15_20", -0.037, -0.069, -0.009, 0.964, 0.933, 0.991),
            _Row("A_LT_GreenRatio_15_20", -0.084, -0.167, -0.003, 0.919, 0.846, 0.997),
        ),
    ),
    "entrance_slice1": _Table(
        "entrance",
        1,
        0.6679,
        (
            _Row("Avg_speed", -0.050, -0.077, -0.024, 0.951, 0.926, 0.976),
            _Row("A_Vol_LT", -0.048, -0.086, -0.013, 0.953, 0.918, 0.987),
            _Row("A_TH_Avg_Queue", 0.030, 0.001, 0.061, 1.030, 1.001, 1.063, weak=True),
        ),
    ),
    "entrance_slice2": _Table(
        "entrance",
        2,
        0.6770,
        (
            _Row("Avg_speed", -0.041, -0.072, -0.012, 0.96, 0.931, 0.988),
            _Row("A_Vol_LT", -0.037, -0.07, -0.005, 0.964, 0.932, 0.995, weak=True),
            _Row("A_LT_Avg_Wait", -0.013, -0.022, -0.003, 0.987, 0.978, 0.997),
            _Row("A_TH_GreenRatio", -0.040, -0.081, -0.002, 0.961, 0.922, 0.998),
        ),
    ),
    "entrance_slice3": _Table(
        "entrance",
        3,
        0.6466,
        (
            _Row("Avg_speed", -0.038, -0.066, -0.01, 0.963, 0.936, 0.99),
            _Row("A_Vol_LT", -0.046, -0.086, -0.01, 0.955, 0.918, 0.99),
            _Row("A_TH_Std_Green", -0.035, -0.075, 0.0, 0.966, 0.928, 1.0),
        ),
    ),
    "entrance_slice4": _Table(
        "entrance",
        4,
        0.6767,
        (
            _Row("Avg_speed", -0.037, -0.068, -0.006, 0.964, 0.934, 0.994),
            _Row("A_Vol_LT", -0.047, -0.091, -0.009, 0.954, 0.913, 0.991),
            _Row("A_LT_Avg_Green", -0.050, -0.096, -0.003, 0.951, 0.908, 0.997),
            _Row("A_TH_Std_Green", -0.041, -0.077, -0.007, 0.960, 0.926, 0.993),
        ),
    ),
}

PUBLISHED_MODELS: tuple[str, ...] = tuple(_TABLES)


def _expanded_name(name: str, slice_index: int | None) -> str:
    parsed = parse_variable_name(name)
    if slice_index is None or parsed.slice_index is not None:
        return name
    return variable_name(parsed.role, parsed.measure, slice_index)


def load_published_model(name: str, *, expand: bool = True) -> FittedModel:
    """Return an embedded model as a ``FittedModel`` with ``source="published"``.

    With ``expand`` (the default) slice-model variables carry their window
    suffix, e.g. ``B_Vol_LT`` in ``within_slice2`` becomes ``B_Vol_LT_5_10``.
    """
    try:
        table = _TABLES[name]
    except KeyError:
        msg = f"unknown published model {name!r}; choose from {', '.join(PUBLISHED_MODELS)}"
        raise InvalidInputError(msg) from None
    coefficients = [
        CoefficientSummary(
            name=_expanded_name(row.name, table.slice_index) if expand else row.name,
            mean=row.mean,
            q025=row.q025,
            q975=row.q975,
            or_mean=row.or_mean,
            or_q025=row.or_q025,
            or_q975=row.or_q975,
            significance="0.1" if row.weak else "0.05",
        )
        for row in table.rows
    ]
    return FittedModel(
        name=name,
        variables=[c.name for c in coefficients],
        posterior=PosteriorSummary(coefficients=coefficients),
        auc=table.auc,
        location_class=table.location_class,
        slice_index=table.slice_index,
        source="published",
    )
