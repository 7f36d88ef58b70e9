"""Maximal information coefficient, computed with minepy's MINE estimator."""

from __future__ import annotations

import numpy as np
from minepy import MINE

from .exceptions import InvalidInputError

MIN_SAMPLES = 10


def mic(x: np.ndarray, y: np.ndarray, alpha: float = 0.6, c: int = 15) -> float:
    """Maximal information coefficient of two equally long samples.

    Grids are limited to ``x_bins * y_bins <= n ** alpha``; ``c`` bounds the
    number of clumps searched per axis to ``c`` times the column count.
    A constant input scores 0.
    """
    x = np.asarray(x, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    if x.size != y.size:
        msg = f"mic needs equal lengths, got {x.size} and {y.size}"
        raise InvalidInputError(msg)
    if x.size < MIN_SAMPLES:
        msg = f"mic needs at least {MIN_SAMPLES} samples, got {x.size}"
        raise InvalidInputError(msg)
    if not (np.isfinite(x).all() and np.isfinite(y).all()):
        msg = "mic input contains non-finite values"
        raise InvalidInputError(msg)
    if np.ptp(x) == 0 or np.ptp(y) == 0:
        return 0.0
    mine = MINE(alpha=alpha, c=c)
    mine.compute_score(x, y)
    return float(min(max(mine.mic(), 0.0), 1.0))
