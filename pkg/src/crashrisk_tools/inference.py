"""Conditional logistic likelihood for 1:m matched strata and its Newton MLE.

Design arrays have shape ``(N, m + 1, k)`` with the crash event at index 0
of every stratum. The stratum intercepts cancel and are never estimated.
"""

from __future__ import annotations

import dataclasses
import logging
from typing import TYPE_CHECKING

import numpy as np
from scipy.special import logsumexp, softmax

from .exceptions import InvalidInputError, NumericalError, SeparationError

if TYPE_CHECKING:
    from collections.abc import Mapping, Sequence

    from .schemas import Stratum

logger = logging.getLogger(__name__)

SEPARATION_NORM = 50.0
MAX_HALVINGS = 40
CONDITION_LIMIT = 1e12


@dataclasses.dataclass(frozen=True, slots=True)
class Coefficients:
    """Regression coefficients in a fixed variable order."""

    names: tuple[str, ...]
    values: np.ndarray

    @classmethod
    def from_mapping(cls, beta: Mapping[str, float], names: Sequence[str] | None = None) -> Coefficients:
        order = tuple(names) if names is not None else tuple(beta)
        missing = [n for n in order if n not in beta]
        if missing:
            msg = f"coefficients missing for: {', '.join(missing)}"
            raise InvalidInputError(msg)
        values = np.array([beta[n] for n in order], dtype=float)
        if not np.isfinite(values).all():
            msg = "coefficients must be finite"
            raise InvalidInputError(msg)
        return cls(names=order, values=values)


def design_array(strata: Sequence[Stratum], names: Sequence[str]) -> np.ndarray:
    """Stack strata into an ``(N, m + 1, k)`` array in ``names`` order."""
    if not strata:
        msg = "no strata"
        raise InvalidInputError(msg)
    expected = frozenset(names)
    m = strata[0].m
    X = np.empty((len(strata), m + 1, len(names)))
    for i, stratum in enumerate(strata):
        if stratum.m != m:
            msg = f"stratum {stratum.stratum_id} has {stratum.m} controls, expected {m}"
            raise InvalidInputError(msg)
        for j, vector in enumerate(stratum.vectors):
            if not expected <= vector.names:
                missing = sorted(expected - vector.names)
                msg = f"stratum {stratum.stratum_id} lacks variables: {', '.join(missing[:5])}"
                raise InvalidInputError(msg)
            X[i, j] = [vector.values[n] for n in names]
    if not np.isfinite(X).all():
        msg = "design values must be finite"
        raise InvalidInputError(msg)
    return X


def _as_arrays(
    beta: Coefficients | Mapping[str, float], strata: Sequence[Stratum] | np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(strata, np.ndarray):
        b = beta.values if isinstance(beta, Coefficients) else np.asarray(list(beta.values()), dtype=float)
        if b.size != strata.shape[2]:
            msg = f"{b.size} coefficients for {strata.shape[2]} design columns"
            raise InvalidInputError(msg)
        return b, strata
    coef = beta if isinstance(beta, Coefficients) else Coefficients.from_mapping(beta)
    if strata and strata[0].crash.names != frozenset(coef.names):
        msg = "coefficient names do not match the stratum variables"
        raise InvalidInputError(msg)
    return coef.values, design_array(strata, coef.names)


# -- Array kernels --


def loglik_array(b: np.ndarray, X: np.ndarray) -> float:
    eta = X @ b
    return float((eta[:, 0] - logsumexp(eta, axis=1)).sum())


def grad_array(b: np.ndarray, X: np.ndarray) -> np.ndarray:
    w = softmax(X @ b, axis=1)
    return (X[:, 0, :] - np.einsum("ij,ijk->ik", w, X)).sum(axis=0)


def hessian_array(b: np.ndarray, X: np.ndarray) -> np.ndarray:
    w = softmax(X @ b, axis=1)
    xbar = np.einsum("ij,ijk->ik", w, X)
    second = np.einsum("ij,ijk,ijl->kl", w, X, X)
    return -(second - xbar.T @ xbar)


# -- Public operations --


def clogit_loglik(
    beta: Coefficients | Mapping[str, float], strata: Sequence[Stratum] | np.ndarray
) -> float:
    """Sum over strata of ``b.x_crash - logsumexp_j(b.x_j)``."""
    b, X = _as_arrays(beta, strata)
    return loglik_array(b, X)


def clogit_grad(
    beta: Coefficients | Mapping[str, float], strata: Sequence[Stratum] | np.ndarray
) -> np.ndarray:
    b, X = _as_arrays(beta, strata)
    return grad_array(b, X)


@dataclasses.dataclass(frozen=True, slots=True)
class MleFit:
    coefficients: Coefficients
    covariance: np.ndarray
    loglik: float
    iterations: int

    @property
    def standard_errors(self) -> np.ndarray:
        return np.sqrt(np.diag(self.covariance))


def _newton_step(g: np.ndarray, H: np.ndarray) -> np.ndarray:
    info = -H
    try:
        if np.linalg.cond(info) < CONDITION_LIMIT:
            return np.linalg.solve(info, g)
    except np.linalg.LinAlgError:
        pass
    ridge = 1e-6 * max(1.0, float(np.abs(np.diag(info)).mean()))
    logger.debug("singular Hessian; retrying with ridge %.3g", ridge)
    try:
        step = np.linalg.solve(info + ridge * np.eye(info.shape[0]), g)
    except np.linalg.LinAlgError as exc:
        msg = "Hessian is singular even after ridge stabilization"
        raise NumericalError(msg) from exc
    if not np.isfinite(step).all():
        msg = "Hessian is singular even after ridge stabilization"
        raise NumericalError(msg)
    return step


def fit_mle(
    strata: Sequence[Stratum] | np.ndarray,
    names: Sequence[str] | None = None,
    tol: float = 1e-8,
    max_iter: int = 100,
) -> MleFit:
    """Newton-Raphson with step halving on the conditional log-likelihood.

    Converged once the gradient max-norm is below ``tol`` and the Newton
    step has become negligible. Raises ``SeparationError`` when the gradient
    vanishes while the Newton step does not, or when the coefficient norm
    passes 50 while the likelihood keeps rising.
    """
    if isinstance(strata, np.ndarray):
        X = strata
        names = list(names) if names is not None else [f"x{u}" for u in range(X.shape[2])]
    else:
        if names is None:
            names = sorted(strata[0].crash.names) if strata else []
        X = design_array(strata, names)
    k = X.shape[2]
    b = np.zeros(k)
    ll = loglik_array(b, X)
    for iteration in range(1, max_iter + 1):
        g = grad_array(b, X)
        H = hessian_array(b, X)
        step = _newton_step(g, H)
        if np.abs(g).max() < tol:
            if np.abs(step).max() < 1e-4 * (1.0 + np.abs(b).max()):
                return _finish(b, X, names, ll, iteration)
            # flat gradient with a large Newton step: the likelihood keeps
            # rising towards an asymptote along this direction
            raise SeparationError(names[int(np.argmax(np.abs(step)))])
        for _ in range(MAX_HALVINGS):
            candidate = b + step
            ll_new = loglik_array(candidate, X)
            if ll_new >= ll:
                break
            step = step / 2
        else:
            msg = "step halving failed to increase the likelihood"
            raise NumericalError(msg)
        b, ll = candidate, ll_new
        if np.linalg.norm(b) > SEPARATION_NORM:
            raise SeparationError(names[int(np.argmax(np.abs(b)))])
    msg = f"Newton iterations did not converge in {max_iter} steps"
    raise NumericalError(msg)


def _finish(b: np.ndarray, X: np.ndarray, names: Sequence[str], ll: float, iterations: int) -> MleFit:
    info = -hessian_array(b, X)
    if np.linalg.cond(info) >= CONDITION_LIMIT:
        weakest = int(np.argmin(np.abs(np.diag(info))))
        msg = f"information matrix is singular; variable {names[weakest]!r} is not identified"
        raise NumericalError(msg)
    return MleFit(
        coefficients=Coefficients(names=tuple(names), values=b.copy()),
        covariance=np.linalg.inv(info),
        loglik=ll,
        iterations=iterations,
    )
