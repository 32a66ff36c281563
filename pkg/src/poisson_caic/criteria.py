"""Information criteria: classical AIC, marginal AIC and conditional AIC.

The conditional AIC penalty is the perturb-and-refit estimator

    K = sum_i y_i * (log yhat_i(y) - log yhat_i(y with y_i -> y_i - 1)),

which is unbiased for the optimism of the conditional log-likelihood under
any Poisson truth and for any estimator. The estimator enters as a
*fitter*: a callable ``fitter(data, warm_start=None)`` returning an object
with a ``y_hat`` attribute (and optionally ``converged``).
"""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Protocol

import numpy as np
from numpy.typing import NDArray

from .estimation import FitResult, fit_fixed_glm, fit_glmm, refit_effects
from .model import ClusteredCounts, ModelKind, ModelSpec, SolverControls

log = logging.getLogger(__name__)


class RefitError(RuntimeError):
    """Every perturbed refit failed."""


class Fitter(Protocol):
    def __call__(self, data: ClusteredCounts, warm_start=None): ...


@dataclass(frozen=True)
class GlmmFitter:
    """Laplace-ML variance components and posterior-mode random effects."""

    spec: ModelSpec = field(default_factory=ModelSpec)
    name: str = "glmm-laplace-ml"

    def __call__(self, data: ClusteredCounts, warm_start: FitResult | None = None) -> FitResult:
        return fit_glmm(data, self.spec, warm_start, with_hessian=warm_start is None)


@dataclass(frozen=True)
class GlmFitter:
    controls: SolverControls = field(default_factory=SolverControls)
    name: str = "poisson-glm"

    def __call__(self, data: ClusteredCounts, warm_start: FitResult | None = None) -> FitResult:
        return fit_fixed_glm(data, self.controls, warm_start)


@dataclass(frozen=True)
class FixedThetaFitter:
    """Refits only the random effects, with beta and sigma frozen at ``full_fit``.

    This is a different estimator from :class:`GlmmFitter`; its K ignores
    the variability of the estimated population parameters.
    """

    full_fit: FitResult
    controls: SolverControls = field(default_factory=SolverControls)
    name: str = "glmm-fixed-theta"

    def __call__(self, data: ClusteredCounts, warm_start=None) -> FitResult:
        return refit_effects(data, self.full_fit, self.controls)


class PenaltyResult(NamedTuple):
    penalty_K: float
    per_observation_K: NDArray[np.float64]
    refit_failures: list[int]


def _refit(args):
    fitter, data, i, warm_start = args
    y = data.y.copy()
    y[i] -= 1.0
    try:
        res = fitter(data.with_response(y), warm_start)
    except (ArithmeticError, ValueError, np.linalg.LinAlgError) as exc:
        log.warning("refit for observation %d raised %s", i, exc)
        return None, False
    return float(res.y_hat[i]), bool(getattr(res, "converged", True))


def compute_penalty_K(
    data: ClusteredCounts,
    fitter: Callable,
    full_fit,
    workers: int = 1,
) -> PenaltyResult:
    """Perturb-and-refit penalty of the conditional AIC.

    Each observation with ``y_i > 0`` is decremented by one and the data
    refitted, warm-started at ``full_fit``. Zero counts contribute exactly 0
    and are not refitted. Refits that fail to converge are listed in
    ``refit_failures`` and use the fitter's best iterate; a refit that
    raises contributes 0.
    """
    y = data.y
    per_obs = np.zeros(data.N)
    idx = np.flatnonzero(y > 0)
    if idx.size == 0:
        return PenaltyResult(0.0, per_obs, [])
    log_full = np.log(np.asarray(full_fit.y_hat, dtype=float))
    jobs = [(fitter, data, int(i), full_fit) for i in idx]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(_refit, jobs, chunksize=max(1, len(jobs) // (4 * workers))))
    else:
        outcomes = [_refit(job) for job in jobs]
    failures = []
    for i, (yhat_i, ok) in zip(idx, outcomes):
        if not ok:
            failures.append(int(i))
        if yhat_i is not None:
            per_obs[i] = y[i] * (log_full[i] - np.log(yhat_i))
    if len(failures) == idx.size:
        raise RefitError(f"all {idx.size} perturbed refits failed")
    return PenaltyResult(float(np.sum(per_obs)), per_obs, failures)


def caic(full_fit, penalty_K: float) -> float:
    return -2.0 * full_fit.cond_loglik + 2.0 * penalty_K


def maic(full_fit: FitResult, dim_theta: int | None = None) -> float:
    """-2 log g(y | theta_hat) + 2 dim(theta), with the Laplace marginal."""
    if full_fit.marg_loglik is None:
        raise ValueError("fit carries no marginal log-likelihood")
    k = full_fit.dim_theta if dim_theta is None else dim_theta
    return -2.0 * full_fit.marg_loglik + 2.0 * k


def classical_aic(fit: FitResult, p: int | None = None) -> float:
    k = fit.beta_hat.size if p is None else p
    return -2.0 * fit.cond_loglik + 2.0 * k


@dataclass(frozen=True)
class CriteriaReport:
    aic: float | None
    maic: float | None
    caic: float | None
    penalty_K: float
    per_observation_K: NDArray[np.float64]
    refit_failures: list[int]
    fixed_fit: FitResult | None = None
    mixed_fit: FitResult | None = None
    refit_mode: str = "full"


def score_models(
    data: ClusteredCounts,
    spec: ModelSpec | None = None,
    refit_mode: str = "full",
    workers: int = 1,
) -> CriteriaReport:
    """Fit the fixed-effects and mixed models and compute AIC, mAIC and cAIC.

    ``refit_mode`` is ``"full"`` (perturbed refits re-estimate beta, sigma
    and b) or ``"fixed-theta"`` (only b is re-estimated).
    """
    spec = spec or ModelSpec(kind=ModelKind.MIXED_DIAGONAL, q=max(data.q, 1))
    fixed = fit_fixed_glm(data, spec.solver)
    mixed = None
    if data.q > 0:
        glmm = GlmmFitter(spec)
        mixed = glmm(data)
        if refit_mode == "full":
            fitter = glmm
        elif refit_mode == "fixed-theta":
            fitter = FixedThetaFitter(mixed, spec.solver)
        else:
            raise ValueError(f"unknown refit mode {refit_mode!r}")
        pen = compute_penalty_K(data, fitter, mixed, workers=workers)
    else:
        pen = compute_penalty_K(data, GlmFitter(spec.solver), fixed, workers=workers)
    return CriteriaReport(
        aic=classical_aic(fixed),
        maic=maic(mixed) if mixed is not None else None,
        caic=caic(mixed if mixed is not None else fixed, pen.penalty_K),
        penalty_K=pen.penalty_K,
        per_observation_K=pen.per_observation_K,
        refit_failures=pen.refit_failures,
        fixed_fit=fixed,
        mixed_fit=mixed,
        refit_mode=refit_mode,
    )


__all__ = [
    "CriteriaReport",
    "FixedThetaFitter",
    "GlmFitter",
    "GlmmFitter",
    "PenaltyResult",
    "RefitError",
    "caic",
    "classical_aic",
    "compute_penalty_K",
    "maic",
    "score_models",
]
