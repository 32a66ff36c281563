"""Fitting Poisson GLMs and Poisson GLMMs with diagonal random-effect covariance.

The mixed-model estimator maximises the Laplace approximation of the marginal
likelihood over (beta, sigma) and reports posterior modes for the random
effects. The random effects are profiled out cluster by cluster with a
vectorised Newton iteration, and the outer gradient is exact given the modes.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import NamedTuple

import numpy as np
import scipy.linalg
from numpy.typing import NDArray
from scipy.special import gammaln, logsumexp

from .exceptions import (
    DimensionError,
    RankDeficiencyError,
    SingularHessianError,
    UnsupportedStructureError,
)
from .model import (
    ClusteredCounts,
    ModelKind,
    ModelSpec,
    Parameters,
    SolverControls,
    conditional_log_lik,
    fitted_means,
)

_LOG_2PI = float(np.log(2.0 * np.pi))
RANK_THRESHOLD = 1e-10


@dataclass(frozen=True)
class Convergence:
    converged: bool
    n_outer: int
    n_inner: int
    grad_norm: float
    boundary: bool = False
    message: str = ""


@dataclass(frozen=True)
class FitResult:
    """Estimates from one fit.

    ``b_hat`` has shape (m, q). ``hessian`` is the Hessian of the maximised
    objective in the optimiser's coordinates, (beta, sigma) for mixed models
    and beta for fixed-effects models; it is used to warm-start refits.
    """

    kind: ModelKind
    beta_hat: NDArray[np.float64]
    y_hat: NDArray[np.float64]
    cond_loglik: float
    convergence: Convergence
    log_sigma_hat: NDArray[np.float64] | None = None
    b_hat: NDArray[np.float64] | None = None
    marg_loglik: float | None = None
    hessian: NDArray[np.float64] | None = None

    @property
    def converged(self) -> bool:
        return self.convergence.converged

    @property
    def sigma_hat(self) -> NDArray[np.float64] | None:
        return None if self.log_sigma_hat is None else np.exp(self.log_sigma_hat)

    @property
    def params(self) -> Parameters:
        ls = np.zeros(0) if self.log_sigma_hat is None else self.log_sigma_hat
        return Parameters(self.beta_hat, ls)

    @property
    def dim_theta(self) -> int:
        return self.params.dim


def check_rank(data: ClusteredCounts, threshold: float = RANK_THRESHOLD) -> None:
    """Raise RankDeficiencyError unless X has full column rank."""
    if data.__dict__.get("rank_checked"):
        return
    _, R, piv = scipy.linalg.qr(data.X, mode="economic", pivoting=True)
    d = np.abs(np.diag(R))
    rank = int(np.sum(d > threshold * d[0])) if d.size and d[0] > 0 else 0
    if rank < data.p:
        raise RankDeficiencyError([data.x_names[j] for j in sorted(piv[rank:])])
    data.__dict__["rank_checked"] = True


def _exp(eta):
    with np.errstate(over="ignore"):
        return np.exp(eta)


# ---------------------------------------------------------------------------
# fixed-effects Poisson regression


def fit_fixed_glm(
    data: ClusteredCounts,
    controls: SolverControls | None = None,
    warm_start: Parameters | FitResult | None = None,
) -> FitResult:
    """Poisson log-linear regression by Newton-IRLS with step halving.

    Non-convergence (e.g. an all-zero response, whose MLE is at -inf) is
    flagged in the result rather than raised.
    """
    ctl = controls or SolverControls()
    check_rank(data)
    X, y = data.X, data.y
    if warm_start is not None:
        beta = np.array(warm_start.beta if isinstance(warm_start, Parameters) else warm_start.beta_hat, dtype=float)
    else:
        beta = np.linalg.lstsq(X, np.log(y + 0.5), rcond=None)[0]

    def loglik(eta, mu):
        return float(y @ eta - mu.sum())

    eta = X @ beta
    mu = _exp(eta)
    ll = loglik(eta, mu)
    converged, message = False, "iteration limit"
    H = None
    it = 0
    for it in range(1, ctl.max_outer + 1):
        g = X.T @ (y - mu)
        H = (X * mu[:, None]).T @ X
        try:
            cf = scipy.linalg.cho_factor(H)
        except (np.linalg.LinAlgError, ValueError):
            message = "information matrix became singular"
            break
        step = scipy.linalg.cho_solve(cf, g)
        if np.max(np.abs(g)) <= ctl.inner_tol and np.max(np.abs(step)) <= 1e-6 * (1 + np.max(np.abs(beta))):
            converged, message = True, ""
            break
        t = 1.0
        for _ in range(ctl.max_halvings + 1):
            bt = beta + t * step
            eta_t = X @ bt
            mu_t = _exp(eta_t)
            ll_t = loglik(eta_t, mu_t)
            if np.isfinite(ll_t) and ll_t >= ll - 1e-12 * (1 + abs(ll)):
                break
            t *= 0.5
        else:
            message = "step halving failed"
            break
        beta, eta, mu, ll = bt, eta_t, mu_t, ll_t
    g = X.T @ (y - mu)
    return FitResult(
        kind=ModelKind.FIXED_ONLY,
        beta_hat=beta,
        y_hat=mu,
        cond_loglik=conditional_log_lik(y, mu) if np.all(mu > 0) else -np.inf,
        convergence=Convergence(converged, it, 0, float(np.max(np.abs(g))), message=message),
        hessian=None if H is None else -H,
    )


# ---------------------------------------------------------------------------
# joint (beta, b) objective


def _effects_term(data: ClusteredCounts, b: NDArray) -> NDArray:
    if data.q == 1:
        return data.Z[:, 0] * b[data.group, 0]
    return np.einsum("nq,nq->n", data.Z, b[data.group])


def joint_objective(data: ClusteredCounts, beta, b, log_sigma, gradient: bool = False):
    """log g(y | beta, b) + sum_i log N(b_i; 0, G).

    With ``gradient=True`` returns ``(value, grad_beta, grad_b)``.
    """
    beta = np.asarray(beta, dtype=float)
    b = np.asarray(b, dtype=float).reshape(data.m, data.q)
    log_sigma = np.asarray(log_sigma, dtype=float).reshape(data.q)
    lam = np.exp(-2.0 * log_sigma)
    eta = data.X @ beta + _effects_term(data, b)
    mu = _exp(eta)
    value = (
        float(data.y @ eta - mu.sum()) - data.log_y_factorial
        - 0.5 * float(np.sum(lam * b * b))
        - data.m * (float(np.sum(log_sigma)) + 0.5 * data.q * _LOG_2PI)
    )
    if not gradient:
        return value
    r = data.y - mu
    g_beta = data.X.T @ r
    g_b = data.cluster_sum(data.Z * r[:, None]) - lam * b
    return value, g_beta, g_b


def _neg_hessian_blocks(data: ClusteredCounts, mu, lam) -> NDArray:
    if data.q == 1:
        return (data.cluster_sum(mu * data.Z[:, 0] ** 2) + lam[0])[:, None, None]
    return data.cluster_sum(mu[:, None, None] * data.ZZ) + np.diag(lam)


class JointMode(NamedTuple):
    beta: NDArray[np.float64]
    b: NDArray[np.float64]
    neg_hessian_blocks: NDArray[np.float64]
    convergence: Convergence


def joint_mode(
    data: ClusteredCounts,
    log_sigma,
    controls: SolverControls | None = None,
    warm_start: tuple | None = None,
) -> JointMode:
    """Maximise the joint objective over (beta, b) at fixed variance components.

    Dense Newton with step halving over all p + m q unknowns. Returns the
    per-cluster negative Hessian blocks in b, shape (m, q, q).
    """
    ctl = controls or SolverControls()
    check_rank(data)
    log_sigma = np.asarray(log_sigma, dtype=float).reshape(data.q)
    lam = np.exp(-2.0 * log_sigma)
    p, m, q = data.p, data.m, data.q
    if warm_start is not None:
        beta = np.array(warm_start[0], dtype=float)
        b = np.array(warm_start[1], dtype=float).reshape(m, q)
    else:
        beta = fit_fixed_glm(data, ctl).beta_hat
        if not np.all(np.isfinite(beta)):
            beta = np.zeros(p)
        b = np.zeros((m, q))
    val, gb, gu = joint_objective(data, beta, b, log_sigma, gradient=True)
    converged, message, it = False, "iteration limit", 0
    for it in range(1, ctl.max_inner + 1):
        grad = np.concatenate([gb, gu.ravel()])
        if np.max(np.abs(grad)) <= ctl.inner_tol:
            converged, message = True, ""
            break
        mu = _exp(data.X @ beta + _effects_term(data, b))
        A = np.zeros((p + m * q, p + m * q))
        A[:p, :p] = (data.X * mu[:, None]).T @ data.X
        cross = data.cluster_sum(mu[:, None, None] * data.X[:, :, None] * data.Z[:, None, :])
        A[:p, p:] = cross.transpose(1, 0, 2).reshape(p, m * q)
        A[p:, :p] = A[:p, p:].T
        blocks = _neg_hessian_blocks(data, mu, lam)
        for i in range(m):
            A[p + i * q : p + (i + 1) * q, p + i * q : p + (i + 1) * q] = blocks[i]
        try:
            cf = scipy.linalg.cho_factor(A)
        except np.linalg.LinAlgError:
            raise SingularHessianError("joint Newton system is not positive definite", float(np.linalg.cond(A))) from None
        step = scipy.linalg.cho_solve(cf, grad)
        if np.max(np.abs(step)) <= 1e-15 * (1 + np.max(np.abs(np.concatenate([beta, b.ravel()])))):
            converged, message = True, "stalled at machine precision"
            break
        t = 1.0
        for _ in range(ctl.max_halvings + 1):
            bt = beta + t * step[:p]
            ut = b + t * step[p:].reshape(m, q)
            vt, gbt, gut = joint_objective(data, bt, ut, log_sigma, gradient=True)
            if np.isfinite(vt) and vt >= val - 1e-13 * abs(val):
                break
            t *= 0.5
        else:
            message = "step halving failed"
            break
        beta, b, val, gb, gu = bt, ut, vt, gbt, gut
    mu = _exp(data.X @ beta + _effects_term(data, b))
    grad_norm = float(max(np.max(np.abs(gb)), np.max(np.abs(gu))))
    return JointMode(
        beta, b, _neg_hessian_blocks(data, mu, lam), Convergence(converged, it, it, grad_norm, message=message)
    )


# ---------------------------------------------------------------------------
# Laplace objective with b profiled out


class _Modes(NamedTuple):
    b: NDArray
    eta: NDArray
    mu: NDArray
    H: NDArray  # (m, q, q) negative Hessian blocks
    n_iter: int
    converged: bool


def _b_modes(data: ClusteredCounts, eta_fixed, lam, b0, ctl: SolverControls) -> _Modes:
    """Cluster-wise posterior modes of b given X beta and G^{-1} = diag(lam)."""
    y, Z = data.y, data.Z
    q = data.q

    def state(b):
        eta = eta_fixed + _effects_term(data, b)
        mu = _exp(eta)
        obj = data.cluster_sum(y * eta - mu) - 0.5 * np.sum(lam * b * b, axis=1)
        return eta, mu, obj

    b = b0.copy()
    eta, mu, obj = state(b)
    converged = False
    it = 0
    for it in range(ctl.max_inner + 1):
        r = y - mu
        if q == 1:
            grad = data.cluster_sum(Z[:, 0] * r)[:, None] - lam * b
        else:
            grad = data.cluster_sum(Z * r[:, None]) - lam * b
        if np.max(np.abs(grad)) <= ctl.inner_tol:
            converged = True
            break
        if it == ctl.max_inner:
            break
        H = _neg_hessian_blocks(data, mu, lam)
        if q == 1:
            step = grad / H[:, 0]
        else:
            step = np.linalg.solve(H, grad[..., None])[..., 0]
        if np.max(np.abs(step)) <= 1e-15 * (1 + np.max(np.abs(b))):
            converged = True
            break
        t = np.ones(data.m)
        for _ in range(ctl.max_halvings + 1):
            bt = b + t[:, None] * step
            eta_t, mu_t, obj_t = state(bt)
            bad = ~(obj_t >= obj - 1e-13 * np.abs(obj))
            if not bad.any():
                break
            t[bad] *= 0.5
        if bad.any():
            bt[bad] = b[bad]
            eta_t, mu_t, obj_t = state(bt)
            b, eta, mu, obj = bt, eta_t, mu_t, obj_t
            break
        b, eta, mu, obj = bt, eta_t, mu_t, obj_t
    return _Modes(b, eta, mu, _neg_hessian_blocks(data, mu, lam), it, converged)


class LaplaceObjective:
    """Laplace log-marginal likelihood as a function of (beta, sigma).

    Keeps the most recent random-effect modes to warm-start the next
    evaluation. ``n_inner`` counts inner Newton iterations.
    """

    def __init__(self, data: ClusteredCounts, controls: SolverControls, b0=None):
        self.data = data
        self.ctl = controls
        self.b = np.zeros((data.m, data.q)) if b0 is None else np.array(b0, dtype=float).reshape(data.m, data.q)
        self.n_inner = 0
        self.inner_ok = True

    def split(self, theta):
        p = self.data.p
        return theta[:p], theta[p:]

    def modes(self, beta, sigma) -> _Modes:
        lam = 1.0 / (sigma * sigma)
        res = _b_modes(self.data, self.data.X @ beta, lam, self.b, self.ctl)
        self.n_inner += res.n_iter
        self.inner_ok = res.converged
        if np.all(np.isfinite(res.b)):
            self.b = res.b
        return res

    def __call__(self, theta, gradient: bool = True):
        data = self.data
        beta, sigma = self.split(np.asarray(theta, dtype=float))
        lam = 1.0 / (sigma * sigma)
        md = self.modes(beta, sigma)
        b, mu, H = md.b, md.mu, md.H
        if not np.all(np.isfinite(mu)):
            return (-np.inf, None) if gradient else -np.inf
        if data.q == 1:
            logdet = float(np.sum(np.log(H[:, 0, 0])))
        else:
            logdet = float(np.sum(np.linalg.slogdet(H)[1]))
        value = (
            float(data.y @ md.eta - mu.sum()) - data.log_y_factorial
            - 0.5 * float(np.sum(lam * b * b)) - data.m * float(np.sum(np.log(sigma)))
            - 0.5 * logdet
        )
        if not gradient:
            return value
        return value, self._gradient(beta, sigma, lam, md)

    def _gradient(self, beta, sigma, lam, md: _Modes):
        data = self.data
        X, Z, g = data.X, data.Z, data.group
        b, mu, H = md.b, md.mu, md.H
        if data.q == 1:
            Hinv = 1.0 / H
            h = Z[:, 0] ** 2 * Hinv[g, 0, 0]
        else:
            Hinv = np.linalg.inv(H)
            h = np.einsum("nq,nqk,nk->n", Z, Hinv[g], Z)
        w = mu * h
        A = data.cluster_sum(mu[:, None, None] * Z[:, :, None] * X[:, None, :])
        db_dbeta = -Hinv @ A
        D = X + np.einsum("nq,nqp->np", Z, db_dbeta[g])
        g_beta = X.T @ (data.y - mu) - 0.5 * (D.T @ w)
        db_dtau = Hinv * (2.0 * lam * b)[:, None, :]
        deta = np.einsum("nq,nqk->nk", Z, db_dtau[g])
        g_tau = (
            lam * np.sum(b * b, axis=0) - data.m
            - 0.5 * (deta.T @ w)
            + lam * np.sum(np.diagonal(Hinv, axis1=1, axis2=2), axis=0)
        )
        # optimiser works in sigma, not log sigma
        return np.concatenate([g_beta, g_tau / sigma])

    def hessian(self, theta, grad=None):
        """Central-difference Hessian of the analytic gradient."""
        theta = np.asarray(theta, dtype=float)
        p = self.data.p
        k = theta.size
        Hm = np.empty((k, k))
        b_save = self.b.copy()
        for j in range(k):
            hj = 1e-4 * max(1.0, abs(theta[j]))
            if j >= p:
                hj = min(hj, 0.5 * theta[j])
            e = np.zeros(k)
            e[j] = hj
            gp = self(theta + e)[1]
            self.b = b_save.copy()
            gm = self(theta - e)[1]
            self.b = b_save.copy()
            if gp is None or gm is None:
                raise SingularHessianError("objective not finite near the optimum", np.inf)
            Hm[:, j] = (gp - gm) / (2 * hj)
        return 0.5 * (Hm + Hm.T)


def _ascent_direction(H, g):
    """Newton direction -H^{-1} g, with H's spectrum made negative if needed."""
    try:
        cf = scipy.linalg.cho_factor(-H)
        return scipy.linalg.cho_solve(cf, g), True
    except np.linalg.LinAlgError:
        ev, V = np.linalg.eigh(-H)
        ev = np.maximum(np.abs(ev), 1e-8 * max(1.0, np.max(np.abs(ev))))
        return V @ ((V.T @ g) / ev), False


class _OuterResult(NamedTuple):
    theta: NDArray
    value: float
    grad: NDArray
    grad_norm: float
    n_iter: int
    converged: bool
    hessian: NDArray | None
    message: str


def _projected_newton(
    obj: LaplaceObjective, theta, lower, ctl: SolverControls, H=None, max_iter=None
) -> _OuterResult:
    """Maximise ``obj`` subject to theta >= lower (elementwise).

    ``H`` seeds a chord iteration; it is refreshed by finite differences
    whenever the gradient fails to contract.
    """
    theta = np.maximum(np.asarray(theta, dtype=float), lower)
    val, g = obj(theta)
    if g is None:
        return _OuterResult(theta, val, np.full(theta.size, np.nan), np.inf, 0, False, H, "non-finite start")
    fresh = False
    max_iter = ctl.max_outer if max_iter is None else max_iter
    message = "iteration limit"
    converged = False
    it = 0
    gn = np.inf
    for it in range(max_iter + 1):
        active = (theta <= lower * (1 + 1e-12) + 1e-300) & (g < 0)
        free = ~active
        gn = float(np.max(np.abs(g[free]))) if free.any() else 0.0
        if gn <= ctl.outer_tol:
            converged, message = True, ""
            break
        if it == max_iter:
            break
        if H is None:
            H = obj.hessian(theta)
            fresh = True
        d = np.zeros_like(theta)
        d[free], _ = _ascent_direction(H[np.ix_(free, free)], g[free])
        t = 1.0
        accepted = False
        for _ in range(ctl.max_halvings + 1):
            th_t = np.maximum(theta + t * d, lower)
            b_save = obj.b.copy()
            v_t, g_t = obj(th_t)
            if g_t is not None and np.isfinite(v_t) and (
                v_t >= val - 1e-12 * (1 + abs(val))
            ):
                accepted = True
                break
            obj.b = b_save
            t *= 0.5
        if not accepted:
            if not fresh:
                H = None
                continue
            message = "line search failed"
            break
        act_t = (th_t <= lower * (1 + 1e-12) + 1e-300) & (g_t < 0)
        gn_t = float(np.max(np.abs(g_t[~act_t]))) if (~act_t).any() else 0.0
        if gn_t > 0.25 * gn and not fresh:
            H = None  # chord stalled: refresh curvature next iteration
        else:
            fresh = False
        theta, val, g = th_t, v_t, g_t
    return _OuterResult(theta, val, g, gn, it, converged, H, message)


# ---------------------------------------------------------------------------
# public fitting interface


def laplace_marginal_loglik(
    data: ClusteredCounts, params: Parameters, controls: SolverControls | None = None, floor: float = 1e-8
) -> float:
    """Laplace approximation of log g(y | theta), re-profiling the modes of b."""
    ctl = controls or SolverControls()
    _check_params(data, params, floor)
    obj = LaplaceObjective(data, ctl)
    return obj(np.concatenate([params.beta, np.exp(params.log_sigma)]), gradient=False)


def _check_params(data: ClusteredCounts, params: Parameters, floor: float) -> None:
    if params.beta.size != data.p or params.log_sigma.size != data.q:
        raise DimensionError(
            f"parameters have (p, q) = {(params.beta.size, params.log_sigma.size)}, data has {(data.p, data.q)}"
        )
    if data.q == 0:
        raise UnsupportedStructureError("a Laplace marginal likelihood needs q >= 1")
    if np.any(2 * params.log_sigma < np.log(floor) - 1e-12):
        raise ValueError(f"random-effect variance below the floor {floor}")


def fit_glmm(
    data: ClusteredCounts,
    spec: ModelSpec | None = None,
    warm_start: FitResult | None = None,
    with_hessian: bool = True,
) -> FitResult:
    """Laplace maximum likelihood for (beta, sigma); posterior modes for b.

    A warm start carrying a Hessian is refined by chord Newton steps; if
    that fails, or no warm start is given, the fit restarts from the
    fixed-effects estimate.
    """
    spec = spec or ModelSpec(q=data.q)
    if spec.kind is not ModelKind.MIXED_DIAGONAL:
        raise ValueError("fit_glmm requires a MixedDiagonal model spec")
    if spec.q != data.q:
        raise DimensionError(f"model spec has q = {spec.q}, data has q = {data.q}")
    check_rank(data)
    ctl = spec.solver
    p, q = data.p, data.q
    s_floor = float(np.sqrt(spec.variance_floor))
    lower = np.concatenate([np.full(p, -np.inf), np.full(q, s_floor)])

    res = None
    n_outer = 0
    obj = None
    if warm_start is not None and warm_start.log_sigma_hat is not None and warm_start.b_hat is not None:
        obj = LaplaceObjective(data, ctl, warm_start.b_hat)
        theta0 = np.concatenate([warm_start.beta_hat, np.exp(warm_start.log_sigma_hat)])
        res = _projected_newton(obj, theta0, lower, ctl, H=warm_start.hessian, max_iter=50)
        n_outer += res.n_iter
        if not res.converged:
            res = None
    if res is None:
        inner = obj.n_inner if obj is not None else 0
        glm = fit_fixed_glm(data, ctl)
        beta0 = glm.beta_hat if np.all(np.isfinite(glm.beta_hat)) else np.zeros(p)
        obj = LaplaceObjective(data, ctl)
        obj.n_inner = inner
        res = _projected_newton(obj, np.concatenate([beta0, np.full(q, 0.5)]), lower, ctl)
        n_outer += res.n_iter
    theta = res.theta
    beta, sigma = theta[:p], theta[p:]
    md = obj.modes(beta, sigma)
    hess = res.hessian
    if with_hessian and res.converged:
        hess = obj.hessian(theta)
    y_hat = md.mu
    boundary = bool(np.any(sigma <= s_floor * (1 + 1e-9)))
    return FitResult(
        kind=ModelKind.MIXED_DIAGONAL,
        beta_hat=beta.copy(),
        y_hat=y_hat,
        cond_loglik=conditional_log_lik(data.y, y_hat) if np.all(y_hat > 0) else -np.inf,
        convergence=Convergence(
            res.converged and md.converged, n_outer, obj.n_inner, res.grad_norm, boundary, res.message
        ),
        log_sigma_hat=np.log(sigma),
        b_hat=md.b.copy(),
        marg_loglik=float(res.value),
        hessian=hess,
    )


def refit_effects(data: ClusteredCounts, full_fit: FitResult, controls: SolverControls | None = None) -> FitResult:
    """Re-estimate only the random-effect modes, holding theta at ``full_fit``."""
    ctl = controls or SolverControls()
    obj = LaplaceObjective(data, ctl, full_fit.b_hat)
    theta = np.concatenate([full_fit.beta_hat, np.exp(full_fit.log_sigma_hat)])
    value = obj(theta, gradient=False)
    b = obj.b
    y_hat = fitted_means(data, full_fit.beta_hat, b)
    return replace(
        full_fit,
        b_hat=b.copy(),
        y_hat=y_hat,
        cond_loglik=conditional_log_lik(data.y, y_hat),
        marg_loglik=float(value),
        convergence=replace(full_fit.convergence, converged=obj.inner_ok, n_outer=0, n_inner=obj.n_inner),
    )


def aghq_marginal_loglik(
    data: ClusteredCounts, params: Parameters, nodes: int, controls: SolverControls | None = None
) -> float:
    """Adaptive Gauss-Hermite quadrature of the marginal log-likelihood (q = 1).

    Nodes are centred at each cluster's mode of b and scaled by its
    curvature, so a single node reproduces the Laplace approximation.
    """
    if data.q != 1:
        raise UnsupportedStructureError("adaptive quadrature is implemented for q = 1 only")
    if nodes < 1:
        raise ValueError("nodes must be >= 1")
    ctl = controls or SolverControls()
    obj = LaplaceObjective(data, ctl)
    sigma = float(np.exp(params.log_sigma[0]))
    md = obj.modes(params.beta, np.array([sigma]))
    lam = 1.0 / sigma**2
    scale = 1.0 / np.sqrt(md.H[:, 0, 0])
    x, w = np.polynomial.hermite.hermgauss(nodes)
    eta_fixed = data.X @ params.beta
    z = data.Z[:, 0]
    log_fact = data.cluster_sum(gammaln(data.y + 1.0))
    terms = np.empty((data.m, nodes))
    for k in range(nodes):
        bk = md.b[:, 0] + np.sqrt(2.0) * scale * x[k]
        eta = eta_fixed + z * bk[data.group]
        mu = _exp(eta)
        log_joint = (
            data.cluster_sum(data.y * eta - mu) - log_fact
            - 0.5 * lam * bk**2 - np.log(sigma) - 0.5 * _LOG_2PI
        )
        terms[:, k] = np.log(w[k]) + x[k] ** 2 + log_joint
    per_cluster = logsumexp(terms, axis=1) + np.log(np.sqrt(2.0) * scale)
    return float(np.sum(per_cluster))


__all__ = [
    "Convergence",
    "FitResult",
    "JointMode",
    "LaplaceObjective",
    "aghq_marginal_loglik",
    "check_rank",
    "fit_fixed_glm",
    "fit_glmm",
    "joint_mode",
    "joint_objective",
    "laplace_marginal_loglik",
    "refit_effects",
]
