import itertools
import math
from dataclasses import dataclass

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import poisson

from poisson_caic import (
    ClusteredCounts,
    FixedThetaFitter,
    GlmFitter,
    GlmmFitter,
    RefitError,
    caic,
    classical_aic,
    compute_penalty_K,
    conditional_log_lik,
    fit_glmm,
    maic,
    score_models,
)
from poisson_caic.estimation import Convergence, FitResult
from poisson_caic.model import ModelKind
from poisson_caic.simlab import SimulationDesign, bc_sample_analytic, replicate_rng, simulate_dataset

from conftest import intercept_only


@dataclass
class _Pred:
    y_hat: np.ndarray
    converged: bool = True


def constant_fitter(data, warm_start=None):
    return _Pred(np.full(data.N, 2.5))


def grand_mean_fitter(data, warm_start=None):
    return _Pred(np.full(data.N, data.y.mean()))


def shrunk_mean_fitter(data, warm_start=None):
    return _Pred(np.full(data.N, (data.y.sum() + 1.0) / (data.N + 1.0)))


def _fixed_fit(cond_loglik, marg=None, p=2, q=1):
    conv = Convergence(True, 1, 1, 0.0, False, "ok")
    return FitResult(
        kind=ModelKind.MIXED_DIAGONAL, beta_hat=np.zeros(p), y_hat=np.ones(1), cond_loglik=cond_loglik,
        convergence=conv, log_sigma_hat=np.zeros(q), b_hat=np.zeros((1, q)), marg_loglik=marg,
    )


def flat(ys):
    return ClusteredCounts([(ys, np.ones((len(ys), 1)), np.ones((len(ys), 1)))])


# -- spec examples ------------------------------------------------------------


def test_constant_predictor_has_no_optimism():
    data = flat([3, 0, 5, 1])
    res = compute_penalty_K(data, constant_fitter, constant_fitter(data))
    assert res.penalty_K == 0.0 and not res.refit_failures


def test_grand_mean_hand_computation():
    data = flat([1, 2])
    res = compute_penalty_K(data, grand_mean_fitter, grand_mean_fitter(data))
    assert res.penalty_K == pytest.approx(3 * math.log(1.5), abs=1e-12)
    np.testing.assert_allclose(res.per_observation_K, [math.log(1.5), 2 * math.log(1.5)], atol=1e-15)


def test_all_zero_response_needs_no_refits():
    calls = []

    def spy(data, warm_start=None):
        calls.append(1)
        return constant_fitter(data)

    data = flat([0, 0, 0])
    res = compute_penalty_K(data, spy, constant_fitter(data))
    assert res.penalty_K == 0.0 and not calls


def test_criteria_arithmetic():
    assert caic(_fixed_fit(-10.0), 3.0) == 26.0
    assert caic(_fixed_fit(-7.5), 0.0) == 15.0
    assert maic(_fixed_fit(-1.0, marg=-20.0, p=2, q=1)) == 46.0
    assert _fixed_fit(0.0, marg=0.0).dim_theta == 3
    assert classical_aic(_fixed_fit(-5.0)) == 14.0
    with pytest.raises(ValueError):
        maic(_fixed_fit(-1.0))


def test_classical_aic_saturated_single_point():
    data = ClusteredCounts([([2], np.ones((1, 1)), np.zeros((1, 0)))])
    rep = score_models(data)
    direct = -2 * (2 * math.log(2) - 2 - math.log(2)) + 2
    assert rep.aic == pytest.approx(direct, abs=1e-12)
    assert rep.maic is None


def test_report_invariants(design_data):
    data = design_data.data
    rep = score_models(data)
    assert rep.penalty_K == pytest.approx(rep.per_observation_K.sum(), abs=1e-12)
    assert rep.caic == pytest.approx(-2 * rep.mixed_fit.cond_loglik + 2 * rep.penalty_K, abs=1e-10)
    assert np.all(rep.per_observation_K[data.y == 0] == 0.0)
    assert rep.mixed_fit.dim_theta == 3 and rep.fixed_fit.beta_hat.size == 2


# -- properties ---------------------------------------------------------------


@settings(max_examples=40, deadline=None)
@given(st.lists(st.lists(st.integers(0, 6), min_size=2, max_size=4), min_size=2, max_size=4))
def test_zero_convention_is_exact(ys):
    data = intercept_only(ys)
    if np.count_nonzero(data.y) < 2:
        return  # the only perturbed refit would see all-zero data
    fitter = GlmFitter()
    res = compute_penalty_K(data, fitter, fitter(data))
    assert np.all(res.per_observation_K[data.y == 0] == 0.0)
    assert res.penalty_K == pytest.approx(res.per_observation_K.sum(), abs=1e-12)


def test_penalty_is_deterministic(design_data):
    data = design_data.data
    f = GlmmFitter()
    full = f(data)
    a = compute_penalty_K(data, f, full)
    b = compute_penalty_K(data, f, f(data))
    assert a.penalty_K == b.penalty_K
    assert np.array_equal(a.per_observation_K, b.per_observation_K)


def test_parallel_refits_match_serial(design_data):
    data = design_data.data
    f = GlmmFitter()
    full = f(data)
    serial = compute_penalty_K(data, f, full)
    parallel = compute_penalty_K(data, f, full, workers=2)
    assert np.array_equal(serial.per_observation_K, parallel.per_observation_K)


def test_estimator_agnostic(design_data):
    data = design_data.data
    full = fit_glmm(data)
    values = {}
    for name, fitter, base in [
        ("glmm", GlmmFitter(), full),
        ("fixed-theta", FixedThetaFitter(full), full),
        ("glm", GlmFitter(), GlmFitter()(data)),
        ("constant", constant_fitter, constant_fitter(data)),
    ]:
        values[name] = compute_penalty_K(data, fitter, base).penalty_K
    assert values["constant"] == 0.0
    assert 0 < values["glm"] < values["fixed-theta"] < values["glmm"]


def test_fixed_theta_mode_changes_only_the_penalty(design_data):
    data = design_data.data
    full = score_models(data, refit_mode="full")
    quick = score_models(data, refit_mode="fixed-theta")
    assert quick.mixed_fit.cond_loglik == full.mixed_fit.cond_loglik
    assert quick.penalty_K != full.penalty_K
    with pytest.raises(ValueError):
        score_models(data, refit_mode="bogus")


def test_unbiasedness_by_exact_enumeration():
    # E[K] equals the bias correction E[sum (y_i - mu_i) log yhat_i] for any estimator
    mu = np.array([0.8, 2.3])
    kmax = 40
    pmf = [poisson.pmf(np.arange(kmax + 1), m) for m in mu]
    EK = EB = 0.0
    for y1, y2 in itertools.product(range(kmax + 1), repeat=2):
        w = pmf[0][y1] * pmf[1][y2]
        data = flat([y1, y2])
        yhat = shrunk_mean_fitter(data).y_hat
        EK += w * compute_penalty_K(data, shrunk_mean_fitter, _Pred(yhat)).penalty_K
        EB += w * bc_sample_analytic(data.y, yhat, mu, control_variate=False)
    assert EK == pytest.approx(EB, abs=1e-10)


def test_glm_penalty_tracks_bias_correction_by_simulation():
    design = SimulationDesign(m=10, n_i=5, sigma_b=0.0)
    fitter = GlmFitter()
    K, bc = [], []
    for r in range(300):
        sim = simulate_dataset(design, replicate_rng(404, 0, r, 0))
        fit = fitter(sim.data)
        K.append(compute_penalty_K(sim.data, fitter, fit).penalty_K)
        bc.append(bc_sample_analytic(sim.data.y, fit.y_hat, sim.true_mu))
    K, bc = np.array(K), np.array(bc)
    se = math.hypot(K.std(ddof=1), bc.std(ddof=1)) / math.sqrt(K.size)
    assert abs(K.mean() - bc.mean()) <= 3 * se
    assert abs(K.mean() - 2.0) < 0.3


# -- failures -----------------------------------------------------------------


def test_refit_failures_are_recorded():
    data = flat([1, 2, 3])

    def flaky(d, warm_start=None):
        res = grand_mean_fitter(d)
        if d.y[0] == 0:
            res.converged = False
        return res

    res = compute_penalty_K(data, flaky, grand_mean_fitter(data))
    assert res.refit_failures == [0]
    # the best iterate is still used
    assert res.per_observation_K[0] == pytest.approx(math.log(2.0 / (5 / 3)))


def test_raising_refit_contributes_zero():
    data = flat([1, 2, 3])

    def broken(d, warm_start=None):
        if d.y[1] == 1:
            raise FloatingPointError("overflow")
        return grand_mean_fitter(d)

    res = compute_penalty_K(data, broken, grand_mean_fitter(data))
    assert res.refit_failures == [1] and res.per_observation_K[1] == 0.0


def test_all_refits_failing_is_fatal():
    data = flat([1, 2, 3])

    def never(d, warm_start=None):
        return _Pred(grand_mean_fitter(d).y_hat, converged=False)

    with pytest.raises(RefitError):
        compute_penalty_K(data, never, grand_mean_fitter(data))


def test_penalty_uses_fitted_conditional_loglik(small_data):
    fit = fit_glmm(small_data)
    assert fit.cond_loglik == pytest.approx(conditional_log_lik(small_data.y, fit.y_hat), abs=1e-12)
