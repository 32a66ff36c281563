"""Primary acceptance criteria, run at full scale.

Each test prints one PASS/FAIL line (also collected into the terminal
summary). The two experiments are computed once per session and shared.
"""

import math
import os

import numpy as np
import pytest

from poisson_caic import (
    ClusteredCounts,
    Parameters,
    aghq_marginal_loglik,
    compute_penalty_K,
    fit_glmm,
    joint_mode,
    joint_objective,
    laplace_marginal_loglik,
    poisson_shift_oracle,
)
from poisson_caic.cli import main as cli_main
from poisson_caic.simlab import (
    SELECTION_REPORTED,
    TABLE1_CONFIGS,
    TABLE1_REPORTED,
    SimulationDesign,
    replicate_rng,
    run_selection_experiment,
    run_table1,
    simulate_dataset,
)

from conftest import ACCEPTANCE_LINES, intercept_only, random_intercept_data
from oracles import laplace_random_intercept, zoom_grid_max

SEED = 1
R = S = 500
WORKERS = os.cpu_count() or 1

pytestmark = pytest.mark.slow


def record(name: str, ok: bool, detail: str) -> None:
    line = f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}"
    print(line)
    ACCEPTANCE_LINES.append(line)


@pytest.fixture(scope="session")
def table1():
    rep = run_table1(TABLE1_CONFIGS, R=R, S=S, seed=SEED, workers=WORKERS)
    for r in rep.rows:
        ACCEPTANCE_LINES.append(
            f"    table1 n_i={r.n_i:<2d} sigma_b={r.sigma_b:<4g} mean K={r.mean_K:7.3f} (se {r.K_stderr:.3f})"
            f"  BC mc={r.bc_estimate:7.3f} (se {r.bc_stderr:.3f})  BC analytic={r.bc_analytic:7.3f}"
            f" (se {r.bc_analytic_stderr:.3f})  boundary={r.boundary_fraction:.2f}  failures={r.fit_failures}"
        )
    return rep


@pytest.fixture(scope="session")
def selection():
    rep = run_selection_experiment([0.125, 0.25], R=R, seed=SEED, workers=WORKERS)
    for r in rep.rows:
        ACCEPTANCE_LINES.append(
            f"    selection sigma_b={r.sigma_b:<5g} fixed preferred: mAIC {r.maic_fixed}/{r.replicates}"
            f"  cAIC {r.caic_fixed}/{r.replicates}  mean K={r.mean_K:.3f}  boundary={r.boundary_fraction:.2f}"
        )
    return rep


def test_penalty_unbiasedness(table1):
    details, ok = [], True
    for r in table1.rows:
        z_k = abs(r.mean_K - r.bc_estimate) / r.k_bc_combined_se
        z_bc = abs(r.bc_analytic - r.bc_estimate) / r.bc_oracles_combined_se
        row_ok = z_k <= 3 and z_bc <= 3 and not r.unreliable
        ok &= row_ok
        details.append(f"({r.n_i},{r.sigma_b:g}) |K-BC|/se={z_k:.2f} |BCa-BC|/se={z_bc:.2f}")
    record("penalty unbiasedness (R=S=500)", ok, "; ".join(details))
    assert ok


def test_penalty_magnitudes(table1):
    by_cfg = {(r.n_i, r.sigma_b): r.mean_K for r in table1.rows}
    ok, details = True, []
    for cfg, (_, ref_K) in TABLE1_REPORTED.items():
        diff = by_cfg[cfg] - ref_K
        ok &= abs(diff) <= 1.5
        details.append(f"({cfg[0]},{cfg[1]:g}) {by_cfg[cfg]:.2f} vs {ref_K:.2f}")
    for n in (5, 15):
        ks = [by_cfg[(n, s)] for s in (0.25, 0.5, 1.0)]
        mono = ks[0] < ks[1] < ks[2]
        ok &= mono
        details.append(f"n_i={n} increasing={mono}")
    record("penalty magnitudes (+-1.5, monotone in sigma_b)", ok, "; ".join(details))
    assert ok


def test_selection_experiment(selection):
    rows = {r.sigma_b: r for r in selection.rows}
    bounds = {0.125: ((0.70, 0.90), 0.05), 0.25: ((0.23, 0.43), 0.03)}
    ok, details = True, []
    for sb, ((lo, hi), cmax) in bounds.items():
        r = rows[sb]
        fm, fc = r.maic_fixed / r.replicates, r.caic_fixed / r.replicates
        m_ok, c_ok = lo <= fm <= hi, fc <= cmax
        ok &= m_ok and c_ok
        ref_m, ref_c = SELECTION_REPORTED[sb]
        details.append(
            f"sigma_b={sb:g} mAIC {fm:.3f} in [{lo},{hi}]={m_ok} (reference {ref_m / 500:.3f}), "
            f"cAIC {fc:.3f} <= {cmax}={c_ok} (reference {ref_c / 500:.3f})"
        )
    record("selection experiment (R=500)", ok, "; ".join(details))
    assert ok


def test_exact_identities():
    rng = np.random.default_rng(2718)
    worst = 0.0
    for _ in range(100):
        mu = float(rng.uniform(0.05, 30.0))
        a, c, w = rng.normal(), rng.uniform(0.2, 4.0), rng.uniform(0.1, 3.0)
        lhs, rhs = poisson_shift_oracle(lambda k: a * math.log(k + c) + math.sin(w * k), mu, tol=1e-12)
        worst = max(worst, abs(lhs - rhs))
    shift_ok = worst <= 1e-10

    def constant(data, warm_start=None):
        return type("P", (), {"y_hat": np.full(data.N, 1.7)})()

    def grand_mean(data, warm_start=None):
        return type("P", (), {"y_hat": np.full(data.N, data.y.mean())})()

    data = intercept_only([[3, 1, 4], [1, 5, 9]])
    k_const = compute_penalty_K(data, constant, constant(data)).penalty_K
    zeros = intercept_only([[0, 0], [0, 0, 0]])
    k_zero = compute_penalty_K(zeros, constant, constant(zeros)).penalty_K
    pair = ClusteredCounts([([1, 2], np.ones((2, 1)), np.ones((2, 1)))])
    k_gm = compute_penalty_K(pair, grand_mean, grand_mean(pair)).penalty_K
    gm_err = abs(k_gm - 3 * math.log(1.5))

    sim = simulate_dataset(SimulationDesign(n_i=5, sigma_b=0.5), replicate_rng(SEED, 9, 0, 0)).data
    aghq_err = 0.0
    for ls in (-3.0, -1.0, 0.0, 0.5):
        p = Parameters([1.0, 0.2], [ls])
        lap = laplace_marginal_loglik(sim, p)
        aghq_err = max(aghq_err, abs(aghq_marginal_loglik(sim, p, nodes=1) - lap) / max(1.0, abs(lap)))
    aghq_ok = aghq_err <= 1e-13

    ok = shift_ok and k_const == 0.0 and k_zero == 0.0 and gm_err <= 1e-12 and aghq_ok
    record(
        "exact identities",
        ok,
        f"shift max|lhs-rhs|={worst:.1e}; K const={k_const}; K zeros={k_zero}; "
        f"grand-mean err={gm_err:.1e}; aghq(1) vs Laplace rel err={aghq_err:.1e}",
    )
    assert ok


def test_numerical_soundness():
    # analytic joint gradient against central differences
    rng = np.random.default_rng(31)
    data = random_intercept_data([[1, 3, 2, 0], [6, 9, 11, 8], [0, 2, 1, 1], [4, 4, 7, 3]])
    h, worst_grad = 1e-6, 0.0
    for _ in range(100):
        beta = rng.normal([1.0, 0.2], 0.5)
        b = rng.normal(0, 0.7, size=(4, 1))
        ls = [rng.uniform(-2, 0.5)]
        _, gb, gu = joint_objective(data, beta, b, ls, gradient=True)
        analytic = np.concatenate([gb, gu.ravel()])
        x0 = np.concatenate([beta, b.ravel()])

        def f(x):
            return joint_objective(data, x[:2], x[2:].reshape(4, 1), ls)

        fd = np.array([(f(x0 + e) - f(x0 - e)) / (2 * h) for e in np.eye(6) * h])
        worst_grad = max(worst_grad, float(np.max(np.abs(analytic - fd) / np.maximum(np.abs(fd), 1.0))))
    grad_ok = worst_grad <= 1e-4

    # small instances against grid-search oracles
    ys = [[2, 5], [9, 14]]
    small = random_intercept_data(ys)
    fit = fit_glmm(small)
    best, _ = zoom_grid_max(lambda v: laplace_random_intercept(ys, v[:2], math.exp(v[2])),
                            [1.5, 0.4, math.log(0.5)], [1.5, 1.0, 1.5])
    fit_err = float(np.max(np.abs(np.concatenate([fit.beta_hat, fit.log_sigma_hat]) - best)))
    ji = intercept_only([[1, 4], [6, 3]])
    jm = joint_mode(ji, [math.log(0.6)])
    jbest, _ = zoom_grid_max(lambda v: joint_objective(ji, v[:1], v[1:].reshape(2, 1), [math.log(0.6)]),
                             [1.0, 0.0, 0.0], [2.0, 2.0, 2.0])
    mode_err = float(np.max(np.abs(np.concatenate([jm.beta, jm.b.ravel()]) - jbest)))
    grid_ok = fit_err <= 1e-2 and mode_err <= 1e-2

    # warm against cold refits on every perturbation of several datasets
    worst_warm = 0.0
    for r in range(8):
        design = SimulationDesign(n_i=5, sigma_b=(0.0, 0.25, 0.5, 1.0)[r % 4])
        d = simulate_dataset(design, replicate_rng(SEED, 8, r, 0)).data
        full = fit_glmm(d)
        for i in np.flatnonzero(d.y > 0):
            y = d.y.copy()
            y[i] -= 1
            pert = d.with_response(y)
            warm = fit_glmm(pert, warm_start=full, with_hessian=False)
            cold = fit_glmm(pert, with_hessian=False)
            worst_warm = max(worst_warm, abs(warm.marg_loglik - cold.marg_loglik))
    warm_ok = worst_warm <= 1e-8

    ok = grad_ok and grid_ok and warm_ok
    record(
        "numerical soundness",
        ok,
        f"gradient max rel err={worst_grad:.1e}; GLMM grid err={fit_err:.1e}; joint-mode grid err={mode_err:.1e}; "
        f"warm-vs-cold max |dlogL|={worst_warm:.1e}",
    )
    assert ok


def test_reproducibility(tmp_path):
    common = ["simulate", "--seed", str(SEED), "--replicates", "20", "--inner-replicates", "50", "--format", "both"]
    runs = {"serial": 1, "serial-again": 1, "parallel": 2}
    for name, threads in runs.items():
        assert cli_main(common + ["--threads", str(threads), "--output-dir", str(tmp_path / name)]) == 0
        assert cli_main(
            ["simulate", "--experiment", "selection", "--seed", str(SEED), "--replicates", "20",
             "--threads", str(threads), "--output-dir", str(tmp_path / name)]
        ) == 0
    files = ["table1.csv", "table1.json", "selection.csv", "selection.json", "criteria_vs_sigma.csv"]
    ref = {f: (tmp_path / "serial" / f).read_bytes() for f in files}
    ok = all((tmp_path / n / f).read_bytes() == ref[f] for n in runs for f in files)
    record("reproducibility", ok, f"{len(files)} report files byte-identical across serial, repeat and 2-worker runs")
    assert ok
