"""End-to-end acceptance checks, one test per criterion.

Each test records a single PASS/FAIL line (shown in the terminal summary)
before asserting, so the full list is printed even when some fail.
"""

from __future__ import annotations

import cmath
import json
import math

import numpy as np
import pytest
from scipy import stats

from spslab.adjoint import (
    adjoint_rep,
    g_map,
    landauer_exponent_exact,
    landauer_resistance_exact,
    lorentz_residual,
)
from spslab.cli import main
from spslab.enumeration import enumerate_log_norm, enumerate_trace, phase_tree
from spslab.linalg import from_sl2_coords
from spslab.models import AndersonSpec, anderson_family
from spslab.montecarlo import (
    RunConfig,
    estimate_landauer_mc,
    estimate_lyapunov,
    estimate_phase_moment,
    landauer_samples,
    log_norm_samples,
    phase_statistics,
    variance_from_samples,
)
from spslab.normal_form import extract_normal_form, normal_form_from_data
from spslab.perturbation import (
    classify_vanishing,
    coefficient_D,
    quadratic_form,
    quadratic_form_matrix,
)

GRID = [0.05, 0.1, 0.15, 0.2, 0.25, 0.3]


@pytest.fixture(scope="module")
def anderson():
    return extract_normal_form(anderson_family(AndersonSpec(-1.0)))


def p_with_beta(beta: complex) -> np.ndarray:
    return from_sl2_coords(beta.real, -beta.imag, -beta.imag)


# ---------------------------------------------------------------- 1


def test_criterion_1_lyapunov_quadratic_law(anderson, criterion):
    lam = 0.1
    est = estimate_lyapunov(anderson, lam, RunConfig(N=10 ** 6, ensemble=64, seed=2024))
    target = lam ** 2 / 6 + lam ** 4 / 18
    ok = abs(est.value - target) <= 3 * est.stderr
    criterion(1, ok, f"gamma = {est.value:.6e} +- {est.stderr:.1e}, target {target:.6e}")
    assert ok


# ---------------------------------------------------------------- 2, 3


@pytest.fixture(scope="module")
def anderson_sweep(tmp_path_factory):
    """The CLI sweep over the acceptance grid; replicas give both gamma and sigma."""
    out = tmp_path_factory.mktemp("sweep")
    cfg = {
        "model": {"type": "anderson", "energy": -1.0},
        "run": {"N": 10000, "ensemble": 200000, "burn_in": 2000, "seed": 77},
        "sweep": GRID,
        "output": {"estimators": ["lyapunov", "variance"]},
    }
    path = out / "anderson.json"
    path.write_text(json.dumps(cfg))
    code = main(["sweep", str(path), "--out-dir", str(out)])
    assert code == 0
    return json.loads((out / "sweep.json").read_text())


def test_criterion_2_single_parameter_scaling_leading_order(anderson_sweep, criterion):
    fits = anderson_sweep["fits"]
    assert fits["lambdas"] == GRID
    g, g_se = fits["gamma"]["coeffs"][0], fits["gamma"]["stderr"][0]
    s, s_se = fits["sigma"]["coeffs"][0], fits["sigma"]["stderr"][0]
    near_g = abs(g - 1 / 6) <= 0.05 / 6
    near_s = abs(s - 1 / 6) <= 0.05 / 6
    combined = math.hypot(g_se, s_se)
    equal = abs(g - s) <= 3 * combined
    ok = near_g and near_s and equal
    criterion(2, ok, f"lam^2 coeffs gamma {g:.5f} +- {g_se:.1e}, sigma {s:.5f} +- {s_se:.1e}, "
                     f"|diff| = {abs(g - s):.1e} vs 3 x {combined:.1e}")
    assert ok


def test_criterion_3_fourth_order_violation(anderson_sweep, criterion):
    fit = anderson_sweep["fits"]["sps_gap"]
    c4, se = fit["coeffs"][0], fit["stderr"][0]
    ok = abs(c4 - 1 / 36) <= 0.5 / 36
    criterion(3, ok, f"lam^4 coeff of gamma - sigma = {c4:.5f} +- {se:.1e}, "
                     f"target {1 / 36:.5f} +- 50%")
    assert ok


# ---------------------------------------------------------------- 4


def test_criterion_4_landauer_doubling(anderson, criterion):
    lam = 0.05
    D = coefficient_D(anderson)
    exact = landauer_exponent_exact(anderson, lam)
    part_exact = abs(exact - 2 * D * lam ** 2) <= 0.05 * 2 * D * lam ** 2

    lam_mc, N = 0.1, 200
    mc = estimate_landauer_mc(anderson, lam_mc, N, 16384, seed=31)
    half_log_mu3 = landauer_exponent_exact(anderson, lam_mc)
    finite_n = math.log(landauer_resistance_exact(anderson, lam_mc, N)) / (2 * N)
    # the O(1/N) allowance is the exact finite-N offset of log rho(N) / 2N from its limit
    offset = abs(finite_n - half_log_mu3)
    part_mc = abs(mc.value - half_log_mu3) <= 3 * mc.stderr + offset
    part_finite = abs(mc.value - finite_n) <= 3 * mc.stderr

    enum = enumerate_trace(anderson, lam_mc, 10)
    adj = landauer_resistance_exact(anderson, lam_mc, 10)
    part_enum = abs(enum - adj) <= 1e-12 * adj

    ok = part_exact and part_mc and part_finite and part_enum
    criterion(4, ok, f"exact {exact:.6e} vs 2 D lam^2 {2 * D * lam ** 2:.6e}; "
                     f"MC {mc.value:.5e} +- {mc.stderr:.1e} vs 1/2 log mu3 {half_log_mu3:.5e} "
                     f"(O(1/N) offset {offset:.2e}, finite-N exact {finite_n:.5e}); "
                     f"N=10 enumeration gap {abs(enum - adj) / adj:.1e}")
    assert ok


# ---------------------------------------------------------------- 5


def random_sl2(rng, n):
    out = []
    while len(out) < n:
        a, b, c = rng.normal(scale=1.5, size=3)
        if abs(a) < 0.1:
            continue
        out.append(np.array([[a, b], [c, (1 + b * c) / a]]))
    return out


def test_criterion_5_adjoint_properties(criterion):
    rng = np.random.default_rng(5)
    mats = random_sl2(rng, 1001)
    v = np.array([1.0, -1.0j]) / math.sqrt(2)
    lor = rep = nw = nv = 0.0
    for S, T in zip(mats[:-1], mats[1:]):
        A = adjoint_rep(T)
        scale = np.abs(T).max() ** 2
        lor = max(lor, lorentz_residual(A) / scale ** 2)
        prod = adjoint_rep(S @ T) - adjoint_rep(S) @ A
        rep = max(rep, float(np.abs(prod).max()) / (np.abs(S).max() * np.abs(T).max()) ** 2)
        w = rng.normal(size=2) + 1j * rng.normal(size=2)
        lhs = np.linalg.norm(T @ w) ** 2
        nw = max(nw, abs(A[2] @ g_map(w) - lhs) / lhs)
        lhs = np.linalg.norm(T @ v) ** 2
        nv = max(nv, abs(A[2, 2] - lhs) / lhs, abs(lhs - 0.5 * np.trace(T.T @ T)) / lhs)
    ok = lor < 1e-9 and rep < 1e-9 and nw < 1e-10 and nv < 1e-10
    criterion(5, ok, f"1000 matrices: Lorentz {lor:.1e}, representation {rep:.1e}, "
                     f"||Tw||^2 {nw:.1e}, ||Tv||^2 {nv:.1e} (relative to entry scale)")
    assert ok


# ---------------------------------------------------------------- 6


def random_normal_form(rng):
    while True:
        K = int(rng.integers(1, 6))
        w = rng.uniform(0.05, 1.0, K)
        w /= w.sum()
        eta = rng.uniform(0.0, math.pi, K)
        m = [np.sum(w * np.exp(2j * j * eta)) for j in (1, 2)]
        if min(abs(1 - x) for x in m) > 0.05:
            P = [from_sl2_coords(*rng.normal(size=3)) for _ in range(K)]
            return normal_form_from_data(w, eta, P)


def test_criterion_6_positivity(criterion):
    rng = np.random.default_rng(6)
    min_D = min(coefficient_D(random_normal_form(rng)) for _ in range(1000))
    part_pos = min_D >= -1e-12

    cases = []
    for _ in range(20):
        eta = float(rng.uniform(0.1, 3.0))
        beta = complex(*rng.normal(size=2))
        K = int(rng.integers(1, 4))
        nf = normal_form_from_data(np.full(K, 1 / K), [eta] * K, [p_with_beta(beta)] * K)
        cases.append((coefficient_D(nf), classify_vanishing(nf), "case_i"))
        K = int(rng.integers(2, 5))
        etas = rng.uniform(0.1, 3.0, K)
        c = complex(*rng.normal(size=2))
        nf = normal_form_from_data(np.full(K, 1 / K), etas,
                                   [p_with_beta(c * (1 - cmath.exp(2j * e))) for e in etas])
        cases.append((coefficient_D(nf), classify_vanishing(nf), "case_ii"))
    part_cases = all(abs(D) <= 1e-12 and got == want for D, got, want in cases)

    # form matrix on span{psi1, psi2}: positive semi-definite, and its determinant
    # compared with 2|s|^2 / |1 - s|^2, s = <psi1|psi2>
    min_eig, det_gap, rep_gap, max_det = math.inf, 0.0, 0.0, 0.0
    for _ in range(1000):
        K = int(rng.integers(2, 6))
        p = rng.uniform(0.05, 1.0, K)
        p /= p.sum()
        eta = rng.uniform(0.0, math.pi, K)
        psi1 = np.sqrt(p)
        psi2 = np.sqrt(p) * np.exp(2j * eta)
        if abs(np.vdot(psi1, psi2)) > 0.95:
            continue
        Q = quadratic_form_matrix(psi1, psi2)
        s = Q.overlap
        min_eig = min(min_eig, Q.min_eigenvalue)
        max_det = max(max_det, abs(Q.det))
        det_gap = max(det_gap, abs(Q.det - 2 * abs(s) ** 2 / abs(1 - s) ** 2))
        # the matrix does represent the form, so any determinant gap is in the closed form
        x = rng.normal(size=2) + 1j * rng.normal(size=2)
        e2 = (psi2 - s * psi1) / math.sqrt(1 - abs(s) ** 2)
        psi = x[0] * psi1 + x[1] * e2
        rep_gap = max(rep_gap, abs(quadratic_form(psi, psi1, psi2)
                                   - float(np.real(np.conj(x) @ Q.matrix @ x))))
    part_psd = min_eig >= -1e-12 and rep_gap <= 1e-10
    part_det = det_gap <= 1e-12

    ok = part_pos and part_cases and part_psd and part_det
    criterion(6, ok, f"min D over 1000 forms {min_D:.2e}; {len(cases)} constructed case (i)/(ii) "
                     f"families {'ok' if part_cases else 'WRONG'}; form matrices PSD "
                     f"(min eigenvalue {min_eig:.1e}, representation gap {rep_gap:.1e}); "
                     f"max |det| {max_det:.1e}, so det vs 2|s|^2/|1-s|^2 max gap {det_gap:.3e}")
    assert part_pos and part_cases and part_psd
    assert part_det, "restricted form matrix is singular; the closed-form determinant is not"


# ---------------------------------------------------------------- 7


def test_criterion_7_clt_normality(anderson, criterion):
    lam = 0.2
    target = lam ** 2 / 6 + lam ** 4 / 36
    attempts = []
    for seed in (700, 701):  # one documented retry on a fresh seed
        X = log_norm_samples(anderson, lam, RunConfig(N=10 ** 5, ensemble=1024, burn_in=2000,
                                                      seed=seed))
        var = variance_from_samples(X, 10 ** 5)
        p = stats.kstest(var.diagnostics["standardized"], "norm").pvalue
        attempts.append((seed, p, var))
        if p >= 0.01:
            break
    seed, p, var = attempts[-1]
    var_ok = abs(var.value - target) <= 3 * var.stderr
    ok = p >= 0.01 and var_ok
    tries = ", ".join(f"seed {s}: p = {q:.3f}" for s, q, _ in attempts)
    criterion(7, ok, f"KS normality {tries}; sigma = {var.value:.4e} +- {var.stderr:.1e} "
                     f"vs {target:.4e}")
    assert ok


# ---------------------------------------------------------------- 8


def test_criterion_8_phase_moment_law(anderson, criterion):
    k = math.pi / 3
    parts = []
    for lam in (0.05, 0.1):
        est = estimate_phase_moment(anderson, lam, 1, RunConfig(N=10 ** 6, ensemble=64,
                                                                burn_in=20000, seed=8))
        pred = lam ** 2 * np.mean(np.abs(anderson.beta) ** 2) / abs(1 - cmath.exp(-2j * k))
        good = abs(abs(est.value) - pred) <= 3 * est.stderr + 5 * lam ** 3
        parts.append((lam, abs(est.value), pred, good))

    # first-order law on a non-centered family; two lambdas eliminate the lambda^2 term
    nf = normal_form_from_data([0.5, 0.5], [0.4, 2.0], [p_with_beta(1.0), p_with_beta(0.2)])
    z = np.exp(2j * nf.eta)
    slope_pred = nf.expect(np.conj(nf.beta) * z) / (1 - nf.expect(z))
    l1, l2 = 0.02, 0.04
    I1, I2 = (estimate_phase_moment(nf, lam, 1, RunConfig(N=10 ** 6, ensemble=64,
                                                          burn_in=20000, seed=9))
              for lam in (l1, l2))
    f1, f2 = l2 ** 2 / (l1 * l2 * (l2 - l1)), l1 ** 2 / (l1 * l2 * (l2 - l1))
    slope = f1 * I1.value - f2 * I2.value
    se_re = math.hypot(f1 * I1.stderr_re, f2 * I2.stderr_re)
    se_im = math.hypot(f1 * I1.stderr_im, f2 * I2.stderr_im)
    slope_ok = (abs(slope.real - slope_pred.real) <= 3 * se_re
                and abs(slope.imag - slope_pred.imag) <= 3 * se_im)

    ok = all(p[3] for p in parts) and slope_ok
    detail = "; ".join(f"lam {lam}: |I1| {m:.4e} vs {pr:.4e}" for lam, m, pr, _ in parts)
    criterion(8, ok, f"{detail}; synthetic slope {slope:.4f} (+- {se_re:.1e}, {se_im:.1e}) "
                     f"vs {slope_pred:.4f}")
    assert ok


# ---------------------------------------------------------------- 9


def test_criterion_9_brute_force_oracle(anderson, criterion):
    lam, N, theta0 = 0.5, 12, 0.3
    prods = enumerate_log_norm(anderson, lam, N, theta0)
    tree = phase_tree(anderson, lam, N, theta0)
    rho = enumerate_trace(anderson, lam, N)
    rho_adj = landauer_resistance_exact(anderson, lam, N)
    exact_ok = (abs(prods["mean"] - tree["mean"]) <= 1e-12
                and abs(prods["var"] - tree["var"]) <= 1e-12
                and abs(rho - rho_adj) <= 1e-12 * rho)

    M = 200000
    cfg = RunConfig(N=N, ensemble=M, seed=99, theta0=theta0, renorm_every=4)
    X = log_norm_samples(anderson, lam, cfg)
    mean_se = X.std(ddof=1) / math.sqrt(M)
    var = variance_from_samples(X, 1)
    tr = np.exp(landauer_samples(anderson, lam, N, M, seed=99))
    tr_se = tr.std(ddof=1) / math.sqrt(M)
    moments = phase_statistics(anderson, lam, cfg).moments
    mc_checks = {
        "E log-norm": abs(X.mean() - prods["mean"]) <= 3 * mean_se,
        "Var log-norm": abs(var.value - prods["var"]) <= 3 * var.stderr,
        "E tr": abs(tr.mean() - rho) <= 3 * tr_se,
        "phase moments": all(m.within(tree["moments"][j]) for j, m in enumerate(moments)),
    }
    ok = exact_ok and all(mc_checks.values())
    criterion(9, ok, f"4096 codes: routes agree to 1e-12 ({exact_ok}); MC within 3 se: "
                     + ", ".join(f"{k} {v}" for k, v in mc_checks.items()))
    assert ok
