from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import linear_sum_assignment

from spslab.adjoint import (
    BASIS,
    EigenvalueSeparationError,
    ad_small,
    ad_small_squared,
    adjoint_rep,
    averaged_adjoint,
    cubic_eigenvalues,
    g_map,
    landauer_exponent_exact,
    landauer_resistance_exact,
    landauer_sequence,
    lorentz_residual,
    top_real_eigenvalue,
)
from spslab.enumeration import enumerate_trace
from spslab.linalg import DomainError, from_sl2_coords, inv2
from spslab.models import AndersonSpec, anderson_family
from spslab.normal_form import extract_normal_form, normal_form_from_data


def sl2(a, b, c, d_scale):
    """An SL(2,R) matrix from three free entries (d fixed by the determinant)."""
    a = a if abs(a) > 0.1 else 0.1 + abs(a)
    d = (1 + b * c) / a
    return np.array([[a, b], [c, d]])


entries = st.floats(-3, 3, allow_nan=False)


def coords_in_basis(t):
    """Solve t = sum_j x_j b_j (t traceless)."""
    A = BASIS.reshape(3, 4).T
    x, *_ = np.linalg.lstsq(A, t.reshape(4), rcond=None)
    return x


@given(entries, entries, entries)
@settings(max_examples=200, deadline=None)
def test_adjoint_matches_conjugation(a, b, c):
    T = sl2(a, b, c, 1)
    Ad = adjoint_rep(T)
    for j in range(3):
        np.testing.assert_allclose(Ad[:, j], coords_in_basis(T @ BASIS[j] @ inv2(T)),
                                   atol=1e-9 * (1 + np.abs(T).max() ** 2))


def test_adjoint_example():
    np.testing.assert_allclose(adjoint_rep(np.array([[1.0, 1.0], [0.0, 1.0]])),
                               [[1, 1, 1], [-1, 0.5, -0.5], [1, 0.5, 1.5]])
    with pytest.raises(DomainError):
        adjoint_rep(np.diag([2.0, 1.0]))


@given(entries, entries, entries, entries, entries, entries)
@settings(max_examples=200, deadline=None)
def test_lorentz_and_homomorphism(a, b, c, d, e, f):
    S, T = sl2(a, b, c, 1), sl2(d, e, f, 1)
    scale = (1 + np.abs(S).max()) ** 4 * (1 + np.abs(T).max()) ** 4
    assert lorentz_residual(adjoint_rep(S)) <= 1e-12 * scale
    np.testing.assert_allclose(adjoint_rep(S @ T), adjoint_rep(S) @ adjoint_rep(T),
                               atol=1e-12 * scale)


@given(st.floats(-2, 2), st.floats(-2, 2), st.floats(-2, 2))
def test_small_adjoint(a, b, c):
    P = from_sl2_coords(a, b, c)
    ad = ad_small(P)
    for j in range(3):
        np.testing.assert_allclose(ad[:, j], coords_in_basis(P @ BASIS[j] - BASIS[j] @ P),
                                   atol=1e-12)
    np.testing.assert_allclose(ad_small_squared(P), ad @ ad, atol=1e-12)


@given(entries, entries, entries, st.complex_numbers(max_magnitude=5),
       st.complex_numbers(max_magnitude=5))
@settings(max_examples=200, deadline=None)
def test_norm_identity(a, b, c, w1, w2):
    T = sl2(a, b, c, 1)
    w = np.array([w1, w2])
    lhs = np.linalg.norm(T @ w) ** 2
    rhs = adjoint_rep(T)[2] @ g_map(w)
    assert rhs == pytest.approx(lhs, abs=1e-10 * (1 + lhs))


def test_landauer_sequence_start_and_lambda_zero():
    nf = extract_normal_form(anderson_family(AndersonSpec(-1.0)))
    seq = landauer_sequence(nf, 0.0, 6)
    assert seq[0] == pytest.approx(2.0)
    T0 = inv2(nf.M) @ nf.rotations()[0] @ nf.M
    for n in range(7):
        W = np.linalg.matrix_power(T0, n)
        assert seq[n] == pytest.approx(np.trace(W.T @ W), rel=1e-12)


@pytest.mark.parametrize("E, lam", [(-1.0, 0.1), (0.4, 0.3)])
def test_exact_matches_enumeration(E, lam):
    nf = extract_normal_form(anderson_family(AndersonSpec(E)))
    exact = landauer_resistance_exact(nf, lam, 10)
    assert abs(exact - enumerate_trace(nf, lam, 10)) <= 1e-12 * exact


@given(st.lists(st.floats(-3, 3), min_size=9, max_size=9))
@settings(max_examples=300, deadline=None)
def test_cubic_eigenvalues(vals):
    A = np.array(vals).reshape(3, 3)
    ours = cubic_eigenvalues(A)
    ref = np.linalg.eigvals(A)
    # pair roots by minimum total distance rather than by sort order
    rows, cols = linear_sum_assignment(np.abs(ours[:, None] - ref[None, :]))
    ours, ref = ours[rows], ref[cols]
    # a triple root moves by eps^(1/3) ~ 6e-6 under rounding, in either solver
    scale = 1 + np.abs(A).max()
    assert np.max(np.abs(ours - ref)) <= 1e-4 * scale


def test_top_eigenvalue_separation():
    with pytest.raises(EigenvalueSeparationError):
        top_real_eigenvalue(np.eye(3))
    assert top_real_eigenvalue(np.diag([3.0, 1.0, 2.0])) == pytest.approx(3.0)


def test_landauer_exponent_doubles_lyapunov():
    nf = extract_normal_form(anderson_family(AndersonSpec(-1.0)))
    lam = 0.05
    exact = landauer_exponent_exact(nf, lam)
    assert abs(exact - 2 * lam * lam / 6) <= 0.05 * 2 * lam * lam / 6
    assert landauer_exponent_exact(nf, 0.0) == pytest.approx(0.0, abs=1e-14)
    # the growth of rho(N) approaches mu_3
    seq = landauer_sequence(nf, 0.2, 4000)
    assert math.log(seq[-1] / seq[-2]) == pytest.approx(2 * landauer_exponent_exact(nf, 0.2),
                                                        rel=1e-6)


def test_averaged_adjoint_of_free_rotation():
    nf = normal_form_from_data([1.0], [0.7], [np.zeros((2, 2))])
    ev = np.sort_complex(cubic_eigenvalues(averaged_adjoint(nf, 0.3)))
    ref = np.sort_complex(np.array([1.0, np.exp(1.4j), np.exp(-1.4j)]))
    np.testing.assert_allclose(ev, ref, atol=1e-12)
