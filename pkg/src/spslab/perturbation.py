"""Closed-form weak-disorder predictions built from a NormalForm."""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass

import numpy as np

from .normal_form import NormalForm, RESONANCE_TOL

VANISHING_TOL = 1e-8
NILPOTENT_LOWER = np.array([[0.0, 0.0], [1.0, 0.0]])


class ResonanceError(ValueError):
    """A phase moment E exp(2ij eta) sits at 1; the expansion breaks down."""

    def __init__(self, j: int, moment: complex):
        self.j = j
        self.moment = moment
        super().__init__(f"resonant phase moment: E exp(2i*{j}*eta) = {moment:.12g}")


class VanishingClassificationError(ValueError):
    pass


def check_resonance(nf: NormalForm, orders, tol: float = RESONANCE_TOL) -> None:
    for j in orders:
        m = nf.moment(j)
        if abs(m - 1.0) <= tol:
            raise ResonanceError(j, m)


def _correlation_term(nf: NormalForm) -> complex:
    z = np.exp(2j * nf.eta)
    s = nf.expect(z)
    return nf.expect(nf.beta) * nf.expect(np.conj(nf.beta) * z) / (1.0 - s)


def coefficient_D(nf: NormalForm) -> float:
    """Coefficient of lambda^2 in the Lyapunov exponent, phase correlations included."""
    check_resonance(nf, (1,))
    return 0.5 * nf.expect(np.abs(nf.beta) ** 2).real + _correlation_term(nf).real


def classify_vanishing(nf: NormalForm, tol: float = VANISHING_TOL) -> str:
    """Return ``positive``, ``case_i`` or ``case_ii``.

    ``case_i``: exp(2i eta) and beta are both deterministic.  ``case_ii``:
    beta = c (1 - exp(2i eta)) for one complex c, i.e. the first-order
    perturbation is a coboundary of the rotation cocycle.
    """
    D = coefficient_D(nf)
    if D > tol:
        return "positive"
    z = np.exp(2j * nf.eta)
    if np.max(np.abs(z - z[0])) <= tol and np.max(np.abs(nf.beta - nf.beta[0])) <= tol:
        return "case_i"
    x = 1.0 - z
    w = nf.weights
    c = np.sum(w * np.conj(x) * nf.beta) / np.sum(w * np.abs(x) ** 2)
    resid = math.sqrt(np.sum(w * np.abs(nf.beta - c * x) ** 2))
    if resid <= tol:
        return "case_ii"
    raise VanishingClassificationError(
        f"D = {D:.3e} is below tolerance but beta is neither constant nor a multiple of "
        f"1 - exp(2i eta) (fit residual {resid:.3e})")


@dataclass
class QuadraticFormMatrix:
    matrix: np.ndarray
    overlap: complex

    @property
    def det(self) -> float:
        return float(np.linalg.det(self.matrix).real)

    @property
    def min_eigenvalue(self) -> float:
        return float(np.linalg.eigvalsh(self.matrix)[0])

    @property
    def trace(self) -> float:
        return float(np.trace(self.matrix).real)

    def kernel(self, tol: float = 1e-9) -> np.ndarray | None:
        vals, vecs = np.linalg.eigh(self.matrix)
        return vecs[:, 0] if abs(vals[0]) <= tol else None


def quadratic_form(psi, psi1, psi2) -> float:
    """Evaluate the phase-correlation quadratic form at ``psi``.

    Q(psi) = <psi|psi> + <psi|psi2><psi1|psi>/(1 - <psi1|psi2>) + c.c.
    With psi1 = 1, psi2 = exp(2i eta) in L^2(p) and psi = beta this is 2D.
    """
    psi, psi1, psi2 = (np.asarray(x, dtype=complex) for x in (psi, psi1, psi2))
    s = np.vdot(psi1, psi2)
    cross = np.vdot(psi, psi2) * np.vdot(psi1, psi) / (1.0 - s)
    return float((np.vdot(psi, psi) + 2.0 * cross.real).real)


def quadratic_form_matrix(psi1, psi2, tol: float = 1e-10) -> QuadraticFormMatrix:
    """Matrix of the form restricted to span{psi1, psi2}.

    Basis: e1 = psi1, e2 = (psi2 - <psi1|psi2> psi1)/sqrt(1 - |<psi1|psi2>|^2).
    Entry (i, j) is the sesquilinear coefficient of conj(x_i) x_j.
    """
    psi1 = np.asarray(psi1, dtype=complex)
    psi2 = np.asarray(psi2, dtype=complex)
    for name, p in (("psi1", psi1), ("psi2", psi2)):
        if abs(np.linalg.norm(p) - 1.0) > tol:
            raise ValueError(f"{name} is not a unit vector")
    s = complex(np.vdot(psi1, psi2))
    if abs(s) >= 1.0 - 1e-9:
        raise ValueError("psi1 and psi2 are (nearly) parallel")
    t = math.sqrt(1.0 - abs(s) ** 2)
    one_s = 1.0 - s
    q11 = (1.0 - abs(s) ** 2) / abs(one_s) ** 2
    q12 = t / one_s.conjugate()
    q21 = t / one_s
    return QuadraticFormMatrix(np.array([[q11, q12], [q21, 1.0]], dtype=complex), s)


@dataclass
class PerturbationReport:
    D: float
    vanishing: str
    mu3_coeff: float

    @property
    def gamma2(self) -> float:
        return self.D

    @property
    def sigma2(self) -> float:
        return self.D

    @property
    def landauer2(self) -> float:
        return 2.0 * self.D


def perturbation_report(nf: NormalForm) -> PerturbationReport:
    D = coefficient_D(nf)
    mu3_coeff = 2.0 * (nf.expect(np.abs(nf.beta) ** 2).real + 2.0 * _correlation_term(nf).real)
    return PerturbationReport(D=D, vanishing=classify_vanishing(nf), mu3_coeff=mu3_coeff)


@dataclass
class ExponentPrediction:
    gamma: float
    sigma: float
    landauer: float
    D: float
    sigma_hypothesis: bool  # D > 0, required for the variance statement
    error_order: int = 3


def predict_exponents(nf: NormalForm, lam: float) -> ExponentPrediction:
    D = coefficient_D(nf)
    l2 = lam * lam
    return ExponentPrediction(gamma=D * l2, sigma=D * l2, landauer=2.0 * D * l2, D=D,
                              sigma_hypothesis=D > VANISHING_TOL)


def mu3_expansion(nf: NormalForm, lam: float) -> float:
    """Largest eigenvalue of the averaged adjoint to order lambda^2."""
    check_resonance(nf, (1,))
    bracket = nf.expect(np.abs(nf.beta) ** 2).real + 2.0 * _correlation_term(nf).real
    return 1.0 + 2.0 * lam * lam * bracket


def is_anderson_frame(nf: NormalForm, tol: float = 1e-9) -> bool:
    """Constant rotation, Q = 0 and every P a multiple of [[0, 0], [1, 0]]."""
    if not nf.eta_constant(tol) or np.max(np.abs(nf.Q), initial=0.0) > tol:
        return False
    for p in nf.P:
        if abs(p[0, 0]) > tol or abs(p[0, 1]) > tol or abs(p[1, 1]) > tol:
            return False
    return True


def predict_phase_moment(nf: NormalForm, lam: float, j: int = 1) -> complex:
    """Leading prediction for E_nu exp(2ij theta).

    j = 1 uses the first-order formula; in the Anderson frame with centered
    couplings the order-lambda^2 terms for j = 1, 2 are added.
    """
    if j not in (1, 2, 3, 4):
        raise ValueError("j must be in 1..4")
    check_resonance(nf, (1, 2))
    z = np.exp(2j * nf.eta)
    value = 0j
    if j == 1:
        value += lam * nf.expect(np.conj(nf.beta) * z) / (1.0 - nf.expect(z))
    if j in (1, 2) and is_anderson_frame(nf) and abs(nf.expect(nf.beta)) <= 1e-12:
        k = float(nf.eta[0])
        value += lam * lam * nf.expect(np.abs(nf.beta) ** 2).real / (1.0 - cmath.exp(-2j * j * k))
    return complex(value)


@dataclass
class CorrelationPrediction:
    J: complex  # leading E_2 sum_{m>=1} (exp(2ij theta_m) - nu_j)
    gamma_sum: float  # leading E_2 sum_{m>=2} (gamma_m - gamma)


def predict_correlation_sum(nf: NormalForm, theta0: float, eta1: float, lam: float = 0.0,
                            j: int = 1) -> CorrelationPrediction:
    """Leading small-lambda value of the correlation sums started at (theta0, eta1).

    J_j is exp(2ij(theta0 + eta1)) / (1 - E exp(2ij eta)), the exact lambda = 0
    sum of the free rotation.
    """
    check_resonance(nf, sorted({1, j}))
    D = coefficient_D(nf)
    if D <= VANISHING_TOL:
        raise ValueError(f"correlation sums need D > 0 (D = {D:.3e})")
    phase = cmath.exp(2j * j * (theta0 + eta1))
    J = phase / (1.0 - nf.moment(j))
    base = cmath.exp(2j * (theta0 + eta1)) / (1.0 - nf.moment(1))
    gamma_sum = lam * (nf.expect(nf.beta) * base).real
    return CorrelationPrediction(J=complex(J), gamma_sum=float(gamma_sum))


@dataclass
class AndersonOrders:
    gamma2_coeff: float
    gamma4_coeff: float
    sigma4_coeff: float
    gamma: float
    sigma: float
    resonant: tuple[int, ...] = ()  # j in {3, 4} with exp(2ijk) = 1: fourth order unreliable

    @property
    def sps_gap(self) -> float:
        return self.gamma - self.sigma


def anderson_orders(k: float, m2: float, m4: float, lam: float) -> AndersonOrders:
    """Fourth-order Lyapunov exponent and variance of the Anderson model.

    ``m2`` and ``m4`` are E(v^2) and E(v^4) of the centered potential; the
    energy enters through E = -2 cos k.  Resonances at j = 1, 2 invalidate
    even the leading order and raise; those at j = 3, 4 only affect the
    fourth-order coefficients and are reported in ``resonant``.
    """
    resonant = []
    for j in range(1, 5):
        if abs(cmath.exp(2j * j * k) - 1.0) <= RESONANCE_TOL:
            if j <= 2:
                raise ResonanceError(j, cmath.exp(2j * j * k))
            resonant.append(j)
    s2 = math.sin(k) ** 2
    b2 = m2 / (4.0 * s2)
    b4 = m4 / (16.0 * s2 * s2)
    g2 = 0.5 * b2
    g4 = 0.75 * b2 * b2 - 0.25 * b4
    s4 = 0.375 * b2 * b2 - 0.125 * b4
    l2 = lam * lam
    return AndersonOrders(gamma2_coeff=g2, gamma4_coeff=g4, sigma4_coeff=s4,
                          gamma=g2 * l2 + g4 * l2 * l2, sigma=g2 * l2 + s4 * l2 * l2,
                          resonant=tuple(resonant))
