"""Critical families of random transfer matrices and their normal form.

A family is critical at lambda = 0 when the unperturbed matrices commute and
are elliptic.  One real conjugator ``M`` then turns every ``T0`` into a
rotation and the perturbation is read off as

    M T(lam) M^-1 = R_eta exp(lam P + lam^2 Q + O(lam^3)).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import combinations
from typing import Callable, Sequence

import numpy as np

from .linalg import (
    DEFAULT_TOL,
    IDENTITY2,
    DomainError,
    check_sl2r,
    det2,
    exp_sl2,
    inv2,
    mat2r,
    rotation,
)

ELLIPTIC_MARGIN = 1e-8
RESONANCE_TOL = 1e-9
WEIGHT_TOL = 1e-12
CONJUGATION_TOL = 1e-8

# central-difference steps for the evaluator fallback
H_FIRST = 1e-4
H_SECOND = 1e-3
DIFF_TOL = 1e-6

V = np.array([1.0, -1.0j]) / math.sqrt(2.0)


class CriticalPointError(ValueError):
    """The family violates the critical-point hypotheses."""

    def __init__(self, diagnostics: "CriticalDiagnostics"):
        self.diagnostics = diagnostics
        super().__init__("; ".join(diagnostics.failures) or "family is not critical")


class NumericDifferentiationError(ValueError):
    pass


@dataclass
class Realization:
    """One member of the random family.

    ``T1``/``T2`` are the first and second lambda-derivatives at 0.  When they
    are missing, ``evaluate(lam)`` is differentiated numerically; when only
    ``T1`` is given the second derivative is taken to be zero.
    """

    weight: float
    T0: np.ndarray
    T1: np.ndarray | None = None
    T2: np.ndarray | None = None
    evaluate: Callable[[float], np.ndarray] | None = None
    value: float | None = None  # disorder value, when the family is a potential model

    def __post_init__(self):
        self.T0 = mat2r(self.T0)
        if self.T1 is not None:
            self.T1 = mat2r(self.T1)
        if self.T2 is not None:
            self.T2 = mat2r(self.T2)
        if self.T1 is None and self.evaluate is None:
            raise ValueError("a realization needs T1 or an evaluator")


@dataclass(frozen=True)
class ContinuousSampler:
    """True-distribution sampler for Monte Carlo.

    Step matrices are ``rotation @ exp(lam * v * generator)`` with ``v`` drawn
    uniformly from ``[-amplitude, amplitude]``, written in the family's own
    frame (before conjugation by ``M``).
    """

    amplitude: float
    rotation: np.ndarray
    generator: np.ndarray
    kind: str = "uniform"


@dataclass
class CriticalFamily:
    realizations: list[Realization]
    name: str = "family"
    sampler: ContinuousSampler | None = None
    expected: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.realizations:
            raise ValueError("empty family")
        w = self.weights
        if np.any(w <= 0):
            raise ValueError("weights must be positive")
        if abs(w.sum() - 1.0) > WEIGHT_TOL:
            raise ValueError(f"weights sum to {w.sum():.15g}, not 1")
        for i, r in enumerate(self.realizations):
            if not check_sl2r(r.T0):
                raise ValueError(f"realization {i}: T0 is not in SL(2,R)")

    @property
    def weights(self) -> np.ndarray:
        return np.array([r.weight for r in self.realizations], dtype=float)

    def __len__(self) -> int:
        return len(self.realizations)


@dataclass
class CriticalDiagnostics:
    passed: bool
    max_commutator: float
    max_abs_trace: float
    moments: np.ndarray  # E exp(2ij eta) for j = 1..4
    resonant: list[int]
    failures: list[str]
    M: np.ndarray | None = None
    eta: np.ndarray | None = None
    sign: np.ndarray | None = None

    def report(self) -> str:
        lines = [
            f"critical point: {'PASS' if self.passed else 'FAIL'}",
            f"max |[T0_s, T0_s']| = {self.max_commutator:.3e}",
            f"max |tr T0_s|       = {self.max_abs_trace:.12g}",
        ]
        for j, m in enumerate(self.moments, start=1):
            flag = "  RESONANT" if j in self.resonant else ""
            lines.append(f"E exp(2i*{j}*eta) = {m.real:+.12f} {m.imag:+.12f}i{flag}")
        lines.extend(f"failure: {f}" for f in self.failures)
        return "\n".join(lines)


@dataclass
class NormalForm:
    M: np.ndarray
    weights: np.ndarray
    eta: np.ndarray  # representative in (0, pi)
    sign: np.ndarray  # M T0 M^-1 = sign * R_eta
    P: np.ndarray  # (K, 2, 2)
    Q: np.ndarray  # (K, 2, 2)
    beta: np.ndarray  # complex (K,)
    sampler: ContinuousSampler | None = None
    name: str = "family"
    values: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.weights)

    def expect(self, x) -> complex:
        """Weighted average over the finite support."""
        return complex(np.sum(self.weights * np.asarray(x)))

    def moment(self, j: int = 1) -> complex:
        return self.expect(np.exp(2j * j * self.eta))

    def rotations(self) -> np.ndarray:
        return np.array([s * rotation(e) for s, e in zip(self.sign, self.eta)])

    def step_matrices(self, lam: float) -> np.ndarray:
        """Conjugated transfer matrices ``sign R_eta exp(lam P + lam^2 Q)``."""
        out = np.empty((len(self), 2, 2))
        for i in range(len(self)):
            gen = lam * self.P[i] + lam * lam * self.Q[i]
            out[i] = self.sign[i] * rotation(self.eta[i]) @ exp_sl2(gen)
        return out

    def eta_constant(self, tol: float = 1e-12) -> bool:
        z = np.exp(2j * self.eta)
        return bool(np.max(np.abs(z - z[0])) <= tol)


def coupling(P) -> complex:
    """``<conj(v)| P |v>`` with ``v = (1, -i)/sqrt 2``; equals a - i(b+c)/2."""
    p = np.asarray(P)
    return complex(V @ p @ V)


def _angle_of_rotation(S: np.ndarray) -> float:
    return math.atan2(S[1, 0] - S[0, 1], S[0, 0] + S[1, 1])


def _canonical_eta(theta: float) -> tuple[float, int]:
    """Map a rotation angle to (eta in (0, pi), sign) with R_theta = sign R_eta."""
    theta = math.remainder(theta, 2 * math.pi)  # (-pi, pi]
    if theta > 0:
        return theta, 1
    return theta + math.pi, -1


def elliptic_conjugator(T0, tol: float = ELLIPTIC_MARGIN) -> np.ndarray:
    """Return the canonical ``M`` (det 1) with ``M T0 M^-1`` a rotation.

    The rotation angle is positive when T0 turns the plane counterclockwise
    in its own conformal frame, otherwise the conjugated matrix is
    ``R_eta`` with ``eta`` in ``(pi, 2 pi)``.  ``M`` is fixed up to a left
    rotation; the representative returned is lower triangular with a
    positive diagonal.
    """
    t = mat2r(T0)
    if abs(det2(t) - 1.0) > DEFAULT_TOL:
        raise DomainError("T0 must have unit determinant")
    half_tr = 0.5 * (t[0, 0] + t[1, 1])
    if abs(half_tr) >= 1.0 - 0.5 * tol:
        raise DomainError(f"T0 is not elliptic (trace = {2 * half_tr:.12g})")
    kappa = complex(half_tr, math.sqrt(1.0 - half_tr * half_tr))
    a, b, c, d = t[0, 0], t[0, 1], t[1, 0], t[1, 1]
    if abs(b) >= abs(c):
        w = np.array([b, kappa - a])
    else:
        w = np.array([kappa - d, c])
    u, up = w.real, w.imag
    B = np.column_stack([up, u])
    if det2(B) < 0:
        B = B @ np.diag([1.0, -1.0])
    M0 = inv2(B) * math.sqrt(det2(B))
    alpha = math.atan2(M0[0, 1], M0[1, 1])
    L = rotation(alpha) @ M0  # zeroes the upper-right entry
    if L[0, 0] < 0:
        L = -L
    L[0, 1] = 0.0
    return L


def verify_critical(family: CriticalFamily, tol: float = DEFAULT_TOL,
                    resonance_tol: float = RESONANCE_TOL) -> CriticalDiagnostics:
    """Check commutation and ellipticity at lambda = 0 and tabulate phase moments."""
    t0 = [r.T0 for r in family.realizations]
    failures: list[str] = []
    max_comm = 0.0
    for (i, a), (j, b) in combinations(enumerate(t0), 2):
        comm = float(np.max(np.abs(a @ b - b @ a)))
        max_comm = max(max_comm, comm)
        if comm > tol:
            failures.append(f"realizations {i} and {j} do not commute (|[T0,T0']| = {comm:.3e})")
    traces = [abs(t[0, 0] + t[1, 1]) for t in t0]
    for i, tr in enumerate(traces):
        if tr >= 2.0 - tol:
            failures.append(f"realization {i} is not elliptic (|tr T0| = {tr:.12g})")

    moments = np.full(4, np.nan + 0j)
    resonant: list[int] = []
    M = eta = sign = None
    elliptic = [i for i, tr in enumerate(traces) if tr < 2.0 - tol]
    if elliptic and not any("commute" in f for f in failures) and len(elliptic) == len(t0):
        M = elliptic_conjugator(t0[0])
        Minv = inv2(M)
        eta = np.empty(len(t0))
        sign = np.empty(len(t0), dtype=int)
        for i, t in enumerate(t0):
            S = M @ t @ Minv
            theta = _angle_of_rotation(S)
            resid = float(np.max(np.abs(S - rotation(theta))))
            if resid > CONJUGATION_TOL:
                failures.append(f"realization {i} is not conjugated to a rotation (residual {resid:.3e})")
            eta[i], sign[i] = _canonical_eta(theta)
        w = family.weights
        moments = np.array([np.sum(w * np.exp(2j * j * eta)) for j in range(1, 5)])
        resonant = [j for j, m in enumerate(moments, start=1) if abs(m - 1.0) <= resonance_tol]

    return CriticalDiagnostics(
        passed=not failures,
        max_commutator=max_comm,
        max_abs_trace=max(traces),
        moments=moments,
        resonant=resonant,
        failures=failures,
        M=M,
        eta=eta,
        sign=sign,
    )


def _numeric_derivatives(f: Callable[[float], np.ndarray]) -> tuple[np.ndarray, np.ndarray, float]:
    def d1(h):
        return (f(h) - f(-h)) / (2 * h)

    def d2(h):
        return (f(h) - 2 * f(0.0) + f(-h)) / (h * h)

    first_half = d1(H_FIRST / 2)
    first = (4 * first_half - d1(H_FIRST)) / 3
    second_half = d2(H_SECOND / 2)
    second = (4 * second_half - d2(H_SECOND)) / 3
    resid = max(np.max(np.abs(first - first_half)), np.max(np.abs(second - second_half)))
    return first, second, float(resid)


def _traceless(a: np.ndarray) -> np.ndarray:
    return a - 0.5 * (a[0, 0] + a[1, 1]) * IDENTITY2


def extract_normal_form(family: CriticalFamily, tol: float = DEFAULT_TOL) -> NormalForm:
    """Compute ``M``, ``eta``, ``P``, ``Q`` and ``beta`` for every realization."""
    diag = verify_critical(family, tol)
    if not diag.passed:
        raise CriticalPointError(diag)
    M = diag.M
    Minv = inv2(M)
    K = len(family)
    P = np.empty((K, 2, 2))
    Q = np.empty((K, 2, 2))
    for i, r in enumerate(family.realizations):
        Rinv = diag.sign[i] * rotation(-diag.eta[i])
        if r.T1 is not None:
            A1 = Rinv @ M @ r.T1 @ Minv
            A2 = Rinv @ M @ r.T2 @ Minv if r.T2 is not None else np.zeros((2, 2))
        else:
            evaluate = r.evaluate

            def frame(lam, evaluate=evaluate, Rinv=Rinv):
                return Rinv @ M @ mat2r(evaluate(lam)) @ Minv

            A1, A2, resid = _numeric_derivatives(frame)
            if resid > DIFF_TOL:
                raise NumericDifferentiationError(
                    f"realization {i}: finite-difference residual {resid:.2e} exceeds {DIFF_TOL:.0e}")
        P[i] = _traceless(A1)
        Q[i] = _traceless(0.5 * (A2 - P[i] @ P[i]))
    beta = np.array([coupling(p) for p in P])
    values = None
    if all(r.value is not None for r in family.realizations):
        values = np.array([r.value for r in family.realizations], dtype=float)
    return NormalForm(
        M=M,
        weights=family.weights,
        eta=diag.eta.copy(),
        sign=diag.sign.copy(),
        P=P,
        Q=Q,
        beta=beta,
        sampler=family.sampler,
        name=family.name,
        values=values,
    )


def normal_form_from_data(weights: Sequence[float], eta: Sequence[float], P: Sequence,
                          Q: Sequence | None = None, name: str = "normal-form") -> NormalForm:
    """Build a NormalForm directly (M = identity), e.g. for property tests."""
    w = np.asarray(weights, dtype=float)
    P = np.asarray(P, dtype=float).reshape(len(w), 2, 2)
    Q = np.zeros_like(P) if Q is None else np.asarray(Q, dtype=float).reshape(len(w), 2, 2)
    eta_arr = np.empty(len(w))
    sign = np.empty(len(w), dtype=int)
    for i, e in enumerate(eta):
        eta_arr[i], sign[i] = _canonical_eta(float(e))
    return NormalForm(
        M=np.eye(2), weights=w, eta=eta_arr, sign=sign, P=P, Q=Q,
        beta=np.array([coupling(p) for p in P]), name=name,
    )
