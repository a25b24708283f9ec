"""Adjoint representation SL(2,R) -> SO(2,1) and exact averaged Landauer resistance.

Coordinates are taken in the basis
    b1 = [[1, 0], [0, -1]],  b2 = [[0, 1], [1, 0]],  b3 = [[0, -1], [1, 0]],
in which the invariant form is Gamma = diag(1, 1, -1).
"""

from __future__ import annotations

import cmath
import math

import numpy as np

from .linalg import DEFAULT_TOL, DomainError, det2, inv2, mat2r, sl2_coords
from .normal_form import NormalForm

GAMMA21 = np.diag([1.0, 1.0, -1.0])
E3 = np.array([0.0, 0.0, 1.0])
BASIS = np.array([
    [[1.0, 0.0], [0.0, -1.0]],
    [[0.0, 1.0], [1.0, 0.0]],
    [[0.0, -1.0], [1.0, 0.0]],
])

IMAG_TOL = 1e-10
SEPARATION_TOL = 1e-6


class EigenvalueSeparationError(RuntimeError):
    """The averaged adjoint has no isolated real top eigenvalue."""


def adjoint_rep(T, tol: float = DEFAULT_TOL) -> np.ndarray:
    """3x3 matrix of ``t -> T t T^-1`` in the basis (b1, b2, b3)."""
    t = mat2r(T)
    if abs(det2(t) - 1.0) > tol:
        raise DomainError(f"adjoint_rep needs det T = 1, got {det2(t):.15g}")
    a, b, c, d = t[0, 0], t[0, 1], t[1, 0], t[1, 1]
    return np.array([
        [a * d + b * c, d * b - a * c, a * c + b * d],
        [d * c - a * b, 0.5 * (d * d - b * b - c * c + a * a), 0.5 * (d * d - b * b + c * c - a * a)],
        [d * c + a * b, 0.5 * (d * d + b * b - c * c - a * a), 0.5 * (d * d + b * b + c * c + a * a)],
    ])


def lorentz_residual(A) -> float:
    """max |A^T Gamma A - Gamma|; zero for elements of O(2,1)."""
    A = np.asarray(A, dtype=float)
    return float(np.max(np.abs(A.T @ GAMMA21 @ A - GAMMA21)))


def ad_small(P) -> np.ndarray:
    """Matrix of ``s -> [P, s]`` for traceless ``P``."""
    a, b, c = sl2_coords(P)
    return np.array([
        [0.0, b - c, b + c],
        [c - b, 0.0, -2.0 * a],
        [b + c, -2.0 * a, 0.0],
    ])


def ad_small_squared(P) -> np.ndarray:
    a, b, c = sl2_coords(P)
    return np.array([
        [4 * b * c, -2 * a * (b + c), 2 * a * (c - b)],
        [-2 * a * (b + c), 4 * a * a - (c - b) ** 2, c * c - b * b],
        [2 * a * (b - c), b * b - c * c, (b + c) ** 2 + 4 * a * a],
    ])


def g_map(w) -> np.ndarray:
    """Vector in R^3 with ``||T w||^2 = <e3| Ad_T |g(w)>``."""
    w1, w2 = np.asarray(w, dtype=complex)
    return np.array([
        2.0 * (w1 * np.conj(w2)).real,
        abs(w2) ** 2 - abs(w1) ** 2,
        abs(w1) ** 2 + abs(w2) ** 2,
    ])


def averaged_adjoint(nf: NormalForm, lam: float) -> np.ndarray:
    mats = nf.step_matrices(lam)
    return np.einsum("k,kij->ij", nf.weights, np.array([adjoint_rep(m) for m in mats]))


def _boundary_vectors(M: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    left = adjoint_rep(inv2(M)).T @ E3
    right = adjoint_rep(M) @ E3
    return left, right


def landauer_sequence(nf: NormalForm, lam: float, N: int) -> np.ndarray:
    """rho(n) = E tr(T(n)^* T(n)) for n = 0..N by repeated 3x3 mat-vec."""
    if N < 0:
        raise ValueError("N must be non-negative")
    A = averaged_adjoint(nf, lam)
    left, x = _boundary_vectors(nf.M)
    out = np.empty(N + 1)
    out[0] = 2.0 * left @ x
    for n in range(1, N + 1):
        x = A @ x
        out[n] = 2.0 * left @ x
    return out


def landauer_resistance_exact(nf: NormalForm, lam: float, N: int) -> float:
    if N < 1:
        raise ValueError("N must be a positive integer")
    return float(landauer_sequence(nf, lam, N)[-1])


def _char_poly(A: np.ndarray) -> tuple[float, float, float]:
    """Coefficients (a, b, c) of x^3 + a x^2 + b x + c."""
    tr = np.trace(A)
    minors = (A[0, 0] * A[1, 1] - A[0, 1] * A[1, 0]
              + A[0, 0] * A[2, 2] - A[0, 2] * A[2, 0]
              + A[1, 1] * A[2, 2] - A[1, 2] * A[2, 1])
    return -float(tr), float(minors), -float(np.linalg.det(A))


def _newton(coeffs, x, steps: int = 3):
    """A few Newton steps, each kept only if it lowers the residual."""
    a, b, c = coeffs

    def f(z):
        return ((z + a) * z + b) * z + c

    fx = f(x)
    for _ in range(steps):
        df = (3 * x + 2 * a) * x + b
        if df == 0:
            break
        y = x - fx / df
        fy = f(y)
        if abs(fy) >= abs(fx):
            break
        x, fx = y, fy
    return x


def _cubic_roots(a: float, b: float, c: float) -> list[complex]:
    """Roots of x^3 + a x^2 + b x + c with coefficients of order one."""
    p = b - a * a / 3.0
    q = 2.0 * a ** 3 / 27.0 - a * b / 3.0 + c
    shift = -a / 3.0
    disc = (q / 2.0) ** 2 + (p / 3.0) ** 3
    if disc > 0:
        sq = math.sqrt(disc)
        u = np.cbrt(-q / 2.0 + sq)
        v = np.cbrt(-q / 2.0 - sq)
        r = float(u + v) + shift
    elif p * math.sqrt(-p / 3.0) == 0.0:
        r = float(np.cbrt(-q)) + shift
    else:
        m = 2.0 * math.sqrt(-p / 3.0)
        arg = max(-1.0, min(1.0, 3.0 * q / (p * m)))
        r = m * math.cos(math.acos(arg) / 3.0) + shift
    r = _newton((a, b, c), r)
    # x^2 + (a + r) x + (b + r (a + r)) is the deflated quadratic
    bb = a + r
    cc = b + r * bb
    d = cmath.sqrt(bb * bb - 4.0 * cc)
    roots = [complex(r), (-bb + d) / 2.0, (-bb - d) / 2.0]
    return [complex(_newton((a, b, c), z)) for z in roots]


def cubic_eigenvalues(A) -> np.ndarray:
    """Eigenvalues of a real 3x3 matrix from the characteristic cubic.

    The cubic is rescaled so its coefficients are of order one.  One real
    root comes from Cardano's or the trigonometric formula, the other two
    from the deflated quadratic; each is polished by guarded Newton steps.
    """
    A = np.asarray(A, dtype=float)
    a, b, c = _char_poly(A)
    size = max(abs(a), math.sqrt(abs(b)), abs(c) ** (1.0 / 3.0))
    if size == 0.0:
        return np.zeros(3, dtype=complex)
    # a power of two keeps the rescaling exact and avoids underflow in scale**3
    scale = math.ldexp(1.0, math.frexp(size)[1])
    roots = _cubic_roots(a / scale, b / scale / scale, c / scale / scale / scale)
    return scale * np.array(roots)


def top_real_eigenvalue(A) -> float:
    """Real eigenvalue with largest real part, isolated from the others."""
    ev = cubic_eigenvalues(A)
    real = [i for i, z in enumerate(ev) if abs(z.imag) < IMAG_TOL]
    if not real:
        raise EigenvalueSeparationError("no real eigenvalue found")
    i = max(real, key=lambda i: ev[i].real)
    others = np.delete(ev, i)
    gap = float(np.min(np.abs(others - ev[i])))
    if gap <= SEPARATION_TOL:
        raise EigenvalueSeparationError(
            f"top eigenvalue {ev[i].real:.12g} is not separated (gap {gap:.2e})")
    return float(ev[i].real)


def landauer_exponent_exact(nf: NormalForm, lam: float) -> float:
    """Growth rate of E tr(T^* T) per 2N steps: half the log of mu_3."""
    mu3 = top_real_eigenvalue(averaged_adjoint(nf, lam))
    if mu3 <= 0:
        raise EigenvalueSeparationError(f"top eigenvalue {mu3} is not positive")
    return 0.5 * math.log(mu3)
