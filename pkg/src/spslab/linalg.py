"""Small dense matrices: 2x2 transfer matrices, sl(2,R) and 3x3 adjoints.

Everything here works on plain numpy arrays.  The helpers only validate
shape and finiteness; callers decide which group a matrix is supposed to
live in.
"""

from __future__ import annotations

import math

import numpy as np

DEFAULT_TOL = 1e-10
# below this |q| = |det A| the exp/log formulas switch to the nilpotent branch
NILPOTENT_EPS = 1e-14

J = np.array([[0.0, -1.0], [1.0, 0.0]])
IDENTITY2 = np.eye(2)


class DomainError(ValueError):
    """Input lies outside the domain of a closed-form map."""


def _finite(a: np.ndarray, name: str) -> np.ndarray:
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} has non-finite entries")
    return a


def mat2c(m) -> np.ndarray:
    """Coerce to a finite complex 2x2 array."""
    a = np.asarray(m, dtype=complex)
    if a.shape != (2, 2):
        raise ValueError(f"expected a 2x2 matrix, got shape {a.shape}")
    return _finite(a, "Mat2C")


def mat2r(m) -> np.ndarray:
    """Coerce to a finite real 2x2 array (rejects genuinely complex input)."""
    a = np.asarray(m)
    if np.iscomplexobj(a):
        if np.max(np.abs(a.imag), initial=0.0) > DEFAULT_TOL:
            raise ValueError("Mat2R input has non-negligible imaginary part")
        a = a.real
    a = np.asarray(a, dtype=float)
    if a.shape != (2, 2):
        raise ValueError(f"expected a 2x2 matrix, got shape {a.shape}")
    return _finite(a, "Mat2R")


def mat3r(m) -> np.ndarray:
    a = np.asarray(m, dtype=float)
    if a.shape != (3, 3):
        raise ValueError(f"expected a 3x3 matrix, got shape {a.shape}")
    return _finite(a, "Mat3R")


def rotation(eta: float) -> np.ndarray:
    c, s = math.cos(eta), math.sin(eta)
    return np.array([[c, -s], [s, c]])


def det2(a: np.ndarray) -> float:
    return a[0, 0] * a[1, 1] - a[0, 1] * a[1, 0]


def inv2(a: np.ndarray) -> np.ndarray:
    """Inverse of a 2x2 matrix via the adjugate."""
    d = det2(a)
    if d == 0:
        raise np.linalg.LinAlgError("singular 2x2 matrix")
    return np.array([[a[1, 1], -a[0, 1]], [-a[1, 0], a[0, 0]]]) / d


def check_u11(T, tol: float = DEFAULT_TOL) -> bool:
    """True iff ``T* J T = J`` up to ``tol`` in the max norm."""
    t = mat2c(T)
    residual = t.conj().T @ J @ t - J
    return bool(np.max(np.abs(residual)) <= tol)


def check_sl2r(T, tol: float = DEFAULT_TOL) -> bool:
    """True iff ``T`` is real (within tol) with unit determinant."""
    a = np.asarray(T)
    if a.shape != (2, 2) or not np.all(np.isfinite(a)):
        return False
    if np.iscomplexobj(a):
        if np.max(np.abs(a.imag)) > tol:
            return False
        a = a.real
    return bool(abs(det2(a) - 1.0) <= tol)


def is_traceless(A, tol: float = DEFAULT_TOL) -> bool:
    a = np.asarray(A)
    return bool(abs(a[0, 0] + a[1, 1]) <= tol)


def exp_sl2(A, tol: float = DEFAULT_TOL) -> np.ndarray:
    """Matrix exponential of a traceless real 2x2 matrix.

    With ``q = -det A`` one has ``A @ A = q * I``, so the power series
    collapses to ``c(q) I + s(q) A`` with hyperbolic functions for q > 0,
    trigonometric ones for q < 0 and ``I + A`` when A is nilpotent.
    """
    a = mat2r(A)
    if not is_traceless(a, tol):
        raise DomainError(f"exp_sl2 needs a traceless matrix, trace = {a[0, 0] + a[1, 1]:.3e}")
    q = -det2(a)
    if abs(q) < NILPOTENT_EPS:
        c, s = 1.0, 1.0
    elif q > 0:
        r = math.sqrt(q)
        c, s = math.cosh(r), math.sinh(r) / r
    else:
        r = math.sqrt(-q)
        c, s = math.cos(r), math.sin(r) / r
    return c * IDENTITY2 + s * a


def log_elliptic(T, tol: float = DEFAULT_TOL) -> np.ndarray:
    """Principal logarithm of an elliptic or unipotent element of SL(2,R).

    The traceless part ``B = T - (tr T / 2) I`` satisfies ``det B = sin^2 s``
    for an elliptic element with rotation angle ``s``; using ``atan2`` on
    ``(sqrt(det B), tr T / 2)`` keeps the angle accurate near the identity.
    """
    t = mat2r(T)
    if abs(det2(t) - 1.0) > tol:
        raise DomainError("log_elliptic needs det T = 1")
    half_tr = 0.5 * (t[0, 0] + t[1, 1])
    b = t - half_tr * IDENTITY2
    det_b = det2(b)
    if abs(det_b) < NILPOTENT_EPS and abs(half_tr - 1.0) <= tol:
        return b
    if det_b <= 0 or half_tr <= -1.0 + 0.5 * tol:
        raise DomainError(f"log_elliptic outside the elliptic range (trace = {2 * half_tr:.6g})")
    s = math.atan2(math.sqrt(det_b), half_tr)
    return (s / math.sin(s)) * b


def sl2_coords(P) -> tuple[float, float, float]:
    """Return (a, b, c) for ``P = [[a, b], [c, -a]]``."""
    p = np.asarray(P, dtype=float)
    return float(p[0, 0]), float(p[0, 1]), float(p[1, 0])


def from_sl2_coords(a: float, b: float, c: float) -> np.ndarray:
    return np.array([[a, b], [c, -a]], dtype=float)
