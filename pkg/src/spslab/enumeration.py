"""Exact expectations over all K^N code sequences, for small N.

Two independent routes are provided: explicit matrix products over the
whole code tree, and a breadth-first sweep of the phase dynamics that only
carries angles, weights and accumulated log-norms.
"""

from __future__ import annotations

import math

import numpy as np

from .linalg import inv2
from .normal_form import NormalForm

MAX_LEAVES = 1 << 22


def _check_size(K: int, N: int) -> None:
    if N < 0:
        raise ValueError("N must be non-negative")
    if K ** N > MAX_LEAVES:
        raise ValueError(f"{K}^{N} code sequences is too many to enumerate")


def all_products(nf: NormalForm, lam: float, N: int) -> tuple[np.ndarray, np.ndarray]:
    """Weights and products S_{c_N} ... S_{c_1} (conjugated frame) of every code sequence."""
    mats = nf.step_matrices(lam)
    K = len(mats)
    _check_size(K, N)
    weights = np.ones(1)
    prods = np.eye(2)[None]
    for _ in range(N):
        prods = np.einsum("kij,pjl->kpil", mats, prods).reshape(-1, 2, 2)
        weights = np.outer(nf.weights, weights).ravel()
    return weights, prods


def enumerate_log_norm(nf: NormalForm, lam: float, N: int, theta0: float = 0.0) -> dict:
    """Mean and variance of log ||T(N) e_theta0|| by explicit products."""
    w, prods = all_products(nf, lam, N)
    e = np.array([math.cos(theta0), math.sin(theta0)])
    X = np.log(np.linalg.norm(prods @ e, axis=1))
    mean = float(w @ X)
    return {"mean": mean, "var": float(w @ (X - mean) ** 2)}


def enumerate_trace(nf: NormalForm, lam: float, N: int) -> float:
    """E tr(T(N)^* T(N)) in the original frame by explicit products."""
    w, prods = all_products(nf, lam, N)
    orig = inv2(nf.M) @ prods @ nf.M
    return float(w @ np.einsum("pij,pij->p", orig, orig))


def phase_tree(nf: NormalForm, lam: float, N: int, theta0: float = 0.0) -> dict:
    """Same expectations from the phase dynamics alone.

    Each level maps every frontier angle through every realization, adding
    log ||S e_theta|| to the branch's running log-norm.  Also returns the
    exact expected time average of exp(2ij theta_n), n = 0..N-1, j = 1..4.
    """
    mats = nf.step_matrices(lam)
    K = len(mats)
    _check_size(K, N)
    theta = np.array([theta0])
    w = np.ones(1)
    acc = np.zeros(1)
    moments = np.zeros(4, dtype=complex)
    for _ in range(N):
        z = np.exp(2j * theta)
        moments += [w @ z ** j for j in range(1, 5)]
        c, s = np.cos(theta), np.sin(theta)
        x = mats[:, 0, 0, None] * c + mats[:, 0, 1, None] * s
        y = mats[:, 1, 0, None] * c + mats[:, 1, 1, None] * s
        acc = (acc[None, :] + 0.5 * np.log(x * x + y * y)).ravel()
        theta = np.arctan2(y, x).ravel()
        w = np.outer(nf.weights, w).ravel()
    mean = float(w @ acc)
    return {"mean": mean, "var": float(w @ (acc - mean) ** 2),
            "moments": moments / max(N, 1)}
