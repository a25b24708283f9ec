"""Numba kernels for the Monte Carlo engine.

Randomness is Philox4x32-10 used as a pure function of
(key = seed, counter = (draw block, chain, stream)), so every chain owns an
independent, addressable stream and results do not depend on how chains are
scheduled over threads.

Step-matrix modes:
    0  discrete family, code drawn from cumulative weights
    1  continuous sampler, ``rot @ exp(lam * v * gen)`` with v ~ U[-amp, amp]
    2  codes supplied by the caller
"""

from __future__ import annotations

import math
import os

# the TBB build in common images is too old for numba; skip straight to OpenMP
os.environ.setdefault("NUMBA_THREADING_LAYER", "omp")

import numba as nb  # noqa: E402
import numpy as np  # noqa: E402

MASK32 = np.uint64(0xFFFFFFFF)
PHILOX_M0 = np.uint64(0xD2511F53)
PHILOX_M1 = np.uint64(0xCD9E8D57)
PHILOX_W0 = np.uint64(0x9E3779B9)
PHILOX_W1 = np.uint64(0xBB67AE85)
TWO_M32 = 2.0 ** -32
RENORM_LIMIT = 1e200  # squared norm; forces renormalization past norm 1e100
TWO_PI = 2.0 * math.pi


@nb.njit(inline="always", cache=True)
def philox4x32(c0, c1, c2, c3, k0, k1):
    for _ in range(10):
        p0 = PHILOX_M0 * c0
        p1 = PHILOX_M1 * c2
        c0, c1, c2, c3 = (((p1 >> np.uint64(32)) ^ c1 ^ k0) & MASK32, p1 & MASK32,
                          ((p0 >> np.uint64(32)) ^ c3 ^ k1) & MASK32, p0 & MASK32)
        k0 = (k0 + PHILOX_W0) & MASK32
        k1 = (k1 + PHILOX_W1) & MASK32
    return c0, c1, c2, c3


@nb.njit(cache=True)
def philox_block(counter, key):
    """Reference entry point: one Philox4x32-10 block (used by tests)."""
    out = np.empty(4, dtype=np.uint64)
    r = philox4x32(np.uint64(counter[0]), np.uint64(counter[1]), np.uint64(counter[2]),
                   np.uint64(counter[3]), np.uint64(key[0]), np.uint64(key[1]))
    out[0], out[1], out[2], out[3] = r
    return out


@nb.njit(inline="always", cache=True)
def _uniform(seed, chain, stream, n):
    """n-th uniform in (0, 1) of a chain's stream (32-bit resolution)."""
    blk = np.uint64(n) >> np.uint64(2)
    r0, r1, r2, r3 = philox4x32(blk & MASK32, blk >> np.uint64(32), np.uint64(chain) & MASK32,
                                np.uint64(stream) & MASK32, seed & MASK32, seed >> np.uint64(32))
    q = n & 3
    if q == 0:
        w = r0
    elif q == 1:
        w = r1
    elif q == 2:
        w = r2
    else:
        w = r3
    return (np.float64(w) + 0.5) * TWO_M32


@nb.njit(inline="always", cache=True)
def _uniform_block(seed, chain, stream, n):
    """The four uniforms of the Philox block holding draw ``n``."""
    blk = np.uint64(n) >> np.uint64(2)
    r0, r1, r2, r3 = philox4x32(blk & MASK32, blk >> np.uint64(32), np.uint64(chain) & MASK32,
                                np.uint64(stream) & MASK32, seed & MASK32, seed >> np.uint64(32))
    return ((np.float64(r0) + 0.5) * TWO_M32, (np.float64(r1) + 0.5) * TWO_M32,
            (np.float64(r2) + 0.5) * TWO_M32, (np.float64(r3) + 0.5) * TWO_M32)


@nb.njit(inline="always", cache=True)
def _select(u0, u1, u2, u3, n):
    q = n & 3
    if q == 0:
        return u0
    if q == 1:
        return u1
    if q == 2:
        return u2
    return u3


@nb.njit(inline="always", cache=True)
def _pick(cumw, u):
    # branch-free: a data-dependent loop exit mispredicts on every random draw
    k = 0
    for i in range(cumw.shape[0] - 1):
        k += u >= cumw[i]
    return k


@nb.njit(inline="always", cache=True)
def _continuous_matrix(rot, gen, lam, amp, u):
    v = amp * (2.0 * u - 1.0)
    s = lam * v
    xa, xb, xc, xd = s * gen[0, 0], s * gen[0, 1], s * gen[1, 0], s * gen[1, 1]
    q = -(xa * xd - xb * xc)
    if abs(q) < 1e-14:
        ch, sh = 1.0, 1.0
    elif q > 0:
        rq = math.sqrt(q)
        ch, sh = math.cosh(rq), math.sinh(rq) / rq
    else:
        rq = math.sqrt(-q)
        ch, sh = math.cos(rq), math.sin(rq) / rq
    ea, eb, ec, ed = ch + sh * xa, sh * xb, sh * xc, ch + sh * xd
    return (rot[0, 0] * ea + rot[0, 1] * ec, rot[0, 0] * eb + rot[0, 1] * ed,
            rot[1, 0] * ea + rot[1, 1] * ec, rot[1, 0] * eb + rot[1, 1] * ed)


@nb.njit(inline="always", cache=True)
def _matrix_from_uniform(mode, mats, cumw, rot, gen, lam, amp, u):
    if mode == 0:
        k = _pick(cumw, u)
        return mats[k, 0, 0], mats[k, 0, 1], mats[k, 1, 0], mats[k, 1, 1]
    return _continuous_matrix(rot, gen, lam, amp, u)


@nb.njit(parallel=True, cache=True)
def chain_kernel(mode, mats, cumw, rot, gen, lam, amp, codes, theta0, burn, nsteps,
                 renorm_every, seed, stream, chain0, n_chains, track, nbins):
    """Iterate ``n_chains`` vectors from e_theta0.

    Returns per-chain log-norm growth over the ``nsteps`` steps after
    ``burn``, sums of exp(2ij theta_n) for j = 1..4 over those steps and an
    angle histogram (when ``nbins`` > 0).
    """
    logsum = np.zeros(n_chains)
    moments = np.zeros((n_chains, 4), dtype=np.complex128)
    hist = np.zeros((n_chains, nbins), dtype=np.int64)
    total = burn + nsteps
    for ci in nb.prange(n_chains):
        chain = chain0 + ci
        x = math.cos(theta0)
        y = math.sin(theta0)
        acc = 0.0
        since = 0
        m1 = 0j
        m2 = 0j
        m3 = 0j
        m4 = 0j
        u0 = u1 = u2 = u3 = 0.5
        for n in range(total):
            if n == burn and burn > 0:
                nrm = math.sqrt(x * x + y * y)
                x /= nrm
                y /= nrm
                since = 0
            if track and n >= burn:
                r2 = x * x + y * y
                z = complex((x * x - y * y) / r2, 2.0 * x * y / r2)
                z2 = z * z
                m1 += z
                m2 += z2
                m3 += z2 * z
                m4 += z2 * z2
                if nbins > 0:
                    th = math.atan2(y, x)
                    if th < 0.0:
                        th += TWO_PI
                    b = int(th / TWO_PI * nbins)
                    if b >= nbins:
                        b = nbins - 1
                    hist[ci, b] += 1
            if mode == 2:
                k = codes[ci, n]
                a, b_, c, d = mats[k, 0, 0], mats[k, 0, 1], mats[k, 1, 0], mats[k, 1, 1]
            else:
                if n & 3 == 0:
                    u0, u1, u2, u3 = _uniform_block(seed, chain, stream, n)
                a, b_, c, d = _matrix_from_uniform(mode, mats, cumw, rot, gen, lam, amp,
                                                   _select(u0, u1, u2, u3, n))
            x, y = a * x + b_ * y, c * x + d * y
            since += 1
            if since >= renorm_every or x * x + y * y > RENORM_LIMIT:
                nrm = math.sqrt(x * x + y * y)
                if n >= burn:
                    acc += math.log(nrm)
                x /= nrm
                y /= nrm
                since = 0
        acc += 0.5 * math.log(x * x + y * y)
        logsum[ci] = acc
        moments[ci, 0] = m1
        moments[ci, 1] = m2
        moments[ci, 2] = m3
        moments[ci, 3] = m4
    return logsum, moments, hist


@nb.njit(parallel=True, cache=True)
def landauer_kernel(mode, mats, cumw, rot, gen, lam, amp, codes, left, right, nsteps,
                    renorm_every, seed, stream, chain0, n_chains):
    """log tr(V^T V) with V = left @ W @ right, W the product of ``nsteps`` samples."""
    out = np.empty(n_chains)
    for ci in nb.prange(n_chains):
        chain = chain0 + ci
        w00, w01, w10, w11 = 1.0, 0.0, 0.0, 1.0
        logscale = 0.0
        since = 0
        u0 = u1 = u2 = u3 = 0.5
        for n in range(nsteps):
            if mode == 2:
                k = codes[ci, n]
                a, b, c, d = mats[k, 0, 0], mats[k, 0, 1], mats[k, 1, 0], mats[k, 1, 1]
            else:
                if n & 3 == 0:
                    u0, u1, u2, u3 = _uniform_block(seed, chain, stream, n)
                a, b, c, d = _matrix_from_uniform(mode, mats, cumw, rot, gen, lam, amp,
                                                  _select(u0, u1, u2, u3, n))
            w00, w01, w10, w11 = (a * w00 + b * w10, a * w01 + b * w11,
                                  c * w00 + d * w10, c * w01 + d * w11)
            since += 1
            f2 = w00 * w00 + w01 * w01 + w10 * w10 + w11 * w11
            if since >= renorm_every or f2 > RENORM_LIMIT:
                f = math.sqrt(f2)
                logscale += math.log(f)
                w00 /= f
                w01 /= f
                w10 /= f
                w11 /= f
                since = 0
        # V = left @ W @ right, taken back to the frame the caller wants
        u00 = left[0, 0] * w00 + left[0, 1] * w10
        u01 = left[0, 0] * w01 + left[0, 1] * w11
        u10 = left[1, 0] * w00 + left[1, 1] * w10
        u11 = left[1, 0] * w01 + left[1, 1] * w11
        v00 = u00 * right[0, 0] + u01 * right[1, 0]
        v01 = u00 * right[0, 1] + u01 * right[1, 1]
        v10 = u10 * right[0, 0] + u11 * right[1, 0]
        v11 = u10 * right[0, 1] + u11 * right[1, 1]
        out[ci] = 2.0 * logscale + math.log(v00 * v00 + v01 * v01 + v10 * v10 + v11 * v11)
    return out


@nb.njit(parallel=True, cache=True)
def coupled_kernel(mode, mats, cumw, cumw_first, rot, gen, lam, amp, j, theta0, burn, msteps,
                   seed, stream, twin_stream, chain0, n_chains):
    """Differences exp(2ij theta_m) - exp(2ij theta~_m), m = 1..msteps.

    theta starts at theta0 with its first code drawn from ``cumw_first``;
    the twin theta~ is equilibrated for ``burn`` steps on its own stream and
    takes an unconditioned first step.  From the second step on both use
    the same draws, so the twin has the stationary mean and cancels it.
    Modes 0 and 1 only.
    """
    rows = np.empty((n_chains, msteps), dtype=np.complex128)
    for ci in nb.prange(n_chains):
        chain = chain0 + ci
        tx = math.cos(theta0)
        ty = math.sin(theta0)
        u0 = u1 = u2 = u3 = 0.5
        for n in range(burn):
            if n & 3 == 0:
                u0, u1, u2, u3 = _uniform_block(seed, chain, twin_stream, n)
            a, b, c, d = _matrix_from_uniform(mode, mats, cumw, rot, gen, lam, amp,
                                              _select(u0, u1, u2, u3, n))
            tx, ty = a * tx + b * ty, c * tx + d * ty
            nrm = math.sqrt(tx * tx + ty * ty)
            tx /= nrm
            ty /= nrm
        x = math.cos(theta0)
        y = math.sin(theta0)
        for m in range(msteps):
            if m == 0:
                u = _uniform(seed, chain, stream, 0)
                if mode == 0:
                    k = _pick(cumw_first, u)
                    a, b, c, d = mats[k, 0, 0], mats[k, 0, 1], mats[k, 1, 0], mats[k, 1, 1]
                else:
                    a, b, c, d = _continuous_matrix(rot, gen, lam, amp, u)
                x, y = a * x + b * y, c * x + d * y
                a, b, c, d = _matrix_from_uniform(mode, mats, cumw, rot, gen, lam, amp,
                                                  _uniform(seed, chain, twin_stream, burn))
                tx, ty = a * tx + b * ty, c * tx + d * ty
            else:
                if m == 1 or m & 3 == 0:
                    u0, u1, u2, u3 = _uniform_block(seed, chain, stream, m)
                a, b, c, d = _matrix_from_uniform(mode, mats, cumw, rot, gen, lam, amp,
                                                  _select(u0, u1, u2, u3, m))
                x, y = a * x + b * y, c * x + d * y
                tx, ty = a * tx + b * ty, c * tx + d * ty
            nrm = math.sqrt(x * x + y * y)
            x /= nrm
            y /= nrm
            nrm = math.sqrt(tx * tx + ty * ty)
            tx /= nrm
            ty /= nrm
            z = complex(x * x - y * y, 2.0 * x * y) ** j
            zt = complex(tx * tx - ty * ty, 2.0 * tx * ty) ** j
            rows[ci, m] = z - zt
    return rows
