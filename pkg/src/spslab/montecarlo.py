"""Monte Carlo estimators for products of random 2x2 transfer matrices.

All estimators work in the conjugated frame ``M T M^-1`` of a NormalForm,
except the Landauer trace, which is taken back to the original frame so that
it can be compared with the exact adjoint computation.  Every chain draws
from its own counter-based stream keyed by ``(seed, chain, stream)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels as K
from .linalg import inv2
from .normal_form import NormalForm

# default stream ids, one per estimator family
STREAM_LOG_NORM = 0
STREAM_PHASES = 1
STREAM_LANDAUER = 2
STREAM_CORRELATION = 16  # strata use 16 + 2 s (chain) and 17 + 2 s (twin)

MIN_VARIANCE_ENSEMBLE = 32
LANDAUER_GUARD = 40.0
MAX_CORRELATION_STEPS = 10 ** 6
ROWS_PER_BLOCK = 4_000_000  # bound on stored (chain, step) entries
TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class RunConfig:
    N: int = 10 ** 6
    ensemble: int = 64
    burn_in: int = 0
    seed: int = 0
    renorm_every: int = 32
    theta0: float = 0.0

    def __post_init__(self):
        if self.N < 1 or self.ensemble < 1:
            raise ValueError("N and ensemble must be positive")
        if self.burn_in < 0 or self.burn_in > self.N:
            raise ValueError("burn_in must satisfy 0 <= burn_in <= N")
        if self.renorm_every < 1:
            raise ValueError("renorm_every must be >= 1")
        if not 0 <= self.seed < 2 ** 64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        if not math.isfinite(self.theta0):
            raise ValueError("theta0 must be finite")

    def replace(self, **kw) -> "RunConfig":
        d = dict(self.__dict__)
        d.update(kw)
        return RunConfig(**d)


@dataclass
class Estimate:
    value: float
    stderr: float
    count: int
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        if not (math.isfinite(self.value) and math.isfinite(self.stderr)) or self.stderr < 0:
            raise ValueError(f"non-finite estimate {self.value!r} +- {self.stderr!r}")


@dataclass
class ComplexEstimate:
    value: complex
    stderr_re: float
    stderr_im: float
    count: int
    diagnostics: dict = field(default_factory=dict)

    @property
    def stderr(self) -> float:
        return math.hypot(self.stderr_re, self.stderr_im)

    def within(self, target: complex, nsigma: float = 3.0, slack: float = 0.0) -> bool:
        d = self.value - target
        return (abs(d.real) <= nsigma * self.stderr_re + slack
                and abs(d.imag) <= nsigma * self.stderr_im + slack)


def _complex_mean(samples: np.ndarray) -> tuple[complex, float, float]:
    n = len(samples)
    if n < 2:
        return complex(samples.mean()), math.inf, math.inf
    return (complex(samples.mean()), float(samples.real.std(ddof=1) / math.sqrt(n)),
            float(samples.imag.std(ddof=1) / math.sqrt(n)))


# ---------------------------------------------------------------- kernel input


@dataclass
class _Model:
    mode: int
    mats: np.ndarray
    cumw: np.ndarray
    rot: np.ndarray
    gen: np.ndarray
    amp: float
    lam: float


_NO_CODES = np.zeros((1, 1), dtype=np.int64)


def _model(nf: NormalForm, lam: float, use_sampler: bool = True) -> _Model:
    if nf.sampler is not None and use_sampler:
        s = nf.sampler
        Minv = inv2(nf.M)
        rot = nf.M @ np.asarray(s.rotation, dtype=float) @ Minv
        gen = nf.M @ np.asarray(s.generator, dtype=float) @ Minv
        return _Model(1, np.zeros((1, 2, 2)), np.ones(1), rot, gen, float(s.amplitude),
                      float(lam))
    cumw = np.cumsum(nf.weights)
    cumw[-1] = 1.0
    return _Model(0, np.ascontiguousarray(nf.step_matrices(lam)), cumw, np.eye(2),
                  np.zeros((2, 2)), 0.0, float(lam))


def _run_chains(md: _Model, cfg: RunConfig, stream: int, track: bool = False, nbins: int = 0,
                codes: np.ndarray | None = None):
    mode = md.mode if codes is None else 2
    mats = md.mats
    return K.chain_kernel(mode, mats, md.cumw, md.rot, md.gen, md.lam, md.amp,
                          _NO_CODES if codes is None else codes, float(cfg.theta0),
                          cfg.burn_in, cfg.N, cfg.renorm_every, np.uint64(cfg.seed), stream, 0,
                          cfg.ensemble if codes is None else codes.shape[0], track, nbins)


# ---------------------------------------------------------------- phase maps


def phase_map(S: np.ndarray, theta):
    """Angle in [0, 2 pi) of ``S e_theta`` (vectorized over theta)."""
    c, s = np.cos(theta), np.sin(theta)
    return np.mod(np.arctan2(S[1, 0] * c + S[1, 1] * s, S[0, 0] * c + S[0, 1] * s), TWO_PI)


def phase_step(nf: NormalForm, sigma: int, lam: float, theta: float) -> float:
    """Image of the direction e_theta under realization ``sigma``."""
    return float(phase_map(nf.step_matrices(lam)[sigma], theta))


@dataclass
class PhaseOrbit:
    angles: np.ndarray  # theta_0 .. theta_N in [0, 2 pi)
    log_norm: float  # log ||T(N) e_theta0|| accumulated along the orbit


def phase_orbit(nf: NormalForm, lam: float, codes, theta0: float = 0.0) -> PhaseOrbit:
    """Follow the phase dynamics along a code sequence.

    The log-norm is summed one step at a time as log ||S e_theta_n||, which
    needs only the current angle.
    """
    mats = nf.step_matrices(lam)
    codes = np.asarray(codes, dtype=np.int64)
    angles = np.empty(len(codes) + 1)
    angles[0] = math.fmod(theta0, TWO_PI) % TWO_PI
    total = 0.0
    for n, k in enumerate(codes):
        S = mats[k]
        th = angles[n]
        x = S[0, 0] * math.cos(th) + S[0, 1] * math.sin(th)
        y = S[1, 0] * math.cos(th) + S[1, 1] * math.sin(th)
        total += 0.5 * math.log(x * x + y * y)
        angles[n + 1] = math.atan2(y, x) % TWO_PI
    return PhaseOrbit(angles, total)


def log_norm_from_codes(nf: NormalForm, lam: float, codes, theta0: float = 0.0,
                        renorm_every: int = 32) -> np.ndarray:
    """Kernel log-norms ``log ||T(N) e_theta0||`` for given code rows."""
    codes = np.ascontiguousarray(np.atleast_2d(np.asarray(codes, dtype=np.int64)))
    cfg = RunConfig(N=codes.shape[1], ensemble=codes.shape[0], renorm_every=renorm_every,
                    theta0=theta0)
    md = _model(nf, lam, use_sampler=False)
    return _run_chains(md, cfg, 0, codes=codes)[0]


# ---------------------------------------------------------------- log-norm estimators


def log_norm_samples(nf: NormalForm, lam: float, cfg: RunConfig,
                     stream: int = STREAM_LOG_NORM) -> np.ndarray:
    """X_m = log ||T(N) e|| for each chain, after ``burn_in`` discarded steps."""
    return _run_chains(_model(nf, lam), cfg, stream)[0]


def lyapunov_from_samples(X: np.ndarray, N: int) -> Estimate:
    M = len(X)
    if M < 2:
        # no spread to measure with one chain
        return Estimate(float(X[0] / N), 0.0, 1, {"N": N, "single_chain": True})
    se = float(np.std(X, ddof=1) / N / math.sqrt(M))
    return Estimate(float(np.mean(X) / N), se, M, {"N": N})


def variance_from_samples(X: np.ndarray, N: int) -> Estimate:
    M = len(X)
    if M < 2:
        raise ValueError("the variance estimator needs at least 2 replicas")
    value = float(np.var(X, ddof=1) / N)
    se = value * math.sqrt(2.0 / (M - 1))
    mean = float(np.mean(X))
    scale = float(np.std(X, ddof=1))
    std = (X - mean) / scale if scale > 0 else np.zeros_like(X)
    return Estimate(value, se, M, {"N": N, "samples": X, "standardized": std,
                                   "small_ensemble": M < MIN_VARIANCE_ENSEMBLE})


def sps_gap_from_samples(X: np.ndarray, N: int) -> Estimate:
    """gamma - sigma from one set of replicas.

    Each replica contributes X_m / N - (X_m - mean)^2 / N; the standard
    error is that of the mean of these terms, which keeps the strong
    positive correlation between the two estimates.
    """
    M = len(X)
    if M < 2:
        raise ValueError("the variance estimator needs at least 2 replicas")
    terms = X / N - (X - X.mean()) ** 2 / N
    value = float(np.mean(X) / N - np.var(X, ddof=1) / N)
    return Estimate(value, float(terms.std(ddof=1) / math.sqrt(M)), M, {"N": N})


def estimate_lyapunov(nf: NormalForm, lam: float, cfg: RunConfig,
                      stream: int = STREAM_LOG_NORM) -> Estimate:
    """Mean of (1/N) log ||T(N) e_theta0|| over independent chains."""
    return lyapunov_from_samples(log_norm_samples(nf, lam, cfg, stream), cfg.N)


def estimate_variance(nf: NormalForm, lam: float, cfg: RunConfig,
                      stream: int = STREAM_LOG_NORM) -> Estimate:
    """Replica variance of log ||T(N) e||, divided by N.

    Centering uses the replica mean; the standard error follows from the
    chi-square law of the sample variance.
    """
    if cfg.ensemble < 2:
        raise ValueError("the variance estimator needs at least 2 replicas")
    return variance_from_samples(log_norm_samples(nf, lam, cfg, stream), cfg.N)


# ---------------------------------------------------------------- phase moments


@dataclass
class PhaseStatistics:
    moments: list[ComplexEstimate]  # j = 1..4
    histogram: np.ndarray  # counts over [0, 2 pi), summed over chains
    N: int
    ensemble: int


def phase_statistics(nf: NormalForm, lam: float, cfg: RunConfig, nbins: int = 0,
                     stream: int = STREAM_PHASES) -> PhaseStatistics:
    """Time-and-ensemble averages of exp(2ij theta_n), j = 1..4, after burn-in."""
    _, sums, hist = _run_chains(_model(nf, lam), cfg, stream, track=True, nbins=nbins)
    per_chain = sums / cfg.N
    moments = []
    for j in range(4):
        v, se_re, se_im = _complex_mean(per_chain[:, j])
        moments.append(ComplexEstimate(v, se_re, se_im, cfg.ensemble, {"j": j + 1}))
    return PhaseStatistics(moments, hist.sum(axis=0), cfg.N, cfg.ensemble)


def estimate_phase_moment(nf: NormalForm, lam: float, j: int, cfg: RunConfig,
                          stream: int = STREAM_PHASES) -> ComplexEstimate:
    if j not in (1, 2, 3, 4):
        raise ValueError("j must be in 1..4")
    return phase_statistics(nf, lam, cfg, stream=stream).moments[j - 1]


# ---------------------------------------------------------------- correlation sums


@dataclass
class StratumSum:
    eta1: float  # first-step rotation angle of the stratum
    weight: float
    estimate: ComplexEstimate


@dataclass
class CorrelationSum:
    strata: list[StratumSum]
    rate: float  # fitted decay rate of |E exp(2ij theta_m) - nu_j|
    amplitude: float
    m_max: int
    tail_bound: float
    converged: bool


def _strata(nf: NormalForm, md: _Model, tol: float = 1e-12):
    """Group realizations by exp(2i eta); yields (eta1, weight, first-step cdf)."""
    if md.mode == 1:
        return [(float(nf.eta[0]), 1.0, np.ones(1))]
    z = np.exp(2j * nf.eta)
    groups: list[list[int]] = []
    for i in range(len(z)):
        for g in groups:
            if abs(z[g[0]] - z[i]) <= tol:
                g.append(i)
                break
        else:
            groups.append([i])
    out = []
    for g in groups:
        w = np.zeros(len(z))
        w[g] = nf.weights[g]
        total = w.sum()
        cdf = np.cumsum(w / total)
        cdf[-1] = 1.0
        # never pick a code outside the stratum
        last = max(g)
        cdf[last:] = 1.0
        out.append((float(nf.eta[g[0]]), float(total), cdf))
    return out


def _coupled_rows(md, cdf, j, theta0, burn, msteps, seed, stream, chain0, n):
    return K.coupled_kernel(md.mode, md.mats, md.cumw, cdf, md.rot, md.gen, md.lam, md.amp, j,
                            float(theta0), burn, msteps, np.uint64(seed), stream, stream + 1,
                            chain0, n)


def _fit_decay(f: np.ndarray, se: np.ndarray, min_points: int = 3):
    """Log-linear fit of |f(m)| over the initial stretch above 3 se."""
    mag = np.abs(f)
    below = np.nonzero(mag <= 3.0 * se)[0]
    end = int(below[0]) if len(below) else len(mag)
    if end < min_points:
        end = min(len(mag), min_points)
    m = np.arange(1, end + 1, dtype=float)
    y = np.log(np.maximum(mag[:end], 1e-300))
    slope, intercept = np.polyfit(m, y, 1)
    return -float(slope), float(math.exp(intercept)), end, len(below) > 0


def estimate_correlation_sum(nf: NormalForm, lam: float, j: int, theta0: float,
                             cfg: RunConfig, stream: int = STREAM_CORRELATION,
                             pilot_chains: int = 2048, pilot_steps: int = 256) -> CorrelationSum:
    """J_j = E sum_{m>=1} (exp(2ij theta_m) - nu_j) from a fixed theta_0, per first-step stratum.

    Each chain is paired with a twin that starts from an equilibrated angle
    and shares every draw from the second step on.  The twin's terms have
    mean nu_j exactly, so the pair difference needs no separate estimate
    of nu_j and its variance stays bounded once the two phases lock.
    The sum is cut at m_max = min(ceil(12 / r), 10^6) with r the decay rate
    fitted on a pilot run.
    """
    if lam <= 0:
        raise ValueError("correlation sums need lambda > 0")
    if j not in (1, 2, 3, 4):
        raise ValueError("j must be in 1..4")
    md = _model(nf, lam)
    strata = _strata(nf, md)
    _, _, cdf0 = strata[0]
    n_pilot = min(pilot_chains, cfg.ensemble)
    msteps = pilot_steps
    while True:
        # the twin must be equilibrated over at least the window being fitted
        rows = _coupled_rows(md, cdf0, j, theta0, max(cfg.burn_in, 4 * msteps), msteps,
                             cfg.seed, stream, 0, n_pilot)
        f = rows.mean(axis=0)
        se = np.hypot(rows.real.std(axis=0, ddof=1), rows.imag.std(axis=0, ddof=1))
        se /= math.sqrt(n_pilot)
        rate, amp, end, reached_noise = _fit_decay(f, se)
        if (reached_noise and end <= msteps // 2) or msteps >= 2 ** 17:
            break
        msteps *= 2
    converged = rate > 0
    if not converged:
        return CorrelationSum([], rate, amp, msteps, math.inf, False)
    m_max = int(min(math.ceil(12.0 / rate), MAX_CORRELATION_STEPS))
    m_max = max(m_max, end)
    burn = max(cfg.burn_in, 4 * m_max)
    block = max(1, ROWS_PER_BLOCK // m_max)
    out = []
    for s, (eta1, weight, cdf) in enumerate(strata):
        sums = np.empty(cfg.ensemble, dtype=complex)
        for c0 in range(0, cfg.ensemble, block):
            n = min(block, cfg.ensemble - c0)
            r = _coupled_rows(md, cdf, j, theta0, burn, m_max, cfg.seed, stream + 2 * s, c0, n)
            sums[c0:c0 + n] = r.sum(axis=1)
        v, se_re, se_im = _complex_mean(sums)
        out.append(StratumSum(eta1, weight,
                              ComplexEstimate(v, se_re, se_im, cfg.ensemble, {"m_max": m_max})))
    tail = amp * math.exp(-rate * m_max) / rate
    return CorrelationSum(out, rate, amp, m_max, tail, True)


# ---------------------------------------------------------------- Landauer


def landauer_samples(nf: NormalForm, lam: float, N: int, M: int, seed: int,
                     stream: int = STREAM_LANDAUER, renorm_every: int = 32) -> np.ndarray:
    """log tr(T(N)^* T(N)) per sample, in the original frame."""
    md = _model(nf, lam)
    return K.landauer_kernel(md.mode, md.mats, md.cumw, md.rot, md.gen, md.lam, md.amp,
                             _NO_CODES, inv2(nf.M), np.ascontiguousarray(nf.M), N,
                             renorm_every, np.uint64(seed), stream, 0, M)


def landauer_from_samples(logs: np.ndarray, N: int) -> Estimate:
    """log(mean tr) / (2N) by log-sum-exp, stderr by the delta method."""
    M = len(logs)
    top = float(np.max(logs))
    w = np.exp(logs - top)
    mean_w = float(w.mean())
    if not math.isfinite(top) or mean_w <= 0:
        raise OverflowError("Landauer average overflowed")
    value = (top + math.log(mean_w)) / (2.0 * N)
    se = float(w.std(ddof=1) / math.sqrt(M) / mean_w) / (2.0 * N) if M > 1 else 0.0
    return Estimate(value, se, M, {"N": N, "log_traces": logs})


def estimate_landauer_mc(nf: NormalForm, lam: float, N: int, M: int, seed: int,
                         stream: int = STREAM_LANDAUER, renorm_every: int = 32,
                         gamma_hat: float | None = None) -> Estimate:
    """Growth rate per 2N of the sampled average of tr(T^* T).

    ``gamma_hat`` (a predicted Landauer exponent) enables the heavy-tail
    guard: runs with N * gamma_hat above 40 are flagged.
    """
    if N < 1 or M < 1:
        raise ValueError("N and M must be positive")
    est = landauer_from_samples(landauer_samples(nf, lam, N, M, seed, stream, renorm_every), N)
    est.diagnostics["heavy_tail"] = bool(gamma_hat is not None and N * gamma_hat > LANDAUER_GUARD)
    return est
