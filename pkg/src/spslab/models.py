"""Concrete critical families and the JSON run configuration."""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Annotated, Literal, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .linalg import exp_sl2, rotation
from .montecarlo import RunConfig
from .normal_form import ContinuousSampler, CriticalFamily, Realization

CENTERING_TOL = 1e-12
WEIGHT_TOL = 1e-12
TRACE_TOL = 1e-12

# ---------------------------------------------------------------- Anderson model


@dataclass(frozen=True)
class AndersonSpec:
    """Anderson model at energy E = -2 cos k with a centered potential.

    ``disorder`` is ``two_point`` (values +-amplitude), ``uniform`` on
    [-amplitude, amplitude] (discretized by ``quadrature`` on ``nodes``
    points for the exact predictors, sampled exactly in Monte Carlo) or
    ``discrete`` with explicit ``values`` and ``weights``.
    """

    energy: float
    disorder: str = "two_point"
    amplitude: float = 1.0
    values: tuple[float, ...] = ()
    weights: tuple[float, ...] = ()
    nodes: int = 21
    quadrature: str = "gauss-legendre"

    def __post_init__(self):
        if not abs(self.energy) < 2.0:
            raise ValueError(f"energy must lie in (-2, 2), got {self.energy}")
        if self.disorder not in ("two_point", "uniform", "discrete"):
            raise ValueError(f"unknown disorder kind {self.disorder!r}")
        if self.disorder != "discrete" and not self.amplitude > 0:
            raise ValueError("amplitude must be positive")
        if self.quadrature not in ("gauss-legendre", "midpoint"):
            raise ValueError(f"unknown quadrature {self.quadrature!r}")
        if self.nodes < 1:
            raise ValueError("nodes must be positive")
        if self.disorder == "discrete":
            v, w = self.support()
            if len(v) == 0 or len(v) != len(w):
                raise ValueError("discrete disorder needs matching, non-empty values and weights")
            if np.any(w <= 0):
                raise ValueError("disorder weights must be positive")
            if abs(w.sum() - 1.0) > WEIGHT_TOL:
                raise ValueError(f"disorder weights sum to {w.sum():.15g}, not 1")
            if abs(w @ v) > CENTERING_TOL:
                raise ValueError(f"disorder is not centered: E(v) = {w @ v:.3e}")

    @property
    def k(self) -> float:
        return math.acos(-self.energy / 2.0)

    def support(self) -> tuple[np.ndarray, np.ndarray]:
        """Values and weights of the finite distribution used by the predictors."""
        a = self.amplitude
        if self.disorder == "two_point":
            return np.array([a, -a]), np.array([0.5, 0.5])
        if self.disorder == "discrete":
            return np.asarray(self.values, dtype=float), np.asarray(self.weights, dtype=float)
        n = self.nodes
        if self.quadrature == "gauss-legendre":
            x, w = np.polynomial.legendre.leggauss(n)
            return a * x, w / 2.0
        x = -1.0 + (2.0 * np.arange(n) + 1.0) / n
        return a * x, np.full(n, 1.0 / n)

    def moments(self) -> tuple[float, float]:
        """E(v^2), E(v^4) of the finite support."""
        v, w = self.support()
        return float(w @ v ** 2), float(w @ v ** 4)


def anderson_matrix(energy: float, potential: float) -> np.ndarray:
    return np.array([[potential - energy, -1.0], [1.0, 0.0]])


def anderson_conjugator(k: float) -> np.ndarray:
    s = math.sin(k)
    return np.array([[s, 0.0], [-math.cos(k), 1.0]]) / math.sqrt(s)


def anderson_family(spec: AndersonSpec) -> CriticalFamily:
    """Realizations T = [[lam v - E, -1], [1, 0]] with exact lambda-derivatives."""
    E, k = spec.energy, spec.k
    v, w = spec.support()
    T0 = anderson_matrix(E, 0.0)
    dT = np.array([[1.0, 0.0], [0.0, 0.0]])
    reals = [Realization(weight=float(wi), T0=T0, T1=vi * dT, T2=np.zeros((2, 2)),
                         value=float(vi)) for vi, wi in zip(v, w)]
    sampler = None
    if spec.disorder == "uniform":
        # T0 + lam v dT = T0 exp(lam v T0^-1 dT), the exponent being nilpotent
        gen = np.array([[0.0, 1.0], [-1.0, -E]]) @ dT
        sampler = ContinuousSampler(amplitude=spec.amplitude, rotation=T0, generator=gen)
    sk = math.sin(k)
    lower = np.array([[0.0, 0.0], [1.0, 0.0]])
    m2, m4 = spec.moments()
    expected = {
        "k": k,
        "eta": k,
        "M": anderson_conjugator(k),
        "P": np.array([-(vi / sk) * lower for vi in v]),
        "Q": np.zeros((len(v), 2, 2)),
        "beta": 1j * v / (2.0 * sk),
        "m2": m2,
        "m4": m4,
    }
    return CriticalFamily(reals, name=f"anderson(E={E:g}, {spec.disorder})", sampler=sampler,
                          expected=expected)


# ---------------------------------------------------------------- synthetic normal form


@dataclass(frozen=True)
class SyntheticEntry:
    weight: float
    eta: float
    P: np.ndarray
    Q: np.ndarray | None = None


@dataclass(frozen=True)
class SyntheticSpec:
    entries: tuple[SyntheticEntry, ...]

    def __post_init__(self):
        if not self.entries:
            raise ValueError("a synthetic family needs at least one entry")
        w = np.array([e.weight for e in self.entries])
        if np.any(w <= 0):
            raise ValueError("weights must be positive")
        if abs(w.sum() - 1.0) > WEIGHT_TOL:
            raise ValueError(f"weights sum to {w.sum():.15g}, not 1")
        for i, e in enumerate(self.entries):
            for name, m in (("P", e.P), ("Q", e.Q)):
                if m is None:
                    continue
                m = np.asarray(m, dtype=float)
                if m.shape != (2, 2):
                    raise ValueError(f"entry {i}: {name} must be 2x2")
                if abs(m[0, 0] + m[1, 1]) > TRACE_TOL:
                    raise ValueError(f"entry {i}: {name} is not traceless")


def synthetic_family(spec: SyntheticSpec, name: str = "synthetic") -> CriticalFamily:
    """T = R_eta exp(lam P + lam^2 Q), with derivatives R P and R (2Q + P^2)."""
    reals = []
    for e in spec.entries:
        P = np.asarray(e.P, dtype=float)
        Q = np.zeros((2, 2)) if e.Q is None else np.asarray(e.Q, dtype=float)
        R = rotation(e.eta)

        def evaluate(lam, R=R, P=P, Q=Q):
            return R @ exp_sl2(lam * P + lam * lam * Q)

        reals.append(Realization(weight=e.weight, T0=R, T1=R @ P, T2=R @ (2.0 * Q + P @ P),
                                 evaluate=evaluate))
    expected = {
        "eta": np.array([e.eta for e in spec.entries]),
        "P": np.array([np.asarray(e.P, dtype=float) for e in spec.entries]),
        "Q": np.array([np.zeros((2, 2)) if e.Q is None else np.asarray(e.Q, dtype=float)
                       for e in spec.entries]),
    }
    return CriticalFamily(reals, name=name, expected=expected)


# ---------------------------------------------------------------- configuration files


class ConfigError(ValueError):
    """Config file could not be parsed or validated."""


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class TwoPointDisorder(_Strict):
    kind: Literal["two_point"]
    amplitude: float = Field(1.0, gt=0)


class UniformDisorder(_Strict):
    kind: Literal["uniform"]
    amplitude: float = Field(1.0, gt=0)
    nodes: int = Field(21, ge=1)
    quadrature: Literal["gauss-legendre", "midpoint"] = "gauss-legendre"


class DiscreteDisorder(_Strict):
    kind: Literal["discrete"]
    values: list[float] = Field(min_length=1)
    weights: list[float] = Field(min_length=1)

    @model_validator(mode="after")
    def _check(self):
        if len(self.values) != len(self.weights):
            raise ValueError("values and weights differ in length")
        if any(w <= 0 for w in self.weights):
            raise ValueError("weights must be positive")
        total = math.fsum(self.weights)
        if abs(total - 1.0) > WEIGHT_TOL:
            raise ValueError(f"weights sum to {total:.15g}, not 1")
        mean = math.fsum(v * w for v, w in zip(self.values, self.weights))
        if abs(mean) > CENTERING_TOL:
            raise ValueError(f"disorder is not centered: E(v) = {mean:.3e}")
        return self


class AndersonModel(_Strict):
    type: Literal["anderson"]
    energy: float = Field(gt=-2.0, lt=2.0)
    disorder: Annotated[Union[TwoPointDisorder, UniformDisorder, DiscreteDisorder],
                        Field(discriminator="kind")] = TwoPointDisorder(kind="two_point")


Matrix2 = Annotated[list[Annotated[list[float], Field(min_length=2, max_length=2)]],
                    Field(min_length=2, max_length=2)]


class SyntheticRealization(_Strict):
    weight: float = Field(gt=0)
    eta: float
    P: Matrix2
    Q: Matrix2 | None = None

    @field_validator("P", "Q")
    @classmethod
    def _traceless(cls, m):
        if m is not None and abs(m[0][0] + m[1][1]) > TRACE_TOL:
            raise ValueError("matrix is not traceless")
        return m


class SyntheticModel(_Strict):
    type: Literal["synthetic"]
    realizations: list[SyntheticRealization] = Field(min_length=1)

    @field_validator("realizations")
    @classmethod
    def _weights(cls, r):
        total = math.fsum(x.weight for x in r)
        if abs(total - 1.0) > WEIGHT_TOL:
            raise ValueError(f"weights sum to {total:.15g}, not 1")
        return r


class RunSection(_Strict):
    N: int = Field(10 ** 6, ge=1)
    ensemble: int = Field(64, ge=1)
    burn_in: int = Field(0, ge=0)
    seed: int = Field(0, ge=0, lt=2 ** 64)
    renorm_every: int = Field(32, ge=1)
    theta0: float = 0.0
    landauer_N: int = Field(200, ge=1)
    landauer_samples: int = Field(4096, ge=1)

    @model_validator(mode="after")
    def _burn(self):
        if self.burn_in > self.N:
            raise ValueError("burn_in must not exceed N")
        return self


class SweepRange(_Strict):
    min: float
    max: float
    count: int = Field(ge=1)
    log: bool = False

    @model_validator(mode="after")
    def _order(self):
        if self.max < self.min:
            raise ValueError("max must be >= min")
        if self.log and self.min <= 0:
            raise ValueError("log-spaced sweeps need min > 0")
        return self


Estimator = Literal["lyapunov", "variance", "landauer", "phases"]


class OutputSection(_Strict):
    csv: str = "sweep.csv"
    json_path: str = Field("sweep.json", alias="json")
    estimators: list[Estimator] = ["lyapunov", "variance", "landauer"]
    histogram_bins: int = Field(256, ge=1)


class ConfigFile(_Strict):
    model: Annotated[Union[AndersonModel, SyntheticModel], Field(discriminator="type")]
    run: RunSection = RunSection()
    sweep: Union[list[float], SweepRange] = [0.1]
    output: OutputSection = OutputSection()


@dataclass(frozen=True)
class OutputOptions:
    csv: str
    json: str
    estimators: tuple[str, ...]
    histogram_bins: int


@dataclass(frozen=True)
class LoadedConfig:
    spec: AndersonSpec | SyntheticSpec
    run: RunConfig
    lambdas: tuple[float, ...]
    output: OutputOptions
    landauer_N: int
    landauer_samples: int
    digest: str  # sha256 of the canonical JSON form

    def family(self) -> CriticalFamily:
        if isinstance(self.spec, AndersonSpec):
            return anderson_family(self.spec)
        return synthetic_family(self.spec)


def _sweep_values(sweep) -> tuple[float, ...]:
    if isinstance(sweep, list):
        return tuple(float(x) for x in sweep)
    if sweep.log:
        return tuple(float(x) for x in np.geomspace(sweep.min, sweep.max, sweep.count))
    return tuple(float(x) for x in np.linspace(sweep.min, sweep.max, sweep.count))


def _spec_from(model) -> AndersonSpec | SyntheticSpec:
    if isinstance(model, AndersonModel):
        d = model.disorder
        if isinstance(d, DiscreteDisorder):
            return AndersonSpec(model.energy, "discrete", values=tuple(d.values),
                                weights=tuple(d.weights))
        if isinstance(d, UniformDisorder):
            return AndersonSpec(model.energy, "uniform", d.amplitude, nodes=d.nodes,
                                quadrature=d.quadrature)
        return AndersonSpec(model.energy, "two_point", d.amplitude)
    entries = tuple(SyntheticEntry(r.weight, r.eta, np.array(r.P),
                                   None if r.Q is None else np.array(r.Q))
                    for r in model.realizations)
    return SyntheticSpec(entries)


def _format_errors(err: ValidationError) -> str:
    lines = []
    for e in err.errors():
        loc = ".".join(str(p) for p in e["loc"]) or "<root>"
        lines.append(f"{loc}: {e['msg']}")
    return "; ".join(lines)


def parse_config(data: dict) -> LoadedConfig:
    try:
        cfg = ConfigFile.model_validate(data)
    except ValidationError as err:
        raise ConfigError(_format_errors(err)) from None
    try:
        spec = _spec_from(cfg.model)
    except ValueError as err:
        raise ConfigError(f"model: {err}") from None
    r = cfg.run
    run = RunConfig(N=r.N, ensemble=r.ensemble, burn_in=r.burn_in, seed=r.seed,
                    renorm_every=r.renorm_every, theta0=r.theta0)
    o = cfg.output
    output = OutputOptions(o.csv, o.json_path, tuple(o.estimators), o.histogram_bins)
    canonical = json.dumps(cfg.model_dump(mode="json", by_alias=True), sort_keys=True)
    return LoadedConfig(spec=spec, run=run, lambdas=_sweep_values(cfg.sweep), output=output,
                        landauer_N=r.landauer_N, landauer_samples=r.landauer_samples,
                        digest=hashlib.sha256(canonical.encode()).hexdigest())


def load_config(path) -> LoadedConfig:
    """Read and validate a JSON run configuration."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as err:
        raise ConfigError(f"{path}: {err.strerror}") from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as err:
        raise ConfigError(f"{path}: line {err.lineno} column {err.colno}: {err.msg}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a JSON object")
    try:
        return parse_config(data)
    except ConfigError as err:
        raise ConfigError(f"{path}: {err}") from None
