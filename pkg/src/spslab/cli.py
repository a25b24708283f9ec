"""Command-line driver: ``spslab validate|sweep|phases <config.json>``."""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from .adjoint import EigenvalueSeparationError, landauer_exponent_exact
from .models import AndersonSpec, ConfigError, LoadedConfig, load_config
from .montecarlo import (
    Estimate,
    RunConfig,
    estimate_landauer_mc,
    log_norm_samples,
    lyapunov_from_samples,
    phase_statistics,
    sps_gap_from_samples,
    variance_from_samples,
)
from .normal_form import CriticalPointError, NormalForm, extract_normal_form, verify_critical
from .perturbation import (
    ResonanceError,
    anderson_orders,
    coefficient_D,
    is_anderson_frame,
    predict_phase_moment,
)

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_ESTIMATOR = 2

# flags that void the perturbative hypotheses; rows carrying them are not fitted
BLOCKING_FLAGS = ("resonant_j1", "resonant_j2")
FLOAT_FORMAT = ".17g"


@dataclass
class SweepRow:
    lam: float
    gamma_mc: float
    gamma_mc_se: float
    sigma_mc: float
    sigma_mc_se: float
    landauer_mc: float
    landauer_mc_se: float
    gamma_pred: float
    sigma_pred: float
    landauer_pred: float
    landauer_exact: float
    D: float
    flags: str


CSV_COLUMNS = ["lambda"] + [f.name for f in fields(SweepRow)][1:]


def _fmt(x) -> str:
    if isinstance(x, float):
        return format(x, FLOAT_FORMAT)
    return str(x)


def write_rows_csv(path: Path, rows: list[SweepRow]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_COLUMNS)
        for r in rows:
            w.writerow([_fmt(v) for v in asdict(r).values()])


def read_rows_csv(path: Path) -> list[SweepRow]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != CSV_COLUMNS:
            raise ValueError(f"unexpected columns {header}")
        out = []
        for rec in reader:
            vals = [float(x) for x in rec[:-1]] + [rec[-1]]
            out.append(SweepRow(*vals))
        return out


# ---------------------------------------------------------------- fits


@dataclass
class PolyFit:
    powers: tuple[int, ...]
    coeffs: tuple[float, ...]
    stderr: tuple[float, ...]
    chi2: float
    points: int

    def coeff(self, p: int) -> float:
        return self.coeffs[self.powers.index(p)]

    def coeff_se(self, p: int) -> float:
        return self.stderr[self.powers.index(p)]

    def as_dict(self) -> dict:
        return {"powers": list(self.powers), "coeffs": list(self.coeffs),
                "stderr": list(self.stderr), "chi2": self.chi2, "points": self.points}


def weighted_poly_fit(x, y, se, powers=(2, 4)) -> PolyFit:
    """Weighted least squares of y on x**p, p in ``powers``, with 1/se^2 weights."""
    x, y, se = (np.asarray(a, dtype=float) for a in (x, y, se))
    if len(x) < len(powers):
        raise ValueError(f"need at least {len(powers)} points, got {len(x)}")
    if np.any(se <= 0):
        raise ValueError("standard errors must be positive")
    A = np.stack([x ** p for p in powers], axis=1) / se[:, None]
    b = y / se
    coef, *_ = np.linalg.lstsq(A, b, rcond=None)
    cov = np.linalg.inv(A.T @ A)
    chi2 = float(np.sum((A @ coef - b) ** 2))
    return PolyFit(tuple(powers), tuple(float(c) for c in coef),
                   tuple(float(s) for s in np.sqrt(np.diag(cov))), chi2, len(x))


def sweep_fits(rows: list[SweepRow], gaps: list[Estimate | None]) -> dict:
    """Fits of gamma, sigma on {lam^2, lam^4} and of gamma - sigma on lam^4.

    Rows at lambda = 0, rows with blocking flags and rows whose estimates
    failed are left out.
    """
    keep = [i for i, r in enumerate(rows)
            if r.lam != 0 and not any(f in r.flags.split(";") for f in BLOCKING_FLAGS)
            and math.isfinite(r.gamma_mc) and math.isfinite(r.sigma_mc)
            and r.gamma_mc_se > 0 and r.sigma_mc_se > 0]
    out: dict = {"lambdas": [rows[i].lam for i in keep]}
    lam = [rows[i].lam for i in keep]
    try:
        out["gamma"] = weighted_poly_fit(lam, [rows[i].gamma_mc for i in keep],
                                         [rows[i].gamma_mc_se for i in keep]).as_dict()
        out["sigma"] = weighted_poly_fit(lam, [rows[i].sigma_mc for i in keep],
                                         [rows[i].sigma_mc_se for i in keep]).as_dict()
    except ValueError as err:
        out["error"] = str(err)
    gk = [i for i in keep if gaps[i] is not None and gaps[i].stderr > 0]
    try:
        out["sps_gap"] = weighted_poly_fit([rows[i].lam for i in gk],
                                           [gaps[i].value for i in gk],
                                           [gaps[i].stderr for i in gk], powers=(4,)).as_dict()
    except ValueError as err:
        out["sps_gap_error"] = str(err)
    return out


# ---------------------------------------------------------------- analysis


def _family_flags(nf: NormalForm) -> list[str]:
    flags = []
    for j in range(1, 5):
        if abs(nf.moment(j) - 1.0) <= 1e-9:
            flags.append(f"resonant_j{j}" if j <= 2 else f"fourth_order_resonant_j{j}")
    return flags


def predictions(nf: NormalForm, spec, lam: float) -> tuple[float, float, float, float, list[str]]:
    """(gamma, sigma, landauer, D) predictions; fourth order for the Anderson model."""
    flags = []
    try:
        D = coefficient_D(nf)
    except ResonanceError:
        return math.nan, math.nan, math.nan, math.nan, flags
    gamma = sigma = D * lam * lam
    if isinstance(spec, AndersonSpec):
        m2, m4 = spec.moments()
        try:
            orders = anderson_orders(spec.k, m2, m4, lam)
            gamma, sigma = orders.gamma, orders.sigma
        except ResonanceError:
            pass
    return gamma, sigma, 2.0 * D * lam * lam, D, flags


def sweep_point(nf: NormalForm, cfg: LoadedConfig, run: RunConfig, lam: float,
                index: int) -> tuple[SweepRow, Estimate | None, dict]:
    flags = _family_flags(nf)
    diag: dict = {}
    nan = math.nan
    g = s = gap = L = None
    est = set(cfg.output.estimators)
    try:
        if est & {"lyapunov", "variance"}:
            X = log_norm_samples(nf, lam, run, stream=8 * index)
            g = lyapunov_from_samples(X, run.N)
            if run.ensemble >= 2:
                s = variance_from_samples(X, run.N)
                gap = sps_gap_from_samples(X, run.N)
                if s.diagnostics["small_ensemble"]:
                    flags.append("small_ensemble")
        if "landauer" in est:
            try:
                D = coefficient_D(nf)
            except ResonanceError:
                D = None
            L = estimate_landauer_mc(nf, lam, cfg.landauer_N, cfg.landauer_samples, run.seed,
                                     stream=8 * index + 2, renorm_every=run.renorm_every,
                                     gamma_hat=None if D is None else 2.0 * D * lam * lam)
            if L.diagnostics["heavy_tail"]:
                flags.append("heavy_tail")
    except (ValueError, OverflowError) as err:
        flags.append("estimator_error")
        diag["error"] = str(err)
    try:
        exact = landauer_exponent_exact(nf, lam)
    except EigenvalueSeparationError as err:
        exact = nan
        flags.append("eigenvalue_separation")
        diag["separation"] = str(err)
    gp, sp, lp, D, pflags = predictions(nf, cfg.spec, lam)
    flags += pflags
    row = SweepRow(
        lam=float(lam),
        gamma_mc=g.value if g else nan, gamma_mc_se=g.stderr if g else nan,
        sigma_mc=s.value if s else nan, sigma_mc_se=s.stderr if s else nan,
        landauer_mc=L.value if L else nan, landauer_mc_se=L.stderr if L else nan,
        gamma_pred=gp, sigma_pred=sp, landauer_pred=lp, landauer_exact=exact, D=D,
        flags=";".join(flags),
    )
    if gap is not None:
        diag["sps_gap"] = {"value": gap.value, "stderr": gap.stderr}
    return row, gap, diag


def _normal_form(cfg: LoadedConfig) -> NormalForm:
    return extract_normal_form(cfg.family())


def _run_config(cfg: LoadedConfig, seed_override: int | None) -> RunConfig:
    return cfg.run if seed_override is None else cfg.run.replace(seed=seed_override)


def _json_safe(x):
    if isinstance(x, float) and not math.isfinite(x):
        return None
    if isinstance(x, dict):
        return {k: _json_safe(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_json_safe(v) for v in x]
    return x


def _resolve(out_dir: Path, name: str) -> Path:
    p = Path(name)
    return p if p.is_absolute() else out_dir / p


# ---------------------------------------------------------------- commands


def cmd_validate(args) -> int:
    try:
        cfg = load_config(args.config)
    except ConfigError as err:
        print(f"invalid config: {err}", file=sys.stderr)
        return EXIT_INVALID
    diag = verify_critical(cfg.family())
    print(f"family: {cfg.family().name}")
    print(f"max |[T0, T0']|: {diag.max_commutator:.3e}")
    print(f"max |tr T0|:     {diag.max_abs_trace:.12g}")
    print("phase moments E exp(2ij eta):")
    for j, m in enumerate(diag.moments, start=1):
        mark = "  RESONANT" if j in diag.resonant else ""
        print(f"  j={j}: {m.real:+.12f} {m.imag:+.12f}i  |1 - m| = {abs(1 - m):.3e}{mark}")
    for f in diag.failures:
        print(f"FAIL: {f}")
    for j in diag.resonant:
        scope = "leading order invalid" if j <= 2 else "fourth-order terms only"
        print(f"WARNING: resonance at j={j} ({scope})")
    print("PASS" if diag.passed else "FAIL")
    return EXIT_OK if diag.passed else EXIT_INVALID


def _load_nf(args):
    try:
        cfg = load_config(args.config)
    except ConfigError as err:
        print(f"invalid config: {err}", file=sys.stderr)
        return None, None
    try:
        nf = _normal_form(cfg)
    except (CriticalPointError, ValueError) as err:
        print(f"family is not critical: {err}", file=sys.stderr)
        return cfg, None
    return cfg, nf


def cmd_sweep(args) -> int:
    cfg, nf = _load_nf(args)
    if nf is None:
        return EXIT_INVALID
    run = _run_config(cfg, args.seed_override)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows, gaps, diags = [], [], []
    for i, lam in enumerate(cfg.lambdas):
        row, gap, diag = sweep_point(nf, cfg, run, lam, i)
        rows.append(row)
        gaps.append(gap)
        diags.append(diag)
        print(f"lambda={lam:.6g} gamma={row.gamma_mc:.6e}+-{row.gamma_mc_se:.1e} "
              f"sigma={row.sigma_mc:.6e}+-{row.sigma_mc_se:.1e} flags={row.flags or '-'}")
    fits = sweep_fits(rows, gaps)
    csv_path = _resolve(out_dir, cfg.output.csv)
    write_rows_csv(csv_path, rows)
    fit_path = csv_path.with_name(csv_path.stem + "_fits.csv")
    with open(fit_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["quantity", "power", "coeff", "stderr"])
        for q in ("gamma", "sigma", "sps_gap"):
            if q in fits:
                for p, c, s in zip(fits[q]["powers"], fits[q]["coeffs"], fits[q]["stderr"]):
                    w.writerow([q, p, _fmt(c), _fmt(s)])
    report = {
        "config_sha256": cfg.digest,
        "seed": run.seed,
        "family": nf.name,
        "columns": CSV_COLUMNS,
        "rows": [dict(zip(CSV_COLUMNS, asdict(r).values())) for r in rows],
        "diagnostics": diags,
        "fits": fits,
    }
    with open(_resolve(out_dir, cfg.output.json), "w") as fh:
        json.dump(_json_safe(report), fh, indent=2)
    for q in ("gamma", "sigma"):
        if q in fits:
            print(f"{q}: lam^2 coeff {fits[q]['coeffs'][0]:.6g} +- {fits[q]['stderr'][0]:.2g}, "
                  f"lam^4 coeff {fits[q]['coeffs'][1]:.6g} +- {fits[q]['stderr'][1]:.2g}")
    if "sps_gap" in fits:
        print(f"gamma - sigma: lam^4 coeff {fits['sps_gap']['coeffs'][0]:.6g} "
              f"+- {fits['sps_gap']['stderr'][0]:.2g}")
    failed = any("estimator_error" in r.flags for r in rows)
    return EXIT_ESTIMATOR if failed else EXIT_OK


def moment_slack(nf: NormalForm, lam: float) -> float:
    """Allowance for the neglected higher orders of the moment predictions."""
    return 5.0 * lam ** 3 if is_anderson_frame(nf) else 5.0 * lam ** 2


def cmd_phases(args) -> int:
    cfg, nf = _load_nf(args)
    if nf is None:
        return EXIT_INVALID
    run = _run_config(cfg, args.seed_override)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    nbins = cfg.output.histogram_bins
    edges = np.linspace(0.0, 2.0 * math.pi, nbins + 1)
    hist_rows, moment_rows = [], []
    all_pass = True
    for i, lam in enumerate(cfg.lambdas):
        try:
            stats = phase_statistics(nf, lam, run, nbins=nbins, stream=8 * i + 1)
        except ValueError as err:
            print(f"lambda={lam}: estimator failed: {err}", file=sys.stderr)
            return EXIT_ESTIMATOR
        total = stats.histogram.sum()
        for b in range(nbins):
            c = int(stats.histogram[b])
            hist_rows.append([_fmt(float(lam)), b, _fmt(float(edges[b])), _fmt(float(edges[b + 1])),
                              c, _fmt(float(c / total / (edges[1] - edges[0])))])
        slack = moment_slack(nf, lam)
        for j, est in enumerate(stats.moments, start=1):
            try:
                pred = predict_phase_moment(nf, lam, j) if j <= 2 else None
            except ResonanceError:
                pred = None
            ok = "n/a" if pred is None else str(est.within(pred, 3.0, slack))
            if ok == "False":
                all_pass = False
            moment_rows.append([
                _fmt(float(lam)), j, _fmt(est.value.real), _fmt(est.value.imag), _fmt(est.stderr_re),
                _fmt(est.stderr_im), "" if pred is None else _fmt(pred.real),
                "" if pred is None else _fmt(pred.imag), _fmt(slack), ok,
            ])
            print(f"lambda={lam:.4g} j={j} I={est.value:.4e} +- {est.stderr:.1e} "
                  f"pred={'-' if pred is None else f'{pred:.4e}'} pass={ok}")
    with open(out_dir / "phases_histogram.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["lambda", "bin", "theta_lo", "theta_hi", "count", "density"])
        w.writerows(hist_rows)
    with open(out_dir / "phases_moments.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["lambda", "j", "re", "im", "se_re", "se_im", "pred_re", "pred_im", "slack",
                    "pass"])
        w.writerows(moment_rows)
    with open(out_dir / "phases.json", "w") as fh:
        json.dump({"config_sha256": cfg.digest, "seed": run.seed, "bins": nbins,
                   "moments": moment_rows, "all_pass": all_pass}, fh, indent=2)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="spslab",
                                description="Weak-disorder analysis of random transfer matrices.")
    p.add_argument("command", choices=["validate", "sweep", "phases"])
    p.add_argument("config", help="JSON configuration file")
    p.add_argument("--out-dir", default=".", help="directory for output files")
    p.add_argument("--threads", type=int, default=None, help="worker threads for the MC kernels")
    p.add_argument("--seed-override", type=int, default=None, help="replace the config seed")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.threads is not None:
        import numba

        numba.set_num_threads(max(1, min(args.threads, numba.config.NUMBA_NUM_THREADS)))
    if args.seed_override is not None and not 0 <= args.seed_override < 2 ** 64:
        print("seed override must be a 64-bit unsigned integer", file=sys.stderr)
        return EXIT_INVALID
    handler = {"validate": cmd_validate, "sweep": cmd_sweep, "phases": cmd_phases}[args.command]
    return handler(args)


if __name__ == "__main__":
    sys.exit(main())
