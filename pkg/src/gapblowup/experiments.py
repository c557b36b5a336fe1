"""End-to-end runs: epsilon sweeps, rate fits, certificates and their output files.

Config files use an INI grammar (one ``[experiment]`` section):

    [experiment]
    experiment = sweep            ; sweep | local-gap | h-certify | mode-decay | rates
    n = 3                         ; comma separated list allowed
    eps_start = 1e-2              ; geometric schedule start ...
    eps_stop = 1e-5               ; ... and stop (inclusive)
    eps_count = 6
    eps_values =                  ; explicit schedule, overrides the three keys above
    grid = 513x65                 ; coarse grid; the check grid doubles the cells
    fit_window =                  ; "lo, hi" range of eps used in rate fits (empty: all)
    ...

Every key of :class:`ExperimentConfig` may appear; unknown keys are errors.
"""

from __future__ import annotations

import configparser
import csv
import dataclasses
import json
import math
import os
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import geometry as geo
from . import ode, pde2d, rates

EXPERIMENTS = ("sweep", "local-gap", "h-certify", "mode-decay", "rates")


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------- config


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str = "sweep"
    n: tuple = (3,)
    eps_start: float = 1e-2
    eps_stop: float = 1e-5
    eps_count: int = 6
    eps_values: tuple = ()
    grid: tuple = (513, 65)
    fit_window: tuple = ()
    u11_window: tuple = (0.125, 1.0)  # radii for the C1 fit, in units of sqrt(eps)
    k: tuple = (1, 2, 3, 4, 5)
    shapes: tuple = ("unit_ball", "quadratic_perturbed")
    shape_a: float = 1.0
    shape_gamma: float = 0.5
    shape_b: float = 0.3
    R0: float = 0.8
    outer_value: float = 1.0
    beta: str = "auto"
    n_max: int = 8
    k_max: int = 6
    tol_u11_slope: float = 0.0  # 0 selects 0.03 for n = 3 and 0.05 otherwise
    tol_grad_slope: float = 0.05
    tol_grid: float = 0.01
    tol_triangle: float = 0.05
    tol_subsolution: float = 1e-8
    tol_envelope: float = 0.2
    tol_decay: float = 1e-6
    local_gap_max_slope: float = -0.24
    solver_tol: float = 1e-10
    threads: int = 1
    out: str = "results"

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(f"unknown experiment {self.experiment!r}")
        for nn in self.n:
            rates.check_dimension(nn)
        if self.experiment in ("sweep", "local-gap", "h-certify", "mode-decay"):
            sched = self.eps_schedule
            if not sched:
                raise ConfigError("empty eps schedule")
            if any(e <= 0 for e in sched):
                raise ConfigError("eps values must be positive")
            if any(b >= a for a, b in zip(sched, sched[1:])):
                raise ConfigError("eps schedule must be strictly decreasing")
        if self.experiment == "sweep" and any(e >= 0.25 for e in self.eps_schedule):
            raise ConfigError("sweep needs eps < 1/4")
        if len(self.grid) != 2 or min(self.grid) < 8:
            raise ConfigError("grid must be two sizes >= 8")
        if self.experiment == "mode-decay" and any(kk < 1 for kk in self.k):
            raise ConfigError("mode decay needs k >= 1 (alpha_0 = 0 makes the bound vacuous)")
        if self.fit_window and len(self.fit_window) != 2:
            raise ConfigError("fit_window needs two values")
        if self.threads < 1:
            raise ConfigError("threads must be positive")

    @property
    def eps_schedule(self) -> tuple:
        if self.eps_values:
            return tuple(float(e) for e in self.eps_values)
        if self.eps_count < 1:
            return ()
        if self.eps_count == 1:
            return (float(self.eps_start),)
        return tuple(float(e) for e in np.geomspace(self.eps_start, self.eps_stop, self.eps_count))

    @property
    def fine_grid(self) -> tuple:
        return tuple(2 * g - 1 for g in self.grid)

    def u11_tolerance(self, n: int) -> float:
        if self.tol_u11_slope > 0:
            return self.tol_u11_slope
        return 0.03 if n == 3 else 0.05

    def replace(self, **kw) -> "ExperimentConfig":
        return dataclasses.replace(self, **kw)


_FIELDS = {f.name: f for f in dataclasses.fields(ExperimentConfig)}


def _format_value(v) -> str:
    if isinstance(v, tuple):
        return ", ".join(_format_value(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def config_to_text(cfg: ExperimentConfig) -> str:
    lines = ["[experiment]"]
    for name in _FIELDS:
        v = getattr(cfg, name)
        if name == "grid":
            lines.append(f"grid = {v[0]}x{v[1]}")
        else:
            lines.append(f"{name} = {_format_value(v)}")
    return "\n".join(lines) + "\n"


def _parse_value(name: str, raw: str, default):
    raw = raw.strip()
    if name == "grid":
        m = re.fullmatch(r"(\d+)\s*[x,]\s*(\d+)", raw)
        if not m:
            raise ValueError("grid must look like 513x65")
        return (int(m.group(1)), int(m.group(2)))
    if isinstance(default, tuple):
        if not raw:
            return ()
        items = [s.strip() for s in raw.split(",") if s.strip()]
        if name in ("n", "k"):
            return tuple(int(s) for s in items)
        if name == "shapes":
            return tuple(items)
        return tuple(float(s) for s in items)
    if isinstance(default, bool):
        return raw.lower() in ("1", "true", "yes", "on")
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    return raw


def _key_lines(text: str) -> dict:
    out = {}
    for i, line in enumerate(text.splitlines(), start=1):
        m = re.match(r"\s*([A-Za-z_][\w-]*)\s*[=:]", line)
        if m:
            out.setdefault(m.group(1), i)
    return out


def parse_config(text: str, source: str = "<config>", **overrides) -> ExperimentConfig:
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"), interpolation=None)
    cp.optionxform = str  # keys are case sensitive (R0)
    try:
        cp.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from exc
    if not cp.has_section("experiment"):
        raise ConfigError(f"{source}: missing [experiment] section")
    lines = _key_lines(text)
    kw = {}
    for key, raw in cp.items("experiment"):
        name = key.replace("-", "_")
        line = lines.get(key, "?")
        if name not in _FIELDS:
            raise ConfigError(f"{source}, line {line}: unknown key {key!r}")
        default = _FIELDS[name].default
        try:
            kw[name] = _parse_value(name, raw, default)
        except ValueError as exc:
            raise ConfigError(f"{source}, line {line}: bad value for {key!r}: {exc}") from exc
    kw.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return ExperimentConfig(**kw)
    except (ConfigError, rates.DomainError) as exc:
        raise ConfigError(f"{source}: {exc}") from exc


def load_config(path, **overrides) -> ExperimentConfig:
    with open(path) as fh:
        text = fh.read()
    return parse_config(text, source=str(path), **overrides)


# ---------------------------------------------------------------- fits and records


@dataclass
class RateFit:
    x: np.ndarray
    y: np.ndarray
    slope: float
    intercept: float
    max_residual: float
    window: tuple
    excluded: list = field(default_factory=list)

    @property
    def log_pairs(self):
        return np.log(self.x), np.log(self.y)

    def predict(self, x):
        return np.exp(self.intercept) * np.asarray(x, float) ** self.slope

    def as_dict(self) -> dict:
        return {
            "slope": self.slope,
            "intercept": self.intercept,
            "max_residual": self.max_residual,
            "window": list(self.window),
            "samples": len(self.x),
            "excluded": list(self.excluded),
        }


def fit_rate(samples, window: Optional[Sequence[float]] = None) -> RateFit:
    """Least squares on (log x, log y); ``window`` restricts x to [lo, hi]."""
    pts = [(float(a), float(b)) for a, b in samples]
    if window:
        lo, hi = min(window), max(window)
        pts = [p for p in pts if lo * (1 - 1e-12) <= p[0] <= hi * (1 + 1e-12)]
    if len(pts) < 4:
        raise ValueError(f"rate fit needs at least 4 samples, got {len(pts)}")
    x = np.array([p[0] for p in pts])
    y = np.array([p[1] for p in pts])
    if np.any(x <= 0) or np.any(y <= 0) or not np.all(np.isfinite(y)):
        raise ValueError("rate fit needs positive finite values")
    lx, ly = np.log(x), np.log(y)
    A = np.column_stack([lx, np.ones_like(lx)])
    (slope, intercept), *_ = np.linalg.lstsq(A, ly, rcond=None)
    res = ly - (slope * lx + intercept)
    win = tuple(window) if window else (float(x.min()), float(x.max()))
    return RateFit(x, y, float(slope), float(intercept), float(np.max(np.abs(res))), win)


def fit_rate_trimmed(samples, window=None, largest_key=True) -> RateFit:
    """fit_rate, refitted without the largest-x point when its residual exceeds twice the median."""
    fit = fit_rate(samples, window)
    if len(fit.x) <= 4:
        return fit
    lx, ly = fit.log_pairs
    res = np.abs(ly - (fit.slope * lx + fit.intercept))
    i = int(np.argmax(fit.x))
    med = float(np.median(res))
    if res[i] > 2.0 * med and med > 0:
        keep = [(a, b) for j, (a, b) in enumerate(zip(fit.x, fit.y)) if j != i]
        refit = fit_rate(keep)
        refit.window = fit.window
        refit.excluded = [float(fit.x[i])]
        return refit
    return fit


def check(value, target, tolerance, passed, kind="abs") -> dict:
    return {"value": value, "target": target, "tolerance": tolerance, "kind": kind, "passed": bool(passed)}


@dataclass
class RunRecord:
    experiment: str
    config: ExperimentConfig
    columns: tuple
    points: list = field(default_factory=list)
    fits: dict = field(default_factory=dict)
    checks: dict = field(default_factory=dict)
    notes: list = field(default_factory=list)
    extras: dict = field(default_factory=dict)  # name -> (columns, rows) for additional CSVs

    @property
    def passed(self) -> bool:
        return all(c["passed"] for c in self.checks.values())

    def summary(self) -> dict:
        return {
            "experiment": self.experiment,
            "passed": self.passed,
            "checks": self.checks,
            "fits": {k: f.as_dict() for k, f in self.fits.items()},
            "notes": self.notes,
            "points": len(self.points),
        }


def _map(fn, items, threads: int):
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


# ---------------------------------------------------------------- lower-bound sweep


SWEEP_COLUMNS = (
    "n", "eps", "sqrt_eps", "u11", "u11_coarse", "u11_delta", "grad", "grad_coarse", "grad_delta",
    "h_sqrt_eps", "C1", "D", "remainder_slope", "triangle", "subsolution_margin",
    "iterations_coarse", "iterations_fine", "converged", "accepted",
)


def _sweep_point(n: int, eps: float, cfg: ExperimentConfig) -> dict:
    se = math.sqrt(eps)
    coarse_g = geo.default_sphere_grading(eps, cfg.grid[0])
    sols = []
    for (ns, nt), grading in ((cfg.grid, coarse_g), (cfg.fine_grid, coarse_g.refined())):
        sols.append(
            pde2d.solve_reduced_sphere_problem(n, eps, ns, nt, grading=grading, tol=cfg.solver_tol, check=False)
        )
    coarse, fine = sols
    u_c = pde2d.gap_average(coarse, se, eps)
    u_f = pde2d.gap_average(fine, se, eps)
    g_c = pde2d.sup_gradient(coarse, 2.0 * se)
    g_f = pde2d.sup_gradient(fine, 2.0 * se)
    h = ode.solve_h(ode.ModalOperatorParams(n, eps, 1))
    radii = se * np.geomspace(cfg.u11_window[0], cfg.u11_window[1], 17)
    prof = pde2d.gap_profile(fine, radii, eps)
    dec = ode.u11_decompose((radii, prof), h, (radii[0], radii[-1]), n=n)
    h_se = float(h(se))
    converged = coarse.report.converged and fine.report.converged
    margin = min(pde2d.subsolution_margin(coarse), pde2d.subsolution_margin(fine))
    du = abs(u_f - u_c) / abs(u_f)
    dg = abs(g_f - g_c) / abs(g_f)
    return {
        "n": n,
        "eps": eps,
        "sqrt_eps": se,
        "u11": u_f,
        "u11_coarse": u_c,
        "u11_delta": du,
        "grad": g_f,
        "grad_coarse": g_c,
        "grad_delta": dg,
        "h_sqrt_eps": h_se,
        "C1": dec.C1,
        "D": dec.D,
        "remainder_slope": dec.remainder_slope if dec.remainder_slope is not None else float("nan"),
        "triangle": abs(dec.C1 * h_se - u_f) / abs(u_f),
        "subsolution_margin": margin,
        "iterations_coarse": coarse.report.iterations,
        "iterations_fine": fine.report.iterations,
        "converged": bool(converged),
        "accepted": bool(converged and du < cfg.tol_grid and dg < cfg.tol_grid),
    }


def run_lower_bound_sweep(cfg: ExperimentConfig) -> RunRecord:
    rec = RunRecord("sweep", cfg, SWEEP_COLUMNS)
    tasks = [(n, e) for n in cfg.n for e in cfg.eps_schedule]
    rec.points = _map(lambda t: _sweep_point(t[0], t[1], cfg), tasks, cfg.threads)
    for n in cfg.n:
        pts = [p for p in rec.points if p["n"] == n]
        for p in pts:
            if not p["converged"]:
                rec.notes.append(f"n={n} eps={p['eps']:.6g}: unconverged solve excluded")
            elif not p["accepted"]:
                rec.notes.append(f"n={n} eps={p['eps']:.6g}: grid delta above {cfg.tol_grid}, excluded from fits")
        good = [p for p in pts if p["accepted"]]
        a = rates.alpha(n)
        tol_u = cfg.u11_tolerance(n)
        win = cfg.fit_window or None
        try:
            fu = fit_rate_trimmed([(p["eps"], p["u11"]) for p in good], win)
            fg = fit_rate_trimmed([(p["eps"], p["grad"]) for p in good], win)
        except ValueError as exc:
            rec.checks[f"fit_n{n}"] = check(None, None, None, False, "error")
            rec.notes.append(f"n={n}: {exc}")
            continue
        for name, f in ((f"u11_n{n}", fu), (f"grad_n{n}", fg)):
            rec.fits[name] = f
            if f.excluded:
                rec.notes.append(f"{name}: largest eps point {f.excluded[0]:.6g} excluded (residual > 2x median)")
        rec.checks[f"u11_slope_n{n}"] = check(fu.slope, a / 2, tol_u, abs(fu.slope - a / 2) <= tol_u)
        rec.checks[f"grad_slope_n{n}"] = check(
            fg.slope, (a - 1) / 2, cfg.tol_grad_slope, abs(fg.slope - (a - 1) / 2) <= cfg.tol_grad_slope
        )
        worst = max(max(p["u11_delta"], p["grad_delta"]) for p in pts)
        rec.checks[f"grid_convergence_n{n}"] = check(worst, 0.0, cfg.tol_grid, worst < cfg.tol_grid, "max")
        margin = min(p["subsolution_margin"] for p in pts)
        rec.checks[f"subsolution_n{n}"] = check(margin, 0.0, cfg.tol_subsolution, margin >= -cfg.tol_subsolution, "min")
        tri = max(p["triangle"] for p in pts)
        rec.checks[f"triangle_n{n}"] = check(tri, 0.0, cfg.tol_triangle, tri < cfg.tol_triangle, "max")
        us = [p["u11"] for p in pts]
        mono = all(b <= a_ * 1.01 for a_, b in zip(us, us[1:]))
        rec.checks[f"u11_monotone_n{n}"] = check(None, None, 0.01, mono, "probe")
        c1 = min(p["C1"] for p in pts)
        rec.checks[f"C1_positive_n{n}"] = check(c1, 0.0, 0.0, c1 > 0, "min")
    return rec


# ---------------------------------------------------------------- h certification


H_COLUMNS = (
    "n", "eps", "beta", "passed", "lower_ok", "upper_ok", "monotone", "min_gap_lower", "min_gap_upper",
    "inf_ratio", "argmin_r", "spread", "nodes",
)


def _beta_for(cfg: ExperimentConfig, n: int) -> float:
    if str(cfg.beta).strip().lower() in ("auto", "beta_star", ""):
        return rates.beta_star(n)
    return float(cfg.beta)


def run_h_certification(cfg: ExperimentConfig) -> RunRecord:
    rec = RunRecord("h-certify", cfg, H_COLUMNS)
    tasks = [(n, e) for n in cfg.n for e in cfg.eps_schedule]

    def one(t):
        n, eps = t
        beta = _beta_for(cfg, n)
        sol = ode.solve_h(ode.ModalOperatorParams(n, eps, 1), check=False)
        try:
            cert = ode.verify_h_bounds(sol, n, eps, beta)
        except rates.DomainError as exc:
            return {"n": n, "eps": eps, "beta": beta, "passed": False, "error": str(exc)}, None
        row = {k: v for k, v in cert.as_dict().items() if k in H_COLUMNS}
        row["nodes"] = sol.grid.size
        r = sol.r
        prof = {
            "r": r,
            "h": sol.values,
            "r^alpha": r ** rates.alpha(n),
            "lower_envelope": ode.lower_envelope(r, n, eps, beta),
        }
        prof["ratio"] = prof["h"] / prof["lower_envelope"]
        return row, (prof, cert.as_dict())

    results = _map(one, tasks, cfg.threads)
    for (row, extra), (n, eps) in zip(results, tasks):
        rec.points.append({c: row.get(c, float("nan")) for c in H_COLUMNS})
        if "error" in row:
            rec.notes.append(f"n={n} eps={eps:.6g}: {row['error']}")
        if extra is not None:
            suffix = "" if len(tasks) == 1 else f"_n{n}_eps{eps:.3g}"
            prof, cert = extra
            cols = ("r", "h", "r^alpha", "lower_envelope", "ratio")
            rows = [dict(zip(cols, vals)) for vals in zip(*(prof[c] for c in cols))]
            rec.extras[f"h_profile{suffix}.csv"] = (cols, rows)
            rec.extras[f"h_certificate{suffix}.json"] = cert
    ok = all(p["passed"] is True for p in rec.points)
    rec.checks["bounds"] = check(None, None, 1e-8, ok, "all")
    for n in cfg.n:
        pts = [p for p in rec.points if p["n"] == n and p["passed"] is True]
        if len(pts) >= 2:
            vals = [p["inf_ratio"] for p in pts]
            stab = max(vals) / min(vals) - 1.0
            rec.checks[f"envelope_stability_n{n}"] = check(stab, 0.0, cfg.tol_envelope, stab < cfg.tol_envelope, "max")
        spread = max((p["spread"] for p in pts), default=float("nan"))
        rec.checks[f"extrapolation_spread_n{n}"] = check(spread, 0.0, 1e-4, spread < 1e-4, "max")
        below = rates.beta_star(n) - 0.2
        rec.checks[f"rejects_below_beta_star_n{n}"] = check(
            below, rates.beta_star(n), None, not rates.subsolution_condition(n, below), "probe"
        )
    return rec


# ---------------------------------------------------------------- mode decay


DECAY_COLUMNS = ("n", "k", "eps", "alpha_k", "max_ratio", "worst_r", "passed", "slope_outer", "slope_inner")


def run_mode_decay(cfg: ExperimentConfig) -> RunRecord:
    rec = RunRecord("mode-decay", cfg, DECAY_COLUMNS)
    if any(k < 1 for k in cfg.k):
        raise ConfigError("mode decay needs k >= 1")
    tasks = [(n, k, e) for n in cfg.n for k in cfg.k for e in cfg.eps_schedule]

    def one(t):
        n, k, eps = t
        d = ode.modal_decay_check(ode.ModalOperatorParams(n, eps, k), tol=cfg.tol_decay)
        return {c: getattr(d, c) for c in DECAY_COLUMNS}

    rec.points = _map(one, tasks, cfg.threads)
    worst = max(p["max_ratio"] for p in rec.points)
    rec.checks["decay_bound"] = check(worst, 1.0, cfg.tol_decay, all(p["passed"] for p in rec.points), "max")
    # aggregation over synthetic modes: omega of rho^alpha_1 and 0.5 rho^alpha_2
    rho = np.geomspace(1e-3, 1e-2, 11)
    for n in cfg.n:
        modes = [lambda x, kk=kk: np.asarray(x) ** rates.alpha_k(n, kk) for kk in (1, 2)]
        prof = ode.decay_profile(modes, rho, (1.0, 0.5))
        a1 = rates.alpha_k(n, 1)
        rec.checks[f"omega_slope_n{n}"] = check(prof.slope, a1, 0.05, abs(prof.slope - a1) <= 0.05)
        rec.extras[f"omega_n{n}.csv"] = (
            ("x", "y", "fit"),
            [{"x": x, "y": y, "fit": float(prof.omega[0] * (x / rho[0]) ** prof.slope)} for x, y in zip(rho, prof.omega)],
        )
    return rec


# ---------------------------------------------------------------- local gap


LOCAL_COLUMNS = ("shape", "n", "eps", "R", "eps_plus_R2", "grad", "grad_coarse", "grad_delta", "converged")


def _shape(cfg: ExperimentConfig, kind: str) -> geo.InclusionShape:
    if kind == "unit_ball":
        return geo.InclusionShape.unit_ball(cfg.R0)
    if kind == "quadratic_perturbed":
        return geo.InclusionShape.quadratic_perturbed(cfg.shape_a, cfg.shape_gamma, cfg.shape_b, cfg.R0)
    raise ConfigError(f"unknown shape {kind!r}")


def dyadic_radii(eps: float, R0: float) -> list:
    out = []
    R = math.sqrt(eps)
    while R <= 0.5 * R0 * (1 + 1e-12):
        out.append(R)
        R *= 2.0
    return out


def run_local_gap(cfg: ExperimentConfig) -> RunRecord:
    rec = RunRecord("local-gap", cfg, LOCAL_COLUMNS)
    tasks = [(s, n, e) for s in cfg.shapes for n in cfg.n for e in cfg.eps_schedule]

    def one(t):
        kind, n, eps = t
        shape = _shape(cfg, kind)
        n_rho, n_n = cfg.grid
        coarse_g = geo.Grading.with_first_width(shape.R0, n_rho - 1, 0.05 * math.sqrt(eps) * 256.0 / (n_rho - 1))
        sols = [
            pde2d.solve_local_gap(n, eps, shape, a, b, grading=g, outer_value=cfg.outer_value, tol=cfg.solver_tol)
            for (a, b), g in ((cfg.grid, coarse_g), (cfg.fine_grid, coarse_g.refined()))
        ]
        rows = []
        for R in dyadic_radii(eps, shape.R0):
            gc = pde2d.sup_gradient_annulus(sols[0], R, 2 * R)
            gf = pde2d.sup_gradient_annulus(sols[1], R, 2 * R)
            rows.append(
                {
                    "shape": kind,
                    "n": n,
                    "eps": eps,
                    "R": R,
                    "eps_plus_R2": eps + R * R,
                    "grad": gf,
                    "grad_coarse": gc,
                    "grad_delta": abs(gf - gc) / abs(gf) if gf else 0.0,
                    "converged": bool(sols[0].report.converged and sols[1].report.converged),
                }
            )
        return rows

    for (kind, n, eps), rows in zip(tasks, _map(one, tasks, cfg.threads)):
        rec.points.extend(rows)
        good = [r for r in rows if r["converged"]]
        name = f"{kind}_n{n}_eps{eps:.3g}"
        try:
            f = fit_rate([(r["eps_plus_R2"], r["grad"]) for r in good])
        except ValueError as exc:
            rec.checks[name] = check(None, None, None, False, "error")
            rec.notes.append(f"{name}: {exc}")
            continue
        rec.fits[name] = f
        a = rates.alpha(n)
        rec.checks[f"slope_{name}"] = check(
            f.slope, cfg.local_gap_max_slope, 0.0, f.slope <= cfg.local_gap_max_slope, "upper"
        )
        rec.checks[f"bound_{name}"] = check(f.slope, (a - 1) / 2, 0.05, f.slope >= (a - 1) / 2 - 0.05, "lower")
        worst = max(r["grad_delta"] for r in rows)
        if worst >= cfg.tol_grid:
            rec.notes.append(f"{name}: annulus grid delta {worst:.3g} (informational)")
    return rec


# ---------------------------------------------------------------- rates table


def run_rates(cfg: ExperimentConfig) -> RunRecord:
    n_lo = min(cfg.n)
    rows = rates.rate_table(n_lo, max(cfg.n_max, n_lo), cfg.k_max)
    rec = RunRecord("rates", cfg, tuple(rows[0].keys()))
    rec.points = rows
    rec.extras["rates.csv"] = (rec.columns, rows)
    a3 = rates.alpha(3)
    rec.checks["gradient_exponent_n3"] = check(
        (a3 - 1) / 2, (math.sqrt(2) - 2) / 2, 1e-12, abs((a3 - 1) / 2 - (math.sqrt(2) - 2) / 2) <= 1e-12
    )
    return rec


RUNNERS = {
    "sweep": run_lower_bound_sweep,
    "h-certify": run_h_certification,
    "mode-decay": run_mode_decay,
    "local-gap": run_local_gap,
    "rates": run_rates,
}


def run(cfg: ExperimentConfig) -> RunRecord:
    return RUNNERS[cfg.experiment](cfg)


# ---------------------------------------------------------------- output


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isnan(v):
            return "nan"
        return f"{v:.12g}"
    if v is None:
        return ""
    return str(v)


def _jsonable(v):
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, (bool, np.bool_)):
        return bool(v)
    if isinstance(v, (int, np.integer)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if not math.isfinite(v):
            return None
        return float(f"{v:.12g}")
    if isinstance(v, np.ndarray):
        return _jsonable(v.tolist())
    return v


def dump_json(obj, path) -> None:
    with open(path, "w") as fh:
        json.dump(_jsonable(obj), fh, sort_keys=True, indent=2)
        fh.write("\n")


def write_csv(path, columns, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_fmt(row.get(c)) for c in columns])


def emit_results(record: RunRecord, out_dir) -> list:
    """Write results.csv, summary.json, config.snapshot and per-fit CSVs; return the paths."""
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    p = os.path.join(out_dir, "results.csv")
    write_csv(p, record.columns, record.points)
    paths.append(p)
    p = os.path.join(out_dir, "summary.json")
    dump_json(record.summary(), p)
    paths.append(p)
    p = os.path.join(out_dir, "config.snapshot")
    with open(p, "w") as fh:
        fh.write(config_to_text(record.config))
    paths.append(p)
    for name, fit in sorted(record.fits.items()):
        p = os.path.join(out_dir, f"fit_{name}.csv")
        rows = [{"x": x, "y": y, "fit": float(fit.predict(x))} for x, y in zip(fit.x, fit.y)]
        write_csv(p, ("x", "y", "fit"), rows)
        paths.append(p)
    for name, payload in sorted(record.extras.items()):
        p = os.path.join(out_dir, name)
        if name.endswith(".json"):
            dump_json(payload, p)
        else:
            cols, rows = payload
            write_csv(p, cols, rows)
        paths.append(p)
    return paths
