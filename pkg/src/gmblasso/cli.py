"""Config-driven command line: certify / solve / rates / kernel-check.

Configuration grammar (UTF-8, line oriented):

    # comment
    section.key = value

Values are scalars, comma-separated lists, or (for per-atom coordinates in
d > 1) semicolon-separated rows of whitespace-separated numbers. Parse and
validation problems are reported as ``config:LINE:COL: message`` and exit
with status 2; failed checks exit 1; success exits 0.

All CSV output uses shortest round-trip float formatting and ``\n``
terminators so identical configurations reproduce byte-identical files
regardless of platform or worker count. Every output file gets a
``<name>.meta.json`` sidecar carrying the fully resolved configuration.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import math
import os
import sys
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .certificates import (
    GridSpec,
    SingularSystemError,
    build_upsilon,
    lpc_constants,
    separation_check,
    solve_certificates,
    verify_nondegeneracy,
)
from .experiments import GroundTruthMixture, rate_sweep, sample
from .geometry import geodesic_point, metric_diag_batch
from .kernel import (
    KernelContext,
    _christoffel_coeffs,
    data_witness,
    grad12_batch,
    grad1_batch,
    grad2_batch,
    hess2_batch,
    kernel_values,
    semi_distance_pairs,
)
from .measures import DiscreteMeasure, DomainBox
from .solver import (
    ObjectiveContext,
    SolverConfig,
    acceptance_check,
    cpgd_solve,
    initial_measure,
    recommended_parameters,
)

__all__ = ["ConfigError", "RunConfig", "parse_config_text", "build_run_config", "main"]


class ConfigError(Exception):
    """Configuration syntax or validation problem, with source position."""

    def __init__(self, message: str, line: int = 0, col: int = 0):
        super().__init__(message)
        self.line = line
        self.col = col

    def render(self) -> str:
        if self.line:
            return f"config:{self.line}:{self.col}: {self}"
        return f"config error: {self}"


def parse_config_text(text: str) -> dict:
    """Parse `section.key = value` lines into {key: (raw_value, line, col)}."""
    entries: dict = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0]
        if not line.strip():
            continue
        if "=" not in line:
            raise ConfigError("expected 'section.key = value'", lineno,
                              len(line.rstrip()) + 1)
        key_part, _, value_part = line.partition("=")
        key = key_part.strip()
        key_col = len(key_part) - len(key_part.lstrip()) + 1
        if not key or "." not in key or any(ch.isspace() for ch in key):
            raise ConfigError(f"malformed key {key!r}", lineno, key_col)
        value = value_part.strip()
        value_col = len(key_part) + 2 + (len(value_part) - len(value_part.lstrip()))
        if not value:
            raise ConfigError(f"empty value for {key!r}", lineno, value_col)
        if key in entries:
            raise ConfigError(f"duplicate key {key!r}", lineno, key_col)
        entries[key] = (value, lineno, value_col)
    return entries


_REQUIRED = object()


class _Entries:
    """Typed accessor over parsed entries; tracks consumption for unknown-key
    detection and carries source positions into error messages."""

    def __init__(self, entries: dict):
        self.entries = entries
        self.used: set = set()

    def _fetch(self, key, default):
        if key not in self.entries:
            if default is _REQUIRED:
                raise ConfigError(f"missing required key {key!r}")
            return None
        self.used.add(key)
        return self.entries[key]

    def _convert(self, key, conv, default):
        item = self._fetch(key, default)
        if item is None:
            return default
        raw, line, col = item
        try:
            return conv(raw)
        except ValueError as exc:
            raise ConfigError(f"{key}: {exc}", line, col) from None

    def str(self, key, default=_REQUIRED):
        return self._convert(key, lambda s: s, default)

    def int(self, key, default=_REQUIRED):
        return self._convert(key, lambda s: int(s, 10), default)

    def float(self, key, default=_REQUIRED):
        return self._convert(key, float, default)

    def bool(self, key, default=_REQUIRED):
        return self._convert(key, _to_bool, default)

    def floats(self, key, default=_REQUIRED):
        return self._convert(key, _to_float_list, default)

    def ints(self, key, default=_REQUIRED):
        return self._convert(key, lambda s: [int(tok, 10) for tok in _tokens(s)],
                             default)

    def matrix(self, key, d, default=_REQUIRED):
        return self._convert(key, lambda s: _to_matrix(s, d), default)

    def choice(self, key, options, default=_REQUIRED):
        def conv(s):
            if s not in options:
                raise ValueError(f"must be one of {', '.join(options)}")
            return s
        return self._convert(key, conv, default)

    def unknown_keys(self):
        return [k for k in self.entries if k not in self.used]


def _tokens(s: str):
    toks = [tok for tok in s.replace(",", " ").split() if tok]
    if not toks:
        raise ValueError("empty list")
    return toks


def _to_float_list(s: str):
    return [float(tok) for tok in _tokens(s)]


def _to_bool(s: str) -> bool:
    low = s.lower()
    if low in ("true", "yes", "1", "on"):
        return True
    if low in ("false", "no", "0", "off"):
        return False
    raise ValueError(f"expected a boolean, got {s!r}")


def _to_matrix(s: str, d: int):
    rows = [r for r in s.split(";") if r.strip()] if ";" in s else None
    if rows is None:
        if d != 1:
            raise ValueError("d > 1 needs ';'-separated rows of coordinates")
        return [[v] for v in _to_float_list(s)]
    out = []
    for row in rows:
        vals = _to_float_list(row)
        if len(vals) != d:
            raise ValueError(f"row {row.strip()!r} has {len(vals)} values, expected {d}")
        out.append(vals)
    return out


@dataclass
class RunConfig:
    """Validated run inputs; every referenced module precondition is checked
    when this object is built, before any work starts."""

    d: int
    tau: Optional[float]
    tau_rule: str
    box: DomainBox
    mixture: GroundTruthMixture
    solver: SolverConfig
    n: Optional[int]
    n_grid: tuple
    replications: int
    kappa_rule: str
    kappa_override: Optional[float]
    effective_radii: Optional[tuple]
    data_file: Optional[str]
    out_dir: str
    seed: int
    resolved: dict = field(default_factory=dict)


def _broadcast(vals, d, what):
    if len(vals) == 1:
        return tuple(vals) * d
    if len(vals) != d:
        raise ValueError(f"{what} needs 1 or {d} entries, got {len(vals)}")
    return tuple(vals)


def build_run_config(entries: dict) -> RunConfig:
    e = _Entries(entries)
    d = e.int("kernel.d", 1)
    tau = e.float("kernel.tau", None)
    tau_rule = e.choice("kernel.tau_rule", ("fixed", "prediction"), "fixed")
    if tau is None and tau_rule == "fixed":
        raise ConfigError("kernel.tau is required when kernel.tau_rule = fixed")

    weights = e.floats("scenario.weights")
    t_rows = e.matrix("scenario.t", d)
    u_rows = e.matrix("scenario.u", d)
    t_lo = e.floats("scenario.box.t_lo")
    t_hi = e.floats("scenario.box.t_hi")
    u_min = e.float("scenario.box.u_min")
    u_max = e.float("scenario.box.u_max")

    solver_cfg_kwargs = dict(
        max_particles=e.int("solver.max_particles", SolverConfig.max_particles),
        iterations=e.int("solver.iterations", SolverConfig.iterations),
        step_w=e.float("solver.step_w", SolverConfig.step_w),
        step_x=e.float("solver.step_x", SolverConfig.step_x),
        merge_radius=e.float("solver.merge_radius", None),
        prune_threshold=e.float("solver.prune_threshold", None),
        merge_period=e.int("solver.merge_period", SolverConfig.merge_period),
        tolerance=e.float("solver.tolerance", SolverConfig.tolerance),
        patience=e.int("solver.patience", SolverConfig.patience),
        max_backtracks=e.int("solver.max_backtracks", SolverConfig.max_backtracks),
        record_trace=e.bool("solver.record_trace", SolverConfig.record_trace),
    )
    n = e.int("experiment.n", None)
    n_grid = tuple(e.ints("experiment.n_grid", []) or [])
    replications = e.int("experiment.replications", 1)
    kappa_rule = e.choice("experiment.kappa_rule",
                          ("agnostic", "s_dependent", "small_reg"), "agnostic")
    kappa_override = e.float("experiment.kappa", None)
    radii = e.floats("experiment.r_e", None)
    data_file = e.str("data.file", None)
    out_dir = e.str("output.dir", ".")
    seed = e.int("seed.master", 0)

    unknown = e.unknown_keys()
    if unknown:
        key = min(unknown, key=lambda k: entries[k][1])
        raise ConfigError(f"unknown key {key!r}", entries[key][1], 1)

    try:
        box = DomainBox(_broadcast(t_lo, d, "scenario.box.t_lo"),
                        _broadcast(t_hi, d, "scenario.box.t_hi"),
                        float(u_min), float(u_max))
        if len(t_rows) != len(weights) or len(u_rows) != len(weights):
            raise ValueError("scenario.t / scenario.u row counts must match "
                             "scenario.weights")
        locs = np.concatenate([np.asarray(t_rows, float),
                               np.asarray(u_rows, float)], axis=1)
        base_tau = tau if tau is not None else box.u_min
        ctx = KernelContext(d, base_tau, box)
        mixture = GroundTruthMixture(
            DiscreteMeasure.from_arrays(np.asarray(weights, float), locs), ctx)
        solver_cfg = SolverConfig(seed=seed, **solver_cfg_kwargs)
        if kappa_override is not None and not kappa_override > 0:
            raise ValueError("experiment.kappa must be positive")
        if radii is not None and any(r <= 0 for r in radii):
            raise ValueError("experiment.r_e entries must be positive")
    except ValueError as exc:
        raise ConfigError(str(exc)) from None

    resolved = {
        "kernel.d": d, "kernel.tau": tau, "kernel.tau_rule": tau_rule,
        "scenario.weights": list(weights), "scenario.t": t_rows,
        "scenario.u": u_rows, "scenario.box.t_lo": list(box.t_lo),
        "scenario.box.t_hi": list(box.t_hi), "scenario.box.u_min": box.u_min,
        "scenario.box.u_max": box.u_max,
        **{f"solver.{k}": v for k, v in solver_cfg_kwargs.items()},
        "experiment.n": n, "experiment.n_grid": list(n_grid),
        "experiment.replications": replications,
        "experiment.kappa_rule": kappa_rule, "experiment.kappa": kappa_override,
        "experiment.r_e": list(radii) if radii is not None else None,
        "data.file": data_file, "output.dir": out_dir, "seed.master": seed,
    }
    return RunConfig(d=d, tau=tau, tau_rule=tau_rule, box=box, mixture=mixture,
                     solver=solver_cfg, n=n, n_grid=n_grid,
                     replications=replications, kappa_rule=kappa_rule,
                     kappa_override=kappa_override,
                     effective_radii=tuple(radii) if radii is not None else None,
                     data_file=data_file, out_dir=out_dir, seed=seed,
                     resolved=resolved)


def _load_run_config(args) -> RunConfig:
    try:
        with open(args.config, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config file: {exc}") from None
    run = build_run_config(parse_config_text(text))
    if args.seed is not None:
        run.seed = args.seed
        run.solver = dataclasses.replace(run.solver, seed=args.seed)
        run.resolved["seed.master"] = args.seed
    if args.out is not None:
        run.out_dir = args.out
    return run


# --------------------------------------------------------------------------
# deterministic CSV / sidecar emission
# --------------------------------------------------------------------------

def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _write_csv(path: str, header, rows, resolved: dict, extra: Optional[dict] = None):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_cell(v) for v in row])
    meta = {"config": resolved}
    if extra:
        meta.update(extra)
    with open(path + ".meta.json", "w", encoding="utf-8", newline="") as fh:
        json.dump(meta, fh, sort_keys=True, indent=2)
        fh.write("\n")


def _point_repr(loc) -> str:
    if loc is None:
        return ""
    return " ".join(repr(float(v)) for v in loc.as_array())


# --------------------------------------------------------------------------
# subcommands
# --------------------------------------------------------------------------

def _cmd_certify(args) -> int:
    run = _load_run_config(args)
    if run.tau is None:
        raise ConfigError("kernel.tau is required for certify")
    os.makedirs(run.out_dir, exist_ok=True)
    ctx = KernelContext(run.d, run.tau, run.box)
    mu0 = run.mixture.measure
    consts = lpc_constants(run.d, mu0.s, run.tau, run.box)
    sep = separation_check(mu0, ctx, consts)

    solutions_rows = []
    clause_rows = [(
        "separation", mu0.s * (mu0.s - 1) // 2,
        (consts.delta_tau - sep.min_semidistance) if consts.delta_tau is not None
        else -math.inf,
        "", 0 if sep.satisfied else 1, sep.satisfied,
    )]
    all_pass = sep.satisfied
    try:
        system = build_upsilon(mu0.locations, ctx)
        global_sol, local_sols = solve_certificates(system)
        for sol in (global_sol, *local_sols):
            bound_sq = 2.0 * mu0.s if sol.kind == "global" else 2.0
            solutions_rows.append((sol.kind, sol.index if sol.index is not None else "",
                                   sol.p_norm, sol.residual, bound_sq,
                                   sol.p_norm**2 <= bound_sq + 1e-12))
        report = verify_nondegeneracy(global_sol, local_sols, mu0, consts,
                                      GridSpec(), system)
        for cl in report.clauses:
            clause_rows.append((cl.name, cl.n_points, cl.worst_margin,
                                _point_repr(cl.worst_point), cl.violations,
                                cl.passed))
        all_pass = sep.satisfied and report.all_clauses_pass
        extra = {"separation_satisfied": sep.satisfied,
                 "all_clauses_pass": report.all_clauses_pass,
                 "points_evaluated": report.points_evaluated}
    except SingularSystemError as exc:
        clause_rows.append(("certificate-system", 0, math.inf, "", 1, False))
        all_pass = False
        extra = {"separation_satisfied": sep.satisfied,
                 "all_clauses_pass": False,
                 "error": f"singular certificate system ({exc})"}

    _write_csv(os.path.join(run.out_dir, "certify_clauses.csv"),
               ("clause", "points", "worst_margin", "worst_point", "violations",
                "passed"), clause_rows, run.resolved, extra)
    _write_csv(os.path.join(run.out_dir, "certify_solutions.csv"),
               ("kind", "index", "p_norm", "residual", "p_norm_sq_bound",
                "within_bound"), solutions_rows, run.resolved, extra)
    return 0 if all_pass else 1


def _resolve_solve_tau(run: RunConfig, n: int) -> float:
    if run.tau_rule == "fixed":
        return run.tau
    return math.sqrt(2.0) * run.box.u_min / math.sqrt(math.log(n))


def _cmd_solve(args) -> int:
    run = _load_run_config(args)
    os.makedirs(run.out_dir, exist_ok=True)
    rng = np.random.default_rng(np.random.SeedSequence((run.seed, 0, 0)))

    if run.data_file is not None:
        if run.n is not None:
            raise ConfigError("give either experiment.n or data.file, not both")
        if not os.path.isfile(run.data_file):
            raise ConfigError(f"data file not found: {run.data_file}")
        X = np.loadtxt(run.data_file, ndmin=2)
        if X.shape[1] != run.d:
            raise ConfigError(f"data file has {X.shape[1]} columns, expected {run.d}")
    else:
        if run.n is None:
            raise ConfigError("experiment.n is required when no data.file is given")
        X = None
    n = run.n if X is None else X.shape[0]
    if n < 2:
        raise ConfigError("need at least 2 observations")

    tau = _resolve_solve_tau(run, n)
    ctx = KernelContext(run.d, tau, run.box)
    if X is None:
        X = sample(run.mixture, n, rng)
    if run.kappa_override is not None:
        kappa = run.kappa_override
    else:
        rec = recommended_parameters(n, run.d, tau, run.box, s_hint=run.mixture.s)
        kappa = {"agnostic": rec.kappa_agnostic,
                 "s_dependent": rec.kappa_s_dependent,
                 "small_reg": rec.kappa_small_reg}[run.kappa_rule]

    octx = ObjectiveContext(X, kappa, ctx)
    result = cpgd_solve(initial_measure(octx, run.solver, rng), octx, run.solver)
    accepted = acceptance_check(result.measure, run.mixture.omega_measure(tau), octx)

    d = run.d
    measure_rows = [
        (i, float(w)) + tuple(float(v) for v in loc.as_array())
        for i, (w, loc) in enumerate(result.measure.atoms())
    ]
    header = ("atom", "weight") + tuple(f"t_{k}" for k in range(d)) + \
        tuple(f"u_{k}" for k in range(d))
    extra = {"n": n, "tau": tau, "kappa": kappa, "converged": result.converged,
             "aborted": result.aborted, "abort_reason": result.abort_reason,
             "iterations_run": result.iterations_run, "acceptance": accepted}
    _write_csv(os.path.join(run.out_dir, "solve_measure.csv"), header,
               measure_rows, run.resolved, extra)
    _write_csv(os.path.join(run.out_dir, "solve_trace.csv"),
               ("iteration", "objective", "fidelity", "tv", "step_w", "step_x",
                "atoms"),
               [(t.iteration, t.objective, t.fidelity, t.tv, t.step_w, t.step_x,
                 t.atoms) for t in result.trace],
               run.resolved, extra)
    return 0 if accepted and not result.aborted else 1


def _cmd_rates(args) -> int:
    run = _load_run_config(args)
    if not run.n_grid:
        raise ConfigError("experiment.n_grid must list at least one sample size")
    if run.replications < 0:
        raise ConfigError("experiment.replications must be nonnegative")
    os.makedirs(run.out_dir, exist_ok=True)

    report = rate_sweep(run.mixture, run.n_grid, run.replications, run.kappa_rule,
                        run.tau_rule, run.seed, threads=max(1, args.threads),
                        solver=run.solver, effective_radii=run.effective_radii)

    n_radii = len(report.effective_radii)
    radius_cols = tuple(f"mass_error_r{i}" for i in range(1, n_radii))
    rows = []
    for row in report.rows:   # runtime deliberately not written: not reproducible
        by_radius = row.mass_error_by_radius + (math.nan,) * (n_radii - len(
            row.mass_error_by_radius))
        rows.append((row.n, row.replication, row.kappa, row.tau, row.ok,
                     row.error or "", by_radius[0], row.far_mass,
                     *by_radius[1:], row.tv_error, row.prediction_error,
                     row.atoms, row.exactly_one_each, row.converged))
    _write_csv(os.path.join(run.out_dir, "rates_replications.csv"),
               ("n", "replication", "kappa", "tau", "ok", "error", "mass_error",
                "far_mass", *radius_cols, "tv_error", "prediction_error", "atoms",
                "exactly_one_each", "converged"),
               rows, run.resolved,
               {"effective_radii": list(report.effective_radii)})

    agg_rows = [
        (a.n, a.replications_ok, a.mean_mass_error, a.se_mass_error,
         a.mean_prediction_error, a.se_prediction_error, a.mean_tv_error,
         a.se_tv_error, a.sparsity_rate,
         report.slopes.get("mass_error", math.nan),
         report.slopes.get("prediction_error", math.nan))
        for a in report.aggregates
    ]
    _write_csv(os.path.join(run.out_dir, "rates_aggregates.csv"),
               ("n", "replications_ok", "mean_mass_error", "se_mass_error",
                "mean_prediction_error", "se_prediction_error", "mean_tv_error",
                "se_tv_error", "sparsity_rate", "slope_mass_error",
                "slope_prediction_error"),
               agg_rows, run.resolved,
               {"slopes": {k: repr(v) for k, v in sorted(report.slopes.items())}})
    return 0


# --------------------------------------------------------------------------
# kernel-check: randomized invariant suite
# --------------------------------------------------------------------------

def _random_pairs(rng, box: DomainBox, m: int, d: int):
    lo, hi = box.lower(), box.upper()
    X = rng.uniform(lo, hi, size=(m, 2 * d))
    Y = rng.uniform(lo, hi, size=(m, 2 * d))
    return X, Y


def _fd_error(analytic, f, x, h=1e-5):
    """Max relative error of `analytic` against central differences of f."""
    worst = 0.0
    for b in range(x.shape[-1]):
        xp = x.copy()
        xm = x.copy()
        xp[..., b] += h
        xm[..., b] -= h
        fd = (f(xp) - f(xm)) / (2 * h)
        scale = np.maximum(np.abs(analytic[..., b]), 1.0)
        worst = max(worst, float(np.max(np.abs(analytic[..., b] - fd) / scale)))
    return worst


def _kernel_check_suite(samples: int, seed: int):
    """Yields (name, max_error, tolerance, passed) for each invariant."""
    rng = np.random.default_rng(seed)
    for d in (1, 2, 3):
        box = DomainBox((-5.0,) * d, (5.0,) * d, 0.5, 2.0)
        ctx = KernelContext(d, 0.4, box)
        m = max(2, samples // 3)
        X, Y = _random_pairs(rng, box, m, d)

        err = float(np.max(np.abs(kernel_values(X, X, ctx) - 1.0)))
        yield f"d={d} normalization K(x,x)=1", err, 1e-12

        err = float(np.max(np.abs(kernel_values(X, Y, ctx) -
                                  kernel_values(Y, X, ctx))))
        yield f"d={d} symmetry", err, 1e-12

        kv = kernel_values(X, Y, ctx)
        err = float(np.max(np.abs(semi_distance_pairs(X, Y, ctx) -
                                  np.sqrt(np.maximum(-2 * np.log(kv), 0.0)))))
        yield f"d={d} semi-distance identity", err, 1e-10

        sub = slice(0, min(m, 64))
        Xs, Ys = X[sub], Y[sub]
        err = _fd_error(grad1_batch(Xs, Ys, ctx),
                        lambda Z: kernel_values(Z, Ys, ctx), Xs)
        yield f"d={d} grad1 vs finite differences", err, 1e-6

        err = _fd_error(grad12_batch(Xs, Ys, ctx),
                        lambda Z: grad1_batch(Xs, Z, ctx), Ys)
        yield f"d={d} grad12 vs finite differences", err, 1e-6

        err = _fd_error(hess2_batch(Xs, Ys, ctx),
                        lambda Z: grad2_batch(Xs, Z, ctx), Ys)
        yield f"d={d} hess2 vs finite differences", err, 1e-6

        M = grad12_batch(Xs, Xs, ctx)
        g = metric_diag_batch(Xs, ctx.tau)
        err = float(np.max(np.abs(M - g[..., None, :] * np.eye(2 * d))))
        yield f"d={d} metric = grad12 at coincidence", err, 1e-10

        err = _christoffel_fd_error(Xs, ctx)
        yield f"d={d} christoffel vs metric derivatives", err, 1e-6

        err = 0.0
        for i in range(min(m, 200)):
            a, b = X[i], Y[i]
            p0 = geodesic_point(a, b, 0.0, ctx).as_array()
            p1 = geodesic_point(a, b, 1.0, ctx).as_array()
            err = max(err, float(np.max(np.abs(p0 - a))),
                      float(np.max(np.abs(p1 - b))))
        yield f"d={d} geodesic endpoints", err, 1e-10

        W = rng.normal(size=(min(m, 32), d))
        vec = data_witness(Xs, W, ctx)
        loop = np.array([data_witness(x, W, ctx) for x in Xs])
        err = float(np.max(np.abs(vec - loop)))
        yield f"d={d} witness vectorization", err, 1e-12


def _christoffel_fd_error(X, ctx) -> float:
    """Checks the closed-form connection coefficients against centered
    differences of the metric: Gamma^t_{tu} = g_t'/(2 g_t),
    Gamma^u_{tt} = -g_t'/(2 g_u), Gamma^u_{uu} = g_u'/(2 g_u)."""
    d = X.shape[-1] // 2
    u = X[..., d:]
    h = 1e-6
    gt, gu_tt, gu_uu = _christoffel_coeffs(X, ctx.tau)

    def metric(uu):
        Z = X.copy()
        Z[..., d:] = uu
        return metric_diag_batch(Z, ctx.tau)

    dg = (metric(u + h) - metric(u - h)) / (2 * h)
    g = metric_diag_batch(X, ctx.tau)
    ref_t = dg[..., :d] / (2 * g[..., :d])
    ref_u_tt = -dg[..., :d] / (2 * g[..., d:])
    ref_u_uu = dg[..., d:] / (2 * g[..., d:])
    err = max(
        float(np.max(np.abs(gt - ref_t) / np.maximum(np.abs(ref_t), 1.0))),
        float(np.max(np.abs(gu_tt - ref_u_tt) / np.maximum(np.abs(ref_u_tt), 1.0))),
        float(np.max(np.abs(gu_uu - ref_u_uu) / np.maximum(np.abs(ref_u_uu), 1.0))),
    )
    return err


def _cmd_kernel_check(args) -> int:
    if args.samples <= 0:
        print("kernel-check: --samples must be a positive integer", file=sys.stderr)
        return 2
    failures = 0
    for name, err, tol in _kernel_check_suite(args.samples, args.seed or 0):
        ok = err < tol
        failures += 0 if ok else 1
        print(f"{'PASS' if ok else 'FAIL'}  {name}: max error {err:.3e} "
              f"(tolerance {tol:.0e})")
    total_suites = "all checks passed" if failures == 0 else \
        f"{failures} check(s) failed"
    print(f"kernel-check: {total_suites}")
    return 0 if failures == 0 else 1


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="gmblasso",
        description="Sparse Gaussian-mixture estimation via reparametrized "
                    "total-variation regularization.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in (("certify", _cmd_certify), ("solve", _cmd_solve),
                     ("rates", _cmd_rates)):
        sp = sub.add_parser(name)
        sp.add_argument("--config", required=True, help="path to run config")
        sp.add_argument("--out", default=None, help="output directory override")
        sp.add_argument("--seed", type=int, default=None, help="master seed override")
        sp.add_argument("--threads", type=int, default=1,
                        help="worker threads (rates only)")
        sp.set_defaults(fn=fn)
    kc = sub.add_parser("kernel-check")
    kc.add_argument("--samples", type=int, default=3000,
                    help="random pairs per dimension")
    kc.add_argument("--seed", type=int, default=0)
    kc.set_defaults(fn=_cmd_kernel_check)

    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(exc.render(), file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
