"""Ground-truth mixtures, recovery metrics, and Monte-Carlo rate sweeps.

Estimation quality is measured by how the fitted measure distributes mass
over the near regions N_j(r_e) = {x : d(x, x_j0) <= r_e} of the true atoms:
per-region absolute mass errors, the mass landing outside every region, the
signed total-variation error, and the squared L2 distance between the fitted
and true mixture densities (all Gaussian integrals in closed form).

Rate sweeps repeat sample -> solve -> metrics over a grid of sample sizes,
with per-replication RNG streams spawned from (master_seed, n_index, rep) so
results are reproducible and independent of execution order or thread count.
Slopes of log(mean error) vs log(n) are fitted by least squares on the means,
since the theory bounds expectations.
"""
from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from .kernel import KernelContext
from .geometry import region_index_batch
from .measures import DiscreteMeasure, reparametrize, tv_norm
from .solver import (
    ObjectiveContext,
    SolverConfig,
    cpgd_solve,
    initial_measure,
    recommended_parameters,
)

__all__ = [
    "GroundTruthMixture",
    "RegionMassReport",
    "SparsityReport",
    "RateRow",
    "AggregateRow",
    "ExperimentReport",
    "sample",
    "region_mass_errors",
    "renormalized_mass_errors",
    "prediction_error",
    "sparsity_check",
    "rate_sweep",
    "aggregate_rows",
    "fit_slopes",
]


def _near_radius(d: int) -> float:
    # admissible near-region radius r = 0.3025 / sqrt(d)
    return 0.3025 / math.sqrt(d)


@dataclass(frozen=True)
class GroundTruthMixture:
    """True mixture: amplitude-parametrized measure with unit total mass."""

    measure: DiscreteMeasure
    ctx: KernelContext
    separated: Optional[bool] = None

    def __post_init__(self):
        if self.measure.s < 1:
            raise ValueError("ground truth needs at least one component")
        if self.measure.d != self.ctx.d:
            raise ValueError("mixture dimension disagrees with context")
        if abs(float(np.sum(self.measure.weights)) - 1.0) > 1e-12:
            raise ValueError("component weights must sum to 1")
        for loc in self.measure.locations:
            if not self.ctx.box.contains(loc):
                raise ValueError(f"component {loc} outside the domain box")

    @property
    def s(self) -> int:
        return self.measure.s

    @property
    def d(self) -> int:
        return self.measure.d

    def omega_measure(self, tau: Optional[float] = None) -> DiscreteMeasure:
        """The reparametrized target mu_omega = W * mu0 at smoothing scale tau."""
        return reparametrize(self.measure, tau if tau is not None else self.ctx.tau,
                             "to_omega")


def sample(mixture: GroundTruthMixture, n: int, seed) -> np.ndarray:
    """Draw n iid observations: component index from the weights, then a
    coordinatewise Gaussian draw. Returns an (n, d) array."""
    if n < 1:
        raise ValueError("need n >= 1 samples")
    rng = np.random.default_rng(seed)
    locs = mixture.measure.locations_array()
    d = mixture.d
    idx = rng.choice(mixture.s, size=n, p=mixture.measure.weights)
    return rng.normal(locs[idx, :d], locs[idx, d:])


def _classify(mu_hat: DiscreteMeasure, anchors: np.ndarray, r_e: float,
              ctx: KernelContext) -> np.ndarray:
    if mu_hat.s == 0:
        return np.zeros(0, dtype=int)
    return region_index_batch(mu_hat.locations_array(), anchors, r_e, ctx)


@dataclass(frozen=True)
class RegionMassReport:
    per_region: np.ndarray
    far_mass: float

    @property
    def total(self) -> float:
        return float(np.sum(self.per_region)) + self.far_mass


def region_mass_errors(mu_hat_omega: DiscreteMeasure, mu0_omega: DiscreteMeasure,
                       r_e: float, ctx: KernelContext) -> RegionMassReport:
    """Per-region |omega_j0 - mu_hat(N_j(r_e))| plus the mass outside all regions."""
    r_max = _near_radius(ctx.d)
    if not (0.0 < r_e <= r_max):
        raise ValueError(f"effective radius must lie in (0, {r_max}], got {r_e}")
    anchors = mu0_omega.locations_array()
    region = _classify(mu_hat_omega, anchors, r_e, ctx)
    w = mu_hat_omega.weights
    per = np.array([
        abs(mu0_omega.weights[j] - float(np.sum(w[region == j])))
        for j in range(mu0_omega.s)
    ])
    return RegionMassReport(per, float(np.sum(w[region == -1])))


def renormalized_mass_errors(mu_hat_omega: DiscreteMeasure, mu0: DiscreteMeasure,
                             r_e: float, ctx: KernelContext) -> np.ndarray:
    """Per-region |a_j0 - (mu_hat_omega / W)(N_j(r_e))| on the amplitude scale."""
    r_max = _near_radius(ctx.d)
    if not (0.0 < r_e <= r_max):
        raise ValueError(f"effective radius must lie in (0, {r_max}], got {r_e}")
    amp = reparametrize(mu_hat_omega, ctx.tau, "from_omega")
    region = _classify(amp, mu0.locations_array(), r_e, ctx)
    return np.array([
        abs(mu0.weights[j] - float(np.sum(amp.weights[region == j])))
        for j in range(mu0.s)
    ])


def _l2_cross(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """L2(R^d) inner products of the Gaussian densities at parameter rows x, y."""
    d = x.shape[-1] // 2
    dt = x[..., None, :d] - y[..., None, :, :d]
    v = x[..., None, d:] ** 2 + y[..., None, :, d:] ** 2
    return np.prod(np.exp(-dt**2 / (2 * v)) / np.sqrt(2 * np.pi * v), axis=-1)


def prediction_error(mu_hat_omega: DiscreteMeasure, mu0: DiscreteMeasure,
                     ctx: KernelContext) -> float:
    """Squared L2 distance between the fitted and true mixture densities."""
    amp = reparametrize(mu_hat_omega, ctx.tau, "from_omega")
    coef = np.concatenate([amp.weights, -mu0.weights])
    if len(coef) == 0:
        return 0.0
    d = (mu0 if mu0.s else amp).d
    pts = np.concatenate([
        amp.locations_array().reshape(amp.s, 2 * d),
        mu0.locations_array().reshape(mu0.s, 2 * d),
    ])
    P = _l2_cross(pts, pts)
    # fsum over the rank-1 products keeps the perfect-recovery case at ~1e-16
    val = math.fsum((coef[:, None] * coef[None, :] * P).ravel())
    return max(val, 0.0)


@dataclass(frozen=True)
class SparsityReport:
    atoms_per_region: tuple
    far_atoms: int
    exactly_one_each: bool


def sparsity_check(mu_hat_omega: DiscreteMeasure, mu0: DiscreteMeasure,
                   r: float, ctx: KernelContext) -> SparsityReport:
    """Counts recovered atoms per near region; exact recovery means one atom in
    every region and none in the far region."""
    region = _classify(mu_hat_omega, mu0.locations_array(), r, ctx)
    counts = tuple(int(np.sum(region == j)) for j in range(mu0.s))
    far = int(np.sum(region == -1))
    return SparsityReport(counts, far, all(c == 1 for c in counts) and far == 0)


@dataclass(frozen=True)
class RateRow:
    n: int
    replication: int
    kappa: float
    tau: float
    ok: bool
    error: Optional[str]
    mass_errors: tuple            # per true atom at the primary radius
    far_mass: float
    mass_error_by_radius: tuple   # totals, one per requested radius
    tv_error: float
    prediction_error: float
    atoms: int
    exactly_one_each: bool
    converged: bool
    runtime: float                # wall-clock seconds; excluded from CSV output


@dataclass(frozen=True)
class AggregateRow:
    n: int
    replications_ok: int
    mean_mass_error: float
    se_mass_error: float
    mean_prediction_error: float
    se_prediction_error: float
    mean_tv_error: float
    se_tv_error: float
    sparsity_rate: float


@dataclass(frozen=True)
class ExperimentReport:
    rows: tuple
    aggregates: tuple
    slopes: dict
    n_grid: tuple
    replications: int
    kappa_rule: str
    tau_rule: str
    master_seed: int
    effective_radii: tuple


def _mean_se(vals: np.ndarray):
    if len(vals) == 0:
        return math.nan, math.nan
    m = float(np.mean(vals))
    if len(vals) < 2:
        return m, math.nan
    return m, float(np.std(vals, ddof=1) / math.sqrt(len(vals)))


def aggregate_rows(rows: Sequence[RateRow]) -> tuple:
    """Per-n means and standard errors over the successful replications."""
    out = []
    for n in sorted({row.n for row in rows}):
        ok = [row for row in rows if row.n == n and row.ok]
        mass = np.array([r.mass_error_by_radius[0] for r in ok])
        pred = np.array([r.prediction_error for r in ok])
        tv = np.array([r.tv_error for r in ok])
        mm, ms = _mean_se(mass)
        pm, ps = _mean_se(pred)
        tm, ts = _mean_se(tv)
        rate = float(np.mean([r.exactly_one_each for r in ok])) if ok else math.nan
        out.append(AggregateRow(n, len(ok), mm, ms, pm, ps, tm, ts, rate))
    return tuple(out)


def fit_slopes(aggregates: Sequence[AggregateRow]) -> dict:
    """Least-squares slopes of log(mean error) against log(n)."""
    slopes = {}
    for key, attr in (("mass_error", "mean_mass_error"),
                      ("prediction_error", "mean_prediction_error")):
        pts = [(a.n, getattr(a, attr)) for a in aggregates
               if math.isfinite(getattr(a, attr)) and getattr(a, attr) > 0]
        if len(pts) >= 2:
            ns, means = zip(*pts)
            slopes[key] = float(np.polyfit(np.log(ns), np.log(means), 1)[0])
        else:
            slopes[key] = math.nan
    return slopes


def _resolve_tau(tau_rule: str, base: GroundTruthMixture, n: int) -> float:
    if tau_rule == "fixed":
        return base.ctx.tau
    if tau_rule == "prediction":
        return math.sqrt(2.0) * base.ctx.box.u_min / math.sqrt(math.log(n))
    raise ValueError(f"unknown tau rule {tau_rule!r}")


def _resolve_kappa(kappa_rule: str, rec) -> float:
    table = {
        "agnostic": rec.kappa_agnostic,
        "s_dependent": rec.kappa_s_dependent,
        "small_reg": rec.kappa_small_reg,
    }
    if kappa_rule not in table:
        raise ValueError(f"unknown kappa rule {kappa_rule!r}")
    return table[kappa_rule]


def _one_replication(scenario: GroundTruthMixture, n: int, n_index: int, rep: int,
                     kappa_rule: str, tau_rule: str, master_seed: int,
                     solver_cfg: SolverConfig, radii: tuple) -> RateRow:
    start = time.perf_counter()
    rng = np.random.default_rng(np.random.SeedSequence((master_seed, n_index, rep)))
    try:
        X = sample(scenario, n, rng)
        tau = _resolve_tau(tau_rule, scenario, n)
        ctx = KernelContext(scenario.d, tau, scenario.ctx.box)
        rec = recommended_parameters(n, scenario.d, tau, ctx.box, s_hint=scenario.s)
        kappa = _resolve_kappa(kappa_rule, rec)
        octx = ObjectiveContext(X, kappa, ctx)
        if solver_cfg.prune_threshold is None:
            # atoms below the regularization scale are noise; pruning at
            # kappa/2 keeps the sweep from dragging dust atoms for thousands
            # of iterations while never touching region-scale mass
            solver_cfg = replace(solver_cfg, prune_threshold=kappa / 2)
        result = cpgd_solve(initial_measure(octx, solver_cfg, rng), octx, solver_cfg)
        if result.aborted:
            raise RuntimeError(result.abort_reason or "solver aborted")
        mu_hat = result.measure
        mu0_omega = scenario.omega_measure(tau)
        primary = region_mass_errors(mu_hat, mu0_omega, radii[0], ctx)
        by_radius = (primary.total,) + tuple(
            region_mass_errors(mu_hat, mu0_omega, r_e, ctx).total
            for r_e in radii[1:]
        )
        sparsity = sparsity_check(mu_hat, scenario.measure, _near_radius(ctx.d), ctx)
        return RateRow(
            n=n, replication=rep, kappa=kappa, tau=tau, ok=True, error=None,
            mass_errors=tuple(primary.per_region), far_mass=primary.far_mass,
            mass_error_by_radius=by_radius,
            tv_error=tv_norm(mu_hat) - tv_norm(mu0_omega),
            prediction_error=prediction_error(mu_hat, scenario.measure, ctx),
            atoms=mu_hat.s, exactly_one_each=sparsity.exactly_one_each,
            converged=result.converged, runtime=time.perf_counter() - start,
        )
    except Exception as exc:  # failures are recorded, never fatal to the sweep
        return RateRow(
            n=n, replication=rep, kappa=math.nan, tau=math.nan, ok=False,
            error=f"{type(exc).__name__}: {exc}", mass_errors=(),
            far_mass=math.nan, mass_error_by_radius=(math.nan,) * len(radii),
            tv_error=math.nan, prediction_error=math.nan, atoms=0,
            exactly_one_each=False, converged=False,
            runtime=time.perf_counter() - start,
        )


def rate_sweep(scenario: GroundTruthMixture, n_grid: Sequence[int],
               replications: int, kappa_rule: str, tau_rule: str, seed: int,
               threads: int = 1, solver: Optional[SolverConfig] = None,
               effective_radii: Optional[Sequence[float]] = None) -> ExperimentReport:
    """Monte-Carlo sweep over sample sizes; see the module docstring for the
    seeding and aggregation rules."""
    n_grid = tuple(int(n) for n in n_grid)
    radii = tuple(effective_radii) if effective_radii else (_near_radius(scenario.d),)
    base = solver if solver is not None else SolverConfig()
    solver_cfg = replace(base, record_trace=False)
    jobs = [(i, n, rep) for i, n in enumerate(n_grid) for rep in range(replications)]

    if threads > 1 and jobs:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            futures = [
                pool.submit(_one_replication, scenario, n, i, rep, kappa_rule,
                            tau_rule, seed, solver_cfg, radii)
                for i, n, rep in jobs
            ]
            rows = tuple(f.result() for f in futures)  # ordered reduce
    else:
        rows = tuple(
            _one_replication(scenario, n, i, rep, kappa_rule, tau_rule, seed,
                             solver_cfg, radii)
            for i, n, rep in jobs
        )

    aggregates = aggregate_rows(rows)
    return ExperimentReport(
        rows=rows, aggregates=aggregates, slopes=fit_slopes(aggregates),
        n_grid=n_grid, replications=replications, kappa_rule=kappa_rule,
        tau_rule=tau_rule, master_seed=seed, effective_radii=radii,
    )
