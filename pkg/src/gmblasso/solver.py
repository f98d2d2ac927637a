"""Closed-form objective over sparse measures and conic particle descent.

In the omega parametrization the objective is pure kernel algebra,

    J(mu_w) = 1/2 [ C + sum_jl w_j w_l K(x_j, x_l) - 2 sum_j w_j witness(x_j) ]
              + kappa * sum_j w_j,

with the data constant C = (1/n^2) sum_ii' lambda(X_i - X_i').  C does not
influence the optimization, so the iteration tracks the C-free core value and
the constant is computed lazily (blocked exact pairwise summation) only when
a full objective value is actually requested.

The solver performs multiplicative (conic) weight updates w <- w e^{-eta_w g}
and metric-preconditioned position updates x <- clip(x - eta_x g_x^{-1} grad),
with joint backtracking so accepted iterations never increase the objective.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .geometry import metric_diag_batch
from .kernel import (
    KernelContext,
    data_witness,
    grad1_batch,
    kernel_values,
    lambda_pair,
    semi_distance_pairs,
)
from .measures import DiscreteMeasure, weight_function

__all__ = [
    "ObjectiveContext",
    "SolverConfig",
    "TraceRow",
    "SolverResult",
    "RecommendedParameters",
    "objective",
    "objective_core",
    "objective_gradient",
    "initial_measure",
    "cpgd_solve",
    "prune_merge",
    "acceptance_check",
    "recommended_parameters",
]


class ObjectiveContext:
    """Samples, regularization strength, kernel context, and the cached data constant."""

    def __init__(self, samples: np.ndarray, kappa: float, ctx: KernelContext):
        X = np.asarray(samples, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        if X.shape[0] < 1:
            raise ValueError("need at least one sample")
        if X.shape[1] != ctx.d:
            raise ValueError("sample dimension disagrees with kernel context")
        if not np.all(np.isfinite(X)):
            raise ValueError("non-finite sample")
        if not (kappa > 0 and math.isfinite(kappa)):
            raise ValueError("kappa must be positive and finite")
        self.samples = X
        self.kappa = float(kappa)
        self.ctx = ctx
        self._fidelity_constant: Optional[float] = None

    @property
    def n(self) -> int:
        return self.samples.shape[0]

    @property
    def fidelity_constant(self) -> float:
        """C = (1/n^2) sum_{i,i'} lambda(X_i - X_i'), computed once per dataset."""
        if self._fidelity_constant is None:
            X = self.samples
            n = X.shape[0]
            total = n * float(lambda_pair(np.zeros(X.shape[1]), self.ctx))
            block = 2048
            for i0 in range(0, n, block):
                xi = X[i0:i0 + block]
                for j0 in range(i0, n, block):
                    xj = X[j0:j0 + block]
                    lam = lambda_pair(xi[:, None, :] - xj[None, :, :], self.ctx)
                    if i0 == j0:
                        total += 2.0 * float(np.triu(lam, k=1).sum())
                    else:
                        total += 2.0 * float(lam.sum())
            self._fidelity_constant = total / n**2
        return self._fidelity_constant


def _core_terms(weights: np.ndarray, pts: np.ndarray, octx: ObjectiveContext):
    """Quadratic kernel term and witness correlation for the current atoms."""
    if len(weights) == 0:
        return 0.0, 0.0
    K = kernel_values(pts[:, None, :], pts[None, :, :], octx.ctx)
    quad = float(weights @ K @ weights)
    wit = data_witness(pts, octx.samples, octx.ctx)
    cross = float(weights @ np.atleast_1d(wit))
    return quad, cross


def objective_core(mu_omega: DiscreteMeasure, octx: ObjectiveContext) -> float:
    """Objective with the data constant omitted (J - C/2); used by the iteration."""
    quad, cross = _core_terms(mu_omega.weights, mu_omega.locations_array(), octx)
    return 0.5 * quad - cross + octx.kappa * float(np.sum(mu_omega.weights))


def objective(mu_omega: DiscreteMeasure, octx: ObjectiveContext) -> float:
    """Full objective value J(mu_omega)."""
    return objective_core(mu_omega, octx) + 0.5 * octx.fidelity_constant


def objective_gradient(mu_omega: DiscreteMeasure, octx: ObjectiveContext):
    """Analytic gradients (dJ/dw_j, dJ/dx_j); shapes (s,) and (s, 2d)."""
    w = mu_omega.weights
    pts = mu_omega.locations_array()
    s = len(w)
    if s == 0:
        return np.zeros(0), np.zeros((0, 0))
    K = kernel_values(pts[:, None, :], pts[None, :, :], octx.ctx)
    G1 = grad1_batch(pts[:, None, :], pts[None, :, :], octx.ctx)   # (s, s, 2d)
    wit, wit_grad = data_witness(pts, octx.samples, octx.ctx, with_gradient=True)
    grad_w = K @ w - np.atleast_1d(wit) + octx.kappa
    grad_x = w[:, None] * (np.einsum("l,jld->jd", w, G1) - np.atleast_2d(wit_grad))
    return grad_w, grad_x


@dataclass(frozen=True)
class SolverConfig:
    """Particle-descent settings; None values resolve to scale-aware defaults.

    merge_radius defaults to 0.05 * (0.3025/sqrt(d)); prune_threshold to
    1e-6 * tv_norm of the current iterate.
    """

    max_particles: int = 8
    iterations: int = 400
    step_w: float = 0.5
    step_x: float = 2.0
    merge_radius: Optional[float] = None
    prune_threshold: Optional[float] = None
    merge_period: int = 25
    tolerance: float = 1e-11
    patience: int = 20
    max_backtracks: int = 30
    seed: int = 0
    record_trace: bool = True

    def __post_init__(self):
        if self.max_particles < 1:
            raise ValueError("need max_particles >= 1")
        if self.step_w <= 0 or self.step_x <= 0:
            raise ValueError("step sizes must be positive")


def _resolved_merge_radius(cfg: SolverConfig, d: int) -> float:
    if cfg.merge_radius is not None:
        return cfg.merge_radius
    return 0.05 * 0.3025 / math.sqrt(d)


@dataclass(frozen=True)
class TraceRow:
    iteration: int
    objective: float
    fidelity: float
    tv: float
    step_w: float
    step_x: float
    atoms: int


@dataclass(frozen=True)
class SolverResult:
    measure: DiscreteMeasure
    trace: tuple[TraceRow, ...]
    converged: bool
    aborted: bool
    abort_reason: Optional[str]
    iterations_run: int


def initial_measure(octx: ObjectiveContext, cfg: SolverConfig,
                    rng: Optional[np.random.Generator] = None) -> DiscreteMeasure:
    """Data-driven start: means from a random sample subset, u at the
    geometric mid-scale, uniform weights at amplitude 1/K.

    The subset is chosen by farthest-first traversal of a random pool so
    the K starting atoms cover every sample cluster the pool touches.  A
    plain uniform draw misses an entire mode with probability ~ (1-p)^K,
    and particles cannot cross the exponentially flat gap between
    well-separated modes afterwards.
    """
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    X = octx.samples
    box = octx.ctx.box
    K = cfg.max_particles
    pool_size = min(X.shape[0], max(8 * K, 64))
    pool_idx = rng.choice(X.shape[0], size=pool_size, replace=False)
    t_pool = np.clip(X[pool_idx], box.t_lo, box.t_hi)
    u_pool = np.full((pool_size, octx.ctx.d), math.sqrt(box.u_min * box.u_max))
    pool = np.concatenate([t_pool, u_pool], axis=1)
    if K >= pool_size:
        extra = rng.choice(pool_size, size=K - pool_size, replace=True)
        pts = np.concatenate([pool, pool[extra]], axis=0)
    else:
        chosen = [0]
        best = semi_distance_pairs(pool, np.broadcast_to(pool[0], pool.shape), octx.ctx)
        for _ in range(K - 1):
            nxt = int(np.argmax(best))
            chosen.append(nxt)
            dist = semi_distance_pairs(pool, np.broadcast_to(pool[nxt], pool.shape), octx.ctx)
            best = np.minimum(best, dist)
        pts = pool[np.array(chosen)]
    w = weight_function(pts, octx.ctx.tau) / K
    return DiscreteMeasure.from_arrays(np.atleast_1d(w), pts)


def _halfplane_merge(pts: np.ndarray, w: np.ndarray, tau: float) -> np.ndarray:
    """Weight-weighted midpoint in half-plane coordinates (t, sqrt(u^2+tau^2/2))."""
    d = pts.shape[-1] // 2
    share = w / w.sum() if w.sum() > 0 else np.full(len(w), 1.0 / len(w))
    t = share @ pts[:, :d]
    h = share @ np.sqrt(pts[:, d:] ** 2 + tau**2 / 2)
    u = np.sqrt(np.maximum(h**2 - tau**2 / 2, 1e-24))
    return np.concatenate([t, u])


def prune_merge(mu_omega: DiscreteMeasure, cfg: SolverConfig,
                ctx: KernelContext) -> DiscreteMeasure:
    """Drop dust atoms, then merge pairs closer than the merge radius."""
    w = mu_omega.weights.copy()
    if len(w) == 0:
        return mu_omega
    pts = mu_omega.locations_array()
    thr = cfg.prune_threshold if cfg.prune_threshold is not None \
        else 1e-6 * float(np.sum(w))
    keep = w >= thr
    w, pts = w[keep], pts[keep]
    radius = _resolved_merge_radius(cfg, ctx.d)
    while len(w) >= 2:
        iu, ju = np.triu_indices(len(w), k=1)
        dist = semi_distance_pairs(pts[iu], pts[ju], ctx)
        k = int(np.argmin(dist))
        if dist[k] > radius:
            break
        i, j = int(iu[k]), int(ju[k])
        merged = _halfplane_merge(pts[[i, j]], w[[i, j]], ctx.tau)
        keep = np.ones(len(w), dtype=bool)
        keep[[i, j]] = False
        pts = np.concatenate([pts[keep], merged[None, :]])
        w = np.concatenate([w[keep], [w[i] + w[j]]])
    return DiscreteMeasure.from_arrays(w, pts)


def cpgd_solve(init: DiscreteMeasure, octx: ObjectiveContext,
               cfg: SolverConfig) -> SolverResult:
    """Conic particle gradient descent from an explicit initial measure."""
    box = octx.ctx.box
    for loc in init.locations:
        if not box.contains(loc, atol=1e-9):
            raise ValueError("initial atom outside the domain box")

    w = init.weights.copy()
    pts = init.locations_array().copy()
    J = _core_value(w, pts, octx)
    trace: list[TraceRow] = []
    eta_w, eta_x = cfg.step_w, cfg.step_x
    lo, hi = box.lower(), box.upper()
    still = 0
    converged = False
    aborted = False
    reason = None
    it = 0

    if not math.isfinite(J):
        return SolverResult(DiscreteMeasure.from_arrays(w, pts), (), False, True,
                            "non-finite objective at initialization", 0)

    for it in range(1, cfg.iterations + 1):
        mu = DiscreteMeasure.from_arrays(w, pts)
        gw, gx = objective_gradient(mu, octx)
        if not (np.all(np.isfinite(gw)) and np.all(np.isfinite(gx))):
            aborted, reason = True, f"non-finite gradient at iteration {it}"
            break
        ginv = 1.0 / metric_diag_batch(pts, octx.ctx.tau)

        accepted = False
        J_new, w_new, pts_new = J, w, pts
        for _ in range(cfg.max_backtracks + 1):
            w_try = w * np.exp(np.clip(-eta_w * gw, -60.0, 60.0))
            pts_try = np.clip(pts - eta_x * ginv * gx, lo, hi)
            J_try = _core_value(w_try, pts_try, octx)
            if not math.isfinite(J_try):
                aborted, reason = True, f"non-finite objective at iteration {it}"
                break
            if J_try <= J:
                accepted = True
                J_new, w_new, pts_new = J_try, w_try, pts_try
                break
            eta_w, eta_x = eta_w / 2, eta_x / 2
        if aborted:
            break

        drop = J - J_new
        if accepted:
            w, pts, J = w_new, pts_new, J_new
            eta_w = min(2 * eta_w, cfg.step_w)
            eta_x = min(2 * eta_x, cfg.step_x)

        if cfg.merge_period > 0 and it % cfg.merge_period == 0:
            cand = prune_merge(DiscreteMeasure.from_arrays(w, pts), cfg, octx.ctx)
            J_cand = _core_value(cand.weights, cand.locations_array(), octx)
            if J_cand <= J:
                w, pts, J = cand.weights.copy(), cand.locations_array(), J_cand

        if cfg.record_trace:
            quad, cross = _core_terms(w, pts, octx)
            fid = 0.5 * (octx.fidelity_constant + quad) - cross
            trace.append(TraceRow(it, J + 0.5 * octx.fidelity_constant, fid,
                                  float(np.sum(w)), eta_w, eta_x, len(w)))

        still = still + 1 if drop <= cfg.tolerance * max(1.0, abs(J)) else 0
        if still >= cfg.patience:
            converged = True
            break

    final = prune_merge(DiscreteMeasure.from_arrays(w, pts), cfg, octx.ctx)
    return SolverResult(final, tuple(trace), converged, aborted, reason, it)


def _core_value(w: np.ndarray, pts: np.ndarray, octx: ObjectiveContext) -> float:
    quad, cross = _core_terms(w, pts, octx)
    return 0.5 * quad - cross + octx.kappa * float(np.sum(w))


def acceptance_check(mu_hat: DiscreteMeasure, mu0_omega: DiscreteMeasure,
                     octx: ObjectiveContext) -> bool:
    """Approximate-solution test: J(mu_hat) <= J(mu0_omega) + 1e-12 |J(mu0_omega)|."""
    ref = objective(mu0_omega, octx)
    return objective(mu_hat, octx) <= ref + 1e-12 * abs(ref)


@dataclass(frozen=True)
class RecommendedParameters:
    rho_n: float
    kappa_agnostic: float
    kappa_s_dependent: Optional[float]
    kappa_small_reg: float
    tau_prediction: float


def recommended_parameters(n: int, d: int, tau: float, box,
                           s_hint: Optional[int] = None) -> RecommendedParameters:
    """Noise scale rho_n and the regularization/smoothing recommendations."""
    if n < 2:
        raise ValueError("parameter recommendations need n >= 2")
    rho = math.sqrt(4.0 / ((2 * math.pi) ** (d / 2) * tau**d * n))
    kappa_s = rho / math.sqrt(2 * s_hint) if s_hint else None
    return RecommendedParameters(
        rho_n=rho,
        kappa_agnostic=rho / math.sqrt(2.0),
        kappa_s_dependent=kappa_s,
        kappa_small_reg=rho**2,
        tau_prediction=math.sqrt(2.0) * box.u_min / math.sqrt(math.log(n)),
    )
