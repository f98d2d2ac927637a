"""Dual-certificate construction, LPC constants, and non-degeneracy checks.

A certificate is eta(x) = sum_j alpha_j K(x_j0, x) + sum_j beta_j^T grad1
K(x_j0, x) with coefficients chosen so that eta interpolates prescribed
values (1 at every anchor for the global certificate, the j-th indicator for
local ones) with vanishing gradients.  The constraints form the symmetric
linear system Upsilon [alpha; beta] = rhs whose blocks are kernel values,
first derivatives, and mixed second derivatives at anchor pairs; Upsilon is
positive definite once the anchors are separated enough.

Verification samples the domain (tensor grids, a low-discrepancy set, and
geodesic rays inside each near region) and reports the worst margin of every
non-degeneracy clause: |eta| <= 1 - eps_0 on the far region, and quadratic
pinning eta <= 1 - eps_2 * dist_g(x, x_j0)^2 inside near regions (with the
analogous four-clause set for local certificates).  Violations are report
content, never exceptions.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.linalg
from scipy.stats import qmc

from .geometry import (
    fr_distance_pairs,
    geodesic_spec,
    metric_diag_batch,
    region_index_batch,
)
from .kernel import (
    KernelContext,
    grad1_batch,
    grad1_rhess2_batch,
    grad2_batch,
    grad12_batch,
    kernel_values,
    rhess2_batch,
    semi_distance_pairs,
)
from .measures import DiscreteMeasure, Location

__all__ = [
    "CertificateSystem",
    "CertificateSolution",
    "LpcConstants",
    "GridSpec",
    "SeparationReport",
    "ClauseReport",
    "NondegeneracyReport",
    "SingularSystemError",
    "build_upsilon",
    "solve_certificates",
    "eval_certificate",
    "eval_certificate_gradient",
    "lpc_constants",
    "separation_check",
    "verify_nondegeneracy",
    "kernel_operator_norms",
    "operator_norms_batch",
]

_COND_LIMIT = 1e12
_RESIDUAL_TOL = 1e-9


class SingularSystemError(RuntimeError):
    """Certificate system is singular or too ill-conditioned to solve."""

    def __init__(self, message: str, condition_estimate: float):
        super().__init__(f"{message} (condition estimate {condition_estimate:.3e})")
        self.condition_estimate = condition_estimate


@dataclass(frozen=True)
class CertificateSystem:
    upsilon: np.ndarray
    anchors: tuple[Location, ...]
    ctx: KernelContext

    @property
    def s(self) -> int:
        return len(self.anchors)

    def anchors_array(self) -> np.ndarray:
        return np.stack([a.as_array() for a in self.anchors])


@dataclass(frozen=True)
class CertificateSolution:
    alpha: np.ndarray           # (s,)
    beta: np.ndarray            # (s, 2d)
    kind: str                   # "global" or "local"
    index: Optional[int]        # anchor index for local certificates
    p_norm: float               # sqrt(rhs^T coef) = RKHS norm of the witness
    residual: float             # max-norm residual of the linear solve


def build_upsilon(anchors, ctx: KernelContext) -> CertificateSystem:
    """Assemble the interpolation system at the given anchor locations."""
    anchors = tuple(a if isinstance(a, Location) else Location.from_array(np.asarray(a, float))
                    for a in anchors)
    if not anchors:
        raise ValueError("need at least one anchor")
    pts = np.stack([a.as_array() for a in anchors])
    s, dim2 = pts.shape
    if dim2 != 2 * ctx.d:
        raise ValueError("anchor dimension disagrees with kernel context")
    for i in range(s):
        for j in range(i + 1, s):
            if np.array_equal(pts[i], pts[j]):
                raise SingularSystemError(
                    f"anchors {i} and {j} coincide; system is singular", math.inf)

    K = kernel_values(pts[:, None, :], pts[None, :, :], ctx)        # (s, s)
    G1 = grad1_batch(pts[:, None, :], pts[None, :, :], ctx)         # G1[j,i] = d1 K(x_j, x_i)
    M12 = grad12_batch(pts[:, None, :], pts[None, :, :], ctx)       # (s, s, 2d, 2d)

    m = 1 + dim2
    U = np.zeros((s * m, s * m))
    for i in range(s):
        for j in range(s):
            U[i * m, j * m] = K[i, j]
            U[i * m, j * m + 1:(j + 1) * m] = G1[j, i]
            U[i * m + 1:(i + 1) * m, j * m] = G1[i, j]
            U[i * m + 1:(i + 1) * m, j * m + 1:(j + 1) * m] = M12[j, i].T
    return CertificateSystem(U, anchors, ctx)


def _solve_system(U: np.ndarray, rhs: np.ndarray):
    """Solve U X = rhs for SPD-ish U with a conditioning fallback."""
    w = scipy.linalg.eigvalsh(U)
    lo, hi = float(w[0]), float(w[-1])
    cond = math.inf if lo <= 0 else hi / lo
    X = None
    if lo > 0 and cond < _COND_LIMIT:
        c, low = scipy.linalg.cho_factor(U, lower=True)
        X = scipy.linalg.cho_solve((c, low), rhs)
    else:
        # pivoted fallback for users feeding unseparated anchors
        try:
            lu, piv = scipy.linalg.lu_factor(U)
            X = scipy.linalg.lu_solve((lu, piv), rhs)
        except (scipy.linalg.LinAlgError, ValueError):
            raise SingularSystemError("certificate system is singular", cond)
    resid = np.abs(U @ X - rhs).max(axis=0)
    if np.any(~np.isfinite(X)) or np.max(resid) >= _RESIDUAL_TOL:
        raise SingularSystemError(
            "certificate solve residual exceeds tolerance", cond)
    return X, resid, cond


def solve_certificates(system: CertificateSystem):
    """Solve for the global certificate and the s local certificates."""
    s = system.s
    dim2 = 2 * system.ctx.d
    m = 1 + dim2
    rhs = np.zeros((s * m, s + 1))
    rhs[::m, 0] = 1.0                    # global: value 1 at every anchor
    for j in range(s):
        rhs[j * m, j + 1] = 1.0          # local j: indicator values
    X, resid, _ = _solve_system(system.upsilon, rhs)

    def mk(col, kind, index):
        coef = X[:, col]
        alpha = coef[::m].copy()
        beta = coef.reshape(s, m)[:, 1:].copy()
        psq = float(rhs[:, col] @ coef)
        return CertificateSolution(alpha, beta, kind, index,
                                   math.sqrt(max(psq, 0.0)), float(resid[col]))

    global_sol = mk(0, "global", None)
    local_sols = [mk(j + 1, "local", j) for j in range(s)]
    return global_sol, local_sols


def _eval_batch(sol: CertificateSolution, system: CertificateSystem, P: np.ndarray,
                kernel_cache=None):
    """eta at coordinate rows P (m, 2d); optionally reuse (K, G1) across calls."""
    pts = system.anchors_array()
    if kernel_cache is None:
        K = kernel_values(pts[:, None, :], P[None, :, :], system.ctx)
        G1 = grad1_batch(pts[:, None, :], P[None, :, :], system.ctx)
        kernel_cache = (K, G1)
    K, G1 = kernel_cache
    vals = sol.alpha @ K + np.einsum("jd,jmd->m", sol.beta, G1)
    return vals, kernel_cache


def eval_certificate(sol: CertificateSolution, system: CertificateSystem, x) -> float:
    P = (x.as_array() if isinstance(x, Location) else np.asarray(x, float))[None, :]
    vals, _ = _eval_batch(sol, system, P)
    return float(vals[0])


def eval_certificate_gradient(sol: CertificateSolution, system: CertificateSystem,
                              x) -> np.ndarray:
    pts = system.anchors_array()
    P = (x.as_array() if isinstance(x, Location) else np.asarray(x, float))[None, :]
    G2 = grad2_batch(pts[:, None, :], P[None, :, :], system.ctx)       # (s,1,2d)
    M12 = grad12_batch(pts[:, None, :], P[None, :, :], system.ctx)     # (s,1,2d,2d)
    grad = np.einsum("j,jmd->md", sol.alpha, G2)
    grad += np.einsum("jb,jmbd->md", sol.beta, M12)
    return grad[0]


# --------------------------------------------------------------------------
# constants
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class LpcConstants:
    """Single source of truth for the curvature/certificate constants.

    All values are dimension-indexed worst-case bounds; delta and delta_tau
    are None on the trivial single-anchor path where separation is vacuous.
    """

    d: int
    s: int
    r: float
    eps_bar_0: float
    eps_bar_2: float
    delta: Optional[float]
    delta_tau: Optional[float]
    b_00: float
    b_10: float
    b_01: float
    b_11: float
    b_02: float
    b_20: float
    b_12: float
    b_21: float
    eps_0: float
    eps_2: float
    eps_tilde_0: float
    eps_tilde_2: float
    c_p: float
    eps_tilde_3: float
    h: float


def lpc_constants(d: int, s: int, tau: float, box) -> LpcConstants:
    """Curvature constants, certificate constants, and separation thresholds."""
    if d < 1 or s < 1:
        raise ValueError("need d >= 1 and s >= 1")
    r = 0.3025 / math.sqrt(d)
    eps_bar_0 = 0.0894 / (2 * d)
    eps_bar_2 = 0.13139
    b_00 = 1.0
    b_10 = b_01 = math.sqrt(2 * d)
    b_11 = 2.0 * d
    b_02 = b_20 = math.sqrt(4 * d * d + 10 * d)
    b_12 = b_21 = math.sqrt(2 * d) * b_02
    B0 = 1 + b_00 + b_10
    B2 = 1 + b_02 + b_12
    h = min(eps_bar_0 / B0, eps_bar_2 / B2) / 64.0

    if s >= 2:
        if d == 1:
            delta = 2 * math.sqrt(13.88 + math.log(s - 1))
        else:
            delta = 2 * math.sqrt(11.9 + 3 * math.log(d + 6.62) + math.log(s - 1))
        u_min, u_max = box.u_min, box.u_max
        ball = math.sqrt(u_max**2 + 0.25 * r**2 * (2 * u_max**2 + tau**2))
        delta_tau = max(ball / u_min * (delta + r), 2 * (u_max / u_min) * delta)
        delta_tau += math.sqrt(d * math.log(u_max**2 / u_min**2))
        if delta_tau < delta:
            raise AssertionError("separation threshold below certificate threshold")
    else:
        delta = None
        delta_tau = None

    return LpcConstants(
        d=d, s=s, r=r, eps_bar_0=eps_bar_0, eps_bar_2=eps_bar_2,
        delta=delta, delta_tau=delta_tau,
        b_00=b_00, b_10=b_10, b_01=b_01, b_11=b_11,
        b_02=b_02, b_20=b_20, b_12=b_12, b_21=b_21,
        eps_0=0.03911 / d, eps_2=0.06158,
        eps_tilde_0=0.03911 / d,
        eps_tilde_2=math.sqrt(4 * d * d + 10 * d) / 2 + 0.004106,
        c_p=2.0, eps_tilde_3=2.84, h=h,
    )


@dataclass(frozen=True)
class SeparationReport:
    min_semidistance: float
    delta_tau: Optional[float]
    satisfied: bool


def separation_check(mu0: DiscreteMeasure, ctx: KernelContext,
                     consts: LpcConstants) -> SeparationReport:
    """Compare the minimum pairwise semi-distance against the threshold."""
    if mu0.s < 2:
        return SeparationReport(math.inf, consts.delta_tau, True)
    from .measures import min_pairwise_semidistance

    dmin = min_pairwise_semidistance(mu0, ctx)
    thr = consts.delta_tau if consts.delta_tau is not None else 0.0
    return SeparationReport(dmin, consts.delta_tau, dmin >= thr)


# --------------------------------------------------------------------------
# operator norms (whitened closed reductions)
# --------------------------------------------------------------------------

def _spectral(batch: np.ndarray) -> np.ndarray:
    return np.linalg.svd(batch, compute_uv=False)[..., 0]


def operator_norms_batch(X: np.ndarray, Y: np.ndarray, ctx: KernelContext) -> dict:
    """Whitened derivative norms for stacked coordinate pairs (n, 2d).

    Keys "ij" give |K^(ij)| in operator form: metric-whitened gradient norms
    for one derivative, spectral norms of whitened matrices for two, and the
    sqrt(2d) * max-slice bound for the (1,2) block.
    """
    X = np.atleast_2d(np.asarray(X, float))
    Y = np.atleast_2d(np.asarray(Y, float))
    d = X.shape[-1] // 2
    wx = metric_diag_batch(X, ctx.tau) ** -0.5
    wy = metric_diag_batch(Y, ctx.tau) ** -0.5
    out = {"00": np.abs(kernel_values(X, Y, ctx))}
    out["10"] = np.linalg.norm(wx * grad1_batch(X, Y, ctx), axis=-1)
    out["01"] = np.linalg.norm(wy * grad2_batch(X, Y, ctx), axis=-1)
    M12 = grad12_batch(X, Y, ctx) * wx[..., :, None] * wy[..., None, :]
    out["11"] = _spectral(M12)
    H2 = rhess2_batch(X, Y, ctx) * wy[..., :, None] * wy[..., None, :]
    out["02"] = _spectral(H2)
    H2r = rhess2_batch(Y, X, ctx) * wx[..., :, None] * wx[..., None, :]
    out["20"] = _spectral(H2r)
    T = grad1_rhess2_batch(X, Y, ctx)
    T = T * wx[..., :, None, None] * wy[..., None, :, None] * wy[..., None, None, :]
    out["12"] = math.sqrt(2 * d) * _spectral(T).max(axis=-1)
    Tr = grad1_rhess2_batch(Y, X, ctx)
    Tr = Tr * wy[..., :, None, None] * wx[..., None, :, None] * wx[..., None, None, :]
    out["21"] = math.sqrt(2 * d) * _spectral(Tr).max(axis=-1)
    return out


def kernel_operator_norms(x, y, ctx: KernelContext) -> dict:
    a = x.as_array() if isinstance(x, Location) else np.asarray(x, float)
    b = y.as_array() if isinstance(y, Location) else np.asarray(y, float)
    batch = operator_norms_batch(a[None, :], b[None, :], ctx)
    return {k: float(v[0]) for k, v in batch.items()}


# --------------------------------------------------------------------------
# non-degeneracy verification
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class GridSpec:
    """Sampling resolutions for non-degeneracy verification.

    Axis counts apply per coordinate axis; the low-discrepancy set is an
    unscrambled Halton sequence over the full box, and each near region is
    additionally sampled along geodesic rays from its anchor (points leaving
    the domain box are dropped: the clauses quantify over the box only).
    """

    near_t_points: int = 400
    near_u_points: int = 200
    global_t_points: int = 200
    global_u_points: int = 100
    lowdisc_points: int = 100_000
    rays_per_region: int = 16
    points_per_ray: int = 64
    violation_tol: float = 1e-10


@dataclass(frozen=True)
class ClauseReport:
    name: str
    n_points: int
    worst_margin: float          # max over samples of lhs - rhs; <= tol passes
    worst_point: Optional[Location]
    violations: int
    passed: bool


@dataclass(frozen=True)
class NondegeneracyReport:
    separation: SeparationReport
    clauses: tuple[ClauseReport, ...]
    all_clauses_pass: bool
    points_evaluated: int
    violation_tolerance: float


def _axis(lo: float, hi: float, n: int) -> np.ndarray:
    if hi <= lo:
        return np.array([lo])
    return np.linspace(lo, hi, max(int(n), 2))


def _tensor_grid(t_axes, u_axes) -> np.ndarray:
    axes = list(t_axes) + list(u_axes)
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=-1)


def _near_bounding_axes(anchor: np.ndarray, r: float, ctx: KernelContext, spec: GridSpec):
    """Per-axis ranges of the semi-distance ball of radius r around an anchor."""
    d = ctx.d
    box = ctx.box
    tau2 = ctx.tau**2
    E = math.exp(r * r)
    m_lo = (E - math.sqrt(E * E - 1)) ** 2
    m_hi = (E + math.sqrt(E * E - 1)) ** 2
    t_axes, u_axes = [], []
    for k in range(d):
        uk = anchor[d + k]
        half = r * math.sqrt(uk**2 + box.u_max**2 + tau2)
        t_axes.append(_axis(max(anchor[k] - half, box.t_lo[k]),
                            min(anchor[k] + half, box.t_hi[k]), spec.near_t_points))
        Bk = 2 * uk**2 + tau2
        c_lo, c_hi = Bk * m_lo, Bk * m_hi
        u_lo = math.sqrt(max(c_lo - tau2, 0.0) / 2) if c_lo > tau2 else box.u_min
        u_hi = math.sqrt(max(c_hi - tau2, 0.0) / 2)
        u_axes.append(_axis(max(u_lo, box.u_min), min(u_hi, box.u_max),
                            spec.near_u_points))
    return t_axes, u_axes


def _ray_targets(t_axes, u_axes, n: int) -> np.ndarray:
    """Deterministic boundary points of the near bounding box, used as ray ends."""
    lo = np.array([ax[0] for ax in t_axes] + [ax[0] for ax in u_axes])
    hi = np.array([ax[-1] for ax in t_axes] + [ax[-1] for ax in u_axes])
    dim = len(lo)
    halton = qmc.Halton(d=max(dim - 1, 1), scramble=False)
    face_pts = halton.random(n)
    targets = np.empty((n, dim))
    for i in range(n):
        face_axis = i % dim
        side = (i // dim) % 2
        mask = np.arange(dim) != face_axis
        full = np.empty(dim)
        if dim > 1:
            full[mask] = lo[mask] + face_pts[i, : dim - 1] * (hi - lo)[mask]
        full[face_axis] = hi[face_axis] if side else lo[face_axis]
        targets[i] = full
    return targets


def _sample_points(anchors: np.ndarray, consts: LpcConstants, spec: GridSpec,
                   ctx: KernelContext) -> np.ndarray:
    box = ctx.box
    d = ctx.d
    chunks = []

    t_axes = [_axis(box.t_lo[k], box.t_hi[k], spec.global_t_points) for k in range(d)]
    u_axes = [_axis(box.u_min, box.u_max, spec.global_u_points) for k in range(d)]
    chunks.append(_tensor_grid(t_axes, u_axes))

    ray_chunks = []
    for a in anchors:
        nt, nu = _near_bounding_axes(a, consts.r, ctx, spec)
        chunks.append(_tensor_grid(nt, nu))
        targets = _ray_targets(nt, nu, spec.rays_per_region)
        ys = np.linspace(0.0, 1.0, spec.points_per_ray + 1)[1:]
        for tgt in targets:
            if np.array_equal(tgt, a):
                continue
            ray_chunks.append(geodesic_spec(a, tgt, ctx).point(ys))
    chunks.extend(ray_chunks)

    if spec.lowdisc_points > 0:
        halton = qmc.Halton(d=2 * d, scramble=False)
        unit = halton.random(spec.lowdisc_points)
        lo, hi = box.lower(), box.upper()
        chunks.append(lo + unit * (hi - lo))

    P = np.concatenate(chunks, axis=0)
    inside = np.all((P >= box.lower() - 1e-12) & (P <= box.upper() + 1e-12), axis=1)
    return np.clip(P[inside], box.lower(), box.upper())


def _clause(name, margins, P, tol) -> ClauseReport:
    if len(margins) == 0:
        return ClauseReport(name, 0, -math.inf, None, 0, True)
    i = int(np.argmax(margins))
    worst = float(margins[i])
    nviol = int(np.sum(margins > tol))
    return ClauseReport(name, len(margins), worst,
                        Location.from_array(P[i]), nviol, nviol == 0)


def verify_nondegeneracy(global_sol: CertificateSolution,
                         local_sols, mu0: DiscreteMeasure,
                         consts: LpcConstants, grid_spec: GridSpec,
                         system: CertificateSystem) -> NondegeneracyReport:
    """Sample the box and evaluate every non-degeneracy clause.

    Margins are lhs - rhs of each clause inequality (nonpositive = holds);
    a sample counts as a violation only beyond grid_spec.violation_tol,
    which absorbs kernel-evaluation roundoff next to the anchors where both
    sides of the quadratic clauses vanish.
    """
    ctx = system.ctx
    anchors = system.anchors_array()
    if mu0.s != system.s or not np.array_equal(mu0.locations_array(), anchors):
        raise ValueError("measure atoms disagree with certificate anchors")
    sep = separation_check(mu0, ctx, consts)

    P = _sample_points(anchors, consts, grid_spec, ctx)
    region = region_index_batch(P, anchors, consts.r, ctx)
    frdist = fr_distance_pairs(P[:, None, :], anchors[None, :, :], ctx)

    far = region < 0
    tol = grid_spec.violation_tol
    clauses = []

    # interpolation residuals at the anchors
    cache = None
    eta_g, cache_anchor = _eval_batch(global_sol, system, anchors)
    grads = [np.linalg.norm(eval_certificate_gradient(global_sol, system, a))
             for a in anchors]
    interp = np.abs(eta_g - 1.0)
    clauses.append(ClauseReport("global.interpolation", 2 * system.s,
                                float(max(interp.max(), max(grads))), None,
                                int(np.sum(interp > 1e-8)
                                    + sum(g > 1e-8 for g in grads)),
                                bool(interp.max() < 1e-8 and max(grads) < 1e-8)))

    vals_g, cache = _eval_batch(global_sol, system, P, cache)
    clauses.append(_clause("global.far",
                           np.abs(vals_g[far]) - (1 - consts.eps_0), P[far], tol))
    for j in range(system.s):
        near_j = region == j
        rhs = 1 - consts.eps_2 * frdist[near_j, j] ** 2
        clauses.append(_clause(f"global.near[{j}]",
                               vals_g[near_j] - rhs, P[near_j], tol))

    for lsol in local_sols:
        l = lsol.index
        eta_l, _ = _eval_batch(lsol, system, anchors, cache_anchor)
        target = np.zeros(system.s)
        target[l] = 1.0
        gnorms = [np.linalg.norm(eval_certificate_gradient(lsol, system, a))
                  for a in anchors]
        resid = np.abs(eta_l - target)
        clauses.append(ClauseReport(
            f"local[{l}].interpolation", 2 * system.s,
            float(max(resid.max(), max(gnorms))), None,
            int(np.sum(resid > 1e-8) + sum(g > 1e-8 for g in gnorms)),
            bool(resid.max() < 1e-8 and max(gnorms) < 1e-8)))

        vals_l, cache = _eval_batch(lsol, system, P, cache)
        clauses.append(_clause(f"local[{l}].far",
                               np.abs(vals_l[far]) - (1 - consts.eps_tilde_0),
                               P[far], tol))
        self_near = region == l
        rhs = consts.eps_tilde_2 * frdist[self_near, l] ** 2
        clauses.append(_clause(f"local[{l}].near_self",
                               np.abs(1.0 - vals_l[self_near]) - rhs,
                               P[self_near], tol))
        for i in range(system.s):
            if i == l:
                continue
            near_i = region == i
            rhs = consts.eps_tilde_2 * frdist[near_i, i] ** 2
            clauses.append(_clause(f"local[{l}].near_other[{i}]",
                                   np.abs(vals_l[near_i]) - rhs, P[near_i], tol))

    return NondegeneracyReport(
        separation=sep,
        clauses=tuple(clauses),
        all_clauses_pass=all(c.passed for c in clauses),
        points_evaluated=len(P),
        violation_tolerance=tol,
    )
