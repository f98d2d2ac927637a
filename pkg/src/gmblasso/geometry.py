"""Fisher-Rao metric, Christoffel symbols, geodesics, and near/far regions.

The metric induced by the normalized kernel is diagonal,

    g_x = diag( (1/(2u_k^2+tau^2))_k , (2u_k^2/(2u_k^2+tau^2)^2)_k ),

and factorizes over coordinates.  Each coordinate plane (t_k, u_k) maps to
the Poincare half-plane through h = sqrt(u^2 + tau^2/2); geodesics are
vertical lines or semicircles centred on the h = 0 axis, traversed at
constant speed in the hyperbolic arc-length parameter (log h on vertical
lines, log tan(theta/2) along semicircles).  The d-dimensional geodesic runs
every coordinate geodesic simultaneously, each completing its own arc on
y in [0, 1]; coordinate k carries the arc-length share
g_k = dist_k^2 / dist^2.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .kernel import KernelContext, _christoffel_coeffs, _split, semi_distance_pairs
from .measures import DiscreteMeasure, Location

__all__ = [
    "MetricAt",
    "GeodesicSpec",
    "metric_at",
    "riemannian_norm",
    "christoffel",
    "fisher_rao_distance",
    "geodesic_spec",
    "geodesic_point",
    "region_of",
]

_U_FLOOR = 1e-12          # guards sqrt(h^2 - tau^2/2) against rounding
_VERTICAL_RTOL = 1e-9     # |dt| below this times scale -> vertical branch


@dataclass(frozen=True)
class MetricAt:
    """Diagonal Fisher-Rao metric at a point, ordered like Location arrays."""

    diag: np.ndarray

    def matrix(self) -> np.ndarray:
        return np.diag(self.diag)

    def inv_diag(self) -> np.ndarray:
        return 1.0 / self.diag

    def sqrt_diag(self) -> np.ndarray:
        return np.sqrt(self.diag)


def metric_diag_batch(x, tau: float) -> np.ndarray:
    _, u = _split(x)
    B = 2 * u**2 + tau**2
    return np.concatenate([1.0 / B, 2 * u**2 / B**2], axis=-1)


def _coords(x) -> np.ndarray:
    return x.as_array() if isinstance(x, Location) else np.asarray(x, dtype=float)


def metric_at(x, ctx: KernelContext) -> MetricAt:
    return MetricAt(metric_diag_batch(_coords(x), ctx.tau))


def riemannian_norm(v, x, ctx: KernelContext) -> float:
    """sqrt(v^T g_x v) for a tangent vector v ordered (t..., u...)."""
    v = np.asarray(v, dtype=float)
    g = metric_diag_batch(_coords(x), ctx.tau)
    return float(np.sqrt(np.sum(g * v**2, axis=-1)))


def christoffel(x, ctx: KernelContext):
    """Christoffel matrices (Gamma^{t_k})_k and (Gamma^{u_k})_k at x.

    Each is a symmetric 2d x 2d matrix with the only nonzero entries
    Gamma^{t_k}_{u_k t_k} = -2u_k/(2u_k^2+tau^2), Gamma^{u_k}_{t_k t_k} = 1/u_k,
    Gamma^{u_k}_{u_k u_k} = (tau^2-2u_k^2)/(u_k(2u_k^2+tau^2)).
    """
    arr = _coords(x)
    d = arr.shape[-1] // 2
    gt, gu_tt, gu_uu = _christoffel_coeffs(arr, ctx.tau)
    gammas_t, gammas_u = [], []
    for k in range(d):
        Gt = np.zeros((2 * d, 2 * d))
        Gt[k, d + k] = Gt[d + k, k] = gt[k]
        gammas_t.append(Gt)
        Gu = np.zeros((2 * d, 2 * d))
        Gu[k, k] = gu_tt[k]
        Gu[d + k, d + k] = gu_uu[k]
        gammas_u.append(Gu)
    return gammas_t, gammas_u


def _halfplane(x, tau: float):
    t, u = _split(x)
    return t, np.sqrt(u**2 + tau**2 / 2)


def fr_distance_coord(x, y, tau: float) -> np.ndarray:
    """Per-coordinate Fisher-Rao distances, shape (..., d)."""
    t, h = _halfplane(x, tau)
    tp, hp = _halfplane(y, tau)
    near = np.hypot(t - tp, h - hp)
    far = np.hypot(t - tp, h + hp)
    ratio = (near + far) / (2 * np.sqrt(h * hp))
    return math.sqrt(2.0) * np.log(np.maximum(ratio, 1.0))


def fr_distance_pairs(x, y, ctx: KernelContext) -> np.ndarray:
    per = fr_distance_coord(np.asarray(x, float), np.asarray(y, float), ctx.tau)
    return np.sqrt(np.sum(per**2, axis=-1))


def fisher_rao_distance(x, xp, ctx: KernelContext) -> float:
    return float(fr_distance_pairs(_coords(x), _coords(xp), ctx))


@dataclass(frozen=True)
class GeodesicSpec:
    """Constant-speed Fisher-Rao geodesic between two locations.

    kinds[k] is "constant", "vertical-line", or "semicircle"; shares[k] is
    the squared per-coordinate length fraction g_k (sum = 1 unless the
    endpoints coincide); length is the total Fisher-Rao distance.
    """

    x: Location
    xp: Location
    tau: float
    kinds: tuple[str, ...]
    shares: np.ndarray
    length: float
    # per-coordinate traversal parameters (half-plane)
    _sig0: np.ndarray
    _sig1: np.ndarray
    _center: np.ndarray
    _radius: np.ndarray

    def point(self, y) -> np.ndarray:
        """Coordinates at normalized parameter(s) y in [0, 1], shape (..., 2d)."""
        y = np.asarray(y, dtype=float)
        d = self.x.d
        a = self.x.as_array()
        t = np.empty(y.shape + (d,))
        h = np.empty(y.shape + (d,))
        sig = (1 - y[..., None]) * self._sig0 + y[..., None] * self._sig1
        for k, kind in enumerate(self.kinds):
            if kind == "constant":
                t[..., k] = a[k]
                h[..., k] = math.sqrt(a[d + k] ** 2 + self.tau**2 / 2)
            elif kind == "vertical-line":
                t[..., k] = a[k]
                h[..., k] = np.exp(sig[..., k])
            else:
                theta = 2 * np.arctan(np.exp(sig[..., k]))
                t[..., k] = self._center[k] + self._radius[k] * np.cos(theta)
                h[..., k] = self._radius[k] * np.sin(theta)
        u = np.sqrt(np.maximum(h**2 - self.tau**2 / 2, _U_FLOOR**2))
        return np.concatenate([t, u], axis=-1)

    def location(self, y: float) -> Location:
        return Location.from_array(self.point(float(y)))


def geodesic_spec(x, xp, ctx: KernelContext) -> GeodesicSpec:
    xloc = x if isinstance(x, Location) else Location.from_array(_coords(x))
    yloc = xp if isinstance(xp, Location) else Location.from_array(_coords(xp))
    a, b = xloc.as_array(), yloc.as_array()
    d = xloc.d
    tau = ctx.tau
    t0, h0 = _halfplane(a, tau)
    t1, h1 = _halfplane(b, tau)
    per = fr_distance_coord(a, b, tau)
    total = float(np.sqrt(np.sum(per**2)))
    shares = per**2 / total**2 if total > 0 else np.zeros(d)

    kinds = []
    sig0 = np.zeros(d)
    sig1 = np.zeros(d)
    center = np.zeros(d)
    radius = np.zeros(d)
    for k in range(d):
        dt = t1[k] - t0[k]
        scale = max(1.0, abs(t0[k]), abs(t1[k]), h0[k], h1[k])
        if per[k] == 0.0:
            kinds.append("constant")
        elif abs(dt) < _VERTICAL_RTOL * scale:
            kinds.append("vertical-line")
            sig0[k] = math.log(h0[k])
            sig1[k] = math.log(h1[k])
        else:
            kinds.append("semicircle")
            c = (t1[k] ** 2 + h1[k] ** 2 - t0[k] ** 2 - h0[k] ** 2) / (2 * dt)
            R = math.hypot(t0[k] - c, h0[k])
            th0 = math.atan2(h0[k], t0[k] - c)
            th1 = math.atan2(h1[k], t1[k] - c)
            center[k] = c
            radius[k] = R
            sig0[k] = math.log(math.tan(th0 / 2))
            sig1[k] = math.log(math.tan(th1 / 2))
    return GeodesicSpec(xloc, yloc, tau, tuple(kinds), shares, total,
                        sig0, sig1, center, radius)


def geodesic_point(x, xp, y: float, ctx: KernelContext) -> Location:
    """Point on the Fisher-Rao geodesic from x to x' at arc-length fraction y."""
    return geodesic_spec(x, xp, ctx).location(y)


def region_of(x, target: DiscreteMeasure, r: float, ctx: KernelContext):
    """Nearest-atom index if within the closed semi-distance ball of radius r,
    else the string "far".  Ties break to the smallest index."""
    if target.s == 0:
        return "far"
    pts = target.locations_array()
    dist = semi_distance_pairs(_coords(x)[None, :], pts, ctx)
    j = int(np.argmin(dist))
    return j if dist[j] <= r else "far"


def region_index_batch(P: np.ndarray, anchors: np.ndarray, r: float,
                       ctx: KernelContext) -> np.ndarray:
    """Vectorized region classification: index into anchors, or -1 for far."""
    dist = semi_distance_pairs(P[:, None, :], anchors[None, :, :], ctx)
    j = np.argmin(dist, axis=1)
    out = np.where(dist[np.arange(len(P)), j] <= r, j, -1)
    return out
