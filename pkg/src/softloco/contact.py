"""Barrier contact of surface vertices against static analytic colliders.

The barrier B(d) = -kappa (d - dhat)^2 ln(d / dhat) activates below the
distance threshold dhat, is C^2 at d = dhat, and blows up as d -> 0+, so a
feasible iterate can never cross a collider as long as line-search steps
are capped before the first distance zero crossing (``max_feasible_step``
computes that cap in closed form per collider type).

Friction is evaluated lazily: the normal force magnitude lambda comes from
the previous outer solver iteration, which keeps each iteration's friction
term smooth.  The mollifier below eps_v is the C^1 ramp
f1(s) = s (2 eps_v - s) / eps_v^2; a tiny eps inside the slip-speed norm
keeps the term differentiable at exactly zero slip.
"""

from dataclasses import dataclass

import numpy as np

from . import tape as T
from .errors import FeasibilityError

_SLIP_EPS = 1e-12  # m/s, smooths the slip norm at zero


@dataclass
class BarrierParams:
    kappa: float = 1e4
    dhat: float = 1e-3
    eps_v: float = 1e-3

    def __post_init__(self):
        if self.kappa <= 0 or self.dhat <= 0 or self.eps_v <= 0:
            raise ValueError("kappa, dhat and eps_v must be positive")


@dataclass(frozen=True)
class HalfSpace:
    """Points with normal . p - offset > 0 are feasible."""

    normal: tuple
    offset: float = 0.0
    friction: float = 0.0

    def __post_init__(self):
        n = np.asarray(self.normal, dtype=float)
        if not np.isclose(np.linalg.norm(n), 1.0, atol=1e-9):
            raise ValueError("half-space normal must be unit length")


@dataclass(frozen=True)
class Sphere:
    """Static ball obstacle; the body stays outside."""

    center: tuple
    radius: float
    friction: float = 0.0

    def __post_init__(self):
        if self.radius <= 0:
            raise ValueError("sphere radius must be positive")


def distance(p, collider):
    """Signed distance of points (C, 3) to the collider surface."""
    if isinstance(collider, HalfSpace):
        n = np.asarray(collider.normal)
        return T.vsum(p * n, axis=-1) - collider.offset
    if isinstance(collider, Sphere):
        w = p - np.asarray(collider.center)
        return T.sqrt(T.vsum(w * w, axis=-1)) - collider.radius
    raise TypeError(f"unknown collider {type(collider).__name__}")


def outward_direction(p, collider):
    """Gradient of the distance (unit, pointing away from the collider)."""
    if isinstance(collider, HalfSpace):
        n = np.asarray(collider.normal)
        return np.broadcast_to(n, T.real_of(p).shape)
    w = p - np.asarray(collider.center)
    nrm = T.sqrt(T.vsum(w * w, axis=-1))
    return w / T.reshape(nrm, T.real_of(nrm).shape + (1,))


def barrier(d, params):
    """Barrier energy per distance; zero at and beyond dhat."""
    dre = T.real_of(d)
    if np.any(dre <= 0.0):
        raise FeasibilityError(
            f"contact distance {dre.min():.3e} <= 0 reached the barrier")
    active = dre < params.dhat
    u = d - params.dhat
    b = -params.kappa * (u * u) * T.log(d / params.dhat)
    return T.where(active, b, np.zeros(dre.shape))


def barrier_gradient(d, params):
    """dB/dd, used for force direction scaling and the lagged normal force."""
    dre = T.real_of(d)
    if np.any(dre <= 0.0):
        raise FeasibilityError(
            f"contact distance {dre.min():.3e} <= 0 reached the barrier")
    active = dre < params.dhat
    u = d - params.dhat
    g = -params.kappa * (2.0 * u * T.log(d / params.dhat) + (u * u) / d)
    return T.where(active, g, np.zeros(dre.shape))


def barrier_second(d, params):
    """d^2B/dd^2 in closed form (reference for smoothness tests)."""
    d = np.asarray(d, dtype=float)
    active = d < params.dhat
    u = d - params.dhat
    with np.errstate(divide="ignore", invalid="ignore"):
        b2 = -params.kappa * (2.0 * np.log(d / params.dhat)
                              + 4.0 * u / d - (u * u) / (d * d))
    return np.where(active, b2, 0.0)


def barrier_force(p, collider, params):
    """Repulsive force -dB/dx on each point (C, 3)."""
    d = distance(p, collider)
    g = barrier_gradient(d, params)
    n = outward_direction(p, collider)
    return n * T.reshape(-g, T.real_of(g).shape + (1,))


def normal_force_magnitudes(p, collider, params):
    """lambda = -B'(d) >= 0, the lagged friction input."""
    d = distance(p, collider)
    return -barrier_gradient(d, params)


def friction_force(p, p_prev, collider, lam, params, dt):
    """Mollified Coulomb friction against the lagged normal force.

    The tangential slip velocity u comes from the displacement over dt;
    the force opposes it with magnitude at most friction * lambda,
    saturating above eps_v.
    """
    mu_f = collider.friction
    if mu_f == 0.0:
        return None
    n = outward_direction(p, collider)
    v = (p - p_prev) / dt
    vn = T.vsum(v * n, axis=-1)
    u = v - n * T.reshape(vn, T.real_of(vn).shape + (1,))
    s = T.sqrt(T.vsum(u * u, axis=-1) + _SLIP_EPS * _SLIP_EPS)
    sre = T.real_of(s)
    ramp = (2.0 * params.eps_v - s) / (params.eps_v * params.eps_v)
    coef = T.where(sre < params.eps_v, ramp, 1.0 / s)
    scale = (-mu_f) * lam * coef
    return u * T.reshape(scale, T.real_of(scale).shape + (1,))


def max_feasible_step(p, dp, colliders, cap=1.0, margin=0.9):
    """Largest step along dp keeping every vertex strictly feasible.

    Closed-form first zero crossing per collider kind (linear for a half
    space, quadratic for a sphere), scaled back by ``margin``.  Returns
    ``cap`` when nothing is in the way.
    """
    p = np.asarray(p, dtype=float)
    dp = np.asarray(dp, dtype=float)
    best = np.inf
    for collider in colliders:
        if isinstance(collider, HalfSpace):
            n = np.asarray(collider.normal)
            d0 = p @ n - collider.offset
            if np.any(d0 <= 0.0):
                raise FeasibilityError("max_feasible_step from infeasible point")
            rate = dp @ n
            hit = rate < 0.0
            if np.any(hit):
                best = min(best, float(np.min(-d0[hit] / rate[hit])))
        elif isinstance(collider, Sphere):
            w = p - np.asarray(collider.center)
            c0 = np.sum(w * w, axis=-1) - collider.radius ** 2
            if np.any(c0 <= 0.0):
                raise FeasibilityError("max_feasible_step from infeasible point")
            a = np.sum(dp * dp, axis=-1)
            b = np.sum(w * dp, axis=-1)
            disc = b * b - a * c0
            hit = (b < 0.0) & (disc >= 0.0) & (a > 0.0)
            if np.any(hit):
                roots = (-b[hit] - np.sqrt(disc[hit])) / a[hit]
                best = min(best, float(np.min(roots)))
        else:
            raise TypeError(f"unknown collider {type(collider).__name__}")
    if not np.isfinite(best):
        return cap
    return min(cap, margin * best)


def min_distance(x_surf_real, colliders):
    """Smallest real distance across all surface-vertex/collider pairs."""
    out = np.inf
    tp = T.Tape(recording=False)
    p = T.Var(tp, -1, np.asarray(x_surf_real, dtype=float))
    for collider in colliders:
        d = T.real_of(distance(p, collider))
        if d.size:
            out = min(out, float(d.min()))
    return out
