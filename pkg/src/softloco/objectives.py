"""Kinematic target functions and regularizers composing the frame loss.

Every target G is a squared deviation of some kinematic readout of the
next state from a user value, so G >= 0 with equality exactly on target.
Rate quantities (momentum change, moment-of-inertia change, energy rate,
footprint-area rate) use backward differences over the frame step.  The
whole loss, including the forward simulation producing x_{t+1}, lives on
one tape so a single reverse sweep yields its activation gradient.
"""

from dataclasses import dataclass, field

import numpy as np

from . import clinalg as L
from . import elastic as E
from . import sim as S
from . import tape as T
from .errors import ConfigError

TARGET_KINDS = ("position", "velocity", "acceleration", "angular", "moi",
                "elastic", "projection")


@dataclass
class Target:
    kind: str
    weight: float
    ids: np.ndarray = None       # vertex ids (element ids for "elastic")
    value: object = 0.0          # 3-vector or scalar depending on kind
    axis: np.ndarray = None      # "moi" only
    plane: dict = None           # "projection" only: {"point", "normal"}

    def __post_init__(self):
        if self.kind not in TARGET_KINDS:
            raise ConfigError(f"unknown target kind {self.kind!r}")
        if self.weight < 0:
            raise ConfigError("target weights must be non-negative")


@dataclass
class LossSpec:
    targets: list = field(default_factory=list)
    energy_k: float = 0.0        # R_energy = 1/2 k ||a||^2
    energy_weight: float = 0.0
    adot_max: float = np.inf     # R_change threshold on |da/dt|
    change_weight: float = 0.0

    def __post_init__(self):
        if self.energy_weight < 0 or self.change_weight < 0:
            raise ConfigError("regularizer weights must be non-negative")
        if not self.targets and self.energy_weight == 0 and self.change_weight == 0:
            raise ConfigError("loss needs at least one target or regularizer")


def _weights(masses, ids):
    w = masses[ids]
    return w / w.sum()


def com(x, ids, masses):
    """Mass-weighted center of the selected vertices (3,)."""
    w = _weights(masses, ids)
    sel = x[ids] if isinstance(x, T.Var) else np.asarray(x)[ids]
    return T.vsum(sel * w[:, None], axis=0) if isinstance(x, T.Var) \
        else np.sum(sel * w[:, None], axis=0)


def g_position(x_next, ids, masses, target):
    d = com(x_next, ids, masses) - np.asarray(target, dtype=float)
    return L.sqnorm(d)


def g_velocity(x_next, x_t, ids, masses, target, dt):
    v = (com(x_next, ids, masses) - com(x_t, ids, masses)) / dt
    return L.sqnorm(v - np.asarray(target, dtype=float))


def g_acceleration(x_next, x_t, x_prev, ids, masses, target, dt):
    acc = (com(x_next, ids, masses) - 2.0 * com(x_t, ids, masses)
           + com(x_prev, ids, masses)) / (dt * dt)
    return L.sqnorm(acc - np.asarray(target, dtype=float))


def _angular_momentum(x, v, ids, masses):
    """L = sum m r x v about the selection's center of mass."""
    m = masses[ids][:, None]
    c = com(x, ids, masses)
    xs = x[ids] if isinstance(x, T.Var) else np.asarray(x)[ids]
    vs = v[ids] if isinstance(v, T.Var) else np.asarray(v)[ids]
    r = xs - c
    if isinstance(x, T.Var) or isinstance(v, T.Var):
        return T.vsum(L.cross3(r, vs) * m, axis=0)
    return np.sum(np.cross(r, vs) * m, axis=0)


def g_angular(x_next, x_t, v_t, ids, masses, target, dt):
    v_next = (x_next - x_t) / dt
    l_next = _angular_momentum(x_next, v_next, ids, masses)
    l_prev = _angular_momentum(x_t, v_t, ids, masses)
    ldot = (l_next - l_prev) / dt
    return L.sqnorm(ldot - np.asarray(target, dtype=float))


def _moment_of_inertia(x, ids, masses, axis):
    """I = sum m |r_perp|^2 about the axis through the selection COM."""
    axis = np.asarray(axis, dtype=float)
    axis = axis / np.linalg.norm(axis)
    m = masses[ids]
    c = com(x, ids, masses)
    xs = x[ids] if isinstance(x, T.Var) else np.asarray(x)[ids]
    r = xs - c
    along = T.vsum(r * axis, axis=-1) if isinstance(x, T.Var) \
        else np.sum(r * axis, axis=-1)
    r2 = (T.vsum(r * r, axis=-1) if isinstance(x, T.Var)
          else np.sum(r * r, axis=-1)) - along * along
    return T.vsum(r2 * m) if isinstance(x, T.Var) else np.sum(r2 * m)


def g_moi(x_next, x_t, ids, masses, axis, target, dt):
    idot = (_moment_of_inertia(x_next, ids, masses, axis)
            - _moment_of_inertia(x_t, ids, masses, axis)) / dt
    d = idot - float(target)
    return d * d


def g_elastic(x_next, x_t, elems, mesh, material, target, dt):
    e_next = E.total_energy(x_next, mesh, material, elems=elems)
    tp = T.Tape(recording=False)
    e_prev = T.value_of(E.total_energy(T.Var(tp, -1, x_t), mesh, material,
                                       elems=elems))
    d = (e_next - float(e_prev)) / dt - float(target)
    return d * d


def _plane_basis(normal):
    n = np.asarray(normal, dtype=float)
    n = n / np.linalg.norm(n)
    pick = np.argmin(np.abs(n))
    e = np.zeros(3)
    e[pick] = 1.0
    t1 = np.cross(n, e)
    t1 /= np.linalg.norm(t1)
    t2 = np.cross(n, t1)
    return t1, t2


def projected_area(x, ids, plane):
    """Convex-hull area of selected vertices projected on the plane.

    Monotone-chain hull with all decisions on real coordinates; the area
    itself (shoelace) stays on the tape so it is differentiable on the
    hull's smooth branch.  Fewer than three distinct points give zero.
    """
    point = np.asarray(plane.get("point", (0.0, 0.0, 0.0)), dtype=float)
    t1, t2 = _plane_basis(plane["normal"])
    sel = x[ids]
    rel = sel - point
    u = T.vsum(rel * t1, axis=-1)
    v = T.vsum(rel * t2, axis=-1)
    ur, vr = T.real_of(u), T.real_of(v)
    pts = np.column_stack([ur, vr])
    order = np.lexsort((pts[:, 1], pts[:, 0]))
    uniq = [order[0]]
    for i in order[1:]:
        if not np.array_equal(pts[i], pts[uniq[-1]]):
            uniq.append(i)
    if len(uniq) < 3:
        return x.tape.constant(0.0)

    def cross_r(o, a, b):
        return ((pts[a, 0] - pts[o, 0]) * (pts[b, 1] - pts[o, 1])
                - (pts[a, 1] - pts[o, 1]) * (pts[b, 0] - pts[o, 0]))

    lower = []
    for i in uniq:
        while len(lower) >= 2 and cross_r(lower[-2], lower[-1], i) <= 0:
            lower.pop()
        lower.append(i)
    upper = []
    for i in reversed(uniq):
        while len(upper) >= 2 and cross_r(upper[-2], upper[-1], i) <= 0:
            upper.pop()
        upper.append(i)
    hull = lower[:-1] + upper[:-1]
    if len(hull) < 3:
        return x.tape.constant(0.0)
    hull = np.asarray(hull)
    hx, hy = u[hull], v[hull]
    nxt = np.roll(np.arange(len(hull)), -1)
    return 0.5 * T.vsum(hx * hy[nxt] - hx[nxt] * hy)


def g_projection(x_next, x_t, ids, plane, target, dt):
    a_next = projected_area(x_next, ids, plane)
    tp = T.Tape(recording=False)
    a_prev = T.value_of(projected_area(T.Var(tp, -1, np.asarray(x_t)), ids, plane))
    d = (a_next - float(a_prev)) / dt - float(target)
    return d * d


def r_energy(a, k):
    return 0.5 * k * L.sqnorm(a)


def r_change(a, a_prev, adot_max, dt):
    """Hinge-squared penalty on activation rates beyond the band."""
    adot = (a - np.asarray(a_prev, dtype=float)) / dt
    mag = T.abs_analytic(adot)
    excess = mag - adot_max
    over = T.real_of(excess) > 0.0
    pen = T.where(over, excess, np.zeros(T.real_of(excess).shape))
    return T.vsum(pen * pen)


def evaluate_targets(x_next, state, spec, scene, dt):
    """Sum of weighted targets on an already-computed next state."""
    masses = scene.masses
    x_t, v_t = state.x, state.v
    x_prev = x_t - dt * v_t  # consistent with the velocity update rule
    total = None
    for tg in spec.targets:
        if tg.weight == 0.0:
            continue
        if tg.kind == "position":
            g = g_position(x_next, tg.ids, masses, tg.value)
        elif tg.kind == "velocity":
            g = g_velocity(x_next, x_t, tg.ids, masses, tg.value, dt)
        elif tg.kind == "acceleration":
            g = g_acceleration(x_next, x_t, x_prev, tg.ids, masses, tg.value, dt)
        elif tg.kind == "angular":
            g = g_angular(x_next, x_t, v_t, tg.ids, masses, tg.value, dt)
        elif tg.kind == "moi":
            g = g_moi(x_next, x_t, tg.ids, masses, tg.axis, tg.value, dt)
        elif tg.kind == "elastic":
            g = g_elastic(x_next, x_t, tg.ids, scene.mesh, scene.material,
                          tg.value, dt)
        elif tg.kind == "projection":
            g = g_projection(x_next, x_t, tg.ids, tg.plane, tg.value, dt)
        term = tg.weight * g
        total = term if total is None else total + term
    return total


def total_loss(tape, scene, state, a_var, spec, step_cfg, a_prev=None,
               cache=None):
    """Forward step plus loss terms, all on one tape.

    Returns (loss Var, ForwardResult).  Non-convergence of the forward
    solve propagates to the caller.
    """
    result = S.step(scene, state, a_var, step_cfg, tape=tape, cache=cache)
    loss = evaluate_targets(result.x_next, state, spec, scene, step_cfg.dt)
    if spec.energy_weight > 0.0 and spec.energy_k > 0.0 and a_var is not None:
        term = spec.energy_weight * r_energy(a_var, spec.energy_k)
        loss = term if loss is None else loss + term
    if spec.change_weight > 0.0 and a_var is not None and a_prev is not None \
            and np.isfinite(spec.adot_max):
        term = spec.change_weight * r_change(a_var, a_prev, spec.adot_max,
                                             step_cfg.dt)
        loss = term if loss is None else loss + term
    if loss is None:
        loss = tape.constant(0.0)
    return loss, result
