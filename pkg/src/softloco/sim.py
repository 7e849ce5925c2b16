"""Implicit-Euler forward step solved by line-search Newton.

One step finds x_{t+1} with

    M (x - x_t - dt v_t) = dt^2 (f_int + f_ext + f_d + f_c + f_m),

all forces evaluated at the candidate x with v_{t+1} = (x - x_t) / dt.
This is treated as root finding on the residual (the damping and lagged
friction terms are non-conservative, so there is no single incremental
potential to minimize); the merit function is the mass-weighted squared
residual and every trial step is first capped by the barrier-feasible
step length, so iterates can never leave the feasible region.

The loop can run on a recording tape, in which case every accepted
operation lands on the tape with the activations as inputs; line-search
probes and convergence checks only read real parts, so a perturbed pass
replays the identical iteration sequence.  The Newton matrix itself is a
constant real factorization per iteration (implicit differentiation of
the solve step): its entries never form tape nodes, while the residual
assembly does, which is exactly what the solve-adjoint rule needs.

Newton matrix blocks are not hand-derived: elastic, muscle and contact
force Jacobians come from imaginary-perturbing the same force kernels the
residual uses.
"""

import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sparse

from . import clinalg as L
from . import contact as C
from . import elastic as E
from . import muscle as MU
from . import tape as T
from .errors import ConvergenceError, FeasibilityError, SingularSystemError
from .tape import Tape, Var


@dataclass
class StepConfig:
    dt: float = 1.0 / 40.0
    newton_tol: float = 1e-8
    max_newton: int = 60
    record: bool = False

    def __post_init__(self):
        if self.dt <= 0 or self.newton_tol <= 0:
            raise ValueError("dt and newton_tol must be positive")


@dataclass
class ForwardResult:
    x_next: object
    v_next: object
    iterations: int
    residual: float
    tape: object = None
    min_distance: float = np.inf

    @property
    def x(self):
        return T.real_of(self.x_next)

    @property
    def v(self):
        return T.real_of(self.v_next)


@dataclass
class SceneModel:
    """Everything a step needs besides the dynamic state."""

    mesh: object
    material: E.MaterialParams
    barrier: C.BarrierParams
    colliders: list = field(default_factory=list)
    gravity: np.ndarray = None
    muscles: object = None  # WeightTable or None

    def __post_init__(self):
        if self.gravity is None:
            self.gravity = np.zeros(3)
        self.gravity = np.asarray(self.gravity, dtype=float)
        self.masses = E.lumped_masses(self.mesh, self.material.rho)
        self.k0 = E.rest_stiffness(self.mesh, self.material) \
            if self.material.beta != 0.0 else None
        self.external_forces = self.masses[:, None] * self.gravity

    @property
    def num_activations(self):
        return self.muscles.num_segments if self.muscles is not None else 0


def _surface(x, mesh):
    return x[mesh.surface_vertices]


def residual(x, state, a, scene, friction_lams, dt):
    """Force-balance residual (N, 3) and the real norms of its pieces."""
    mesh = scene.mesh
    x_t, v_t = state.x, state.v
    v_next = (x - x_t) / dt
    inertial = scene.masses[:, None] * (x - (x_t + dt * v_t))
    f = E.elastic_forces(x, mesh, scene.material)
    parts = {"elastic": _norm(f), "external": float(np.linalg.norm(scene.external_forces))}
    f = f + scene.external_forces
    if scene.material.alpha != 0.0 or scene.material.beta != 0.0:
        fd = E.damping_forces(v_next, scene.masses, scene.k0,
                              scene.material.alpha, scene.material.beta)
        parts["damping"] = _norm(fd)
        f = f + fd
    if scene.colliders:
        surf = _surface(x, mesh)
        prev = state.x[mesh.surface_vertices]
        fc_norm = 0.0
        for ci, collider in enumerate(scene.colliders):
            fb = C.barrier_force(surf, collider, scene.barrier)
            fc_norm += _norm(fb)
            fsum = fb
            lam = friction_lams[ci] if friction_lams is not None else None
            if lam is not None and collider.friction != 0.0:
                ff = C.friction_force(surf, prev, collider, lam, scene.barrier, dt)
                if ff is not None:
                    fc_norm += _norm(ff)
                    fsum = fsum + ff
            f = f + T.scatter_add((mesh.num_vertices, 3),
                                  mesh.surface_vertices, fsum)
        parts["contact"] = fc_norm
    if scene.muscles is not None and a is not None:
        fm = MU.muscle_forces(x, a, mesh, scene.muscles)
        parts["muscle"] = _norm(fm)
        f = f + fm
    parts["inertial"] = _norm(inertial)
    return inertial - (dt * dt) * f, parts


def _norm(v):
    return float(np.linalg.norm(T.real_of(v)))


def _merit(r_real, masses):
    w = np.repeat(masses, 3)
    return 0.5 * float(np.sum(r_real.ravel() ** 2 / w))


def _real_residual_norm(scene, state, x_real, a_real, lams_real, dt):
    tp = Tape(recording=False)
    xv = Var(tp, -1, x_real)
    av = Var(tp, -1, a_real) if a_real is not None else None
    lam_vars = None
    if lams_real is not None:
        lam_vars = [Var(tp, -1, l) if l is not None else None for l in lams_real]
    r, _ = residual(xv, state, av, scene, lam_vars, dt)
    return T.real_of(r)


def lagged_normal_forces(x_surf, scene):
    """Per-collider lagged normal force magnitudes at the given positions."""
    lams = []
    for collider in scene.colliders:
        lams.append(C.normal_force_magnitudes(x_surf, collider, scene.barrier))
    return lams


def newton_system(x_real, a_real, state, scene, lams_real, dt, cache=None):
    """Linearization dr/dx, symmetrized, with escalating diagonal shift.

    Returns the sparse matrix and a Cholesky handle (the positive
    definiteness certificate).  Cached by exact input bytes so repeated
    perturbed passes through identical real iterates refactorize nothing.
    """
    key = None
    if cache is not None:
        lam_bytes = b"".join(np.ascontiguousarray(l).tobytes()
                             for l in (lams_real or []) if l is not None)
        a_bytes = b"" if a_real is None else np.ascontiguousarray(a_real).tobytes()
        key = (np.ascontiguousarray(x_real).tobytes(), a_bytes, lam_bytes)
        hit = cache.get(key)
        if hit is not None:
            return hit
    mesh = scene.mesh
    n = mesh.num_vertices
    xe = x_real[mesh.tets]
    blocks = E.element_hessian_blocks(xe, mesh.dm_inv, mesh.rest_volumes,
                                      scene.material.mu, scene.material.lam)
    k_total = E.assemble_stiffness(blocks, mesh.tets, n)
    if scene.muscles is not None and a_real is not None \
            and len(scene.muscles.active_elements):
        elems = scene.muscles.active_elements
        tp = Tape(recording=False)
        stresses = T.value_of(MU.reference_stresses(
            scene.muscles, Var(tp, -1, a_real), elems=elems))
        mb = MU.muscle_hessian_blocks(x_real[mesh.tets[elems]],
                                      mesh.dm_inv[elems], stresses.real)
        k_total = k_total + E.assemble_stiffness(mb, mesh.tets[elems], n)
    if scene.colliders:
        k_total = k_total + _contact_stiffness(x_real, state, scene, lams_real, dt)
    mat = scene.material
    mass_diag = np.repeat(scene.masses, 3)
    h_mat = sparse.diags(mass_diag * (1.0 + dt * mat.alpha)) + (dt * dt) * k_total
    if mat.beta != 0.0:
        h_mat = h_mat + dt * mat.beta * scene.k0
    h_mat = (h_mat + h_mat.T) * 0.5
    dense = h_mat.toarray()
    trace_mean = float(np.mean(np.diag(dense)))
    shift = 0.0
    while True:
        try:
            handle = L.factorize_cholesky(
                dense if shift == 0.0 else dense + shift * np.eye(dense.shape[0]))
            break
        except SingularSystemError:
            shift = 1e-8 * trace_mean if shift == 0.0 else 10.0 * shift
            if shift > 1e2 * trace_mean:
                raise SingularSystemError(
                    "newton_system: shift escalation exceeded 1e2 * trace mean")
    out = (h_mat, handle)
    if cache is not None:
        cache[key] = out
    return out


def _contact_stiffness(x_real, state, scene, lams_real, dt, h=1e-20):
    """Per-vertex 3x3 contact blocks by imaginary perturbation."""
    mesh = scene.mesh
    sv = mesh.surface_vertices
    c = len(sv)
    base = np.broadcast_to(x_real[sv], (3, c, 3)).astype(np.complex128)
    for axis in range(3):
        base[axis, :, axis] += 1j * h
    prev = state.x[sv]
    tp = Tape(recording=False)
    pv = Var(tp, -1, base)
    f = None
    for ci, collider in enumerate(scene.colliders):
        fb = C.barrier_force(pv, collider, scene.barrier)
        f = fb if f is None else f + fb
        lam = lams_real[ci] if lams_real is not None else None
        if lam is not None and collider.friction != 0.0:
            ff = C.friction_force(pv, prev, collider, Var(tp, -1, lam),
                                  scene.barrier, dt)
            if ff is not None:
                f = f + ff
    blocks = -T.value_of(f).imag.transpose(1, 2, 0) / h
    rows = (3 * sv[:, None, None] + np.arange(3)[None, :, None])
    rows = np.broadcast_to(rows, (c, 3, 3)).ravel()
    cols = (3 * sv[:, None, None] + np.arange(3)[None, None, :])
    cols = np.broadcast_to(cols, (c, 3, 3)).ravel()
    n3 = 3 * mesh.num_vertices
    k = sparse.coo_matrix((blocks.ravel(), (rows, cols)), shape=(n3, n3)).tocsr()
    return (k + k.T) * 0.5


def step(scene, state, a, cfg, tape=None, cache=None):
    """Advance one frame; optionally record everything on ``tape``.

    ``a`` may be a plain activation vector or an existing tape variable
    (as when a loss evaluation owns the tape).  Raises ConvergenceError
    with the residual history if Newton stalls, FeasibilityError if the
    starting state already penetrates a collider.
    """
    mesh = scene.mesh
    dt = cfg.dt
    if tape is None:
        tape = Tape(recording=cfg.record)
    recording = tape.recording
    if isinstance(a, Var):
        a_var = a
    elif a is None:
        a_var = None
    else:
        a_var = tape.input_vector(np.asarray(a, dtype=float)) \
            if recording else Var(tape, -1, np.asarray(a, dtype=float))

    if scene.colliders:
        d0 = C.min_distance(state.x[mesh.surface_vertices], scene.colliders)
        if d0 <= 0.0:
            raise FeasibilityError(f"starting state penetrates (min distance {d0:.3e})")

    # inertial predictor, pulled back inside the feasible region
    x_pred = state.x + dt * state.v
    if scene.colliders:
        alpha0 = C.max_feasible_step(state.x[mesh.surface_vertices],
                                     (x_pred - state.x)[mesh.surface_vertices],
                                     scene.colliders)
        x0 = state.x + alpha0 * (x_pred - state.x)
    else:
        x0 = x_pred
    x = tape.constant(x0)

    lam_vars = None
    if scene.colliders:
        tp0 = Tape(recording=False)
        surf0 = Var(tp0, -1, state.x[mesh.surface_vertices])
        lam_vars = [tape.constant(T.real_of(l))
                    for l in lagged_normal_forces(surf0, scene)]

    history = []
    min_dist = np.inf
    threshold = None
    iterations = 0
    for it in range(cfg.max_newton):
        r, parts = residual(x, state, a_var, scene, lam_vars, dt)
        r_real = T.real_of(r)
        rn = float(np.linalg.norm(r_real))
        history.append(rn)
        if threshold is None:
            scale = parts["inertial"] + (dt * dt) * sum(
                v for k, v in parts.items() if k != "inertial")
            # the residual of M (x - x_t - dt v_t) cannot be resolved below
            # the rounding floor of those products
            floor = 1e-14 * float(np.linalg.norm(
                scene.masses[:, None] * (np.abs(state.x) + dt * np.abs(state.v))))
            threshold = cfg.newton_tol * (scale + 1e-300) + floor
        if scene.colliders:
            min_dist = min(min_dist, C.min_distance(
                T.real_of(x)[mesh.surface_vertices], scene.colliders))
        if rn <= threshold:
            break
        if not np.isfinite(rn) or rn * cfg.newton_tol > 1e8 * threshold:
            raise ConvergenceError(
                f"forward step: residual diverged ({rn:.3e})",
                residual_history=history)
        iterations = it + 1
        x_real = T.real_of(x)
        a_real = None if a_var is None else T.real_of(a_var)
        lams_real = None if lam_vars is None else [T.real_of(l) for l in lam_vars]
        _, handle = newton_system(x_real, a_real, state, scene, lams_real, dt,
                                  cache=cache)
        dx = T.reshape(L.solve_const_matrix(handle, T.reshape(r, (3 * mesh.num_vertices,))),
                       (mesh.num_vertices, 3)) * -1.0
        dx_real = T.real_of(dx)
        alpha = 1.0
        if scene.colliders:
            alpha = C.max_feasible_step(x_real[mesh.surface_vertices],
                                        dx_real[mesh.surface_vertices],
                                        scene.colliders)
        merit0 = _merit(r_real, scene.masses)
        accepted = False
        while alpha > 1e-12:
            trial = x_real + alpha * dx_real
            r_trial = _real_residual_norm(scene, state, trial, a_real,
                                          lams_real, dt)
            if _merit(r_trial, scene.masses) <= (1.0 - 2e-4 * alpha) * merit0:
                accepted = True
                break
            alpha *= 0.5
        if not accepted:
            raise ConvergenceError(
                f"forward step: line search stalled at iteration {it}",
                residual_history=history)
        x = x + alpha * dx
        if scene.colliders:
            lam_vars = lagged_normal_forces(_surface(x, mesh), scene)
    else:
        raise ConvergenceError(
            f"forward step: no convergence in {cfg.max_newton} iterations "
            f"(residual {history[-1]:.3e}, threshold {threshold:.3e})",
            residual_history=history)

    v_next = (x - state.x) / dt
    return ForwardResult(x_next=x, v_next=v_next, iterations=iterations,
                         residual=history[-1],
                         tape=tape if recording else None,
                         min_distance=min_dist)
