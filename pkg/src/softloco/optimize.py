"""Per-frame activation solve: gradient-descent warm start, then Newton.

The Hessian of the frame loss comes from M independent imaginary-perturbed
reverse passes (one tape per column, dispatched to a worker pool and
reduced in column order).  Newton directions solve (H + tau I) da = -g
with tau escalating by tens from a trace-scaled floor until the Cholesky
factorization certifies positive definiteness and the direction points
downhill; steps are accepted under a backtracking Armijo test on the loss
itself.  A forward solve that fails at a trial point just rejects that
trial.

Frames are solved sequentially; each frame's solution seeds the next (the
warm start the method depends on).
"""

import time
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from . import objectives as OBJ
from . import sim as S
from . import tape as T
from .csfd import DEFAULT_H
from .errors import ConvergenceError, FeasibilityError, SingularSystemError
from .tape import Tape, Var


@dataclass
class OptimizerConfig:
    gd_iters: int = 10
    newton_max: int = 20
    gtol: float = 1e-12
    ls_factor: float = 0.5
    armijo: float = 1e-4
    tau0_scale: float = 1e-8   # times mean |diag H|
    h: float = DEFAULT_H
    workers: int = 1
    max_ls: int = 40
    bounds: tuple = None       # (a_min, a_max), projected after accepted steps

    def __post_init__(self):
        if self.gd_iters < 0 or self.newton_max < 0:
            raise ValueError("iteration counts must be non-negative")
        if not (0 < self.ls_factor < 1) or self.armijo <= 0 or self.gtol <= 0:
            raise ValueError("bad line-search parameters")


class _BoundedCache(dict):
    """dict with FIFO eviction once it outgrows its capacity."""

    def __init__(self, capacity):
        super().__init__()
        self.capacity = capacity

    def __setitem__(self, key, value):
        if len(self) >= self.capacity and key not in self:
            del self[next(iter(self))]
        super().__setitem__(key, value)


@dataclass
class SolveReport:
    history: list = field(default_factory=list)  # (phase, iter, loss, step, gnorm)
    newton_iterations: int = 0
    hessian_seconds: float = 0.0
    step_sizes: list = field(default_factory=list)
    final_grad_norm: float = np.nan
    gradient_evals: dict = field(default_factory=dict)
    hessian_defects: list = field(default_factory=list)
    min_distance: float = np.inf
    forward_nodes: int = 0

    def log(self, phase, it, loss, step=np.nan, gnorm=np.nan):
        self.history.append((phase, it, float(loss), float(step), float(gnorm)))


class FrameLoss:
    """Closures over one frame's loss with a shared factorization cache.

    The cache lets the M+1 differentiation passes (whose real iterates are
    bit-identical) reuse each Newton factorization; it is bounded because
    entries from previous activation points are dead weight.
    """

    def __init__(self, scene, state, spec, step_cfg, a_prev=None):
        self.scene = scene
        self.state = state
        self.spec = spec
        self.step_cfg = step_cfg
        self.a_prev = a_prev
        self.cache = _BoundedCache(128)
        self.value_evals = 0
        self.grad_evals = 0
        self.min_distance = np.inf

    def _run(self, tape, a_var):
        loss, result = OBJ.total_loss(tape, self.scene, self.state, a_var,
                                      self.spec, self.step_cfg,
                                      a_prev=self.a_prev, cache=self.cache)
        self.min_distance = min(self.min_distance, result.min_distance)
        return loss

    def tape_fn(self, tape, a_var):
        return self._run(tape, a_var)

    def value(self, a):
        self.value_evals += 1
        tape = Tape(recording=False)
        a_var = Var(tape, -1, np.asarray(a, dtype=float))
        return float(T.real_of(self._run(tape, a_var)))

    def gradient(self, a):
        self.grad_evals += 1
        return T.gradient(self.tape_fn, a)

    def hessian(self, a, h, workers, return_stats=False):
        return T.hessian(self.tape_fn, a, h=h, workers=workers,
                         return_stats=return_stats)


def loss_gradient(scene, state, a, spec, step_cfg, a_prev=None):
    """Activation gradient of the frame loss (one recorded pass + sweep)."""
    return FrameLoss(scene, state, spec, step_cfg, a_prev).gradient(a)


def loss_hessian(scene, state, a, spec, step_cfg, a_prev=None, h=DEFAULT_H,
                 workers=1, return_defect=False):
    """Frame-loss Hessian from M perturbed passes, symmetrized.

    The symmetry defect ||H - H^T||_F / ||H||_F is measured before
    symmetrization and optionally returned.
    """
    fl = FrameLoss(scene, state, spec, step_cfg, a_prev)
    raw = fl.hessian(a, h, workers)
    denom = max(np.linalg.norm(raw), 1e-300)
    defect = float(np.linalg.norm(raw - raw.T) / denom)
    sym = 0.5 * (raw + raw.T)
    if return_defect:
        return sym, defect
    return sym


def _shifted_newton_direction(h_mat, g, tau0_scale):
    """Descent direction from (H + tau I), escalating tau until PD."""
    m = h_mat.shape[0]
    trace_mean = float(np.mean(np.abs(np.diag(h_mat)))) or 1.0
    tau = 0.0
    while True:
        try:
            c = scipy.linalg.cho_factor(h_mat + tau * np.eye(m), lower=True)
            da = scipy.linalg.cho_solve(c, -g)
            if np.dot(g, da) < 0.0:
                return da, tau
        except scipy.linalg.LinAlgError:
            pass
        tau = tau0_scale * trace_mean if tau == 0.0 else 10.0 * tau
        if tau > 1e12 * trace_mean:
            raise SingularSystemError("Newton shift escalation failed")


def _backtrack(value_fn, a, direction, base, slope, armijo, factor, max_ls):
    """Largest tested step satisfying Armijo; None if everything failed.

    A trial whose forward solve fails retreats fast (fourth power of the
    backtracking factor): such points are far outside the solvable region
    and every probe there costs a full diverging solve.
    """
    alpha = 1.0
    for _ in range(max_ls):
        try:
            trial = value_fn(a + alpha * direction)
        except (ConvergenceError, FeasibilityError, SingularSystemError):
            alpha *= factor ** 4
            continue
        if trial <= base + armijo * alpha * slope:
            return alpha, trial
        alpha *= factor
    return None, None


def gradient_descent(value_fn, grad_fn, a0, iters, cfg, report=None,
                     phase="gd", gtol=0.0):
    """Plain backtracking gradient descent (also the warm-start routine)."""
    a = np.asarray(a0, dtype=float).copy()
    base = value_fn(a)
    if report is not None:
        report.log(phase, 0, base)
    for it in range(iters):
        g = grad_fn(a)
        gn = float(np.linalg.norm(g))
        if gn <= gtol:
            break
        alpha, trial = _backtrack(value_fn, a, -g, base, -gn * gn,
                                  cfg.armijo, cfg.ls_factor, cfg.max_ls)
        if alpha is None:
            if report is not None:
                report.log(phase, it + 1, base, 0.0, gn)
            continue
        a = a + alpha * (-g)
        base = trial
        if report is not None:
            report.log(phase, it + 1, base, alpha, gn)
    return a, base


def lbfgs(value_fn, grad_fn, a0, grad_budget, cfg, memory=8, report=None,
          phase="lbfgs"):
    """Two-loop-recursion L-BFGS baseline with a hard gradient budget."""
    a = np.asarray(a0, dtype=float).copy()
    base = value_fn(a)
    if report is not None:
        report.log(phase, 0, base)
    s_hist, y_hist = [], []
    g = grad_fn(a)
    used = 1
    it = 0
    while used < grad_budget:
        q = g.copy()
        alphas = []
        for s, y in reversed(list(zip(s_hist, y_hist))):
            rho = 1.0 / np.dot(y, s)
            al = rho * np.dot(s, q)
            q -= al * y
            alphas.append((al, rho))
        if y_hist:
            gamma = np.dot(s_hist[-1], y_hist[-1]) / np.dot(y_hist[-1], y_hist[-1])
            q *= gamma
        for (al, rho), s, y in zip(reversed(alphas), s_hist, y_hist):
            beta = rho * np.dot(y, q)
            q += (al - beta) * s
        direction = -q
        slope = float(np.dot(g, direction))
        if slope >= 0.0:
            direction, slope = -g, -float(np.dot(g, g))
        # safeguard against the huge first trials the scaled two-loop
        # direction can produce on badly scaled problems
        dmax = 100.0 * (1.0 + float(np.linalg.norm(a)))
        dnorm = float(np.linalg.norm(direction))
        if dnorm > dmax:
            direction = direction * (dmax / dnorm)
            slope *= dmax / dnorm
        alpha, trial = _backtrack(value_fn, a, direction, base, slope,
                                  cfg.armijo, cfg.ls_factor, cfg.max_ls)
        it += 1
        if alpha is None:
            if report is not None:
                report.log(phase, it, base, 0.0, np.linalg.norm(g))
            break
        a_new = a + alpha * direction
        g_new = grad_fn(a_new)
        used += 1
        s_hist.append(a_new - a)
        y_hist.append(g_new - g)
        if np.dot(s_hist[-1], y_hist[-1]) <= 1e-300:
            s_hist.pop()
            y_hist.pop()
        if len(s_hist) > memory:
            s_hist.pop(0)
            y_hist.pop(0)
        a, g, base = a_new, g_new, trial
        if report is not None:
            report.log(phase, it, base, alpha, np.linalg.norm(g))
    return a, base


def newton_minimize(value_fn, grad_fn, hess_fn, a0, cfg, report=None,
                    phase="newton"):
    """Line-search Newton on a generic smooth objective."""
    a = np.asarray(a0, dtype=float).copy()
    base = value_fn(a)
    if report is not None and not report.history:
        report.log(phase, 0, base)
    for it in range(cfg.newton_max):
        g = grad_fn(a)
        gn = float(np.linalg.norm(g))
        if gn <= cfg.gtol:
            if report is not None:
                report.final_grad_norm = gn
            break
        t0 = time.perf_counter()
        h_mat = hess_fn(a)
        if report is not None:
            report.hessian_seconds += time.perf_counter() - t0
        da, tau = _shifted_newton_direction(h_mat, g, cfg.tau0_scale)
        slope = float(np.dot(g, da))
        alpha, trial = _backtrack(value_fn, a, da, base, slope,
                                  cfg.armijo, cfg.ls_factor, cfg.max_ls)
        if alpha is None:
            raise ConvergenceError(
                f"newton: every line-search trial failed at iteration {it}")
        a = a + alpha * da
        if cfg.bounds is not None:
            a = np.clip(a, cfg.bounds[0], cfg.bounds[1])
            trial = value_fn(a)
        base = trial
        if report is not None:
            report.newton_iterations = it + 1
            report.step_sizes.append(alpha)
            report.log(phase, it + 1, base, alpha, gn)
            report.final_grad_norm = gn
    return a, base


def solve_frame(scene, state, a_prev, spec, step_cfg, opt_cfg):
    """Optimal activations for one frame (warm start + Newton)."""
    fl = FrameLoss(scene, state, spec, step_cfg, a_prev=a_prev)
    report = SolveReport()
    a0 = np.asarray(a_prev, dtype=float).copy()

    g0 = fl.gradient(a0)
    if float(np.linalg.norm(g0)) <= opt_cfg.gtol:
        report.final_grad_norm = float(np.linalg.norm(g0))
        report.log("newton", 0, fl.value(a0), 0.0, report.final_grad_norm)
        report.gradient_evals = {"warm_start": 0, "newton": 1, "hessian_columns": 0}
        report.min_distance = fl.min_distance
        return a0, report

    warm_grads_before = fl.grad_evals
    a_w, _ = gradient_descent(fl.value, fl.gradient, a0, opt_cfg.gd_iters,
                              opt_cfg, report=report, phase="gd",
                              gtol=opt_cfg.gtol)
    warm_grads = fl.grad_evals - warm_grads_before

    m = a0.size
    hess_calls = [0]

    def hess_fn(a):
        hess_calls[0] += 1
        h_mat = fl.hessian(a, opt_cfg.h, opt_cfg.workers)
        denom = max(np.linalg.norm(h_mat), 1e-300)
        report.hessian_defects.append(
            float(np.linalg.norm(h_mat - h_mat.T) / denom))
        return 0.5 * (h_mat + h_mat.T)

    newton_grads_before = fl.grad_evals
    a_star, _ = newton_minimize(fl.value, fl.gradient, hess_fn, a_w, opt_cfg,
                                report=report, phase="newton")
    report.gradient_evals = {
        "warm_start": warm_grads + 1,  # includes the initial gradient probe
        "newton": fl.grad_evals - newton_grads_before,
        "hessian_columns": hess_calls[0] * m,
    }
    report.min_distance = fl.min_distance
    return a_star, report


@dataclass
class Trajectory:
    positions: list = field(default_factory=list)    # x after each frame
    velocities: list = field(default_factory=list)
    activations: list = field(default_factory=list)
    reports: list = field(default_factory=list)
    min_distance: float = np.inf
    completed: bool = True
    error: str = ""


def rollout(scene, state0, frame_specs, step_cfg, opt_cfg, a0=None,
            on_frame=None):
    """Sequential frame-by-frame solve; each solution seeds the next frame.

    ``frame_specs`` is a list of LossSpec (one per frame).  On a frame
    failure the partial trajectory is returned with ``completed=False``.
    """
    m = scene.num_activations
    state = state0.copy()
    a_prev = np.zeros(m) if a0 is None else np.asarray(a0, dtype=float).copy()
    traj = Trajectory()
    for fi, spec in enumerate(frame_specs):
        try:
            a_star, report = solve_frame(scene, state, a_prev, spec, step_cfg,
                                         opt_cfg)
            result = S.step(scene, state, a_star, step_cfg)
        except (ConvergenceError, FeasibilityError, SingularSystemError) as err:
            traj.completed = False
            traj.error = f"frame {fi}: {err}"
            break
        traj.min_distance = min(traj.min_distance, report.min_distance,
                                result.min_distance)
        state = type(state)(result.x, result.v, state.t + 1)
        traj.positions.append(state.x.copy())
        traj.velocities.append(state.v.copy())
        traj.activations.append(a_star.copy())
        traj.reports.append(report)
        a_prev = a_star
        if on_frame is not None:
            on_frame(fi, state, a_star, report)
    return traj


def simulate(scene, state0, activations, step_cfg, on_frame=None):
    """Forward-only rollout with a prescribed activation schedule."""
    state = state0.copy()
    traj = Trajectory()
    for fi, a in enumerate(activations):
        try:
            result = S.step(scene, state, a, step_cfg)
        except (ConvergenceError, FeasibilityError, SingularSystemError) as err:
            traj.completed = False
            traj.error = f"frame {fi}: {err}"
            break
        traj.min_distance = min(traj.min_distance, result.min_distance)
        state = type(state)(result.x, result.v, state.t + 1)
        traj.positions.append(state.x.copy())
        traj.velocities.append(state.v.copy())
        traj.activations.append(None if a is None else np.asarray(a, float).copy())
        if on_frame is not None:
            on_frame(fi, state, a)
    return traj
