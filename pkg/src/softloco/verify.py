"""Derivative verification harness: tape vs finite differences vs bicomplex.

Runs on any loaded scenario: advances to a chosen frame under zero
activation, picks a deterministic activation point scaled to the scene,
and compares the reverse-tape gradient against a central-difference sweep
and the perturbed-tape Hessian against both differentiated gradients and
the independent bicomplex oracle.
"""

import numpy as np

from . import bicomplex as B
from . import objectives as OBJ
from . import optimize as OPT
from . import sim as S
from . import tape as T
from .csfd import DEFAULT_H
from .tape import Tape

GRAD_FD_THRESHOLD = 1e-4
HESS_FD_THRESHOLD = 1e-3
HESS_BICOMPLEX_THRESHOLD = 1e-8


def _rel_err(a, b):
    scale = max(float(np.max(np.abs(b))), 1e-300)
    return np.abs(a - b) / scale


def advance_state(scenario, frames):
    state = scenario.initial_state.copy()
    zero = np.zeros(scenario.scene.num_activations)
    for _ in range(frames):
        result = S.step(scenario.scene, state, zero, scenario.step_cfg)
        state = type(state)(result.x, result.v, state.t + 1)
    return state


def evaluation_point(scenario):
    rng = np.random.default_rng(scenario.seed + 7)
    m = scenario.scene.num_activations
    return scenario.activation_scale * rng.uniform(-1.0, 1.0, m)


def check_derivatives(scenario, at_frame=0, mode="both", h=DEFAULT_H):
    """Compare gradient and Hessian against the independent oracles.

    Returns a report dict with per-check max relative errors, the
    offending indices of any threshold breach, and an overall flag.
    """
    scene = scenario.scene
    state = advance_state(scenario, at_frame)
    spec = scenario.loss_spec(at_frame)
    a0 = evaluation_point(scenario)
    a_prev = np.zeros_like(a0)
    scale = scenario.activation_scale
    fl = OPT.FrameLoss(scene, state, spec, scenario.step_cfg, a_prev=a_prev)
    m = a0.size

    report = {"frame": at_frame, "mode": mode, "activation": a0.tolist(),
              "checks": {}, "ok": True}

    grad = fl.gradient(a0)

    if mode in ("fd", "both"):
        best = None
        for step in (1e-4, 1e-5, 1e-6, 1e-7, 1e-8):
            delta = step * scale
            gfd = np.zeros(m)
            for k in range(m):
                e = np.zeros(m)
                e[k] = delta
                gfd[k] = (fl.value(a0 + e) - fl.value(a0 - e)) / (2.0 * delta)
            err = _rel_err(grad, gfd)
            if best is None or err.max() < best[0].max():
                best = (err, step)
        err, step = best
        report["checks"]["gradient_fd"] = {
            "max_rel_err": float(err.max()),
            "fd_step_scale": step,
            "threshold": GRAD_FD_THRESHOLD,
            "worst_index": int(err.argmax()),
            "ok": bool(err.max() <= GRAD_FD_THRESHOLD),
        }

    hess, defect = OPT.loss_hessian(scene, state, a0, spec, scenario.step_cfg,
                                    a_prev=a_prev, h=h, return_defect=True)
    report["hessian_symmetry_defect"] = defect

    if mode in ("fd", "both"):
        best = None
        for step in (1e-2, 1e-3, 1e-4):
            delta = step * scale
            hfd = np.zeros((m, m))
            for k in range(m):
                e = np.zeros(m)
                e[k] = delta
                hfd[:, k] = (fl.gradient(a0 + e) - fl.gradient(a0 - e)) / (2.0 * delta)
            hfd = 0.5 * (hfd + hfd.T)
            err = _rel_err(hess, hfd)
            if best is None or err.max() < best[0].max():
                best = (err, step)
        err, step = best
        worst = np.unravel_index(err.argmax(), err.shape)
        report["checks"]["hessian_fd"] = {
            "max_rel_err": float(err.max()),
            "fd_step_scale": step,
            "threshold": HESS_FD_THRESHOLD,
            "worst_index": [int(worst[0]), int(worst[1])],
            "ok": bool(err.max() <= HESS_FD_THRESHOLD),
        }

    if mode in ("bicomplex", "both"):
        def f_bc(a_bc):
            tp = Tape(recording=False)
            av = tp.input_bicomplex(a_bc)
            loss, _ = OBJ.total_loss(tp, scene, state, av, spec,
                                     scenario.step_cfg, a_prev=a_prev,
                                     cache=fl.cache)
            return loss.value

        hbc = B.hessian(f_bc, a0, h=h)
        err = _rel_err(hess, hbc)
        worst = np.unravel_index(err.argmax(), err.shape)
        report["checks"]["hessian_bicomplex"] = {
            "max_rel_err": float(err.max()),
            "threshold": HESS_BICOMPLEX_THRESHOLD,
            "worst_index": [int(worst[0]), int(worst[1])],
            "ok": bool(err.max() <= HESS_BICOMPLEX_THRESHOLD),
        }

    report["ok"] = all(c["ok"] for c in report["checks"].values())
    return report


def format_report(report):
    lines = [f"derivative check at frame {report['frame']} "
             f"(mode {report['mode']}, M={len(report['activation'])})"]
    for name, chk in report["checks"].items():
        status = "pass" if chk["ok"] else "FAIL"
        extra = f", worst at {chk['worst_index']}" if not chk["ok"] else ""
        lines.append(f"  {name:18s} max rel err {chk['max_rel_err']:.3e} "
                     f"(threshold {chk['threshold']:.0e}) {status}{extra}")
    lines.append(f"  symmetry defect    {report['hessian_symmetry_defect']:.3e}")
    lines.append("result: " + ("PASS" if report["ok"] else "FAIL"))
    return "\n".join(lines)
