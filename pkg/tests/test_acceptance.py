"""Acceptance suite: one test per criterion, one printed verdict line each.

Run with `pytest tests/test_acceptance.py -v -s` to see the verdict lines.
"""

import dataclasses
import json
import time

import mpmath
import numpy as np
import pytest

from softloco import bicomplex as B
from softloco import cli
from softloco import clinalg as L
from softloco import contact as C
from softloco import csfd
from softloco import elastic as E
from softloco import mesh as M
from softloco import muscle as MU
from softloco import objectives as OBJ
from softloco import optimize as OPT
from softloco import scenario as SC
from softloco import sim as S
from softloco import tape as T

import oracles as OR


def _verdict(num, ok, text):
    print(f"\n[{'PASS' if ok else 'FAIL'}] criterion {num}: {text}")
    assert ok, f"criterion {num}: {text}"


# -- 1: CSFD error stays flat where real FD cancels ---------------------------

def _battery_fn_cs(x):
    s, c = csfd.sin(x), csfd.cos(x)
    return csfd.exp(x) / csfd.sqrt(s * s * s + c * c * c)


def _battery_fn_f(x):
    return float(np.exp(x) / np.sqrt(np.sin(x) ** 3 + np.cos(x) ** 3))


def test_criterion_1_csfd_flat_fd_cancels(single_tet_scenario):
    t_start = time.perf_counter()
    x0 = 1.5
    mpmath.mp.dps = 50
    ref = float(mpmath.diff(
        lambda x: mpmath.exp(x) / mpmath.sqrt(mpmath.sin(x) ** 3
                                              + mpmath.cos(x) ** 3), x0))
    hs = [10.0 ** (-k) for k in range(2, 41, 2)]
    fd_err, cs_err = [], []
    for h in hs:
        fd = (_battery_fn_f(x0 + h) - _battery_fn_f(x0 - h)) / (2 * h)
        fd_err.append(abs(fd - ref) / abs(ref))
        cs = csfd.csfd_derivative(_battery_fn_cs, x0, h=h)
        cs_err.append(abs(cs - ref) / abs(ref))
    fd_err, cs_err = np.array(fd_err), np.array(cs_err)
    fd_min = fd_err.min()
    v_curve = fd_min < 0.01 * fd_err[0] and fd_min < 0.01 * fd_err[-1]
    flat = all(e < 1e-13 for h, e in zip(hs, cs_err) if h <= 1e-8)

    # same experiment on the frame loss of the contact-in-the-loop sim
    sn = single_tet_scenario
    spec = sn.loss_spec(0)
    a0 = np.array([40.0, -25.0])

    def loss_complex(signed_h):
        tp = T.Tape(recording=False)
        av = np.asarray(a0, dtype=np.complex128)
        av[0] += 1j * signed_h
        loss, _ = OBJ.total_loss(tp, sn.scene, sn.initial_state,
                                 T.Var(tp, -1, av), spec, sn.step_cfg,
                                 a_prev=np.zeros(2))
        return loss.value

    def loss_real(a):
        tp = T.Tape(recording=False)
        loss, _ = OBJ.total_loss(tp, sn.scene, sn.initial_state,
                                 T.Var(tp, -1, np.asarray(a, float)), spec,
                                 sn.step_cfg, a_prev=np.zeros(2))
        return float(T.real_of(loss))

    ref_cs = np.imag(loss_complex(1e-20)) / 1e-20  # converged CSFD reference
    loss_fd_err, loss_cs_err = [], []
    for h in hs:
        cs = np.imag(loss_complex(h)) / h
        loss_cs_err.append(abs(cs - ref_cs) / abs(ref_cs))
        e = np.zeros(2)
        e[0] = h
        fd = (loss_real(a0 + e) - loss_real(a0 - e)) / (2 * h)
        loss_fd_err.append(abs(fd - ref_cs) / abs(ref_cs))
    loss_fd_err = np.array(loss_fd_err)
    loss_flat = all(e < 1e-13 for h, e in zip(hs, loss_cs_err) if h <= 1e-8)
    loss_v = loss_fd_err.min() < 0.01 * loss_fd_err[-1]
    elapsed = time.perf_counter() - t_start
    ok = v_curve and flat and loss_flat and loss_v and elapsed < 10.0
    _verdict(1, ok,
             f"FD V-curve (min {fd_min:.1e}) vs CSFD flat <=1e-13 for h<=1e-8 "
             f"(battery max {max(e for h, e in zip(hs, cs_err) if h <= 1e-8):.1e}, "
             f"loss max {max(e for h, e in zip(hs, loss_cs_err) if h <= 1e-8):.1e}; "
             f"{elapsed:.1f}s < 10s)")


# -- 2: mixed differentiation against both oracles ----------------------------

@pytest.mark.parametrize("m", [2, 6])
def test_criterion_2_mixed_differentiation(m, single_tet_scenario,
                                            single_tet_m6_scenario):
    t_start = time.perf_counter()
    sn = single_tet_scenario if m == 2 else single_tet_m6_scenario
    assert sn.scene.num_activations == m
    spec = sn.loss_spec(0)
    rng = np.random.default_rng(3)
    a0 = sn.activation_scale * rng.uniform(-0.5, 0.5, m)
    a_prev = np.zeros(m)
    fl = OPT.FrameLoss(sn.scene, sn.initial_state, spec, sn.step_cfg,
                       a_prev=a_prev)
    hess, defect = OPT.loss_hessian(sn.scene, sn.initial_state, a0, spec,
                                    sn.step_cfg, a_prev=a_prev,
                                    return_defect=True)
    h_fd = OR.fd_of_gradient(fl.gradient, a0, step=1e-3 * sn.activation_scale)
    err_fd = np.abs(hess - h_fd).max() / np.abs(h_fd).max()

    def f_bc(a_bc):
        tp = T.Tape(recording=False)
        loss, _ = OBJ.total_loss(tp, sn.scene, sn.initial_state,
                                 tp.input_bicomplex(a_bc), spec, sn.step_cfg,
                                 a_prev=a_prev, cache=fl.cache)
        return loss.value

    h_bc = B.hessian(f_bc, a0)
    err_bc = np.abs(hess - h_bc).max() / np.abs(h_bc).max()
    elapsed = time.perf_counter() - t_start
    ok = err_fd <= 1e-3 and err_bc <= 1e-8 and defect <= 1e-6 and elapsed < 60.0
    _verdict(2, ok, f"M={m}: Hessian vs FD {err_fd:.2e}<=1e-3, "
                    f"vs bicomplex {err_bc:.2e}<=1e-8, defect {defect:.1e}<=1e-6 "
                    f"({elapsed:.1f}s < 60s)")


# -- 3: the worked self-inner-product example ---------------------------------

def test_criterion_3_worked_example():
    tape = T.Tape()
    x = tape.input_vector([1.0, 2.0, 3.0], perturb=0)
    y = L.sqnorm(x)
    adj = tape.input_adjoints(y)[0]
    ok = (y.value.real == 14.0 and y.value.imag == 2.0 * tape.h
          and np.array_equal(adj.real, [2.0, 4.0, 6.0])
          and np.array_equal(adj.imag / tape.h, [2.0, 0.0, 0.0]))
    _verdict(3, ok, "x.x at (1,2,3): forward 14+2hi, adjoints (2,4,6), "
                    "Hessian column (2,0,0) exact")


# -- 4: every specialized adjoint rule vs elementwise decomposition -----------

def _adjoint_pair(build, x, perturb):
    tp = T.Tape()
    xv = tp.input_vector(np.asarray(x, dtype=float).ravel(), perturb=perturb)
    adj = tp.input_adjoints(build(tp, xv))[0]
    return np.real(adj), np.imag(adj) / tp.h


def _rule_matches(fused, elementwise, x, rng, rel=1e-12):
    k = int(rng.integers(len(np.ravel(x))))
    for perturb in (None, k):
        re_f, im_f = _adjoint_pair(fused, x, perturb)
        re_e, im_e = _adjoint_pair(elementwise, x, perturb)
        if np.abs(re_f - re_e).max() > rel * max(np.abs(re_e).max(), 1e-300):
            return False
        if np.abs(im_f - im_e).max() > rel * max(np.abs(im_e).max(), 1e-30):
            return False
    return True


def test_criterion_4_table_rules():
    rng = np.random.default_rng(77)
    failures = []
    for trial in range(100):
        n = int(rng.integers(2, 9))
        x = rng.normal(size=n)
        if not _rule_matches(lambda tp, v: L.sqnorm(v),
                             lambda tp, v: OR.sqnorm_elementwise(v), x, rng):
            failures.append(("sqnorm", trial))
        xy = rng.normal(size=2 * n)
        if not _rule_matches(lambda tp, v: L.dot(v[:n], v[n:]),
                             lambda tp, v: OR.dot_elementwise(v[:n], v[n:]),
                             xy, rng):
            failures.append(("dot", trial))
        p, q, r = (int(rng.integers(2, 5)) for _ in range(3))
        ab = rng.normal(size=p * q + q * r)

        def fused_mm(tp, v):
            return L.sqnorm(L.matmul(T.reshape(v[:p * q], (p, q)),
                                     T.reshape(v[p * q:], (q, r))))

        def elem_mm(tp, v):
            z = OR.matmul_elementwise(T.reshape(v[:p * q], (p, q)),
                                      T.reshape(v[p * q:], (q, r)))
            return OR.sqnorm_elementwise(T.reshape(z, (p * r,)))

        if not _rule_matches(fused_mm, elem_mm, ab, rng):
            failures.append(("matmul", trial))
        g = rng.normal(size=int(rng.integers(2, 5)) ** 2)
        side = int(np.sqrt(g.size))
        if not _rule_matches(
                lambda tp, v: T.vsum(L.trace_gram(T.reshape(v, (side, side)))),
                lambda tp, v: OR.trace_gram_elementwise(T.reshape(v, (side, side))),
                g, rng):
            failures.append(("trace_gram", trial))
        d = rng.normal(size=9) + np.eye(3).ravel()
        if not _rule_matches(lambda tp, v: L.det3(T.reshape(v, (3, 3))),
                             lambda tp, v: OR.det3_elementwise(T.reshape(v, (3, 3))),
                             d, rng):
            failures.append(("det3", trial))
        a_mat = rng.normal(size=(n, n)) + n * np.eye(n)
        handle = L.factorize_lu(a_mat)
        a_inv = np.linalg.inv(a_mat)
        b = rng.normal(size=n)
        if not _rule_matches(
                lambda tp, v: L.sqnorm(L.solve_const_matrix(handle, v)),
                lambda tp, v: OR.sqnorm_elementwise(L.matvec(tp.constant(a_inv), v)),
                b, rng, rel=1e-9):
            failures.append(("solve_const", trial))
        xb = np.concatenate([(rng.normal(size=(3, 3)) + 3 * np.eye(3)).ravel(),
                             rng.normal(size=3)])
        if not _rule_matches(
                lambda tp, v: L.sqnorm(L.solve_var_matrix(
                    T.reshape(v[:9], (3, 3)), v[9:])),
                lambda tp, v: OR.sqnorm_elementwise(OR.solve3_cramer(
                    T.reshape(v[:9], (3, 3)), v[9:])),
                xb, rng, rel=1e-9):
            failures.append(("solve_var", trial))
    _verdict(4, not failures,
             f"7 adjoint rules x 100 instances vs elementwise decomposition "
             f"(failures: {failures[:5] if failures else 'none'})")


# -- 5: physics invariants -----------------------------------------------------

def test_criterion_5_physics_invariants():
    checks = {}
    mesh = M.single_tet(edge=0.2, base_height=0.5)
    mat = E.MaterialParams(mu=1e4, lam=2e4, rho=1000.0)
    tp = T.Tape(recording=False)
    f0 = T.real_of(E.elastic_forces(T.Var(tp, -1, mesh.ref_positions.copy()),
                                    mesh, mat))
    force_scale = mat.mu * mesh.rest_volumes.sum() ** (2.0 / 3.0)
    checks["rest_equilibrium"] = np.abs(f0).max() <= 1e-12 * force_scale

    rng = np.random.default_rng(9)
    cen = mesh.ref_positions.mean(axis=0)
    fiber = MU.MuscleFiber(points=np.array([cen - [0.04, 0, 0], cen,
                                            cen + [0.04, 0, 0]]))
    table = MU.precompute_weights(mesh, [fiber], width=0.1)
    ok_sum = True
    for _ in range(10):
        x = mesh.ref_positions + 0.05 * rng.normal(size=(4, 3))
        fi = T.real_of(E.elastic_forces(T.Var(tp, -1, x.copy()), mesh, mat))
        fm = T.real_of(MU.muscle_forces(T.Var(tp, -1, x.copy()),
                                        T.Var(tp, -1, 200 * rng.normal(size=2)),
                                        mesh, table))
        scale = max(np.abs(fi).max(), np.abs(fm).max(), 1e-300)
        ok_sum &= np.abs((fi + fm).sum(axis=0)).max() <= 1e-10 * scale
    checks["force_sums"] = ok_sum

    scene = S.SceneModel(mesh=mesh, material=mat, barrier=C.BarrierParams(),
                         colliders=[], gravity=np.array([0.0, 0.0, -9.8]))
    state = E.SimState(mesh.ref_positions.copy(), np.full((4, 3), 0.2), 0)
    cfg = S.StepConfig(dt=1.0 / 40.0, newton_tol=1e-10)
    result = S.step(scene, state, None, cfg)
    expect = state.v + cfg.dt * scene.gravity
    checks["free_fall_exact"] = np.abs(result.v - expect).max() <= 1e-12

    mesh_g = M.single_tet(edge=0.2, base_height=0.003)
    scene_g = S.SceneModel(
        mesh=mesh_g,
        material=E.MaterialParams(mu=1e4, lam=2e4, rho=1000.0, alpha=8.0,
                                  beta=1e-3),
        barrier=C.BarrierParams(kappa=1e4, dhat=1e-3),
        colliders=[C.HalfSpace(normal=(0.0, 0.0, 1.0), offset=0.0,
                               friction=0.3)],
        gravity=np.array([0.0, 0.0, -9.8]))
    state = E.SimState(mesh_g.ref_positions.copy(), np.zeros((4, 3)), 0)
    min_d = np.inf
    for _ in range(300):
        result = S.step(scene_g, state, None, cfg)
        state = E.SimState(result.x, result.v, state.t + 1)
        min_d = min(min_d, result.min_distance)
    surf = T.Var(tp, -1, state.x[mesh_g.surface_vertices])
    fc = T.real_of(C.barrier_force(surf, scene_g.colliders[0], scene_g.barrier))
    weight = scene_g.masses.sum() * 9.8
    checks["resting_normal_force"] = abs(fc.sum(axis=0)[2] - weight) / weight <= 1e-6
    checks["feasibility"] = min_d > 0.0

    ok = all(checks.values())
    _verdict(5, ok, "; ".join(f"{k}={'ok' if v else 'FAIL'}"
                              for k, v in checks.items()))


# -- 6: barrier smoothness and value -------------------------------------------

def test_criterion_6_barrier():
    params = C.BarrierParams(kappa=1.0, dhat=1e-3)
    tp = T.Tape(recording=False)

    def b_val(d):
        return float(T.real_of(C.barrier(
            T.Var(tp, -1, np.array([d])), params))[0])

    def b1_val(d):
        return float(T.real_of(C.barrier_gradient(
            T.Var(tp, -1, np.array([d])), params))[0])

    at_dhat = (abs(b_val(params.dhat)) <= 1e-20 * params.kappa
               and abs(b1_val(params.dhat)) <= 1e-20 * params.kappa
               and abs(C.barrier_second(np.array([params.dhat]), params)[0])
               <= 1e-20 * params.kappa)
    outside = (b_val(params.dhat * (1 + 1e-7)) == 0.0
               and C.barrier_second(np.array([params.dhat * (1 + 1e-7)]),
                                    params)[0] == 0.0)
    value = abs(b_val(5e-4) - 1.732867e-7) <= 1e-12
    ok = at_dhat and outside and value
    _verdict(6, ok, f"B, B', B'' vanish at dhat; B(5e-4)={b_val(5e-4):.7e} "
                    f"within 1e-12 of 1.732867e-7")


# -- 7: Newton vs first-order methods on the contact-rich frame ----------------

def test_criterion_7_fig5_ordering(bar_hop_scenario):
    t_start = time.perf_counter()
    sn = bar_hop_scenario
    spec = sn.loss_spec(0)
    m = sn.scene.num_activations
    a_init = np.zeros(m)
    cfg = sn.opt_cfg

    # shared warm start: 10 backtracking gradient-descent iterations
    fl_w = OPT.FrameLoss(sn.scene, sn.initial_state, spec, sn.step_cfg,
                         a_prev=a_init)
    a_warm, l0 = OPT.gradient_descent(fl_w.value, fl_w.gradient, a_init, 10,
                                      cfg)

    # Newton arm, budget counted in gradient-equivalent evaluations
    fl_n = OPT.FrameLoss(sn.scene, sn.initial_state, spec, sn.step_cfg,
                         a_prev=a_init)
    hess_calls = [0]

    def hess_fn(a):
        hess_calls[0] += 1
        h = fl_n.hessian(a, cfg.h, cfg.workers)
        return 0.5 * (h + h.T)

    rep = OPT.SolveReport()
    cfg_newton = dataclasses.replace(cfg, newton_max=10, gtol=1e-16)
    a_n, l_newton = OPT.newton_minimize(fl_n.value, fl_n.gradient, hess_fn,
                                        a_warm, cfg_newton, report=rep)
    newton_budget = fl_n.grad_evals + hess_calls[0] * m
    gd_budget = 50 * newton_budget

    fl_g = OPT.FrameLoss(sn.scene, sn.initial_state, spec, sn.step_cfg,
                         a_prev=a_init)
    _, l_gd = OPT.gradient_descent(fl_g.value, fl_g.gradient, a_warm,
                                   gd_budget, cfg)

    fl_l = OPT.FrameLoss(sn.scene, sn.initial_state, spec, sn.step_cfg,
                         a_prev=a_init)
    _, l_lbfgs = OPT.lbfgs(fl_l.value, fl_l.gradient, a_warm,
                           grad_budget=gd_budget, cfg=cfg)

    elapsed = time.perf_counter() - t_start
    newton_ok = l_newton <= 1e-6 * l0 and rep.newton_iterations <= 10
    gd_ok = l_gd > 1e-2 * l0
    between = l_newton <= l_lbfgs <= l_gd
    ok = newton_ok and gd_ok and between and elapsed < 600.0
    _verdict(7, ok,
             f"L0={l0:.3e}; Newton {l_newton / l0:.1e}*L0 in "
             f"{rep.newton_iterations} iters (budget {newton_budget}); "
             f"GD({gd_budget} grads) {l_gd / l0:.1e}*L0; "
             f"L-BFGS {l_lbfgs / l0:.1e}*L0 between; {elapsed:.0f}s < 600s")


# -- 8: determinism and replay --------------------------------------------------

def test_criterion_8_determinism_and_replay(tmp_path):
    config = SC.builtin_config("single-tet-on-plane")
    config["frames"] = 3
    cfg_path = tmp_path / "config.json"
    cfg_path.write_text(json.dumps(config))
    outs = []
    for run in range(2):
        out = tmp_path / f"run{run}"
        code = cli.main(["solve", "--config", str(cfg_path), "--out", str(out)])
        assert code == 0
        outs.append(out)
    identical = ((outs[0] / "activations.csv").read_bytes()
                 == (outs[1] / "activations.csv").read_bytes())
    replay = tmp_path / "replay"
    code = cli.main(["simulate", "--config", str(cfg_path),
                     "--activations", str(outs[0] / "activations.csv"),
                     "--out", str(replay)])
    ref = SC.read_positions(outs[0] / "positions.csv")
    rep = SC.read_positions(replay / "positions.csv")
    sn = SC.load_scenario(json.loads(cfg_path.read_text()))
    drift = np.abs(ref - rep).max()
    ok = identical and code == 0 and drift <= 10.0 * sn.step_cfg.newton_tol
    _verdict(8, ok, f"bit-identical activations={identical}; "
                    f"replay drift {drift:.2e} <= {10 * sn.step_cfg.newton_tol:.0e}")


# -- 9: memory contract ----------------------------------------------------------

def test_criterion_9_memory_contract(single_tet_m6_scenario):
    sn = single_tet_m6_scenario
    spec = sn.loss_spec(0)
    m = sn.scene.num_activations
    assert m == 6
    fl = OPT.FrameLoss(sn.scene, sn.initial_state, spec, sn.step_cfg,
                       a_prev=np.zeros(m))
    a0 = 0.3 * sn.activation_scale * np.ones(m)
    _, stats = fl.hessian(a0, sn.opt_cfg.h, 1, return_stats=True)
    tapes_ok = stats["tapes"] <= m + 1
    nodes_ok = all(n <= 2 * stats["forward_nodes"]
                   for n in stats["column_nodes"])
    ok = tapes_ok and nodes_ok
    _verdict(9, ok,
             f"M=6 assembly: {stats['tapes']} tapes <= {m + 1}; column nodes "
             f"{max(stats['column_nodes'])} <= 2x forward {stats['forward_nodes']}")
